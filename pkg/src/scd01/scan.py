"""Exact 1-D threshold scans for 01 loss.

A node outputs ``sign(z + bias)``. Sweeping the bias only changes the output
when ``-bias`` crosses one of the projection values, so it is enough to try
the negated midpoints of consecutive sorted projections plus two sentinels,
one below the minimum (everything +1) and one above the maximum (everything
-1). Candidates are visited in ascending threshold order and ties go to the
first one.

The scans work on *prefix losses*: ``prefix[k]`` is the integer error count
when exactly the ``k`` smallest sorted values sit below the threshold. Both
the output-bias case and the through-network hidden/filter case reduce to
that form.
"""

import numpy as np

from ._validation import check_finite_vector, check_sign_labels


def candidate_thresholds(sorted_values):
    """Thresholds (rows of length n + 1) for each row of ascending values."""
    sv = np.asarray(sorted_values, dtype=np.float64)
    low = sv[..., :1] - 1.0
    mids = (sv[..., :-1] + sv[..., 1:]) / 2.0
    high = sv[..., -1:] + 1.0
    return np.concatenate([low, mids, high], axis=-1)


def _counts_below(sv, thresholds):
    """Number of sorted values strictly below each candidate threshold.

    Computed structurally instead of by search: a midpoint that rounds onto
    its lower neighbour (ties, or adjacent doubles) falls back to the start
    of that value's run.
    """
    n = sv.shape[-1]
    idx = np.arange(n)
    is_start = np.ones(sv.shape, dtype=bool)
    is_start[..., 1:] = sv[..., 1:] != sv[..., :-1]
    run_start = np.maximum.accumulate(np.where(is_start, idx, 0), axis=-1)

    counts = np.empty(thresholds.shape, dtype=np.int64)
    counts[..., 0] = 0
    # candidate k + 1 (1 <= k + 1 <= n) lies above sv[k]
    counts[..., 1:] = np.where(thresholds[..., 1:] > sv, idx + 1, run_start)
    return counts


def best_threshold(sorted_values, prefix_errors):
    """Pick the error-minimising candidate for each row.

    Parameters
    ----------
    sorted_values : array of shape (..., n), ascending along the last axis
    prefix_errors : int array of shape (..., n + 1)

    Returns
    -------
    bias, errors : arrays of shape (...)
    """
    sv = np.asarray(sorted_values, dtype=np.float64)
    thresholds = candidate_thresholds(sv)
    counts = _counts_below(sv, thresholds)
    errors = np.take_along_axis(prefix_errors, counts, axis=-1)
    best = np.argmin(errors, axis=-1)[..., None]
    bias = -np.take_along_axis(thresholds, best, axis=-1)[..., 0]
    return bias, np.take_along_axis(errors, best, axis=-1)[..., 0]


def scan_node_bias(values, err_negative, err_positive):
    """Best bias for ``sign(values + bias)`` given per-sample error costs.

    ``err_negative[i]`` is the error incurred when sample ``i`` ends up on
    the -1 side, ``err_positive[i]`` when it ends up on the +1 side. With
    2-D ``values`` of shape (m, n) each row is scanned independently against
    the same costs, which is how a pool of candidate weight vectors is
    evaluated in one pass.
    """
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, axis=-1)
    sv = np.take_along_axis(values, order, axis=-1)
    neg = np.asarray(err_negative, dtype=np.int64)[order]
    pos = np.asarray(err_positive, dtype=np.int64)[order]
    zero = np.zeros(values.shape[:-1] + (1,), dtype=np.int64)
    below = np.concatenate([zero, np.cumsum(neg, axis=-1)], axis=-1)
    above = np.concatenate([zero, np.cumsum(pos, axis=-1)], axis=-1)
    prefix = below + (above[..., -1:] - above)
    return best_threshold(sv, prefix)


def optimal_output_bias(projections, labels):
    """Bias minimising the 01 loss of ``sign(projection + bias)`` vs labels.

    Returns ``(bias, loss)`` where ``loss`` is the exact error fraction.
    """
    z = check_finite_vector(projections, "projections")
    if z.shape[0] == 0:
        raise ValueError("optimal_output_bias needs at least one projection")
    y = check_sign_labels(labels, z.shape[0])
    bias, errors = scan_node_bias(z, y != -1, y != 1)
    return float(bias), int(errors) / z.shape[0]
