"""Sign-activation convolutional text models (CNN01 and CNN01-FS).

Each filter slides over the stacked word vectors of a document, its
responses pass through the sign activation and are pooled globally, either
as the mean of the +-1 responses (``signed_average``) or as the number of +1
responses (``positive_sum``). The pooled vector feeds one sign output node.

Summing only the +1 responses makes a filter's contribution independent of
document length: four keyword hits weigh the same in a 10-word and a
100-word document, whereas averaging dilutes them from 40% to 4%.
"""

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_both_classes, check_sign_labels, encode_binary_target
from .network import sign
from .scan import best_threshold, optimal_output_bias
from .text import DocBatch, DocMatrix
from .trainer import (
    OUTPUT_NODE,
    CandidateUpdate,
    LogRecord,
    TrainingLog,
    candidate_deltas,
    feature_pool,
    improves,
    output_node_candidates,
    stratified_sample,
)

POOLING_MODES = ("signed_average", "positive_sum")
FORMAT_NAME = "scd01/conv-sign-model"
FORMAT_VERSION = 1


# pooling ------------------------------------------------------------------


def pool_signed_average(signs):
    """Mean of a +-1 sequence; an empty sequence pools to 0."""
    signs = np.asarray(signs, dtype=np.float64)
    if signs.size == 0:
        return 0.0
    return float(signs.sum() / signs.size)


def pool_positive_sum(signs):
    """Number of +1 entries."""
    return int(np.count_nonzero(np.asarray(signs) > 0))


def pooled_from_counts(counts, positions, mode):
    """Pooled values from +1 counts and the number of conv positions.

    Gives the same floats as the sequence-level pooling functions: the
    signed sum ``2c - L`` is an exact integer divided once by ``L``.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if mode == "positive_sum":
        return counts
    positions = np.asarray(positions, dtype=np.float64)
    safe = np.where(positions > 0, positions, 1.0)
    return np.where(positions > 0, (2.0 * counts - positions) / safe, 0.0)


# convolution --------------------------------------------------------------


def conv_sign(matrix, filt, bias):
    """Sign responses of one filter over the valid rows of a DocMatrix.

    Position ``p`` covers rows ``p .. p + width - 1``; padding rows are never
    read. Returns an empty array when the document is shorter than the
    filter.
    """
    filt = np.asarray(filt, dtype=np.float64)
    width = filt.shape[0]
    rows = matrix.matrix[: matrix.valid_len]
    if rows.shape[1] != filt.shape[1]:
        raise ValueError(f"filter dimension {filt.shape[1]} != embedding dimension {rows.shape[1]}")
    if matrix.valid_len < width:
        return np.empty(0)
    windows = sliding_window_view(rows, width, axis=0)
    return sign(np.einsum("pdw,wd->p", windows, filt) + bias)


def _positions(lengths, width):
    return np.maximum(np.asarray(lengths) - width + 1, 0)


def filter_preactivations(batch, filt):
    """Filter responses (before bias) on a DocBatch and the valid-position mask."""
    width = filt.shape[0]
    n_pos = batch.max_len - width + 1
    if n_pos < 1:
        raise ValueError(f"filter width {width} exceeds max_len {batch.max_len}")
    proj = batch.vectors @ filt.T
    pre = np.zeros((len(batch), n_pos))
    for r in range(width):
        pre += proj[batch.indices[:, r : r + n_pos], r]
    valid = np.arange(n_pos)[None, :] < _positions(batch.lengths, width)[:, None]
    return pre, valid


def _filter_counts(batch, filt, bias):
    pre, valid = filter_preactivations(batch, filt)
    return np.count_nonzero(valid & (pre + bias >= 0), axis=1)


# the model ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConvSignModel:
    filters: tuple
    filter_biases: np.ndarray
    output_weights: np.ndarray
    output_bias: float
    pooling_mode: str = "signed_average"

    def __post_init__(self):
        filters = tuple(np.array(f, dtype=np.float64) for f in self.filters)
        if not filters:
            raise ValueError("a conv model needs at least one filter")
        dims = {f.shape[1] for f in filters if f.ndim == 2}
        if any(f.ndim != 2 or f.shape[0] < 1 for f in filters) or len(dims) != 1:
            raise ValueError("filters must be (width >= 1, d) matrices with a common d")
        n = len(filters)
        biases = np.array(self.filter_biases, dtype=np.float64).reshape(-1)
        weights = np.array(self.output_weights, dtype=np.float64).reshape(-1)
        if biases.shape != (n,) or weights.shape != (n,):
            raise ValueError(f"need {n} filter biases and {n} output weights")
        bias = float(self.output_bias)
        arrays = filters + (biases, weights)
        if not all(np.all(np.isfinite(a)) for a in arrays) or not math.isfinite(bias):
            raise ValueError("model parameters must be finite")
        if self.pooling_mode not in POOLING_MODES:
            raise ValueError(f"pooling_mode must be one of {POOLING_MODES}")
        for a in arrays:
            a.setflags(write=False)
        object.__setattr__(self, "filters", filters)
        object.__setattr__(self, "filter_biases", biases)
        object.__setattr__(self, "output_weights", weights)
        object.__setattr__(self, "output_bias", bias)

    @property
    def n_filters(self):
        return len(self.filters)

    @property
    def dim(self):
        return self.filters[0].shape[1]

    @property
    def widths(self):
        return [f.shape[0] for f in self.filters]

    def replace(self, **changes):
        params = dict(
            filters=self.filters,
            filter_biases=self.filter_biases,
            output_weights=self.output_weights,
            output_bias=self.output_bias,
            pooling_mode=self.pooling_mode,
        )
        params.update(changes)
        return ConvSignModel(**params)

    def equals(self, other):
        def same(a, b):
            a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
            return a.shape == b.shape and a.tobytes() == b.tobytes()

        return (
            isinstance(other, ConvSignModel)
            and self.pooling_mode == other.pooling_mode
            and len(self.filters) == len(other.filters)
            and all(same(a, b) for a, b in zip(self.filters, other.filters))
            and same(self.filter_biases, other.filter_biases)
            and same(self.output_weights, other.output_weights)
            and same(self.output_bias, other.output_bias)
        )

    def _check_batch(self, batch):
        if batch.dim != self.dim:
            raise ValueError(f"documents have dimension {batch.dim}, model expects {self.dim}")
        if max(self.widths) > batch.max_len:
            raise ValueError("filter wider than the document max_len")

    def counts(self, batch):
        """(n_docs, n_filters) number of +1 responses per filter."""
        self._check_batch(batch)
        return np.stack(
            [_filter_counts(batch, f, b) for f, b in zip(self.filters, self.filter_biases)], axis=1
        )

    def positions(self, batch):
        return np.stack([_positions(batch.lengths, w) for w in self.widths], axis=1)

    def pooled_features(self, batch):
        return pooled_from_counts(self.counts(batch), self.positions(batch), self.pooling_mode)

    def predict_labels(self, batch):
        scores = self.pooled_features(batch) @ self.output_weights + self.output_bias
        return sign(scores).astype(np.int8)

    # serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "d": self.dim,
            "filter_widths": self.widths,
            "pooling_mode": self.pooling_mode,
            "filters": [f.tolist() for f in self.filters],
            "filter_biases": self.filter_biases.tolist(),
            "output_weights": self.output_weights.tolist(),
            "output_bias": self.output_bias,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_NAME:
            raise ValueError(f"not a conv model document: format={doc.get('format')!r}")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported conv model version {doc.get('version')!r}")
        filters = [
            np.array(f, dtype=np.float64).reshape(w, doc["d"])
            for f, w in zip(doc["filters"], doc["filter_widths"])
        ]
        return cls(
            filters=filters,
            filter_biases=doc["filter_biases"],
            output_weights=doc["output_weights"],
            output_bias=doc["output_bias"],
            pooling_mode=doc["pooling_mode"],
        )

    def dumps(self):
        return json.dumps(self.to_dict(), allow_nan=False)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def forward(model, matrix):
    """Prediction for one DocMatrix, computed position by position."""
    if not isinstance(matrix, DocMatrix):
        raise TypeError("forward expects a DocMatrix")
    pooled = np.empty(model.n_filters)
    for k, (filt, bias) in enumerate(zip(model.filters, model.filter_biases)):
        signs = conv_sign(matrix, filt, bias)
        if model.pooling_mode == "positive_sum":
            pooled[k] = pool_positive_sum(signs)
        else:
            pooled[k] = pool_signed_average(signs)
    return 1 if pooled @ model.output_weights + model.output_bias >= 0 else -1


# training -----------------------------------------------------------------


@dataclass(frozen=True)
class ConvTrainConfig:
    epochs: int = 1000
    learning_rate: float = 1.0
    batch_fraction: float = 0.75
    feature_pool_size: int = 128
    n_filters: int = 32
    filter_width: int = 3
    pooling_mode: str = "signed_average"
    seed: int = 0
    accept_ties: bool = False

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not 0 < self.batch_fraction <= 1:
            raise ValueError(f"batch_fraction must lie in (0, 1], got {self.batch_fraction!r}")
        for name in ("feature_pool_size", "n_filters", "filter_width"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.pooling_mode not in POOLING_MODES:
            raise ValueError(f"pooling_mode must be one of {POOLING_MODES}")


class _State(NamedTuple):
    model: ConvSignModel
    counts: np.ndarray
    errors: int


def init_conv_model(batch, labels, config, rng=None):
    """N(0,1) filters with median thresholds, N(0,1) output weights, scanned output bias."""
    y = check_sign_labels(labels, len(batch))
    check_both_classes(y)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    filters, biases = [], []
    for _ in range(config.n_filters):
        filt = rng.standard_normal((config.filter_width, batch.dim))
        pre, valid = filter_preactivations(batch, filt)
        filters.append(filt)
        biases.append(-float(np.median(pre[valid])) if valid.any() else 0.0)
    weights = rng.standard_normal(config.n_filters)
    model = ConvSignModel(filters, biases, weights, 0.0, config.pooling_mode)
    bias, _ = optimal_output_bias(model.pooled_features(batch) @ weights, y)
    return model.replace(output_bias=bias)


def _errors(model, pooled, y):
    return int(np.count_nonzero(sign(pooled @ model.output_weights + model.output_bias) != y))


def _scan_filter(Z, valid, n_pos, wrong, base):
    """Through-network bias scan for one candidate filter.

    ``wrong[i, c]`` says whether document ``i`` is misclassified when this
    filter yields ``c`` positive responses. Lowering the threshold past a
    response value removes one positive from that document, so the error
    count after each crossing is a running sum of per-document changes.
    """
    S = np.sort(np.where(valid, Z, np.inf), axis=1)
    docs, ranks = np.nonzero(np.arange(S.shape[1])[None, :] < n_pos[:, None])
    if docs.size == 0:
        return None, base
    values = S[docs, ranks]
    after = n_pos[docs] - ranks - 1
    change = wrong[docs, after].astype(np.int64) - wrong[docs, after + 1]
    order = np.argsort(values)
    prefix = base + np.concatenate([[0], np.cumsum(change[order])])
    bias, errors = best_threshold(values[order], prefix)
    return float(bias), int(errors)


def _filter_step(state, k, sample, data, y, config, rng):
    model, counts = state.model, state.counts
    filt = model.filters[k]
    width, d = filt.shape
    positions = model.positions(data)
    pre, valid = filter_preactivations(data, filt)
    pre_b, valid_b, n_pos = pre[sample], valid[sample], positions[sample, k]
    yb = y[sample]

    pooled_b = pooled_from_counts(counts[sample], positions[sample], model.pooling_mode)
    n_cols = pre.shape[1] + 1
    wrong = np.empty((len(sample), n_cols), dtype=bool)
    for c in range(n_cols):
        pooled_b[:, k] = pooled_from_counts(np.full(len(sample), c), n_pos, model.pooling_mode)
        wrong[:, c] = sign(pooled_b @ model.output_weights + model.output_bias) != yb
    base = int(np.count_nonzero(wrong[np.arange(len(sample)), n_pos]))

    pool = feature_pool(width * d, config.feature_pool_size, rng)
    flat = filt.reshape(-1)
    coords, deltas = candidate_deltas(flat, pool, config.learning_rate, False)
    idx_b = data.indices[sample]
    best = None
    for i, (coord, delta) in enumerate(zip(coords, deltas)):
        r, c = divmod(int(coord), d)
        G = data.vectors[idx_b[:, r : r + pre.shape[1]], c]
        bias, errors = _scan_filter(pre_b + delta * G, valid_b, n_pos, wrong, base)
        if best is None or errors < best[2]:
            best = (i, bias, errors)
    i, bias, batch_errors = best
    new_flat = flat.copy()
    new_flat[coords[i]] += deltas[i]
    new_filt = new_flat.reshape(width, d)
    if bias is None:
        bias = float(model.filter_biases[k])
    filters = list(model.filters)
    filters[k] = new_filt
    biases = model.filter_biases.copy()
    biases[k] = bias
    proposal = model.replace(filters=filters, filter_biases=biases)

    new_counts = counts.copy()
    new_counts[:, k] = _filter_counts(data, new_filt, bias)
    pooled = pooled_from_counts(new_counts, positions, model.pooling_mode)
    candidate = CandidateUpdate(
        f"filter:{k}", int(coords[i]), float(deltas[i]), bias, batch_errors / len(sample)
    )
    errors = _errors(proposal, pooled, y)
    if improves(errors, state.errors, config.accept_ties):
        return _State(proposal, new_counts, errors), True, candidate
    return state, False, candidate


def _output_step(state, sample, data, y, config, rng):
    model = state.model
    positions = model.positions(data)
    pooled = pooled_from_counts(state.counts, positions, model.pooling_mode)
    pool = feature_pool(model.n_filters, config.feature_pool_size, rng)
    cands, features, deltas, bias, errors = output_node_candidates(
        pooled[sample], y[sample], model.output_weights, pool, config.learning_rate
    )
    best = int(np.argmin(errors))
    proposal = model.replace(output_weights=cands[best], output_bias=float(bias[best]))
    candidate = CandidateUpdate(
        OUTPUT_NODE, int(features[best]), float(deltas[best]), float(bias[best]),
        int(errors[best]) / len(sample),
    )
    new_errors = _errors(proposal, pooled, y)
    if improves(new_errors, state.errors, config.accept_ties):
        return _State(proposal, state.counts, new_errors), True, candidate
    return state, False, candidate


def train_conv(batch, labels, config):
    """SCD over the output node and the filters. Returns ``(model, log)``.

    Each epoch updates the output node and then one uniformly chosen filter,
    accepting a change only when the full-data error count strictly drops.
    """
    y = check_sign_labels(labels, len(batch))
    rng = np.random.default_rng(config.seed)
    model = init_conv_model(batch, y, config, rng)
    counts = model.counts(batch)
    pooled = pooled_from_counts(counts, model.positions(batch), model.pooling_mode)
    state = _State(model, counts, _errors(model, pooled, y))
    n = len(batch)
    log = TrainingLog([LogRecord(0, "init", True, state.errors / n)])
    for epoch in range(1, config.epochs + 1):
        sample = stratified_sample(y, config.batch_fraction, rng)
        state, accepted, cand = _output_step(state, sample, batch, y, config, rng)
        log.append(LogRecord(epoch, cand.node, accepted, state.errors / n))
        k = int(rng.integers(state.model.n_filters))
        state, accepted, cand = _filter_step(state, k, sample, batch, y, config, rng)
        log.append(LogRecord(epoch, cand.node, accepted, state.errors / n))
    return state.model, log


# estimator ----------------------------------------------------------------


class CNN01Classifier(ClassifierMixin, BaseEstimator):
    """Sign-activation text CNN trained by stochastic coordinate descent.

    Parameters
    ----------
    n_filters : int, default=32
    filter_width : int, default=3
        Number of consecutive words each filter covers.
    pooling : {"signed_average", "positive_sum"}, default="signed_average"
        ``"positive_sum"`` is the FS variant that counts +1 responses.
    epochs, learning_rate, batch_fraction, feature_pool_size, accept_ties
        As for :class:`~scd01.SCD01Classifier`.
    random_state : int, default=0

    Inputs are :class:`~scd01.text.DocBatch` objects, e.g. the output of
    :class:`~scd01.text.StackedEmbeddingVectorizer`.
    """

    def __init__(
        self,
        n_filters=32,
        filter_width=3,
        pooling="signed_average",
        epochs=1000,
        learning_rate=1.0,
        batch_fraction=0.75,
        feature_pool_size=128,
        accept_ties=False,
        random_state=0,
    ):
        self.n_filters = n_filters
        self.filter_width = filter_width
        self.pooling = pooling
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_fraction = batch_fraction
        self.feature_pool_size = feature_pool_size
        self.accept_ties = accept_ties
        self.random_state = random_state

    def _config(self):
        return ConvTrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_fraction=self.batch_fraction,
            feature_pool_size=self.feature_pool_size,
            n_filters=self.n_filters,
            filter_width=self.filter_width,
            pooling_mode=self.pooling,
            accept_ties=self.accept_ties,
            seed=0 if self.random_state is None else int(self.random_state),
        )

    def fit(self, X, y):
        if not isinstance(X, DocBatch):
            raise TypeError("CNN01Classifier expects a DocBatch")
        self.classes_, y_signed = encode_binary_target(y)
        if len(y_signed) != len(X):
            raise ValueError(f"got {len(y_signed)} labels for {len(X)} documents")
        self.model_, self.log_ = train_conv(X, y_signed, self._config())
        return self

    @classmethod
    def from_model(cls, model, classes=(-1, 1)):
        est = cls(n_filters=model.n_filters, filter_width=model.widths[0], pooling=model.pooling_mode)
        est.model_ = model
        est.classes_ = np.asarray(classes)
        return est

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        pooled = self.model_.pooled_features(X)
        return pooled @ self.model_.output_weights + self.model_.output_bias

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores >= 0).astype(int)]

    def predict_proba(self, X):
        pos = (self.decision_function(X) >= 0).astype(np.float64)
        return np.column_stack([1.0 - pos, pos])
