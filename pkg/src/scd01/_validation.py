"""Input validation helpers shared by the estimators and the functional API."""

import numpy as np


def check_finite_matrix(X, name="X"):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_finite_vector(v, name="x", length=None):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if length is not None and v.shape[0] != length:
        raise ValueError(f"{name} has length {v.shape[0]}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite values")
    return v


def check_sign_labels(y, n=None):
    """Return ``y`` as an int8 array after checking every entry is -1 or +1."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} labels for {n} samples")
    if not np.all((y == 1) | (y == -1)):
        raise ValueError("labels must be -1 or +1")
    return y.astype(np.int8)


def encode_binary_target(y):
    """Map an arbitrary two-class target onto -1/+1.

    Returns ``(classes, y_signed)`` where ``classes[0]`` maps to -1 and
    ``classes[1]`` to +1.
    """
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"y must be 1-D, got shape {y.shape}")
    classes, encoded = np.unique(y, return_inverse=True)
    if len(classes) != 2:
        raise ValueError(
            f"a binary target with exactly two classes is required, got {len(classes)}"
        )
    return classes, (2 * encoded - 1).astype(np.int8)


def check_both_classes(y):
    if not (np.any(y == 1) and np.any(y == -1)):
        raise ValueError("training data must contain both classes")
