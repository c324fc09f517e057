"""Single-hidden-layer sign-activation networks and their 01 loss.

The network computes ``sign(w . sign(W^T x + b) + c)`` with ``sign(0) = +1``.
Thresholds are stored as additive biases, so a threshold ``t`` appears as a
bias of ``-t``.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_finite_matrix, check_finite_vector, check_sign_labels

FORMAT_NAME = "scd01/sign-network"
FORMAT_VERSION = 1


def sign_activation(v):
    """Scalar sign with the zero-maps-to-+1 convention."""
    v = float(v)
    if not math.isfinite(v):
        raise ValueError(f"sign_activation requires a finite input, got {v!r}")
    return 1 if v >= 0 else -1


def sign(values):
    """Elementwise :func:`sign_activation` returning float64 +-1."""
    return np.where(np.asarray(values) >= 0, 1.0, -1.0)


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with -1/+1 labels. Arrays are copied and made read-only."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = check_finite_matrix(self.features, "features")
        if X.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        y = check_sign_labels(self.labels, X.shape[0])
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y, np.int8))

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def subset(self, indices):
        return LabeledDataset(self.features[indices], self.labels[indices])


@dataclass(frozen=True, eq=False)
class SignNetwork:
    """Weights ``W`` (d x h), hidden biases (h), output weights (h), output bias.

    Instances are immutable; training produces new networks rather than
    editing arrays in place, which is what makes rejected updates revert
    bit for bit.
    """

    hidden_weights: np.ndarray
    hidden_biases: np.ndarray
    output_weights: np.ndarray
    output_bias: float
    binary_mode: bool = False

    def __post_init__(self):
        W = check_finite_matrix(self.hidden_weights, "hidden_weights")
        d, h = W.shape
        if d < 1 or h < 1:
            raise ValueError(f"hidden_weights must be non-empty, got shape {W.shape}")
        b = check_finite_vector(self.hidden_biases, "hidden_biases", h)
        w = check_finite_vector(self.output_weights, "output_weights", h)
        c = float(self.output_bias)
        if not math.isfinite(c):
            raise ValueError("output_bias must be finite")
        if self.binary_mode and not (np.all(np.abs(W) == 1) and np.all(np.abs(w) == 1)):
            raise ValueError("binary_mode networks need every weight in {-1, +1}")
        object.__setattr__(self, "hidden_weights", _frozen(W))
        object.__setattr__(self, "hidden_biases", _frozen(b))
        object.__setattr__(self, "output_weights", _frozen(w))
        object.__setattr__(self, "output_bias", c)
        object.__setattr__(self, "binary_mode", bool(self.binary_mode))

    @property
    def n_features(self):
        return self.hidden_weights.shape[0]

    @property
    def n_hidden(self):
        return self.hidden_weights.shape[1]

    def replace(self, **changes):
        params = dict(
            hidden_weights=self.hidden_weights,
            hidden_biases=self.hidden_biases,
            output_weights=self.output_weights,
            output_bias=self.output_bias,
            binary_mode=self.binary_mode,
        )
        params.update(changes)
        return SignNetwork(**params)

    def equals(self, other):
        """Bitwise equality of every parameter."""
        return (
            isinstance(other, SignNetwork)
            and self.binary_mode == other.binary_mode
            and _same_bits(self.hidden_weights, other.hidden_weights)
            and _same_bits(self.hidden_biases, other.hidden_biases)
            and _same_bits(self.output_weights, other.output_weights)
            and _same_bits(np.float64(self.output_bias), np.float64(other.output_bias))
        )

    # serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "d": self.n_features,
            "h": self.n_hidden,
            "binary_mode": self.binary_mode,
            "hidden_weights": self.hidden_weights.tolist(),
            "hidden_biases": self.hidden_biases.tolist(),
            "output_weights": self.output_weights.tolist(),
            "output_bias": self.output_bias,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != FORMAT_NAME:
            raise ValueError(f"not a sign network document: format={doc.get('format')!r}")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported sign network version {doc.get('version')!r}")
        W = np.array(doc["hidden_weights"], dtype=np.float64).reshape(doc["d"], doc["h"])
        return cls(
            hidden_weights=W,
            hidden_biases=doc["hidden_biases"],
            output_weights=doc["output_weights"],
            output_bias=doc["output_bias"],
            binary_mode=doc["binary_mode"],
        )

    def dumps(self):
        return json.dumps(self.to_dict(), allow_nan=False)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


def _same_bits(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return a.shape == b.shape and a.tobytes() == b.tobytes()


def _check_input(net, X):
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != net.n_features:
        raise ValueError(f"input has {X.shape[-1]} features, network expects {net.n_features}")
    return X


def hidden_activations(net, X):
    """Hidden sign activations for a batch, shape (n, h)."""
    X = _check_input(net, X)
    return sign(X @ net.hidden_weights + net.hidden_biases)


def output_scores(net, X):
    """Output pre-activation ``w . sign(W^T x + b) + c`` for a batch."""
    return hidden_activations(net, X) @ net.output_weights + net.output_bias


def predict_labels(net, X):
    return sign(output_scores(net, X)).astype(np.int8)


def hidden_forward(net, x):
    """Hidden-layer sign vector for one input of length d."""
    x = check_finite_vector(x, "x", net.n_features)
    return hidden_activations(net, x[None, :])[0]


def predict(net, x):
    """Predicted label (+1 or -1) for one input."""
    x = check_finite_vector(x, "x", net.n_features)
    return int(predict_labels(net, x[None, :])[0])


def mismatch_count(net, X, y):
    return int(np.count_nonzero(predict_labels(net, X) != y))


def zero_one_loss(net, data):
    """Fraction of samples whose predicted label differs from the label.

    Counted as an exact integer and divided once.
    """
    if data.n_samples == 0:
        raise ValueError("zero_one_loss needs a non-empty dataset")
    return mismatch_count(net, data.features, data.labels) / data.n_samples


def save_network(net, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(net.dumps())
        fh.write("\n")


def load_network(path):
    with open(path, encoding="utf-8") as fh:
        return SignNetwork.loads(fh.read())
