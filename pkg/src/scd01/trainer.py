"""Gradient-free stochastic coordinate descent (SCD) for sign networks.

One epoch draws a class-stratified batch, tries a pool of single-coordinate
perturbations on the output node and then on one random hidden node,
re-optimises that node's bias by an exact threshold scan on the batch,
applies the best candidate and keeps it only if the full-data 01 loss
strictly drops.
"""

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from ._validation import check_both_classes
from .network import SignNetwork, hidden_activations, mismatch_count, sign
from .scan import optimal_output_bias, scan_node_bias

logger = logging.getLogger(__name__)

OUTPUT_NODE = "output"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1.0
    batch_fraction: float = 0.75
    feature_pool_size: int = 128
    hidden_nodes: int = 20
    seed: int = 0
    binary_mode: bool = False
    accept_ties: bool = False

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ValueError(f"epochs must be a non-negative integer, got {self.epochs!r}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not 0 < self.batch_fraction <= 1:
            raise ValueError(f"batch_fraction must lie in (0, 1], got {self.batch_fraction!r}")
        if int(self.feature_pool_size) != self.feature_pool_size or self.feature_pool_size < 1:
            raise ValueError(
                f"feature_pool_size must be a positive integer, got {self.feature_pool_size!r}"
            )
        if int(self.hidden_nodes) != self.hidden_nodes or self.hidden_nodes < 1:
            raise ValueError(f"hidden_nodes must be a positive integer, got {self.hidden_nodes!r}")


def write_config(config, path):
    """Flat ``key = value`` file, one TrainConfig field per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in asdict(config).items():
            fh.write(f"{key} = {value}\n")


def parse_config_lines(lines):
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw.rstrip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _coerce(kind, text):
    if kind is bool:
        low = str(text).lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def config_from_mapping(values, cls=TrainConfig):
    """Build a config dataclass from string values, ignoring unrelated keys."""
    kwargs = {}
    for f in fields(cls):
        if f.name in values:
            kind = type(f.default)
            try:
                kwargs[f.name] = _coerce(kind, values[f.name])
            except ValueError as exc:
                raise ValueError(f"invalid value for {f.name}: {exc}") from None
    return cls(**kwargs)


def read_config(path):
    with open(path, encoding="utf-8") as fh:
        return config_from_mapping(parse_config_lines(fh))


# training log -------------------------------------------------------------


class LogRecord(NamedTuple):
    epoch: int
    node: str
    accepted: bool
    full_loss: float


class TrainingLog(list):
    """Append-only list of :class:`LogRecord`.

    Epoch 0 holds a single ``init`` record with the loss of the initial
    network; every later record is one coordinate-descent step.
    """

    def accepted_losses(self):
        return [r.full_loss for r in self if r.accepted]

    def epoch_end_losses(self):
        ends = {}
        for r in self:
            ends[r.epoch] = r.full_loss
        return [ends[e] for e in sorted(ends)]

    def to_tsv(self):
        lines = ["epoch\tnode\taccepted\tfull_loss"]
        lines += [f"{r.epoch}\t{r.node}\t{int(r.accepted)}\t{r.full_loss!r}" for r in self]
        return "\n".join(lines) + "\n"

    def write_tsv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_tsv())

    @classmethod
    def from_tsv(cls, text):
        log = cls()
        for line in text.splitlines()[1:]:
            if line.strip():
                epoch, node, accepted, loss = line.split("\t")
                log.append(LogRecord(int(epoch), node, accepted == "1", float(loss)))
        return log


# the algorithm ------------------------------------------------------------


class CandidateUpdate(NamedTuple):
    node: str
    feature_index: int
    delta: float
    new_bias: float
    batch_loss: float


class StepResult(NamedTuple):
    network: SignNetwork
    accepted: bool
    full_errors: int
    candidate: CandidateUpdate


def improves(new_errors, old_errors, accept_ties=False):
    """Acceptance rule: strictly fewer errors, or no more with ``accept_ties``."""
    return new_errors < old_errors or (accept_ties and new_errors == old_errors)


def init_network(data, config, rng=None):
    """N(0,1) weights, median hidden thresholds and a scanned output bias."""
    check_both_classes(data.labels)
    if rng is None:
        rng = np.random.default_rng(config.seed)
    X, y = data.features, data.labels
    W = rng.standard_normal((data.n_features, config.hidden_nodes))
    w = rng.standard_normal(config.hidden_nodes)
    if config.binary_mode:
        W, w = sign(W), sign(w)
    hidden_biases = -np.median(X @ W, axis=0)
    H = sign(X @ W + hidden_biases)
    output_bias, _ = optimal_output_bias(H @ w, y)
    return SignNetwork(W, hidden_biases, w, output_bias, binary_mode=config.binary_mode)


def stratified_sample(labels, fraction, rng):
    """Sorted indices with ``floor(fraction * n_c)`` draws from each class."""
    picked = []
    for c in (-1, 1):
        members = np.flatnonzero(labels == c)
        k = math.floor(fraction * len(members))
        if k < 1:
            raise ValueError(
                f"batch_fraction {fraction} leaves no samples of class {c:+d} "
                f"(class size {len(members)})"
            )
        picked.append(rng.choice(members, size=k, replace=False))
    return np.sort(np.concatenate(picked))


def feature_pool(dim, size, rng):
    if dim < 1:
        raise ValueError("cannot draw a feature pool from an empty node")
    return rng.choice(dim, size=min(size, dim), replace=False)


def candidate_deltas(current, pool, eta, binary):
    """Per-candidate ``(feature, delta)`` arrays for one weight vector.

    Real weights get ``+eta`` and ``-eta`` per pooled feature; binary weights
    get a single sign flip, expressed as ``delta = -2 * w``.
    """
    if binary:
        return pool, -2.0 * current[pool]
    features = np.repeat(pool, 2)
    deltas = np.tile([eta, -eta], len(pool))
    return features, deltas


def output_node_candidates(H, y, weights, pool, eta, binary=False):
    """Score every pooled perturbation of the output weights on ``(H, y)``.

    Returns ``(candidate_weights, features, deltas, biases, errors)`` with one
    row per candidate; ``biases`` are already re-optimised by the scan.
    """
    features, deltas = candidate_deltas(weights, pool, eta, binary)
    cands = np.tile(weights, (len(features), 1))
    rows = np.arange(len(features))
    if binary:
        cands[rows, features] = -weights[features]
    else:
        cands[rows, features] = weights[features] + deltas
    Z = cands @ H.T
    bias, errors = scan_node_bias(Z, y != -1, y != 1)
    return cands, features, deltas, bias, errors


def _hidden_costs(net, H, y, j):
    """Errors when hidden unit ``j`` is forced to -1 / +1, rest of the net fixed."""
    Hp = H.copy()
    Hp[:, j] = 1.0
    err_pos = sign(Hp @ net.output_weights + net.output_bias) != y
    Hp[:, j] = -1.0
    err_neg = sign(Hp @ net.output_weights + net.output_bias) != y
    return err_neg, err_pos


def coordinate_descent_step(net, node, batch, full, config, rng, full_errors=None):
    """One SCD update of ``node`` (``"output"`` or a hidden column index).

    Candidates are scored on ``batch``; the single best one is applied and
    kept only if the error count on ``full`` strictly decreases (or stays
    put, with ``config.accept_ties``). A rejected step returns ``net`` itself.
    """
    if full_errors is None:
        full_errors = mismatch_count(net, full.features, full.labels)
    Xb, yb = batch.features, batch.labels
    H = hidden_activations(net, Xb)

    if node == OUTPUT_NODE:
        pool = feature_pool(net.n_hidden, config.feature_pool_size, rng)
        cands, features, deltas, bias, errors = output_node_candidates(
            H, yb, net.output_weights, pool, config.learning_rate, config.binary_mode
        )
        best = int(np.argmin(errors))
        proposal = net.replace(output_weights=cands[best], output_bias=float(bias[best]))
        label = OUTPUT_NODE
    else:
        j = int(node)
        if not 0 <= j < net.n_hidden:
            raise ValueError(f"hidden node index {j} out of range")
        column = net.hidden_weights[:, j]
        pool = feature_pool(net.n_features, config.feature_pool_size, rng)
        features, deltas = candidate_deltas(
            column, pool, config.learning_rate, config.binary_mode
        )
        Z = (Xb @ column)[None, :] + deltas[:, None] * Xb[:, features].T
        err_neg, err_pos = _hidden_costs(net, H, yb, j)
        bias, errors = scan_node_bias(Z, err_neg, err_pos)
        best = int(np.argmin(errors))
        W = net.hidden_weights.copy()
        f = features[best]
        W[f, j] = -W[f, j] if config.binary_mode else W[f, j] + deltas[best]
        biases = net.hidden_biases.copy()
        biases[j] = bias[best]
        proposal = net.replace(hidden_weights=W, hidden_biases=biases)
        label = f"hidden:{j}"

    candidate = CandidateUpdate(
        node=label,
        feature_index=int(features[best]),
        delta=float(deltas[best]),
        new_bias=float(bias[best]),
        batch_loss=int(errors[best]) / batch.n_samples,
    )
    new_errors = mismatch_count(proposal, full.features, full.labels)
    if improves(new_errors, full_errors, config.accept_ties):
        return StepResult(proposal, True, new_errors, candidate)
    return StepResult(net, False, full_errors, candidate)


def train_epoch(net, data, config, rng, full_errors=None, epoch=0):
    """Output-node step then one random hidden-node step.

    Returns ``(network, full_errors, records)``.
    """
    check_both_classes(data.labels)
    n = data.n_samples
    batch = data.subset(stratified_sample(data.labels, config.batch_fraction, rng))
    records = []
    step = coordinate_descent_step(net, OUTPUT_NODE, batch, data, config, rng, full_errors)
    records.append(LogRecord(epoch, step.candidate.node, step.accepted, step.full_errors / n))
    j = int(rng.integers(step.network.n_hidden))
    step = coordinate_descent_step(step.network, j, batch, data, config, rng, step.full_errors)
    records.append(LogRecord(epoch, step.candidate.node, step.accepted, step.full_errors / n))
    return step.network, step.full_errors, records


def train(data, config):
    """Initialise then run ``config.epochs`` epochs. Returns ``(network, log)``."""
    rng = np.random.default_rng(config.seed)
    net = init_network(data, config, rng)
    errors = mismatch_count(net, data.features, data.labels)
    log = TrainingLog([LogRecord(0, "init", True, errors / data.n_samples)])
    for epoch in range(1, config.epochs + 1):
        net, errors, records = train_epoch(net, data, config, rng, errors, epoch)
        log.extend(records)
        if epoch % 100 == 0:
            logger.debug("epoch %d: loss %.4f", epoch, errors / data.n_samples)
    return net, log
