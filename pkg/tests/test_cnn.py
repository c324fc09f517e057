from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import keyword_corpus
from oracles import conv_forward_loop, conv_loop, sign_scalar
from scd01.cnn import (
    ConvSignModel,
    ConvTrainConfig,
    _scan_filter,
    conv_sign,
    filter_preactivations,
    forward,
    init_conv_model,
    pool_positive_sum,
    pool_signed_average,
    pooled_from_counts,
    train_conv,
)
from scd01.ensemble import Ensemble, load_ensemble, save_ensemble
from scd01.scan import candidate_thresholds
from scd01.text import DocBatch, DocMatrix, EmbeddingTable


def _matrix(rows, max_len=None):
    rows = np.array(rows, dtype=np.float64)
    max_len = max_len or len(rows)
    M = np.zeros((max_len, rows.shape[1]))
    M[: len(rows)] = rows
    return DocMatrix(M, len(rows))


def test_conv_sign_examples():
    assert conv_sign(_matrix([[2.0], [-3.0]]), np.ones((1, 1)), 0.0).tolist() == [1, -1]
    m = _matrix([[1.0], [2.0], [3.0]], max_len=5)
    assert len(conv_sign(m, np.ones((3, 1)), 0.0)) == 1
    assert len(conv_sign(m, np.ones((4, 1)), 0.0)) == 0


def test_conv_sign_matches_loop():
    rng = np.random.default_rng(0)
    for width in (1, 2, 3):
        M = rng.standard_normal((7, 4))
        filt = rng.standard_normal((width, 4))
        bias = float(rng.standard_normal())
        got = conv_sign(DocMatrix(M, 7), filt, bias).tolist()
        assert got == conv_loop(M.tolist(), 7, filt.tolist(), bias)


def test_conv_never_reads_padding():
    rng = np.random.default_rng(1)
    M = rng.standard_normal((6, 3))
    garbage = M.copy()
    garbage[4:] = 1e9
    filt = rng.standard_normal((2, 3))
    assert np.array_equal(conv_sign(DocMatrix(M, 4), filt, 0.1), conv_sign(DocMatrix(garbage, 4), filt, 0.1))


def test_conv_dimension_mismatch():
    with pytest.raises(ValueError):
        conv_sign(_matrix([[1.0, 2.0]]), np.ones((1, 3)), 0.0)


def test_pooling_examples():
    assert pool_signed_average([1, 1, -1, -1]) == 0.0
    assert pool_signed_average([1] * 4 + [-1] * 6) == pytest.approx(-0.2)
    assert pool_signed_average([]) == 0.0
    assert pool_positive_sum([1] * 4 + [-1] * 6) == 4
    assert pool_positive_sum([1] * 4 + [-1] * 96) == 4
    assert pool_positive_sum([-1] * 9) == 0
    assert pool_positive_sum([]) == 0


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=200), st.integers(0, 50))
def test_pooling_identity_and_length_invariance(signs, extra):
    L = len(signs)
    s = pool_signed_average(signs)
    # s is the correctly rounded (2c - L) / L; the identity is checked on
    # that rational, in exact arithmetic
    r = Fraction(s).limit_denominator(L)
    assert s == float(r)
    assert L * (r + 1) / 2 == pool_positive_sum(signs)
    longer = signs + [-1] * extra
    assert pool_positive_sum(longer) == pool_positive_sum(signs)
    if extra and s > -1:
        assert pool_signed_average(longer) < s


def test_pooled_from_counts_matches_sequence_pooling():
    rng = np.random.default_rng(2)
    for _ in range(200):
        L = int(rng.integers(0, 30))
        signs = np.where(rng.random(L) < 0.4, 1, -1)
        c = int(np.sum(signs == 1))
        assert pooled_from_counts([c], [L], "signed_average")[0] == pool_signed_average(signs)
        assert pooled_from_counts([c], [L], "positive_sum")[0] == pool_positive_sum(signs)


def test_forward_examples():
    m = _matrix([[1.0]] * 4 + [[-1.0]] * 6)
    filt = [np.ones((1, 1))]
    fs = ConvSignModel(filt, [0.0], [1.0], -3.5, "positive_sum")
    assert forward(fs, m) == 1
    avg = ConvSignModel(filt, [0.0], [1.0], 0.0, "signed_average")
    assert forward(avg, m) == -1


def _random_model(rng, d, widths, mode):
    filters = [rng.standard_normal((w, d)) for w in widths]
    n = len(widths)
    return ConvSignModel(filters, rng.standard_normal(n) * 0.3, rng.standard_normal(n),
                         float(rng.standard_normal()), mode)


@pytest.mark.parametrize("mode", ["signed_average", "positive_sum"])
def test_batch_prediction_matches_enumeration(mode):
    rng = np.random.default_rng(3)
    table = EmbeddingTable([f"t{i}" for i in range(12)], rng.standard_normal((12, 5)))
    docs = [list(rng.choice(table.tokens, rng.integers(0, 9))) + ["oov"] * int(rng.integers(0, 2))
            for _ in range(40)]
    batch = DocBatch.from_documents(docs, table, 8)
    for _ in range(5):
        model = _random_model(rng, 5, [1, 2, 3], mode)
        got = model.predict_labels(batch)
        for i in range(len(docs)):
            matrix = batch.matrix(i)
            assert got[i] == forward(model, matrix) == conv_forward_loop(model, matrix.matrix, matrix.valid_len)


def test_forward_is_order_sensitive():
    table = EmbeddingTable(["a", "b"], [[1.0], [-1.0]])
    model = ConvSignModel([np.array([[1.0], [-1.0]])], [-1.5], [1.0], -0.5, "positive_sum")
    ab = DocBatch.from_documents([["a", "b"]], table, 2)
    ba = DocBatch.from_documents([["b", "a"]], table, 2)
    assert model.predict_labels(ab)[0] == 1 and model.predict_labels(ba)[0] == -1


def test_model_validation():
    with pytest.raises(ValueError):
        ConvSignModel([], [], [], 0.0)
    with pytest.raises(ValueError):
        ConvSignModel([np.ones((1, 2)), np.ones((1, 3))], [0, 0], [1, 1], 0.0)
    with pytest.raises(ValueError):
        ConvSignModel([np.ones((1, 2))], [0], [1], 0.0, "max")
    with pytest.raises(ValueError):
        ConvSignModel([np.full((1, 2), np.nan)], [0], [1], 0.0)


def test_model_rejects_mismatched_batch():
    model = ConvSignModel([np.ones((1, 3))], [0], [1], 0.0)
    batch = DocBatch.from_documents([["a"]], EmbeddingTable(["a"], [[1.0, 2.0]]), 4)
    with pytest.raises(ValueError):
        model.predict_labels(batch)


def test_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    model = _random_model(rng, 6, [2, 2, 3], "positive_sum")
    assert ConvSignModel.loads(model.dumps()).equals(model)
    save_ensemble(Ensemble([model, model]), tmp_path, "cnn01-fs")
    loaded, manifest = load_ensemble(tmp_path)
    assert manifest["model_type"] == "cnn01-fs"
    assert all(m.equals(model) for m in loaded.members)


def test_filter_scan_matches_brute_force():
    """Through-network filter bias: scan result equals trying every threshold."""
    rng = np.random.default_rng(5)
    table = EmbeddingTable([f"t{i}" for i in range(15)], rng.standard_normal((15, 3)))
    docs = [list(rng.choice(table.tokens, rng.integers(1, 7))) for _ in range(30)]
    batch = DocBatch.from_documents(docs, table, 6)
    y = np.where(rng.random(30) < 0.5, -1, 1)
    for mode in ("signed_average", "positive_sum"):
        for trial in range(5):
            model = _random_model(rng, 3, [2, 2, 2], mode)
            k = trial % 3
            filt = rng.standard_normal((2, 3))
            pre, valid = filter_preactivations(batch, filt)
            n_pos = np.maximum(batch.lengths - 1, 0)
            others = model.pooled_features(batch)

            def errors_with_count(i, c):
                pooled = others[i].copy()
                L = n_pos[i]
                pooled[k] = c if mode == "positive_sum" else ((2 * c - L) / L if L else 0.0)
                return sign_scalar(float(pooled @ model.output_weights) + model.output_bias) != y[i]

            wrong = np.array([[errors_with_count(i, c) for c in range(pre.shape[1] + 1)]
                              for i in range(len(y))])
            base = int(sum(wrong[i, n_pos[i]] for i in range(len(y))))
            bias, errors = _scan_filter(pre, valid, n_pos, wrong, base)

            values = np.sort(pre[valid])
            brute = []
            for t in candidate_thresholds(values):
                counts = np.sum(valid & (pre - t >= 0), axis=1)
                brute.append(sum(wrong[i, counts[i]] for i in range(len(y))))
            assert errors == min(brute)
            counts = np.sum(valid & (pre + bias >= 0), axis=1)
            assert errors == sum(wrong[i, counts[i]] for i in range(len(y)))


def test_init_median_filter_bias():
    docs, table = keyword_corpus(n=20)
    batch = DocBatch.from_documents([d.tokens for d in docs], table, 10)
    y = np.array([d.label for d in docs])
    model = init_conv_model(batch, y, ConvTrainConfig(n_filters=3, filter_width=2, seed=1))
    for filt, bias in zip(model.filters, model.filter_biases):
        pre, valid = filter_preactivations(batch, filt)
        assert bias == -np.median(pre[valid])


def _keyword_batch(**kw):
    docs, table = keyword_corpus(**kw)
    batch = DocBatch.from_documents([d.tokens for d in docs], table, 10)
    return batch, np.array([d.label for d in docs])


def test_epochs_zero_returns_init():
    batch, y = _keyword_batch(n=40)
    config = ConvTrainConfig(epochs=0, n_filters=3, filter_width=2, seed=3)
    model, log = train_conv(batch, y, config)
    assert model.equals(init_conv_model(batch, y, config))
    assert len(log) == 1


@pytest.mark.parametrize("mode", ["signed_average", "positive_sum"])
def test_training_log_and_determinism(mode):
    batch, y = _keyword_batch(n=60)
    config = ConvTrainConfig(epochs=40, n_filters=3, filter_width=2, pooling_mode=mode, seed=2)
    model, log = train_conv(batch, y, config)
    accepted = log.accepted_losses()
    assert all(a > b for a, b in zip(accepted, accepted[1:]))
    assert log.epoch_end_losses()[-1] == np.mean(model.predict_labels(batch) != y)
    again, log2 = train_conv(batch, y, config)
    assert again.dumps() == model.dumps() and log2 == log


def test_train_requires_both_classes():
    batch, y = _keyword_batch(n=10)
    with pytest.raises(ValueError):
        train_conv(batch, np.ones(len(y), dtype=int), ConvTrainConfig(epochs=1, n_filters=1))


@pytest.mark.parametrize("mode", ["signed_average", "positive_sum"])
def test_keyword_corpus_is_learned(mode):
    # 8-vote ensemble of F=4, width-1 models; single members vary a lot by
    # seed, so both the vote and the best member are checked
    batch, y = _keyword_batch(n=200)
    config = ConvTrainConfig(epochs=300, n_filters=4, filter_width=1, pooling_mode=mode)
    members = [train_conv(batch, y, ConvTrainConfig(**{**config.__dict__, "seed": s}))[0] for s in range(8)]
    best = max(np.mean(m.predict_labels(batch) == y) for m in members)
    vote = np.mean(Ensemble(members).predict(batch) == y)
    assert best >= 0.9 and vote >= 0.9
