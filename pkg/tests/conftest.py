import numpy as np
import pytest

from scd01.network import LabeledDataset, SignNetwork
from scd01.text import Document, EmbeddingTable


def make_blobs(n_per_class, d=10, separation=4.0, seed=0):
    """Two unit-variance Gaussian blobs whose means are ``separation`` apart."""
    rng = np.random.default_rng(seed)
    shift = np.zeros(d)
    shift[0] = separation / 2
    X = np.vstack([rng.standard_normal((n_per_class, d)) - shift,
                   rng.standard_normal((n_per_class, d)) + shift])
    y = np.repeat([-1, 1], n_per_class)
    order = rng.permutation(len(y))
    return X[order], y[order]


def random_network(d, h, seed=0, binary=False):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d, h))
    w = rng.standard_normal(h)
    if binary:
        W, w = np.where(W >= 0, 1.0, -1.0), np.where(w >= 0, 1.0, -1.0)
    return SignNetwork(W, rng.standard_normal(h), w, float(rng.standard_normal()), binary_mode=binary)


def keyword_corpus(seed=0, n=200, d=8, length=10, noise=0.1, n_distractors=50):
    """Fixed-length documents; every positive one contains the word ``good``.

    Distractor vectors are small, the keyword vector has unit norm, so a
    single width-1 filter aimed at the keyword separates the classes.
    """
    rng = np.random.default_rng(seed)
    vocab = [f"w{i}" for i in range(n_distractors)] + ["good"]
    vectors = noise * rng.standard_normal((len(vocab), d))
    g = rng.standard_normal(d)
    vectors[-1] = g / np.linalg.norm(g)
    table = EmbeddingTable(vocab, vectors)
    docs = []
    for i in range(n):
        tokens = list(rng.choice(vocab[:-1], length))
        label = 1 if i % 2 else -1
        if label == 1:
            tokens[rng.integers(length)] = "good"
        docs.append(Document(tokens, label))
    return docs, table


def toy_sentiment(seed=0, n=120, d=6):
    """Small two-class corpus with polar words and near-synonym pairs."""
    rng = np.random.default_rng(seed)
    neutral = [f"w{i}" for i in range(30)]
    polar = ["good", "great", "bad", "awful"]
    vectors = 0.3 * rng.standard_normal((len(neutral) + len(polar), d))
    vectors[30, 0] += 2.0
    vectors[31, :2] += [2.0, 0.2]
    vectors[32, 0] -= 2.0
    vectors[33, :2] -= [2.0, 0.2]
    table = EmbeddingTable(neutral + polar, vectors)
    docs = []
    for i in range(n):
        label = 1 if i % 2 else -1
        tokens = list(rng.choice(neutral, 8))
        tokens.append(str(rng.choice(polar[:2] if label == 1 else polar[2:])))
        rng.shuffle(tokens)
        docs.append(Document(tokens, label))
    return docs, table


def write_embeddings(table, path):
    table.save(path)
    return str(path)


def write_corpus(docs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(f"{doc.label}\t{' '.join(doc.tokens)}\n")
    return str(path)


@pytest.fixture
def blobs():
    X, y = make_blobs(100, d=5, separation=4.0, seed=1)
    return LabeledDataset(X, y)


@pytest.fixture
def toy_files(tmp_path):
    docs, table = toy_sentiment()
    return {
        "docs": docs,
        "table": table,
        "corpus": write_corpus(docs, tmp_path / "train.tsv"),
        "embeddings": write_embeddings(table, tmp_path / "emb.txt"),
        "dir": tmp_path,
    }


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL/SKIP line per acceptance criterion.

    Lines are echoed immediately and repeated in the terminal summary.
    """
    lines = request.config.stash.setdefault(ACCEPTANCE_LINES, [])

    def record(number, status, detail):
        line = f"criterion {number}: {status} {detail}"
        lines.append(line)
        print(line, flush=True)
        return status == "PASS"

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
