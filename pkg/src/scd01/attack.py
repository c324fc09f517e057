"""Black-box word-substitution attack with exact query metering.

The attacker follows the familiar greedy recipe: rank word positions by how
much deleting them lowers the true-class probability, then walk the ranking
and try embedding-space neighbours at each position until the predicted
label flips. It only ever sees class probabilities, and every probability
request is counted.

Against a k-member vote ensemble those probabilities are vote fractions, so
the signal the ranking relies on is quantised to steps of ``1/k``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .text import Document


@dataclass(frozen=True)
class AttackConfig:
    n_candidates: int = 50
    min_similarity: float = 0.5
    max_perturb: float = 1.0

    def __post_init__(self):
        if int(self.n_candidates) != self.n_candidates or self.n_candidates < 0:
            raise ValueError(f"n_candidates must be a non-negative integer, got {self.n_candidates!r}")
        if not -1.0 <= self.min_similarity <= 1.0:
            raise ValueError(f"min_similarity must lie in [-1, 1], got {self.min_similarity!r}")
        if not 0.0 <= self.max_perturb <= 1.0:
            raise ValueError(f"max_perturb must lie in [0, 1], got {self.max_perturb!r}")


# black-box target ---------------------------------------------------------


class MeteredTarget:
    """Probability oracle over token sequences that counts every request.

    ``model`` needs ``predict_proba`` over a list of token sequences; its
    columns follow ``model.classes_`` (``[-1, 1]`` when absent). Each
    document scored is one query.
    """

    def __init__(self, model):
        self._model = model
        classes = list(getattr(model, "classes_", [-1, 1]))
        if sorted(classes) != [-1, 1]:
            raise ValueError(f"target classes must be -1 and +1, got {classes}")
        self._pos_col = classes.index(1)
        self._neg_col = classes.index(-1)
        self.query_count = 0
        self.history = []

    def fork(self):
        """A fresh counter over the same model."""
        return MeteredTarget(self._model)

    def positive_probability(self, docs):
        """P(+1) for each document; costs ``len(docs)`` queries."""
        docs = [tuple(d) for d in docs]
        if not docs:
            return np.empty(0)
        proba = np.asarray(self._model.predict_proba(docs), dtype=np.float64)
        p_pos = proba[:, self._pos_col]
        self.query_count += len(docs)
        self.history.extend(p_pos.tolist())
        return p_pos

    def class_probability(self, docs, label):
        p_pos = self.positive_probability(docs)
        return p_pos if label == 1 else 1.0 - p_pos


def label_from_positive_probability(p_pos):
    """+1 when P(+1) >= 1/2, matching the vote tie rule."""
    return np.where(np.asarray(p_pos) >= 0.5, 1, -1)


class TextClassifier:
    """Adapter giving a trained ensemble a ``predict_proba`` over token lists."""

    classes_ = np.array([-1, 1])

    def __init__(self, ensemble, featurize):
        self.ensemble = ensemble
        self.featurize = featurize

    def predict_proba(self, docs):
        return self.ensemble.predict_proba(self.featurize(docs))

    def predict(self, docs):
        return self.ensemble.predict(self.featurize(docs))


# synonyms -----------------------------------------------------------------


class SynonymIndex:
    """Per-token neighbour lists ``[(token, cosine), ...]``, best first."""

    def __init__(self, neighbours, n_candidates, min_similarity):
        self.neighbours = neighbours
        self.n_candidates = n_candidates
        self.min_similarity = min_similarity

    def __contains__(self, token):
        return token in self.neighbours

    def __len__(self):
        return len(self.neighbours)

    def candidates(self, token):
        return [tok for tok, _ in self.neighbours.get(token, ())]

    @classmethod
    def empty(cls):
        return cls({}, 0, 1.0)


def build_synonym_index(table, n_candidates=50, min_similarity=0.5, vocabulary=None, chunk_size=512):
    """Exact top-``n_candidates`` cosine neighbours with similarity >= ``min_similarity``.

    Ties in similarity are broken by token order. Zero vectors have no
    direction and neither get nor serve as neighbours. ``vocabulary``
    restricts which tokens receive lists; neighbours are always drawn from
    the whole table.
    """
    norms = np.linalg.norm(table.vectors, axis=1)
    usable = norms > 0
    unit = np.zeros_like(table.vectors)
    unit[usable] = table.vectors[usable] / norms[usable, None]
    lex_rank = np.empty(len(table), dtype=np.int64)
    lex_rank[np.argsort(np.array(table.tokens, dtype=object), kind="stable")] = np.arange(len(table))

    if vocabulary is None:
        queries = list(table.tokens)
    else:
        queries = sorted({t for t in vocabulary if t in table.index})
    neighbours = {}
    for start in range(0, len(queries), chunk_size):
        chunk = queries[start : start + chunk_size]
        rows = np.array([table.index[t] for t in chunk], dtype=np.int64)
        sims = np.clip(unit[rows] @ unit.T, -1.0, 1.0)
        sims[:, ~usable] = -np.inf
        sims[np.arange(len(rows)), rows] = -np.inf
        for tok, row, s in zip(chunk, rows, sims):
            if not usable[row] or n_candidates == 0:
                neighbours[tok] = []
                continue
            hits = np.flatnonzero(s >= min_similarity)
            if len(hits) > n_candidates:
                cutoff = np.partition(s[hits], len(hits) - n_candidates)[len(hits) - n_candidates]
                hits = hits[s[hits] >= cutoff]
            order = np.lexsort((lex_rank[hits], -s[hits]))[:n_candidates]
            neighbours[tok] = [(table.tokens[j], float(s[j])) for j in hits[order]]
    return SynonymIndex(neighbours, n_candidates, min_similarity)


# the attack ---------------------------------------------------------------


@dataclass
class AttackOutcome:
    true_label: int
    original_label: int
    final_label: int
    success: bool
    substitutions: list
    queries: int
    adversarial_tokens: tuple = ()
    observed: list = field(default_factory=list, repr=False)

    @property
    def clean_correct(self):
        return self.original_label == self.true_label

    @property
    def attacked_correct(self):
        return self.final_label == self.true_label


def importance_scores(doc, target):
    """True-class probability drop when each word is deleted.

    One query on the intact document plus one per position.
    """
    tokens = list(doc.tokens)
    docs = [tokens] + [tokens[:i] + tokens[i + 1 :] for i in range(len(tokens))]
    probs = target.class_probability(docs, doc.label)
    return probs[0] - probs[1:]


def attack_document(doc, target, index, config=AttackConfig()):
    start = target.query_count
    seen = len(target.history)
    tokens = list(doc.tokens)
    y = doc.label
    p_pos = target.positive_probability([tokens])[0]
    clean = int(label_from_positive_probability(p_pos))

    def outcome(final, success, subs, adv):
        return AttackOutcome(
            true_label=y,
            original_label=clean,
            final_label=final,
            success=success,
            substitutions=subs,
            queries=target.query_count - start,
            adversarial_tokens=tuple(adv),
            observed=list(target.history[seen:]),
        )

    if clean != y:
        return outcome(clean, False, [], tokens)

    importance = importance_scores(doc, target)
    ranking = np.argsort(-importance, kind="stable")
    current = list(tokens)
    current_p = p_pos if y == 1 else 1.0 - p_pos
    subs = []
    n = len(tokens)
    for pos in ranking:
        if (len(subs) + 1) / n > config.max_perturb:
            break
        old = tokens[pos]
        candidates = index.candidates(old)[: config.n_candidates]
        if not candidates:
            continue
        trial = []
        for cand in candidates:
            doc_c = list(current)
            doc_c[pos] = cand
            trial.append(doc_c)
        p_cand = target.positive_probability(trial)
        labels = label_from_positive_probability(p_cand)
        flipped = np.flatnonzero(labels != y)
        if flipped.size:
            j = int(flipped[0])
            subs.append((int(pos), old, candidates[j]))
            return outcome(int(labels[j]), True, subs, trial[j])
        p_true = p_cand if y == 1 else 1.0 - p_cand
        j = int(np.argmin(p_true))
        if p_true[j] < current_p:
            current = trial[j]
            current_p = p_true[j]
            subs.append((int(pos), old, candidates[j]))
    return outcome(y, False, subs, current)


# corpus-level evaluation ----------------------------------------------------


@dataclass
class AttackReport:
    clean_accuracy: float
    after_attack_accuracy: float
    mean_queries: float
    outcomes: list

    @classmethod
    def from_outcomes(cls, outcomes):
        if not outcomes:
            raise ValueError("cannot summarise an empty attack run")
        n = len(outcomes)
        return cls(
            clean_accuracy=sum(o.clean_correct for o in outcomes) / n,
            after_attack_accuracy=sum(o.attacked_correct for o in outcomes) / n,
            mean_queries=sum(o.queries for o in outcomes) / n,
            outcomes=list(outcomes),
        )

    def rows_tsv(self):
        lines = ["doc_id\tclean_correct\tattacked_correct\tn_substitutions\tqueries"]
        for i, o in enumerate(self.outcomes):
            lines.append(
                f"{i}\t{int(o.clean_correct)}\t{int(o.attacked_correct)}\t"
                f"{len(o.substitutions)}\t{o.queries}"
            )
        return "\n".join(lines) + "\n"

    def summary_tsv(self, dataset="", model=""):
        return format_summary(
            dataset, model, self.clean_accuracy, self.after_attack_accuracy, self.mean_queries
        )

    def adversarial_text(self):
        """One line per attacked document, substitutions marked ``[[old->new]]``."""
        lines = []
        for i, o in enumerate(self.outcomes):
            marked = list(o.adversarial_tokens)
            for pos, old, new in o.substitutions:
                marked[pos] = f"[[{old}->{new}]]"
            lines.append(f"{i}\t{int(o.success)}\t{' '.join(marked)}")
        return "\n".join(lines) + "\n"


SUMMARY_HEADER = "dataset\tmodel\tCl\tAdv\tQue"


def format_summary(dataset, model, clean, adversarial, queries):
    """Summary line in percent (one decimal) and mean queries (rounded)."""
    return (
        f"{SUMMARY_HEADER}\n{dataset}\t{model}\t{100 * clean:.1f}\t"
        f"{100 * adversarial:.1f}\t{round(queries)}\n"
    )


def summary_from_rows(text):
    """Recompute ``(Cl, Adv, Que)`` fractions from a per-document TSV."""
    rows = [line.split("\t") for line in text.splitlines()[1:] if line.strip()]
    if not rows:
        raise ValueError("no per-document rows")
    n = len(rows)
    clean = sum(int(r[1]) for r in rows) / n
    adv = sum(int(r[2]) for r in rows) / n
    queries = sum(int(r[4]) for r in rows) / n
    return clean, adv, queries


def _attack_one(model, doc, index, config):
    return attack_document(doc, MeteredTarget(model), index, config)


def evaluate(model, corpus, index, config=AttackConfig(), n_jobs=None):
    """Attack every document against its own metered view of ``model``."""
    docs = list(corpus)
    if not docs:
        raise ValueError("evaluate needs a non-empty corpus")
    for d in docs:
        if not isinstance(d, Document):
            raise TypeError("corpus entries must be Document instances")
    if isinstance(model, MeteredTarget):
        model = model._model
    if n_jobs in (None, 1):
        outcomes = [_attack_one(model, d, index, config) for d in docs]
    else:
        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(_attack_one)(model, d, index, config) for d in docs
        )
    return AttackReport.from_outcomes(outcomes)


def vote_grid(k):
    """Probabilities a k-member vote can produce."""
    return [i / k for i in range(k + 1)]


def on_vote_grid(p, k):
    return math.isclose(p * k, round(p * k), abs_tol=1e-9) and 0 <= round(p * k) <= k
