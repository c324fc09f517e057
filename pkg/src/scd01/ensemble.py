"""Majority-vote ensembles of independently trained sign models.

The vote fraction doubles as the class probability a black-box caller sees:
with ``k`` members it only ever takes the values ``0, 1/k, ..., 1``.
Ties (possible for even ``k``) resolve to the positive class.
"""

import json
import os
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.utils.validation import check_is_fitted

from .classifier import SCD01Classifier
from .cnn import FORMAT_NAME as CONV_FORMAT
from .cnn import ConvSignModel
from .network import SignNetwork, predict_labels
from .trainer import train

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "scd01/ensemble"
MANIFEST_VERSION = 1


def member_labels(member, X):
    if isinstance(member, SignNetwork):
        return predict_labels(member, X)
    return member.predict_labels(X)


@dataclass(frozen=True)
class VoteResult:
    positive_votes: int
    k: int

    @property
    def probability_positive(self):
        return self.positive_votes / self.k

    @property
    def probability_negative(self):
        return (self.k - self.positive_votes) / self.k

    @property
    def label(self):
        return 1 if 2 * self.positive_votes >= self.k else -1


class Ensemble:
    """``k`` trained members of one model type sharing one input layout."""

    def __init__(self, members):
        members = tuple(members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        kinds = {type(m) for m in members}
        if len(kinds) != 1:
            raise ValueError("ensemble members must all be the same model type")
        if isinstance(members[0], SignNetwork):
            dims = {(m.n_features,) for m in members}
        else:
            dims = {(m.dim,) for m in members}
        if len(dims) != 1:
            raise ValueError("ensemble members disagree on input dimension")
        self.members = members

    @property
    def k(self):
        return len(self.members)

    def positive_votes(self, X):
        votes = np.zeros(len(X), dtype=np.int64)
        for m in self.members:
            votes += member_labels(m, X) == 1
        return votes

    def predict_proba(self, X):
        """Columns are P(-1), P(+1), both multiples of ``1/k``."""
        votes = self.positive_votes(X)
        return np.column_stack([(self.k - votes) / self.k, votes / self.k])

    def predict(self, X):
        return np.where(2 * self.positive_votes(X) >= self.k, 1, -1).astype(np.int8)


def vote(ensemble, x):
    """Vote of every member on one input (a feature vector or one DocBatch row)."""
    if isinstance(ensemble.members[0], SignNetwork):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != ensemble.members[0].n_features:
            raise ValueError("input does not match the ensemble's feature dimension")
        x = x[None, :]
    elif len(x) != 1:
        raise ValueError("vote takes a single document")
    return VoteResult(int(ensemble.positive_votes(x)[0]), ensemble.k)


def _train_member(data, config, i):
    net, log = train(data, replace(config, seed=config.seed + i))
    return net, log


def train_ensemble(data, config, k=8, n_jobs=None):
    """Train ``k`` sign networks with seeds ``seed, seed + 1, ..., seed + k - 1``.

    Returns ``(ensemble, logs)``.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    results = Parallel(n_jobs=n_jobs)(delayed(_train_member)(data, config, i) for i in range(k))
    return Ensemble([r[0] for r in results]), [r[1] for r in results]


# persistence --------------------------------------------------------------


def _member_from_dict(doc):
    if doc.get("format") == CONV_FORMAT:
        return ConvSignModel.from_dict(doc)
    return SignNetwork.from_dict(doc)


def save_ensemble(ensemble, directory, model_type, **metadata):
    """Write ``member_XXX.json`` files and a manifest naming them.

    Extra keyword arguments are stored in the manifest verbatim.
    """
    os.makedirs(directory, exist_ok=True)
    names = []
    for i, member in enumerate(ensemble.members):
        name = f"member_{i:03d}.json"
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            fh.write(member.dumps() + "\n")
        names.append(name)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "model_type": model_type,
        "k": ensemble.k,
        "members": names,
        **metadata,
    }
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_ensemble(directory):
    """Return ``(ensemble, manifest)`` from a directory written by :func:`save_ensemble`."""
    with open(os.path.join(directory, MANIFEST_NAME), encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ValueError(f"{directory}: not an ensemble manifest")
    if manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{directory}: unsupported manifest version {manifest.get('version')!r}")
    members = []
    for name in manifest["members"]:
        with open(os.path.join(directory, name), encoding="utf-8") as fh:
            members.append(_member_from_dict(json.load(fh)))
    if len(members) != manifest["k"]:
        raise ValueError(f"{directory}: manifest lists {len(members)} members but k={manifest['k']}")
    return Ensemble(members), manifest


# estimator ----------------------------------------------------------------


def _fit_member(estimator, X, y):
    return estimator.fit(X, y)


class MajorityVoteClassifier(ClassifierMixin, BaseEstimator):
    """Fit ``n_votes`` clones of ``estimator`` with consecutive random states.

    ``predict_proba`` returns vote fractions and ``predict`` the majority,
    with ties going to ``classes_[1]``.

    Parameters
    ----------
    estimator : estimator, default=None
        Base classifier with an integer ``random_state`` parameter.
        Defaults to :class:`~scd01.SCD01Classifier`.
    n_votes : int, default=8
    random_state : int, default=0
        Member ``i`` is fitted with ``random_state + i``.
    n_jobs : int, default=None
        Members are fitted in parallel through joblib.
    """

    def __init__(self, estimator=None, n_votes=8, random_state=0, n_jobs=None):
        self.estimator = estimator
        self.n_votes = n_votes
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _base(self):
        if self.estimator is None:
            return SCD01Classifier()
        return self.estimator

    def fit(self, X, y):
        if int(self.n_votes) != self.n_votes or self.n_votes < 1:
            raise ValueError(f"n_votes must be a positive integer, got {self.n_votes!r}")
        seed = 0 if self.random_state is None else int(self.random_state)
        members = [
            clone(self._base()).set_params(random_state=seed + i) for i in range(self.n_votes)
        ]
        self.estimators_ = Parallel(n_jobs=self.n_jobs)(
            delayed(_fit_member)(m, X, y) for m in members
        )
        self.classes_ = self.estimators_[0].classes_
        if hasattr(self.estimators_[0], "n_features_in_"):
            self.n_features_in_ = self.estimators_[0].n_features_in_
        return self

    @classmethod
    def from_members(cls, estimators):
        ens = cls(n_votes=len(estimators))
        ens.estimators_ = list(estimators)
        ens.classes_ = ens.estimators_[0].classes_
        return ens

    @property
    def ensemble_(self):
        check_is_fitted(self, "estimators_")
        return Ensemble([_model_of(e) for e in self.estimators_])

    def positive_votes(self, X):
        check_is_fitted(self, "estimators_")
        votes = np.zeros(len(X), dtype=np.int64)
        for est in self.estimators_:
            votes += est.predict(X) == self.classes_[1]
        return votes

    def predict_proba(self, X):
        votes = self.positive_votes(X)
        k = len(self.estimators_)
        return np.column_stack([(k - votes) / k, votes / k])

    def predict(self, X):
        votes = self.positive_votes(X)
        k = len(self.estimators_)
        return self.classes_[(2 * votes >= k).astype(int)]


def _model_of(estimator):
    for attr in ("network_", "model_"):
        if hasattr(estimator, attr):
            return getattr(estimator, attr)
    raise TypeError(f"{type(estimator).__name__} does not expose a trained sign model")
