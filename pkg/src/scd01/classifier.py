"""scikit-learn estimator around the SCD-trained sign network."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import encode_binary_target
from .network import LabeledDataset, output_scores
from .trainer import TrainConfig, train


class SCD01Classifier(ClassifierMixin, BaseEstimator):
    """Single-hidden-layer sign network minimising 01 loss by coordinate descent.

    Parameters
    ----------
    hidden_nodes : int, default=20
    epochs : int, default=1000
        Each epoch updates the output node and one random hidden node.
    learning_rate : float, default=1.0
        Step added to or subtracted from a weight. Unused with binary weights.
    batch_fraction : float, default=0.75
        Fraction of each class sampled per epoch to score candidates.
    feature_pool_size : int, default=128
        Coordinates tried per node and epoch (capped at the node's fan-in).
    binary_weights : bool, default=False
        Restrict weights to -1/+1; updates become sign flips.
    accept_ties : bool, default=False
        Also keep steps that leave the training error unchanged.
    random_state : int, default=0

    Attributes
    ----------
    network_ : SignNetwork
    log_ : TrainingLog
    classes_ : ndarray of shape (2,)
        ``classes_[0]`` is encoded as -1 and ``classes_[1]`` as +1.
    """

    def __init__(
        self,
        hidden_nodes=20,
        epochs=1000,
        learning_rate=1.0,
        batch_fraction=0.75,
        feature_pool_size=128,
        binary_weights=False,
        accept_ties=False,
        random_state=0,
    ):
        self.hidden_nodes = hidden_nodes
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_fraction = batch_fraction
        self.feature_pool_size = feature_pool_size
        self.binary_weights = binary_weights
        self.accept_ties = accept_ties
        self.random_state = random_state

    def _config(self):
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_fraction=self.batch_fraction,
            feature_pool_size=self.feature_pool_size,
            hidden_nodes=self.hidden_nodes,
            seed=0 if self.random_state is None else int(self.random_state),
            binary_mode=self.binary_weights,
            accept_ties=self.accept_ties,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y_signed = encode_binary_target(y)
        self.n_features_in_ = X.shape[1]
        self.network_, self.log_ = train(LabeledDataset(X, y_signed), self._config())
        return self

    @classmethod
    def from_network(cls, network, classes=(-1, 1)):
        """Wrap an already trained network."""
        est = cls(hidden_nodes=network.n_hidden, binary_weights=network.binary_mode)
        est.network_ = network
        est.classes_ = np.asarray(classes)
        est.n_features_in_ = network.n_features
        return est

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, but {type(self).__name__} "
                f"is expecting {self.n_features_in_} features as input"
            )
        return output_scores(self.network_, X)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[(scores >= 0).astype(int)]

    def predict_proba(self, X):
        """Hard 0/1 probabilities: a single sign network casts one vote."""
        pos = (self.decision_function(X) >= 0).astype(np.float64)
        return np.column_stack([1.0 - pos, pos])
