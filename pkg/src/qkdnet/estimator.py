"""Scikit-learn style wrappers around the channel simulator and the link predictor."""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from ._validation import check_is_fitted, check_pairs
from .channel import ChannelParams, simulate_network
from .dataset import FeatureScaling, GraphSample, full_split, make_folds
from .evaluation import auc, score_pairs
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .topology import NetworkTopology
from .training import TrainConfig, cross_validate, train_fold


class ChannelSimulator(TransformerMixin, BaseEstimator):
    """Attach BB84 link metrics to a :class:`NetworkTopology`.

    Stateless: ``fit`` only validates the parameters.
    """

    def __init__(self, params=None, random_state=0):
        self.params = params
        self.random_state = random_state

    def fit(self, X=None, y=None):
        self.params_ = self.params if self.params is not None else ChannelParams()
        return self

    def transform(self, X: NetworkTopology):
        if not isinstance(X, NetworkTopology):
            raise TypeError(f"expected a NetworkTopology, got {type(X).__name__}")
        params = getattr(self, "params_", None) or self.params or ChannelParams()
        return simulate_network(X, params, self.random_state)


class QKDLinkPredictor(ClassifierMixin, BaseEstimator):
    """Graph-attention link predictor for simulated QKD networks.

    With ``early_stopping=True``, ``fit`` trains on the first of ``k_folds``
    splits of the sample's links and keeps the parameters of the best
    validation epoch. With ``early_stopping=False`` it trains on every link for
    ``epochs`` epochs and keeps the final parameters. Prediction methods take
    the graph context (a :class:`GraphSample`) and an ``(m, 2)`` array of node
    pairs.
    """

    def __init__(
        self,
        hidden=64,
        heads=4,
        dropout=0.2,
        leaky_relu_slope=0.2,
        layernorm_epsilon=1e-5,
        symmetric_decoder=False,
        dropout_per_row=True,
        epochs=200,
        patience=20,
        k_folds=5,
        learning_rate=1e-3,
        weight_decay=1e-4,
        plateau_factor=0.5,
        plateau_patience=10,
        monitor="loss",
        resample_negatives=False,
        edge_feature_mask_rate=0.0,
        early_stopping=True,
        random_state=0,
    ):
        self.hidden = hidden
        self.heads = heads
        self.dropout = dropout
        self.leaky_relu_slope = leaky_relu_slope
        self.layernorm_epsilon = layernorm_epsilon
        self.symmetric_decoder = symmetric_decoder
        self.dropout_per_row = dropout_per_row
        self.epochs = epochs
        self.patience = patience
        self.k_folds = k_folds
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.plateau_factor = plateau_factor
        self.plateau_patience = plateau_patience
        self.monitor = monitor
        self.resample_negatives = resample_negatives
        self.edge_feature_mask_rate = edge_feature_mask_rate
        self.early_stopping = early_stopping
        self.random_state = random_state

    def model_config(self):
        return ModelConfig(
            hidden=self.hidden, heads=self.heads, dropout=self.dropout,
            leaky_relu_slope=self.leaky_relu_slope, layernorm_epsilon=self.layernorm_epsilon,
            symmetric_decoder=self.symmetric_decoder, dropout_per_row=self.dropout_per_row,
        )

    def train_config(self):
        names = {f.name for f in fields(TrainConfig)} - {"seed"}
        return TrainConfig(seed=self.random_state, **{k: getattr(self, k) for k in names})

    def fit(self, X: GraphSample, y=None):
        if not isinstance(X, GraphSample):
            raise TypeError(f"expected a GraphSample, got {type(X).__name__}")
        if self.early_stopping:
            split = make_folds(X, self.k_folds, self.random_state)[0]
        else:
            split = full_split(X, self.random_state)
        result = train_fold(X, split, self.model_config(), self.train_config())
        self.params_ = result.best_params
        self.scaling_ = result.scaling
        self.fold_result_ = result
        self.classes_ = np.array([0, 1])
        return self

    def cross_validate(self, X: GraphSample):
        return cross_validate(X, self.model_config(), self.train_config())

    def decision_function(self, X: GraphSample, pairs):
        check_is_fitted(self)
        pairs = check_pairs(pairs, X.num_nodes)
        return np.array([s.logit for s in score_pairs(self.params_, X, pairs, self.scaling_)])

    def predict_proba(self, X: GraphSample, pairs):
        logits = self.decision_function(X, pairs)
        p = 1.0 / (1.0 + np.exp(-logits))
        return np.column_stack([1.0 - p, p])

    def predict(self, X: GraphSample, pairs):
        return (self.predict_proba(X, pairs)[:, 1] >= 0.5).astype(np.int64)

    def score(self, X: GraphSample, pairs, labels):
        return auc(self.decision_function(X, pairs), labels)

    def save(self, path):
        check_is_fitted(self)
        save_checkpoint(path, self.params_, extra={"scaling": self.scaling_.to_dict(), "estimator": self.get_params()})

    @classmethod
    def load(cls, path):
        params, extra = load_checkpoint(path)
        est = cls(**extra.get("estimator", {}))
        est.params_ = params
        est.scaling_ = FeatureScaling.from_dict(extra["scaling"])
        est.classes_ = np.array([0, 1])
        return est

    @classmethod
    def from_fold(cls, result, **kwargs):
        est = cls(**kwargs)
        est.params_ = result.best_params
        est.scaling_ = result.scaling
        est.fold_result_ = result
        est.classes_ = np.array([0, 1])
        return est
