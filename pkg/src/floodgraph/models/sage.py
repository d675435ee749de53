"""Three-layer GraphSAGE on the watershed graph, in plain numpy.

Each layer maps ``[h_v || agg_u h_u]`` through a dense layer; hidden layers use
ReLU followed by inverted dropout and the last layer emits two logits.  The
aggregator is a row-normalised neighbour mean, optionally weighted by edge
weights.  Gradients are derived by hand and checked against finite differences
in the test suite.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import TrainingError
from .baselines import balanced_class_weights
from .config import TrainConfig


def init_params(dims, seed):
    """Glorot-uniform weights over the concatenated input, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        fan_in = 2 * d_in
        bound = np.sqrt(6.0 / (fan_in + d_out))
        params.append([rng.uniform(-bound, bound, size=(d_out, fan_in)), np.zeros(d_out)])
    return params


def forward(params, X, A, training=False, dropout=0.0, rng=None):
    """Logits for every node plus the cache needed by :func:`backward`."""
    H = X
    cache = []
    last = len(params) - 1
    for k, (W, b) in enumerate(params):
        M = A @ H
        C = np.concatenate([H, M], axis=1)
        Z = C @ W.T + b
        if k == last:
            cache.append((C, Z, None))
            return Z, cache
        R = np.maximum(Z, 0.0)
        mask = None
        if training and dropout > 0:
            mask = (rng.random(R.shape) >= dropout) / (1.0 - dropout)
            R = R * mask
        cache.append((C, Z, mask))
        H = R


def backward(params, cache, A, dlogits):
    """Gradients ``[[dW, db], ...]`` given the loss gradient w.r.t. the logits."""
    grads = [None] * len(params)
    dZ = dlogits
    for k in range(len(params) - 1, -1, -1):
        W, _ = params[k]
        C, _, _ = cache[k]
        grads[k] = [dZ.T @ C, dZ.sum(axis=0)]
        if k == 0:
            break
        d_in = W.shape[1] // 2
        dC = dZ @ W
        dH = dC[:, :d_in] + A.T @ dC[:, d_in:]
        _, Zp, maskp = cache[k - 1]
        if maskp is not None:
            dH = dH * maskp
        dZ = dH * (Zp > 0)
    return grads


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def weighted_cross_entropy(logits, y, mask, class_weights):
    """Sum over masked nodes of ``w_y * CE``; returns (loss, dloss/dlogits)."""
    p = softmax(logits)
    n = logits.shape[0]
    w = np.where(mask, np.asarray(class_weights)[y], 0.0)
    logp = np.log(np.clip(p[np.arange(n), y], 1e-300, None))
    loss = float(-(w * logp).sum())
    d = p.copy()
    d[np.arange(n), y] -= 1.0
    return loss, d * w[:, None]


class GraphSAGEClassifier(ClassifierMixin, BaseEstimator):
    """Full-batch GraphSAGE node classifier.

    ``fit`` and ``predict_proba`` take a :class:`~floodgraph.graph.BasinGraph`.
    Node features are standardised with statistics of the training nodes.
    ``train_mask`` restricts the loss to a subset of nodes (the rest still
    take part in message passing).
    """

    def __init__(self, hidden=64, n_layers=3, dropout=0.30, learning_rate=1e-3,
                 weight_decay=1e-4, epochs=200, beta1=0.9, beta2=0.999, eps=1e-8,
                 aggregation="weighted", class_weight="balanced", random_state=0):
        self.hidden = hidden
        self.n_layers = n_layers
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.aggregation = aggregation
        self.class_weight = class_weight
        self.random_state = random_state

    @classmethod
    def from_config(cls, config: TrainConfig):
        return cls(hidden=config.hidden, dropout=config.dropout,
                   learning_rate=config.learning_rate, weight_decay=config.weight_decay,
                   epochs=config.epochs, beta1=config.adam_beta1, beta2=config.adam_beta2,
                   eps=config.adam_eps, aggregation=config.aggregation,
                   class_weight=config.class_weights, random_state=config.seed)

    @property
    def dims(self):
        check_is_fitted(self, "params_")
        return tuple([self.params_[0][0].shape[1] // 2] + [W.shape[0] for W, _ in self.params_])

    def _inputs(self, graph):
        X = (graph.features - self.feature_mean_) / self.feature_scale_
        A = graph.aggregation_matrix(weighted=self.aggregation == "weighted")
        return X, A

    def fit(self, graph, train_mask=None):
        n = graph.n_nodes
        mask = np.ones(n, dtype=bool) if train_mask is None else np.asarray(train_mask, bool)
        y = graph.labels.astype(np.int64)
        if np.unique(y[mask]).size < 2:
            raise TrainingError("graph training nodes contain a single class")
        if self.class_weight == "balanced":
            cw = balanced_class_weights(y[mask])
        else:
            cw = np.ones(2)
        self.class_weights_ = cw

        Xtr = graph.features[mask]
        self.feature_mean_ = Xtr.mean(axis=0)
        sd = Xtr.std(axis=0)
        self.feature_scale_ = np.where(sd > 0, sd, 1.0)
        X, A = self._inputs(graph)

        d = X.shape[1]
        dims = [d] + [self.hidden] * (self.n_layers - 1) + [2]
        self.params_ = init_params(dims, self.random_state)
        m = [[np.zeros_like(W), np.zeros_like(b)] for W, b in self.params_]
        v = [[np.zeros_like(W), np.zeros_like(b)] for W, b in self.params_]
        rng = np.random.default_rng(self.random_state + 1)
        b1, b2 = self.beta1, self.beta2
        losses = []
        for epoch in range(1, self.epochs + 1):
            logits, cache = forward(self.params_, X, A, training=True, dropout=self.dropout,
                                    rng=rng)
            loss, dlogits = weighted_cross_entropy(logits, y, mask, cw)
            grads = backward(self.params_, cache, A, dlogits)
            losses.append(loss)
            for k, (p_k, g_k) in enumerate(zip(self.params_, grads)):
                for j in range(2):
                    g = g_k[j] + self.weight_decay * p_k[j]
                    m[k][j] = b1 * m[k][j] + (1 - b1) * g
                    v[k][j] = b2 * v[k][j] + (1 - b2) * g * g
                    mhat = m[k][j] / (1 - b1**epoch)
                    vhat = v[k][j] / (1 - b2**epoch)
                    p_k[j] -= self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)
        self.loss_curve_ = np.array(losses)
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, graph, training=False, seed=0):
        """Per-node logits, shape ``(n_nodes, 2)``."""
        check_is_fitted(self, "params_")
        X, A = self._inputs(graph)
        rng = np.random.default_rng(seed)
        logits, _ = forward(self.params_, X, A, training=training, dropout=self.dropout, rng=rng)
        return logits

    def predict_proba(self, graph):
        return softmax(self.decision_function(graph))

    def predict(self, graph):
        return self.predict_proba(graph).argmax(axis=1)

    def gradients(self, graph, labels=None, mask=None, class_weights=None):
        """Exact loss gradients for every parameter with dropout disabled."""
        check_is_fitted(self, "params_")
        X, A = self._inputs(graph)
        y = graph.labels if labels is None else np.asarray(labels)
        n = graph.n_nodes
        mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, bool)
        cw = self.class_weights_ if class_weights is None else np.asarray(class_weights)
        logits, cache = forward(self.params_, X, A)
        loss, d = weighted_cross_entropy(logits, y.astype(np.int64), mask, cw)
        return loss, backward(self.params_, cache, A, d)

    def loss(self, graph, labels=None, mask=None, class_weights=None):
        X, A = self._inputs(graph)
        y = graph.labels if labels is None else np.asarray(labels)
        n = graph.n_nodes
        mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, bool)
        cw = self.class_weights_ if class_weights is None else np.asarray(class_weights)
        logits, _ = forward(self.params_, X, A)
        return weighted_cross_entropy(logits, y.astype(np.int64), mask, cw)[0]

    @classmethod
    def from_params(cls, params, feature_mean=None, feature_scale=None, class_weights=(1.0, 1.0),
                    **kwargs):
        """Wrap explicit ``[[W, b], ...]`` parameters (identity scaling by default)."""
        m = cls(n_layers=len(params), hidden=params[0][0].shape[0], **kwargs)
        d = params[0][0].shape[1] // 2
        m.params_ = [[np.array(W, dtype=np.float64), np.array(b, dtype=np.float64)]
                     for W, b in params]
        m.feature_mean_ = np.zeros(d) if feature_mean is None else np.asarray(feature_mean, float)
        m.feature_scale_ = np.ones(d) if feature_scale is None else np.asarray(feature_scale, float)
        m.class_weights_ = np.asarray(class_weights, dtype=np.float64)
        m.classes_ = np.array([0, 1])
        return m

    def to_dict(self):
        check_is_fitted(self, "params_")
        return {
            "kind": "sage",
            "dims": list(self.dims),
            "params": self.get_params(),
            "weights": [W.ravel().tolist() for W, _ in self.params_],
            "biases": [b.tolist() for _, b in self.params_],
            "feature_mean": self.feature_mean_.tolist(),
            "feature_scale": self.feature_scale_.tolist(),
            "class_weights": self.class_weights_.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        dims = d["dims"]
        params = []
        for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            params.append([np.array(d["weights"][k]).reshape(d_out, 2 * d_in),
                           np.array(d["biases"][k])])
        m = cls(**d["params"])
        m.params_ = params
        m.feature_mean_ = np.array(d["feature_mean"])
        m.feature_scale_ = np.array(d["feature_scale"])
        m.class_weights_ = np.array(d["class_weights"])
        m.classes_ = np.array([0, 1])
        return m


def fit_sage(graph, config: TrainConfig | None = None, train_mask=None) -> GraphSAGEClassifier:
    return GraphSAGEClassifier.from_config(config or TrainConfig()).fit(graph, train_mask)


def sage_forward(model: GraphSAGEClassifier, graph, training_mode=False, seed=0) -> np.ndarray:
    return model.decision_function(graph, training=training_mode, seed=seed)


def sage_gradients(model: GraphSAGEClassifier, graph, labels=None, mask=None):
    """Gradient structure ``[[dW, db], ...]`` of the weighted loss (dropout off)."""
    return model.gradients(graph, labels, mask)[1]
