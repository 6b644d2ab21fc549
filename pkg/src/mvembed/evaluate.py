"""Node classification and link prediction metrics for learned representations."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from mvembed.embedding import EmbeddingStore

log = logging.getLogger(__name__)


@dataclass
class ClassifierOvR:
    """One L2-regularised logistic regression per label (columns of ``coef``)."""

    coef: np.ndarray
    bias: np.ndarray
    penalty: float = 1.0
    epochs: int = 200
    history: np.ndarray | None = None

    def margins(self, x) -> np.ndarray:
        return np.asarray(x) @ self.coef + self.bias

    def predict(self, x) -> np.ndarray:
        """Labels with positive margin; the top-scoring label when none is positive."""
        m = self.margins(x)
        pred = m > 0
        none = ~pred.any(axis=1)
        pred[none, np.argmax(m[none], axis=1)] = True
        return pred.astype(np.int64)


def logistic_objective(coef, bias, x, y, penalty=1.0):
    """Per-label ``0.5*|w|^2 + C * sum log(1 + exp(-s * margin))`` with s in {-1, +1}.

    Returns (losses per label, grad coef, grad bias). The bias is not penalised.
    """
    s = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    m = x @ coef + bias
    losses = 0.5 * (coef ** 2).sum(axis=0) + penalty * np.logaddexp(0.0, -s * m).sum(axis=0)
    # d/dm log(1 + exp(-s m)) = -s * sigmoid(-s m)
    dm = -s * penalty / (1.0 + np.exp(s * m))
    return losses, coef + x.T @ dm, dm.sum(axis=0)


def fit_ovr(x, y, penalty: float = 1.0, epochs: int = 200) -> ClassifierOvR:
    """Full-batch gradient descent with the 1/L step, so every epoch is a descent step."""
    x = np.asarray(x, dtype=np.float64)
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    n, d = x.shape
    L = y.shape[1]
    coef = np.zeros((d, L))
    bias = np.zeros(L)
    for lab in np.flatnonzero(y.sum(axis=0) == 0):
        log.warning("label %d has no positive training examples", lab)
    xb = np.hstack([x, np.ones((n, 1))])
    lip = 1.0 + 0.25 * penalty * np.linalg.norm(xb, 2) ** 2
    step = 1.0 / lip
    history = np.empty((epochs + 1, L))
    for epoch in range(epochs):
        history[epoch], gc, gb = logistic_objective(coef, bias, x, y, penalty)
        coef -= step * gc
        bias -= step * gb
    history[epochs] = logistic_objective(coef, bias, x, y, penalty)[0]
    empty = y.sum(axis=0) == 0
    coef[:, empty] = 0.0
    bias[empty] = -np.inf
    return ClassifierOvR(coef, bias, penalty, epochs, history)


def f1_scores(pred, truth) -> tuple[float, float]:
    """(macro-F1, micro-F1) in percent for binary indicator matrices.

    Labels with no positives in either truth or predictions are left out of
    the macro average.
    """
    pred = np.atleast_2d(np.asarray(pred)).astype(bool)
    truth = np.atleast_2d(np.asarray(truth)).astype(bool)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    tp = (pred & truth).sum(axis=0).astype(float)
    fp = (pred & ~truth).sum(axis=0).astype(float)
    fn = (~pred & truth).sum(axis=0).astype(float)
    denom = 2 * tp + fp + fn
    active = denom > 0
    per_label = np.where(active, 2 * tp / np.where(active, denom, 1), 0.0)
    macro = float(per_label[active].mean()) if active.any() else 0.0
    total = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = float(2 * tp.sum() / total) if total > 0 else 0.0
    return 100.0 * macro, 100.0 * micro


def link_auc(scores, is_positive) -> float:
    """Rank-statistic AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(is_positive, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def cosine_scores(x, pairs) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    a, b = x[pairs[:, 0]], x[pairs[:, 1]]
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    return np.where(denom > 0, (a * b).sum(axis=1) / np.where(denom > 0, denom, 1.0), 0.0)


def evaluate_links(x, positives, negatives) -> float:
    scores = np.concatenate([cosine_scores(x, positives), cosine_scores(x, negatives)])
    labels = np.r_[np.ones(len(positives), bool), np.zeros(len(negatives), bool)]
    return link_auc(scores, labels)


def select_features(store: EmbeddingStore, which) -> np.ndarray:
    """``"robust"``, ``"concat"`` or a view index."""
    if which == "robust":
        return store.robust
    if which == "concat":
        return store.concat()
    return store.views[int(which)]


def normalize_rows(x) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def evaluate_features(x, labels, train, test, penalty=1.0, epochs=200, normalize=False):
    """Fit on ``train`` rows, return (macro, micro) F1 on ``test`` rows."""
    train = np.asarray(train, dtype=np.int64)
    test = np.asarray(test, dtype=np.int64)
    overlap = np.intersect1d(train, test)
    if overlap.size:
        raise ValueError(f"train and test nodes overlap ({overlap.size} shared)")
    x = normalize_rows(x) if normalize else np.asarray(x)
    y = one_hot(labels) if np.asarray(labels).ndim == 1 else np.asarray(labels)
    clf = fit_ovr(x[train], y[train], penalty, epochs)
    return f1_scores(clf.predict(x[test]), y[test])


def evaluate_classification(store: EmbeddingStore, which, labels, train, test, **kw):
    return evaluate_features(select_features(store, which), labels, train, test, **kw)


def one_hot(labels, num_labels: int | None = None) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    num_labels = int(labels.max()) + 1 if num_labels is None else num_labels
    out = np.zeros((labels.size, num_labels))
    out[np.arange(labels.size), labels] = 1.0
    return out


def degree_buckets(degrees, groups: int) -> np.ndarray:
    """Bucket id per node, 0 holding the highest-degree nodes, equal-count groups."""
    order = np.argsort(-np.asarray(degrees), kind="stable")
    bucket = np.empty(order.size, dtype=np.int64)
    bucket[order] = np.arange(order.size) * groups // max(order.size, 1)
    return bucket


def format_metrics(metrics: dict) -> str:
    return " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                    for k, v in metrics.items())
