"""Softmax attention over views, task losses and the view-weight learner."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from mvembed.embedding import EmbeddingStore

log = logging.getLogger(__name__)


class AttentionDiverged(FloatingPointError):
    pass


@dataclass
class LabeledSet:
    """Labeled nodes (``task="classification"``) or positive pairs (``task="link"``)."""

    task: str
    nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    labels: np.ndarray | None = None
    pairs: np.ndarray | None = None
    label_names: list[str] | None = None

    def __post_init__(self):
        if self.task == "classification":
            self.nodes = np.asarray(self.nodes, dtype=np.int64)
            self.labels = np.atleast_2d(np.asarray(self.labels, dtype=np.float64))
            if self.labels.shape[0] != self.nodes.size:
                raise ValueError("one label vector per labeled node is required")
        elif self.task == "link":
            self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
            self.nodes = np.unique(self.pairs)
        else:
            raise ValueError(f"unknown task {self.task!r}")

    def __len__(self) -> int:
        return self.nodes.size if self.task == "classification" else len(self.pairs)

    def check_nodes(self, num_nodes: int) -> None:
        ids = self.nodes if self.task == "classification" else self.pairs.ravel()
        if ids.size and (ids.min() < 0 or ids.max() >= num_nodes):
            raise ValueError("labeled set references unknown nodes")


@dataclass
class AttentionParams:
    """View feature vectors ``z`` (K, K*d) and, for classification, ``w`` (L, d)."""

    z: np.ndarray
    w: np.ndarray | None = None
    step: float = 0.1
    epochs: int = 200
    tol: float = 1e-6
    w_step: float = 0.1

    @classmethod
    def zeros(cls, num_views: int, dim: int, num_labels: int | None = None, **kw):
        w = None if num_labels is None else np.zeros((num_labels, dim))
        return cls(np.zeros((num_views, num_views * dim)), w, **kw)


def softmax_rows(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def view_weights(x_concat, z) -> np.ndarray:
    """Attention weights of one node (or a batch of rows) over the K views."""
    x_concat = np.asarray(x_concat, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x_concat.shape[-1] != z.shape[1]:
        raise ValueError(f"concatenated width {x_concat.shape[-1]} != z width {z.shape[1]}")
    return softmax_rows(x_concat @ z.T)


def weights_for_all(store: EmbeddingStore, z) -> np.ndarray:
    return view_weights(store.concat(), z)


def robust_for(store: EmbeddingStore, nodes, lam) -> np.ndarray:
    """Robust vectors of ``nodes`` under weights ``lam`` (rows aligned with nodes)."""
    return np.einsum("nk,knd->nd", lam, store.views[:, nodes, :])


def classification_loss(x, labels, w):
    """Square loss sum ||w x_i - y_i||^2 and its gradient w.r.t. each x_i."""
    x = np.atleast_2d(x)
    labels = np.atleast_2d(labels)
    w = np.atleast_2d(w)
    if labels.shape[1] != w.shape[0]:
        raise ValueError(f"label length {labels.shape[1]} != classifier rows {w.shape[0]}")
    resid = x @ w.T - labels
    return float((resid ** 2).sum()), 2.0 * resid @ w


def classifier_gradient(x, labels, w) -> np.ndarray:
    resid = np.atleast_2d(x) @ w.T - labels
    return 2.0 * resid.T @ np.atleast_2d(x)


def link_loss(x, pairs):
    """Negative summed cosine over positive pairs and its gradient w.r.t. rows of ``x``.

    Pairs touching a zero-norm row are skipped.
    """
    x = np.atleast_2d(x)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    grad = np.zeros_like(x)
    norms = np.linalg.norm(x, axis=1)
    ok = (norms[pairs[:, 0]] > 0) & (norms[pairs[:, 1]] > 0)
    if not ok.all():
        log.warning("%d link pairs skipped: zero-norm representation", int((~ok).sum()))
        pairs = pairs[ok]
    if pairs.size == 0:
        return 0.0, grad
    a, b = pairs[:, 0], pairs[:, 1]
    xa, xb = x[a], x[b]
    na, nb = norms[a][:, None], norms[b][:, None]
    cos = (xa * xb).sum(axis=1, keepdims=True) / (na * nb)
    ga = xb / (na * nb) - cos * xa / na ** 2
    gb = xa / (na * nb) - cos * xb / nb ** 2
    np.add.at(grad, a, -ga)
    np.add.at(grad, b, -gb)
    return float(-cos.sum()), grad


def attention_gradient(store: EmbeddingStore, nodes, lam, grad_x) -> np.ndarray:
    """Gradient of the attention loss w.r.t. every z_k.

    ``grad_x`` holds dO/dx_i for the robust vector of each node in ``nodes``;
    ``lam`` holds their current view weights.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    grad_x = np.atleast_2d(grad_x)
    xv = store.views[:, nodes, :]
    if grad_x.shape != (nodes.size, store.dim):
        raise ValueError("grad_x must have one d-vector per node")
    # dO/dlambda_i^k through the vote x_i = sum_k lambda_i^k x_i^k
    g_lam = np.einsum("knd,nd->nk", xv, grad_x)
    mean = (lam * g_lam).sum(axis=1, keepdims=True)
    coeff = lam * (g_lam - mean)
    return coeff.T @ store.concat(nodes)


class _Objective:
    """Attention loss restricted to the labeled nodes, as a function of (z, w)."""

    def __init__(self, labeled: LabeledSet, store: EmbeddingStore):
        self.labeled = labeled
        self.store = store
        self.nodes = labeled.nodes
        self.xc = store.concat(self.nodes)
        if labeled.task == "link":
            pos = {int(n): r for r, n in enumerate(self.nodes)}
            self.local_pairs = np.array([[pos[int(a)], pos[int(b)]] for a, b in labeled.pairs],
                                        dtype=np.int64).reshape(-1, 2)

    def robust(self, z):
        lam = view_weights(self.xc, z)
        return lam, robust_for(self.store, self.nodes, lam)

    def loss_and_grad_x(self, x, w):
        if self.labeled.task == "classification":
            return classification_loss(x, self.labeled.labels, w)
        return link_loss(x, self.local_pairs)

    def __call__(self, z, w=None) -> float:
        _, x = self.robust(z)
        return self.loss_and_grad_x(x, w)[0]

    def grad_z(self, z, w=None):
        lam, x = self.robust(z)
        loss, gx = self.loss_and_grad_x(x, w)
        return loss, attention_gradient(self.store, self.nodes, lam, gx)


def attention_objective(labeled: LabeledSet, store: EmbeddingStore):
    """Callable ``f(z, w=None) -> loss`` evaluated end to end through the vote."""
    return _Objective(labeled, store)


def train_attention(labeled: LabeledSet, store: EmbeddingStore, params: AttentionParams):
    """Full-batch gradient descent on the view vectors (and the classifier).

    View vectors are held fixed. Each epoch takes one step on ``w`` and then
    one on ``z``; the best parameters seen are kept. Returns
    ``(params, loss_before, loss_after)``.
    """
    labeled.check_nodes(store.num_nodes)
    obj = _Objective(labeled, store)
    classify = labeled.task == "classification"
    if classify and params.w is None:
        params.w = np.zeros((labeled.labels.shape[1], store.dim))
    z = params.z.copy()
    w = params.w.copy() if classify else None

    start = obj(z, w)
    best = (start, z.copy(), None if w is None else w.copy())
    prev = start
    for epoch in range(params.epochs):
        if classify:
            _, x = obj.robust(z)
            # w step is a fraction of 1/L for the quadratic in w, so it never diverges
            lip = 2.0 * np.linalg.norm(x, 2) ** 2
            w -= params.w_step * classifier_gradient(x, labeled.labels, w) / max(lip, 1e-12)
        _, gz = obj.grad_z(z, w)
        z -= params.step * gz
        loss = obj(z, w)
        if not np.isfinite(loss):
            raise AttentionDiverged(
                f"attention loss became non-finite at epoch {epoch} (step={params.step:g})")
        if loss < best[0]:
            best = (loss, z.copy(), None if w is None else w.copy())
        if abs(prev - loss) < params.tol:
            break
        prev = loss
    params.z = best[1]
    if classify:
        params.w = best[2]
    return params, start, best[0]


def dump_weights(path, lam: np.ndarray, tokens) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tok, row in zip(tokens, lam):
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in row) + "\n")


def read_labels(path, vocab, label_names=None) -> LabeledSet:
    """Parse ``TOKEN LABEL[,LABEL...]`` lines into a classification set."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"malformed label line {lineno} in {path}")
            rows.append((vocab.index(parts[0]), parts[1].split(",")))
    if label_names is None:
        label_names = sorted({lab for _, labs in rows for lab in labs}, key=_label_key)
    col = {lab: c for c, lab in enumerate(label_names)}
    y = np.zeros((len(rows), len(label_names)))
    for r, (_, labs) in enumerate(rows):
        for lab in labs:
            if lab not in col:
                raise ValueError(f"label {lab!r} not in the label universe")
            y[r, col[lab]] = 1.0
    nodes = np.array([n for n, _ in rows], dtype=np.int64)
    return LabeledSet("classification", nodes=nodes, labels=y, label_names=list(label_names))


def _label_key(lab: str):
    return (0, int(lab), "") if lab.lstrip("-").isdigit() else (1, 0, lab)


def read_pairs(path, vocab) -> np.ndarray:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"malformed pair line {lineno} in {path}")
            pairs.append((vocab.index(parts[0]), vocab.index(parts[1])))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)
