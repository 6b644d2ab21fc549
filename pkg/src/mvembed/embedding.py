"""Parameter storage and the negative-sampling / collaboration SGD updates."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np
from numba import njit

LR_FLOOR = 1e-4
SIMPLEX_TOL = 1e-6


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    dim: int = 100
    negatives: int = 5
    samples_per_iter: int = 10_000_000
    iterations: int = 10
    eta: float = 0.05
    lr: float = 0.025
    seed: int = 0
    no_attention: bool = False
    no_collab: bool = False
    view_sampling: str = "uniform"
    workers: int = 1
    attn_step: float = 0.1
    attn_epochs: int = 200
    attn_tol: float = 1e-6

    def validate(self) -> "TrainConfig":
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.samples_per_iter < 0:
            raise ValueError("samples_per_iter must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.view_sampling not in ("uniform", "edges"):
            raise ValueError("view_sampling must be 'uniform' or 'edges'")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.attn_epochs < 0 or not self.attn_step > 0:
            raise ValueError("attention epochs must be >= 0 and step > 0")
        return self

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(f.default) for f in fields(cls)}


@dataclass
class EmbeddingStore:
    """View vectors ``(K, V, d)``, context vectors ``(Kc, V, d)``, robust ``(V, d)``.

    ``Kc`` is 1 when contexts are shared across views and K otherwise.
    """

    views: np.ndarray
    context: np.ndarray
    robust: np.ndarray

    @property
    def num_views(self) -> int:
        return self.views.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.views.shape[1]

    @property
    def dim(self) -> int:
        return self.views.shape[2]

    @property
    def shared_context(self) -> bool:
        return self.context.shape[0] == 1

    def context_for(self, k: int) -> np.ndarray:
        return self.context[0 if self.shared_context else k]

    def concat(self, nodes=None) -> np.ndarray:
        """Concatenated view vectors, one row of length K*d per node."""
        x = self.views if nodes is None else self.views[:, nodes, :]
        return np.ascontiguousarray(np.transpose(x, (1, 0, 2))).reshape(x.shape[1], -1)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.views).all() and np.isfinite(self.context).all()
                    and np.isfinite(self.robust).all())

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(self.views.copy(), self.context.copy(), self.robust.copy())


def init_embeddings(num_nodes: int, num_views: int, dim: int, seed: int,
                    shared_context: bool = True) -> EmbeddingStore:
    if num_nodes < 1 or num_views < 1 or dim < 1:
        raise ValueError("sizes must be positive")
    rng = np.random.default_rng(seed)
    half = 0.5 / dim
    views = rng.uniform(-half, half, size=(num_views, num_nodes, dim))
    context = np.zeros((1 if shared_context else num_views, num_nodes, dim))
    return EmbeddingStore(views, context, views.mean(axis=0))


@njit(cache=True)
def learning_rate(t, rho0, total):
    """Linear decay from ``rho0`` with a floor at ``rho0 * 1e-4``."""
    if total <= 0:
        return rho0
    frac = 1.0 - t / total
    if frac < LR_FLOOR:
        frac = LR_FLOOR
    return rho0 * frac


@njit(cache=True, inline="always")
def _log_sigmoid(f):
    if f >= 0:
        return -math.log1p(math.exp(-f))
    return f - math.log1p(math.exp(f))


@njit(cache=True, inline="always")
def _sigmoid(f):
    if f >= 0:
        return 1.0 / (1.0 + math.exp(-f))
    e = math.exp(f)
    return e / (1.0 + e)


@njit(nogil=True, cache=True)
def _edge_update(x_i, ctx, j, negs, rho, coef, grad):
    """One SGD ascent step on log s(c_j.x) + sum_n log s(-c_n.x).

    All dot products are taken before any write, so repeated negatives see
    the same parameters. Returns the negated surrogate (a loss).
    """
    d = x_i.shape[0]
    nneg = negs.shape[0]
    f = 0.0
    for a in range(d):
        f += ctx[j, a] * x_i[a]
    coef[0] = 1.0 - _sigmoid(f)
    loss = -_log_sigmoid(f)
    for n in range(nneg):
        v = negs[n]
        f = 0.0
        for a in range(d):
            f += ctx[v, a] * x_i[a]
        coef[n + 1] = -_sigmoid(f)
        loss -= _log_sigmoid(-f)
    for a in range(d):
        grad[a] = coef[0] * ctx[j, a]
    for n in range(nneg):
        v = negs[n]
        c = coef[n + 1]
        for a in range(d):
            grad[a] += c * ctx[v, a]
    g = rho * coef[0]
    for a in range(d):
        ctx[j, a] += g * x_i[a]
    for n in range(nneg):
        v = negs[n]
        g = rho * coef[n + 1]
        for a in range(d):
            ctx[v, a] += g * x_i[a]
    for a in range(d):
        x_i[a] += rho * grad[a]
    return loss


@njit(nogil=True, cache=True)
def _reg_update(x_ik, x_i, lam, eta, rho):
    s = rho * eta * lam * 2.0
    for a in range(x_ik.shape[0]):
        x_ik[a] -= s * (x_ik[a] - x_i[a])


@njit(nogil=True, cache=True, inline="always")
def _alias_draw(rng, prob, alias, offset, n):
    slot = int(rng.random() * n)
    if slot >= n:
        slot = n - 1
    if rng.random() < prob[offset + slot]:
        return slot
    return alias[offset + slot]


@njit(nogil=True, cache=True)
def alias_draws(rng, prob, alias, offset, n, size):
    """``size`` draws from one flattened table, exactly as the SGD kernel draws them."""
    out = np.empty(size, dtype=np.int64)
    for s in range(size):
        out[s] = _alias_draw(rng, prob, alias, offset, n)
    return out


@njit(nogil=True, cache=True)
def train_block(views, context, robust, lam, src, dst, edge_off, edge_prob, edge_alias,
                neg_prob, neg_alias, view_prob, view_alias, n_samples, t0, total,
                rho0, eta, negatives, rng):
    """Run ``n_samples`` edge-sampled SGD steps. Returns (loss_sum, bad_index).

    ``bad_index`` is -1 unless a non-finite score was hit, in which case it is
    the offset of the offending sample and the block stops early.
    """
    K = views.shape[0]
    V = views.shape[1]
    d = views.shape[2]
    shared = context.shape[0] == 1
    negs = np.empty(negatives, dtype=np.int64)
    coef = np.empty(negatives + 1)
    grad = np.empty(d)
    loss_sum = 0.0
    for s in range(n_samples):
        k = _alias_draw(rng, view_prob, view_alias, 0, K)
        lo = edge_off[k]
        e = lo + _alias_draw(rng, edge_prob, edge_alias, lo, edge_off[k + 1] - lo)
        i = src[e]
        j = dst[e]
        for n in range(negatives):
            v = _alias_draw(rng, neg_prob, neg_alias, k * V, V)
            while v == j:
                v = _alias_draw(rng, neg_prob, neg_alias, k * V, V)
            negs[n] = v
        rho = learning_rate(t0 + s, rho0, total)
        ctx = context[0] if shared else context[k]
        loss = _edge_update(views[k, i], ctx, j, negs, rho, coef, grad)
        if not math.isfinite(loss):
            return loss_sum, s
        loss_sum += loss
        if eta > 0.0:
            _reg_update(views[k, i], robust[i], lam[i, k], eta, rho)
    return loss_sum, -1


def edge_surrogate(x_i, c_j, c_negs) -> float:
    """log s(c_j.x) + sum_n log s(-c_n.x), the quantity one edge step ascends."""
    c_negs = np.atleast_2d(c_negs)
    val = -np.logaddexp(0.0, -(c_j @ x_i))
    val -= np.logaddexp(0.0, c_negs @ x_i).sum()
    return float(val)


def edge_gradient(x_i, c_j, c_negs):
    """Gradients of ``edge_surrogate`` w.r.t. x_i, c_j and each negative context."""
    c_negs = np.atleast_2d(c_negs)
    pos = 1.0 - 1.0 / (1.0 + np.exp(-(c_j @ x_i)))
    neg = 1.0 / (1.0 + np.exp(-(c_negs @ x_i)))
    gx = pos * c_j - neg @ c_negs
    return gx, pos * x_i, -neg[:, None] * x_i[None, :]


def sgd_edge_step(store: EmbeddingStore, i: int, j: int, k: int, negatives, rho: float) -> float:
    """Apply one in-place SGD step for edge (i, j) of view k; returns the edge loss."""
    negs = np.asarray(negatives, dtype=np.int64)
    if np.any(negs == j):
        raise ValueError("negative samples must differ from the positive target")
    ctx = store.context_for(k)
    x_i = store.views[k, i]
    coef = np.empty(negs.size + 1)
    grad = np.empty(store.dim)
    loss = _edge_update(x_i, ctx, j, negs, rho, coef, grad)
    if not (np.isfinite(loss) and np.isfinite(x_i).all() and np.isfinite(ctx[j]).all()
            and np.isfinite(ctx[negs]).all()):
        raise NonFiniteError(
            f"non-finite parameters after edge ({i}, {j}) in view {k} at lr={rho:g}")
    return float(loss)


def regularization_step(store: EmbeddingStore, i: int, k: int, lam: float, eta: float,
                        rho: float) -> None:
    """Pull x_i^k toward the (frozen) robust vector x_i."""
    _reg_update(store.views[k, i], store.robust[i], float(lam), float(eta), float(rho))


def vote_robust(store: EmbeddingStore, weights) -> np.ndarray:
    """Set each robust vector to the weight-averaged view vectors."""
    lam = np.asarray(weights, dtype=np.float64)
    if lam.shape != (store.num_nodes, store.num_views):
        raise ValueError(f"weights must have shape {(store.num_nodes, store.num_views)}")
    if np.any(lam < 0) or np.any(np.abs(lam.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise ValueError("view weights must lie on the probability simplex")
    store.robust[...] = np.einsum("vk,kvd->vd", lam, store.views)
    return store.robust


def dump_embeddings(path, vectors: np.ndarray, tokens) -> None:
    n, d = vectors.shape
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {d}\n")
        for tok, row in zip(tokens, vectors):
            fh.write(tok + " " + " ".join(f"{v:.6f}" for v in row) + "\n")


def load_embeddings(path):
    """Read an embedding dump; returns (tokens, matrix)."""
    with open(path, encoding="utf-8") as fh:
        n, d = (int(v) for v in fh.readline().split())
        tokens = []
        mat = np.empty((n, d))
        for r in range(n):
            parts = fh.readline().split()
            if len(parts) != d + 1:
                raise ValueError(f"malformed embedding row {r + 2} in {path}")
            tokens.append(parts[0])
            mat[r] = [float(v) for v in parts[1:]]
    return tokens, mat
