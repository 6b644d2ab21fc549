"""Alternating optimisation: edge SGD, attention learning, weight refresh, vote."""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mvembed.attention import (
    AttentionParams,
    LabeledSet,
    attention_objective,
    dump_weights,
    train_attention,
    weights_for_all,
)
from mvembed.embedding import (
    EmbeddingStore,
    NonFiniteError,
    TrainConfig,
    dump_embeddings,
    init_embeddings,
    train_block,
    vote_robust,
)
from mvembed.graph import AliasTable, MultiViewGraph

log = logging.getLogger(__name__)


class _Samplers:
    """Flattened alias tables in the layout the SGD kernel expects."""

    def __init__(self, graph: MultiViewGraph, view_sampling: str):
        views = graph.views
        self.src = np.concatenate([v.src for v in views])
        self.dst = np.concatenate([v.dst for v in views])
        self.edge_off = np.zeros(len(views) + 1, dtype=np.int64)
        self.edge_off[1:] = np.cumsum([v.num_edges for v in views])
        edge_tables = [graph.build_edge_alias(k) for k in range(len(views))]
        self.edge_prob = np.concatenate([t.prob for t in edge_tables])
        self.edge_alias = np.concatenate([t.alias for t in edge_tables])
        neg_tables = [graph.build_negative_sampler(k) for k in range(len(views))]
        self.neg_prob = np.concatenate([t.prob for t in neg_tables])
        self.neg_alias = np.concatenate([t.alias for t in neg_tables])
        if view_sampling == "edges":
            view_table = AliasTable([v.weight.size for v in views])
        else:
            view_table = AliasTable(np.ones(len(views)))
        self.view_prob = view_table.prob
        self.view_alias = view_table.alias


@dataclass
class TrainState:
    config: TrainConfig
    graph: MultiViewGraph
    store: EmbeddingStore
    attention: AttentionParams
    labeled: LabeledSet | None
    rng: np.random.Generator
    weights: np.ndarray
    iteration: int = 0
    samples: int = 0
    lr: float = 0.0
    samplers: _Samplers | None = None
    history: list[dict] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=lambda: {"embedding": 0.0, "attention": 0.0,
                                                                "vote": 0.0})

    @property
    def total_samples(self) -> int:
        return self.config.iterations * self.config.samples_per_iter


def init_state(config: TrainConfig, graph: MultiViewGraph,
               labeled: LabeledSet | None = None) -> TrainState:
    config.validate()
    if labeled is not None:
        labeled.check_nodes(graph.num_nodes)
    K, d = graph.num_views, config.dim
    store = init_embeddings(graph.num_nodes, K, d, config.seed,
                            shared_context=not config.no_collab)
    num_labels = None
    if labeled is not None and labeled.task == "classification":
        num_labels = labeled.labels.shape[1]
    params = AttentionParams.zeros(K, d, num_labels, step=config.attn_step,
                                   epochs=config.attn_epochs, tol=config.attn_tol)
    weights = np.full((graph.num_nodes, K), 1.0 / K)
    # separate stream from the initialiser so init stays independent of sampling
    rng = np.random.default_rng([config.seed, 1])
    return TrainState(config, graph, store, params, labeled, rng, weights, lr=config.lr,
                      samplers=_Samplers(graph, config.view_sampling))


def _sgd_phase(state: TrainState) -> float:
    cfg = state.config
    smp = state.samplers
    store = state.store
    T = cfg.samples_per_iter
    if T == 0:
        return 0.0

    def run(n, t0, rng):
        return train_block(store.views, store.context, store.robust, state.weights,
                           smp.src, smp.dst, smp.edge_off, smp.edge_prob, smp.edge_alias,
                           smp.neg_prob, smp.neg_alias, smp.view_prob, smp.view_alias,
                           n, t0, state.total_samples, cfg.lr, cfg.eta, cfg.negatives, rng)

    if cfg.workers == 1:
        results = [run(T, state.samples, state.rng)]
    else:
        # lock-free workers on shared arrays; lost updates are accepted
        chunks = np.full(cfg.workers, T // cfg.workers)
        chunks[: T % cfg.workers] += 1
        starts = state.samples + np.concatenate([[0], np.cumsum(chunks)[:-1]])
        rngs = state.rng.spawn(cfg.workers)
        results = [None] * cfg.workers

        def worker(w):
            results[w] = run(int(chunks[w]), int(starts[w]), rngs[w])

        threads = [threading.Thread(target=worker, args=(w,)) for w in range(cfg.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    loss = 0.0
    for part, bad in results:
        if bad >= 0:
            raise NonFiniteError(
                f"non-finite edge score in iteration {state.iteration} at sample offset {bad}; "
                f"lr={cfg.lr:g}, eta={cfg.eta:g}")
        loss += part
    if not store.is_finite():
        raise NonFiniteError(f"non-finite parameters after iteration {state.iteration}")
    return loss / T


def run_iteration(state: TrainState) -> TrainState:
    """One pass: T edge samples, attention learning, weight refresh, vote."""
    cfg = state.config
    record = {"iteration": state.iteration + 1}

    t = time.perf_counter()
    record["edge_loss"] = _sgd_phase(state)
    state.samples += cfg.samples_per_iter
    state.lr = cfg.lr * max(1e-4, 1.0 - state.samples / max(state.total_samples, 1))
    state.timings["embedding"] += time.perf_counter() - t

    t = time.perf_counter()
    if not cfg.no_attention and state.labeled is not None and len(state.labeled):
        _, before, after = train_attention(state.labeled, state.store, state.attention)
        record["attn_loss_before"] = before
        record["attn_loss_after"] = after
        state.weights = weights_for_all(state.store, state.attention.z)
    elif state.labeled is not None and len(state.labeled):
        record["attn_loss_after"] = attention_objective(state.labeled, state.store)(
            state.attention.z, state.attention.w)
    state.timings["attention"] += time.perf_counter() - t

    t = time.perf_counter()
    vote_robust(state.store, state.weights)
    state.timings["vote"] += time.perf_counter() - t
    if not (state.store.is_finite() and np.isfinite(state.attention.z).all()):
        raise NonFiniteError(f"non-finite parameters at barrier {state.iteration + 1}")

    state.iteration += 1
    state.history.append(record)
    log.info("iteration %d: %s", state.iteration,
             ", ".join(f"{k}={v:.6g}" for k, v in record.items() if k != "iteration"))
    return state


@dataclass
class TrainResult:
    store: EmbeddingStore
    weights: np.ndarray
    attention: AttentionParams
    history: list[dict]
    timings: dict[str, float]


def train(config: TrainConfig, graph: MultiViewGraph, labeled: LabeledSet | None = None,
          out_dir=None) -> TrainResult:
    """Run the configured number of iterations and optionally write all dumps."""
    state = init_state(config, graph, labeled)
    for _ in range(config.iterations):
        run_iteration(state)
    result = TrainResult(state.store, state.weights, state.attention, state.history,
                         state.timings)
    if out_dir is not None:
        write_outputs(out_dir, graph, result)
    return result


def write_outputs(out_dir, graph: MultiViewGraph, result: TrainResult) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tokens = graph.vocab.tokens
    graph.vocab.dump(out / "vocab.txt")
    dump_embeddings(out / "robust.emb", result.store.robust, tokens)
    for k, view in enumerate(graph.views):
        dump_embeddings(out / f"view_{view.name}.emb", result.store.views[k], tokens)
    dump_weights(out / "weights.txt", result.weights, tokens)
    with open(out / "train_log.txt", "w", encoding="utf-8") as fh:
        for rec in result.history:
            fh.write(" ".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}"
                              for k, v in rec.items()) + "\n")
