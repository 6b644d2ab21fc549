"""Seeded multi-view block-model graphs with planted communities."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mvembed.graph import GraphFormatError, MultiViewGraph, View, Vocabulary


@dataclass
class ViewSpec:
    """``p_in == p_out`` gives an Erdos-Renyi noise view."""

    name: str
    p_in: float
    p_out: float
    informative: bool = True

    @classmethod
    def noise(cls, name: str, p: float) -> "ViewSpec":
        return cls(name, p, p, informative=False)


@dataclass
class SynthSpec:
    num_nodes: int = 400
    communities: int = 4
    views: list[ViewSpec] = field(default_factory=lambda: [
        ViewSpec("sbm", 0.2, 0.01), ViewSpec.noise("noise", 0.05)])
    holdout: float = 0.1
    weighted: bool = False
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.num_nodes < 2 or not 1 <= self.communities <= self.num_nodes:
            raise ValueError("need at least 2 nodes and 1..|V| communities")
        if not self.views:
            raise ValueError("at least one view is required")
        for v in self.views:
            if not 0 <= v.p_out <= v.p_in <= 1:
                raise ValueError(f"view {v.name!r}: need 0 <= p_out <= p_in <= 1")
        if not 0 <= self.holdout < 1:
            raise ValueError("holdout fraction must be in [0, 1)")
        return self


@dataclass
class SynthGraph:
    graph: MultiViewGraph
    labels: np.ndarray
    heldout: np.ndarray
    spec: SynthSpec

    def node_tokens(self) -> list[str]:
        return self.graph.vocab.tokens


def community_of(num_nodes: int, communities: int) -> np.ndarray:
    """Even blocks with the remainder given to the last community."""
    size = num_nodes // communities
    comm = np.minimum(np.arange(num_nodes) // size, communities - 1)
    return comm.astype(np.int64)


def generate(spec: SynthSpec) -> SynthGraph:
    """Sample every view, withhold a fraction of informative edges as link targets."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.num_nodes
    comm = community_of(n, spec.communities)
    iu, ju = np.triu_indices(n, k=1)
    same = comm[iu] == comm[ju]

    drawn = []
    for v in spec.views:
        p = np.where(same, v.p_in, v.p_out)
        keep = rng.random(iu.size) < p
        w = rng.integers(1, 6, size=int(keep.sum())).astype(float) if spec.weighted \
            else np.ones(int(keep.sum()))
        drawn.append((iu[keep], ju[keep], w))

    heldout_keys = set()
    for v, (a, b, _) in zip(spec.views, drawn):
        if not v.informative or a.size == 0:
            continue
        m = int(round(spec.holdout * a.size))
        pick = rng.choice(a.size, size=m, replace=False)
        heldout_keys.update(zip(a[pick].tolist(), b[pick].tolist()))
    heldout = np.array(sorted(heldout_keys), dtype=np.int64).reshape(-1, 2)

    vocab = Vocabulary(f"n{i}" for i in range(n))
    views = []
    for v, (a, b, w) in zip(spec.views, drawn):
        if heldout_keys:
            key = a * n + b
            mask = ~np.isin(key, heldout[:, 0] * n + heldout[:, 1])
            a, b, w = a[mask], b[mask], w[mask]
        if a.size == 0:
            raise GraphFormatError(f"synthetic view {v.name!r} came out empty")
        views.append(View(v.name, np.concatenate([a, b]), np.concatenate([b, a]),
                          np.concatenate([w, w])))
    return SynthGraph(MultiViewGraph(vocab, views), comm, heldout, spec)


def expected_edges(spec: SynthSpec, view: ViewSpec) -> float:
    """Expected undirected edge count of one view before holdout."""
    sizes = np.bincount(community_of(spec.num_nodes, spec.communities))
    within = float((sizes * (sizes - 1) // 2).sum())
    total = spec.num_nodes * (spec.num_nodes - 1) / 2
    return view.p_in * within + view.p_out * (total - within)


def split_nodes(num_nodes: int, train_fraction: float, seed: int):
    """Seeded disjoint (train, test) node index arrays."""
    rng = np.random.default_rng([seed, 2])
    perm = rng.permutation(num_nodes)
    cut = int(round(train_fraction * num_nodes))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def sample_non_edges(num_nodes: int, count: int, forbidden: set, seed: int) -> np.ndarray:
    """Uniform unordered node pairs absent from ``forbidden`` (both orientations checked)."""
    rng = np.random.default_rng([seed, 3])
    out = []
    seen = set()
    limit = num_nodes * (num_nodes - 1) // 2 - len({tuple(sorted(p)) for p in forbidden})
    if count > limit:
        raise ValueError("not enough non-edges to sample from")
    while len(out) < count:
        a, b = rng.integers(0, num_nodes, size=2)
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key in seen or key in forbidden or (key[1], key[0]) in forbidden:
            continue
        seen.add(key)
        out.append(key)
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def split_pairs(pairs: np.ndarray, labeled_fraction: float, seed: int):
    """Split held-out pairs into (attention-labeled, evaluation) parts."""
    rng = np.random.default_rng([seed, 4])
    perm = rng.permutation(len(pairs))
    cut = int(round(labeled_fraction * len(pairs)))
    return pairs[np.sort(perm[:cut])], pairs[np.sort(perm[cut:])]


def write(sg: SynthGraph, out_dir, train_fraction: float = 0.1,
          link_labeled_fraction: float = 0.1) -> dict[str, Path]:
    """Write view files, labels, node splits and link pair files into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tok = sg.graph.vocab.tokens
    paths = {}
    for view in sg.graph.views:
        p = out / f"{view.name}.txt"
        half = view.src < view.dst
        with open(p, "w", encoding="utf-8") as fh:
            for a, b, w in zip(view.src[half], view.dst[half], view.weight[half]):
                fh.write(f"{tok[a]} {tok[b]} {w:g}\n")
        paths[view.name] = p

    def write_labels(path, nodes):
        with open(path, "w", encoding="utf-8") as fh:
            for i in nodes:
                fh.write(f"{tok[i]} {sg.labels[i]}\n")
        return path

    n = sg.graph.num_nodes
    train, test = split_nodes(n, train_fraction, sg.spec.seed)
    paths["labels"] = write_labels(out / "labels.txt", range(n))
    paths["labels_train"] = write_labels(out / "labels_train.txt", train)
    paths["labels_test"] = write_labels(out / "labels_test.txt", test)

    def write_pairs(path, pairs):
        with open(path, "w", encoding="utf-8") as fh:
            for a, b in pairs:
                fh.write(f"{tok[a]} {tok[b]}\n")
        return path

    attn, test_pairs = split_pairs(sg.heldout, link_labeled_fraction, sg.spec.seed)
    forbidden = sg.graph.edge_set() | {tuple(p) for p in sg.heldout.tolist()}
    neg = sample_non_edges(n, len(test_pairs), forbidden, sg.spec.seed)
    paths["heldout"] = write_pairs(out / "heldout.txt", sg.heldout)
    paths["links_attn"] = write_pairs(out / "links_attn.txt", attn)
    paths["links_test"] = write_pairs(out / "links_test.txt", test_pairs)
    paths["links_neg"] = write_pairs(out / "links_neg.txt", neg)
    return paths
