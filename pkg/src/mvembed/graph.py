"""Multi-view graph model, edge-list ingestion and alias-table samplers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

NEG_POWER = 0.75


class GraphFormatError(ValueError):
    pass


class Vocabulary:
    """Bijection between external node tokens and contiguous indices."""

    def __init__(self, tokens=()):
        self._index: dict[str, int] = {}
        self._tokens: list[str] = []
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._index[token] = idx
            self._tokens.append(token)
        return idx

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"unknown node token {token!r}") from None

    def token(self, index: int) -> str:
        return self._tokens[index]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self._tokens)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self._tokens):
                fh.write(f"{i} {tok}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 2 or int(parts[0]) != len(vocab):
                    raise GraphFormatError(f"malformed vocabulary entry at line {lineno}")
                vocab.add(parts[1])
        return vocab


def parse_edges(lines, directed: bool = False, source: str = "<input>"):
    """Parse ``SRC DST [WEIGHT]`` lines into merged ``(src, dst, weight)`` triples.

    Self-loops are dropped with a warning and duplicate edges are merged by
    summing their weights. Undirected edges are stored in both directions.
    """
    merged: dict[tuple[str, str], float] = {}
    seen_any = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"malformed line at line {lineno} of {source}")
        src, dst = parts[0], parts[1]
        if len(parts) == 3:
            try:
                weight = float(parts[2])
            except ValueError:
                raise GraphFormatError(f"malformed weight at line {lineno} of {source}") from None
        else:
            weight = 1.0
        if not weight > 0 or not np.isfinite(weight):
            raise GraphFormatError(f"non-positive weight at line {lineno}")
        seen_any = True
        if src == dst:
            log.warning("self-loop on %r ignored (line %d of %s)", src, lineno, source)
            continue
        pairs = [(src, dst)] if directed else [(src, dst), (dst, src)]
        for key in pairs:
            merged[key] = merged.get(key, 0.0) + weight
    if not seen_any:
        raise GraphFormatError(f"empty view file {source}")
    return [(s, d, w) for (s, d), w in merged.items()]


def load_view(path, directed: bool = False, vocab: Vocabulary | None = None):
    """Read one view file; new tokens are appended to ``vocab`` when given."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        edges = parse_edges(fh, directed=directed, source=str(path))
    if vocab is not None:
        for s, d, _ in edges:
            vocab.add(s)
            vocab.add(d)
    return edges


class AliasTable:
    """Walker/Vose alias table: O(n) construction, O(1) draws.

    Zero-weight entries are never drawn.
    """

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("alias table needs a non-empty 1-d weight vector")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("alias weights must be finite and non-negative")
        total = w.sum()
        if total <= 0:
            raise ValueError("alias weights sum to zero")
        n = w.size
        scaled = w * (n / total)
        prob = np.zeros(n)
        alias = np.arange(n, dtype=np.int64)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] -= 1.0 - scaled[s]
            if scaled[g] < 1.0:
                small.append(g)
            else:
                large.append(g)
        # leftovers are within rounding of 1
        fallback = int(np.argmax(w))
        for i in large + small:
            if w[i] > 0:
                prob[i] = 1.0
            else:
                prob[i] = 0.0
                alias[i] = fallback
        self.prob = prob
        self.alias = alias

    def __len__(self) -> int:
        return self.prob.size

    def sample(self, rng: np.random.Generator, size=None):
        n = self.prob.size
        slot = rng.integers(0, n, size=size)
        u = rng.random(size=size)
        return np.where(u < self.prob[slot], slot, self.alias[slot])

    def probabilities(self) -> np.ndarray:
        """Exact distribution encoded by the table."""
        n = self.prob.size
        p = self.prob.copy()
        np.add.at(p, self.alias, 1.0 - self.prob)
        return p / n


@dataclass
class View:
    name: str
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    directed: bool = False

    @property
    def num_edges(self) -> int:
        return int(self.src.size)


@dataclass
class MultiViewGraph:
    """One node universe shared by K weighted directed edge sets."""

    vocab: Vocabulary
    views: list[View] = field(default_factory=list)

    def __post_init__(self):
        if not self.views:
            raise GraphFormatError("a multi-view graph needs at least one view")
        n = len(self.vocab)
        self._out_deg = []
        self._tot_deg = []
        for v in self.views:
            if v.num_edges == 0:
                raise GraphFormatError(f"view {v.name!r} has no edges")
            if np.any(v.weight <= 0):
                raise GraphFormatError(f"view {v.name!r} has non-positive weights")
            out = np.bincount(v.src, weights=v.weight, minlength=n)
            inn = np.bincount(v.dst, weights=v.weight, minlength=n)
            self._out_deg.append(out)
            self._tot_deg.append(out + inn)
        self._adj: list[dict | None] = [None] * len(self.views)

    @classmethod
    def from_edge_lists(cls, views, vocab: Vocabulary | None = None,
                        directed=None) -> "MultiViewGraph":
        """Build from ``{name: [(src_token, dst_token, weight), ...]}``.

        Edges are taken as already directed (mirroring is ``load_view``'s job).
        """
        vocab = Vocabulary() if vocab is None else vocab
        directed = directed or {}
        built = []
        for name, edges in views.items():
            for s, d, _ in edges:
                vocab.add(s)
                vocab.add(d)
        for name, edges in views.items():
            src = np.array([vocab.index(s) for s, _, _ in edges], dtype=np.int64)
            dst = np.array([vocab.index(d) for _, d, _ in edges], dtype=np.int64)
            w = np.array([e[2] for e in edges], dtype=np.float64)
            built.append(View(name, src, dst, w, bool(directed.get(name, False))))
        return cls(vocab, built)

    @classmethod
    def load(cls, specs) -> "MultiViewGraph":
        """``specs`` is a sequence of ``(name, path, directed)``."""
        vocab = Vocabulary()
        raw = {}
        flags = {}
        for name, path, directed in specs:
            if name in raw:
                raise GraphFormatError(f"duplicate view name {name!r}")
            raw[name] = load_view(path, directed=directed, vocab=vocab)
            flags[name] = directed
        return cls.from_edge_lists(raw, vocab, flags)

    @property
    def num_nodes(self) -> int:
        return len(self.vocab)

    @property
    def num_views(self) -> int:
        return len(self.views)

    @property
    def num_edges(self) -> int:
        return sum(v.num_edges for v in self.views)

    def out_degree(self, k: int) -> np.ndarray:
        return self._out_deg[k]

    def total_degree(self, k: int) -> np.ndarray:
        """In+out weighted degree, the mass used for negative sampling."""
        return self._tot_deg[k]

    def _adjacency(self, k):
        if self._adj[k] is None:
            v = self.views[k]
            self._adj[k] = {(int(s), int(d)): float(w) for s, d, w in zip(v.src, v.dst, v.weight)}
        return self._adj[k]

    def empirical_neighbor_prob(self, i: int, j: int, k: int) -> float:
        d = self._out_deg[k][i]
        if d <= 0:
            raise ValueError(f"node has no out-edges in view {self.views[k].name!r}")
        return self._adjacency(k).get((i, j), 0.0) / d

    def build_edge_alias(self, k: int) -> AliasTable:
        view = self.views[k]
        if view.num_edges == 0:
            raise GraphFormatError(f"view {view.name!r} is empty")
        return AliasTable(view.weight)

    def build_negative_sampler(self, k: int) -> AliasTable:
        return AliasTable(negative_weights(self._tot_deg[k]))

    def edge_set(self) -> set[tuple[int, int]]:
        """All (src, dst) pairs present in any view."""
        out = set()
        for v in self.views:
            out.update(zip(v.src.tolist(), v.dst.tolist()))
        return out


def negative_weights(degrees) -> np.ndarray:
    return np.power(np.asarray(degrees, dtype=np.float64), NEG_POWER)


class NegativeSampler:
    """Per-view node samplers with mass proportional to degree**0.75."""

    def __init__(self, graph: MultiViewGraph):
        self.tables = [graph.build_negative_sampler(k) for k in range(graph.num_views)]

    def sample(self, k: int, rng: np.random.Generator, size=None):
        return self.tables[k].sample(rng, size)

    def probabilities(self, k: int) -> np.ndarray:
        return self.tables[k].probabilities()
