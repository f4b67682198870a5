"""Graph data model, permutations, synthetic corpora and the on-disk corpus format."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np


class GraphFormatError(ValueError):
    """Raised when a corpus file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class GraphSample:
    """One-hot node features (N x Kv) and a symmetric one-hot edge tensor (N x N x (Ke+1)).

    Channel 0 of the edge tensor is the non-edge type.
    """

    node_features: np.ndarray
    edge_tensor: np.ndarray
    num_nodes: int = field(default=-1)

    def __post_init__(self):
        x = np.ascontiguousarray(self.node_features, dtype=np.uint8)
        a = np.ascontiguousarray(self.edge_tensor, dtype=np.uint8)
        n = x.shape[0] if self.num_nodes < 0 else self.num_nodes
        if n < 1:
            raise ValueError("a graph needs at least one node")
        if x.ndim != 2 or x.shape[0] != n:
            raise ValueError(f"node_features must be {n} x Kv, got {x.shape}")
        if a.ndim != 3 or a.shape[:2] != (n, n):
            raise ValueError(f"edge_tensor must be {n} x {n} x (Ke+1), got {a.shape}")
        if a.shape[2] < 2:
            raise ValueError("edge_tensor needs a non-edge channel plus at least one edge type")
        if np.any(x > 1) or np.any(x.sum(1) != 1):
            raise ValueError("node_features rows must be one-hot")
        if np.any(a > 1) or np.any(a.sum(2) != 1):
            raise ValueError("edge_tensor slices must be one-hot")
        if not np.array_equal(a, a.transpose(1, 0, 2)):
            raise ValueError("edge_tensor must be symmetric")
        if np.any(a[np.arange(n), np.arange(n), 0] != 1):
            raise ValueError("self-loops are not allowed")
        x.flags.writeable = False
        a.flags.writeable = False
        object.__setattr__(self, "node_features", x)
        object.__setattr__(self, "edge_tensor", a)
        object.__setattr__(self, "num_nodes", int(n))

    @classmethod
    def from_types(cls, node_types, edge_types, num_node_types=1, num_edge_types=1):
        """Build from integer labels; ``edge_types[i, j] == 0`` means no edge."""
        node_types = np.asarray(node_types, dtype=np.int64)
        edge_types = np.asarray(edge_types, dtype=np.int64)
        n = node_types.shape[0]
        x = np.zeros((n, num_node_types), dtype=np.uint8)
        x[np.arange(n), node_types] = 1
        a = np.zeros((n, n, num_edge_types + 1), dtype=np.uint8)
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        a[ii, jj, edge_types] = 1
        return cls(x, a, n)

    @classmethod
    def from_adjacency(cls, adj):
        adj = (np.asarray(adj) != 0).astype(np.int64)
        np.fill_diagonal(adj, 0)
        return cls.from_types(np.zeros(adj.shape[0], dtype=np.int64), adj)

    @classmethod
    def from_networkx(cls, graph: nx.Graph):
        nodes = sorted(graph.nodes())
        return cls.from_adjacency(nx.to_numpy_array(graph, nodelist=nodes))

    @property
    def num_node_types(self) -> int:
        return self.node_features.shape[1]

    @property
    def num_edge_types(self) -> int:
        return self.edge_tensor.shape[2] - 1

    @property
    def node_types(self) -> np.ndarray:
        return self.node_features.argmax(1)

    @property
    def edge_types(self) -> np.ndarray:
        return self.edge_tensor.argmax(2)

    @property
    def adjacency(self) -> np.ndarray:
        return (self.edge_tensor[:, :, 0] == 0).astype(np.int64)

    @property
    def num_edges(self) -> int:
        return int(self.adjacency.sum() // 2)

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        types = self.node_types
        for i in range(self.num_nodes):
            g.add_node(i, label=int(types[i]))
        et = self.edge_types
        for i, j in zip(*np.nonzero(np.triu(et, 1))):
            g.add_edge(int(i), int(j), label=int(et[i, j]))
        return g

    def __eq__(self, other):
        if not isinstance(other, GraphSample):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.edge_tensor, other.edge_tensor)
        )

    def __hash__(self):
        return hash((self.num_nodes, self.node_features.tobytes(), self.edge_tensor.tobytes()))


@dataclass(frozen=True)
class Permutation:
    """A bijection on ``range(N)``; node ``i`` is moved to position ``mapping[i]``."""

    mapping: tuple

    def __post_init__(self):
        m = tuple(int(v) for v in self.mapping)
        if sorted(m) != list(range(len(m))):
            raise ValueError("mapping is not a bijection on {0..N-1}")
        object.__setattr__(self, "mapping", m)

    @classmethod
    def identity(cls, n):
        return cls(tuple(range(n)))

    @classmethod
    def random(cls, n, rng: np.random.Generator):
        return cls(tuple(rng.permutation(n)))

    def __len__(self):
        return len(self.mapping)

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.mapping)
        for i, p in enumerate(self.mapping):
            inv[p] = i
        return Permutation(tuple(inv))

    def compose(self, other: "Permutation") -> "Permutation":
        """Apply ``self`` first, then ``other``."""
        if len(other) != len(self):
            raise ValueError("cannot compose permutations of different sizes")
        return Permutation(tuple(other.mapping[p] for p in self.mapping))

    def as_index(self) -> np.ndarray:
        """Gather index ``idx`` such that ``permuted = original[idx]``."""
        return np.asarray(self.inverse().mapping, dtype=np.int64)


def apply_permutation(g: GraphSample, p: Permutation) -> GraphSample:
    if len(p) != g.num_nodes:
        raise ValueError(f"permutation has {len(p)} elements but graph has {g.num_nodes} nodes")
    idx = p.as_index()
    return GraphSample(g.node_features[idx], g.edge_tensor[np.ix_(idx, idx)], g.num_nodes)


# ---------------------------------------------------------------------------
# synthetic datasets

DATASET_RANGES = {
    "community-small": (12, 20),
    "community": (60, 160),
    "ego-small": (4, 18),
    "ego": (50, 399),
}
DATASET_COUNTS = {"community-small": 500, "community": 500, "ego-small": 500, "ego": 753}

# intra-community edge probability; 0.3 keeps the large variant inside its edge range
_COMMUNITY_P_INTRA = {"community-small": 0.7, "community": 0.3}
_EGO_RADIUS = {"ego-small": 1, "ego": 2}
_MAX_RETRIES = 1000


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    count: int | None = None
    node_range: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.name not in DATASET_RANGES:
            raise ValueError(f"unknown dataset {self.name!r}; expected one of {sorted(DATASET_RANGES)}")
        if self.count is None:
            object.__setattr__(self, "count", DATASET_COUNTS[self.name])
        if self.node_range is None:
            object.__setattr__(self, "node_range", DATASET_RANGES[self.name])
        object.__setattr__(self, "node_range", tuple(int(v) for v in self.node_range))
        if tuple(self.node_range) != DATASET_RANGES[self.name]:
            raise ValueError(f"node range for {self.name} must be {DATASET_RANGES[self.name]}")
        if self.count < 0:
            raise ValueError("count must be non-negative")

    def to_dict(self):
        return {"name": self.name, "count": self.count, "node_range": list(self.node_range), "seed": self.seed}


def _community_graph(n, p_intra, rng):
    sizes = (n // 2, n - n // 2)
    blocks = np.repeat([0, 1], sizes)
    upper = np.triu(rng.random((n, n)) < p_intra, 1) & (blocks[:, None] == blocks[None, :])
    adj = upper | upper.T
    left, right = np.arange(sizes[0]), np.arange(sizes[0], n)
    n_inter = math.ceil(0.05 * n)
    chosen = rng.choice(sizes[0] * sizes[1], size=n_inter, replace=False)
    for c in chosen:
        i, j = left[c // sizes[1]], right[c % sizes[1]]
        adj[i, j] = adj[j, i] = True
    return adj.astype(np.int64)


def generate_community(spec: DatasetSpec, rng: np.random.Generator) -> list[GraphSample]:
    if not spec.name.startswith("community"):
        raise ValueError(f"{spec.name} is not a community dataset")
    lo, hi = spec.node_range
    p_intra = _COMMUNITY_P_INTRA[spec.name]
    out = []
    for _ in range(spec.count):
        n = int(rng.integers(lo, hi + 1))
        for _attempt in range(_MAX_RETRIES):
            adj = _community_graph(n, p_intra, rng)
            if nx.is_connected(nx.from_numpy_array(adj)):
                break
        else:
            raise RuntimeError(f"could not draw a connected community graph with {n} nodes")
        out.append(GraphSample.from_adjacency(adj))
    return out


def generate_ego(spec: DatasetSpec, rng: np.random.Generator, parent_size: int = 3000) -> list[GraphSample]:
    if not spec.name.startswith("ego"):
        raise ValueError(f"{spec.name} is not an ego dataset")
    lo, hi = spec.node_range
    radius = _EGO_RADIUS[spec.name]

    def new_parent():
        return nx.barabasi_albert_graph(parent_size, 2, seed=int(rng.integers(2**31)))

    parent = new_parent()
    out, misses = [], 0
    while len(out) < spec.count:
        center = int(rng.integers(parent_size))
        ego = nx.ego_graph(parent, center, radius=radius)
        if lo <= ego.number_of_nodes() <= hi:
            out.append(GraphSample.from_networkx(nx.convert_node_labels_to_integers(ego, ordering="sorted")))
            misses = 0
        else:
            misses += 1
            if misses > _MAX_RETRIES:
                parent, misses = new_parent(), 0
    return out


def generate_dataset(spec: DatasetSpec, rng: np.random.Generator | None = None) -> list[GraphSample]:
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    if spec.name.startswith("community"):
        return generate_community(spec, rng)
    return generate_ego(spec, rng)


def train_test_split(corpus: Sequence[GraphSample], train_fraction: float, rng: np.random.Generator):
    """Random disjoint split; the two parts together are exactly the corpus."""
    order = rng.permutation(len(corpus))
    cut = int(round(train_fraction * len(corpus)))
    return [corpus[i] for i in order[:cut]], [corpus[i] for i in order[cut:]]


class SizeHistogram:
    """Empirical distribution of graph sizes over a corpus."""

    def __init__(self, sizes: Sequence[int]):
        sizes = np.asarray(list(sizes), dtype=np.int64)
        if sizes.size == 0:
            raise ValueError("cannot build a size histogram from an empty corpus")
        support, counts = np.unique(sizes, return_counts=True)
        self.support = support
        self.probs = counts / counts.sum()

    def __getitem__(self, n):
        hit = np.nonzero(self.support == n)[0]
        return float(self.probs[hit[0]]) if hit.size else 0.0

    def as_dict(self):
        return {int(n): float(p) for n, p in zip(self.support, self.probs)}

    @classmethod
    def from_dict(cls, d):
        """Inverse of ``as_dict``; keys may be strings after a JSON round trip."""
        if not d:
            raise ValueError("empty size histogram")
        items = sorted((int(n), float(p)) for n, p in d.items())
        h = cls.__new__(cls)
        h.support = np.array([n for n, _ in items], dtype=np.int64)
        probs = np.array([p for _, p in items])
        h.probs = probs / probs.sum()
        return h

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(self.support, size=size, p=self.probs)


def size_histogram(corpus: Sequence[GraphSample]) -> SizeHistogram:
    return SizeHistogram(g.num_nodes for g in corpus)


# ---------------------------------------------------------------------------
# corpus file format: little-endian, magic + version, then length-prefixed graph blocks

MAGIC = b"NVDG"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBBBI")  # magic, version, Kv, Ke, count


def _encode_graph(g: GraphSample) -> bytes:
    n = g.num_nodes
    iu = np.triu_indices(n, 1)
    body = struct.pack("<I", n) + g.node_types.astype(np.uint8).tobytes() + g.edge_types[iu].astype(np.uint8).tobytes()
    return struct.pack("<I", len(body)) + body


def serialize_corpus(corpus: Sequence[GraphSample], path, num_node_types=None, num_edge_types=None) -> None:
    corpus = list(corpus)
    kv = num_node_types if num_node_types is not None else (corpus[0].num_node_types if corpus else 1)
    ke = num_edge_types if num_edge_types is not None else (corpus[0].num_edge_types if corpus else 1)
    for g in corpus:
        if g.num_node_types != kv or g.num_edge_types != ke:
            raise ValueError("all graphs in a corpus must share node/edge type counts")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, kv, ke, len(corpus)))
        for g in corpus:
            fh.write(_encode_graph(g))


def deserialize_corpus(path) -> list[GraphSample]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise GraphFormatError(f"{path}: truncated header at offset 0")
    magic, version, kv, ke, count = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise GraphFormatError(f"{path}: bad magic {magic!r} at offset 0")
    if version != FORMAT_VERSION:
        raise GraphFormatError(f"{path}: unsupported version {version} at offset 4")
    off = _HEADER.size
    out = []
    for k in range(count):
        if off + 8 > len(data):
            raise GraphFormatError(f"{path}: truncated block {k} at offset {off}")
        (length,) = struct.unpack_from("<I", data, off)
        (n,) = struct.unpack_from("<I", data, off + 4)
        n_pairs = n * (n - 1) // 2
        if length != 4 + n + n_pairs or off + 4 + length > len(data):
            raise GraphFormatError(f"{path}: inconsistent block {k} at offset {off}")
        start = off + 8
        nodes = np.frombuffer(data, np.uint8, n, start).astype(np.int64)
        upper = np.frombuffer(data, np.uint8, n_pairs, start + n).astype(np.int64)
        if n == 0 or nodes.max(initial=0) >= kv or upper.max(initial=0) > ke:
            raise GraphFormatError(f"{path}: label out of range in block {k} at offset {off}")
        et = np.zeros((n, n), dtype=np.int64)
        et[np.triu_indices(n, 1)] = upper
        et = et + et.T
        out.append(GraphSample.from_types(nodes, et, kv, ke))
        off += 4 + length
    if off != len(data):
        raise GraphFormatError(f"{path}: {len(data) - off} trailing bytes at offset {off}")
    return out


def write_manifest(path, spec: DatasetSpec, files: dict) -> None:
    payload = {"dataset": spec.to_dict(), "files": files, "format_version": FORMAT_VERSION}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
