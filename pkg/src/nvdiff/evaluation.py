"""Graph-statistics MMD, uniqueness / novelty, and the contextual-vector probe."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np
import torch

from . import sde
from .batching import collate
from .graphs import GraphSample, size_histogram

KERNEL_SIGMA = {"degree": 1.0, "cluster": 0.1, "orbit": 30.0}
NUM_ORBITS = 15
CLUSTER_BINS = 100


# ----------------------------------------------------------------------------- MMD


def _pad(vectors, length):
    out = np.zeros((len(vectors), length))
    for i, v in enumerate(vectors):
        out[i, : len(v)] = v
    return out


def gaussian_tv_kernel(x, y, sigma):
    """exp(-TV(x, y)^2 / (2 sigma^2)) with TV = 0.5 * L1 distance."""
    tv = 0.5 * np.abs(np.asarray(x, float) - np.asarray(y, float)).sum(-1)
    return np.exp(-(tv**2) / (2 * sigma**2))


def mmd(features_a, features_b, kernel_sigma=1.0) -> float:
    """Squared MMD mean k(a, a') + mean k(b, b') - 2 mean k(a, b), clamped at zero."""
    if len(features_a) == 0 or len(features_b) == 0:
        raise ValueError("mmd needs two non-empty feature sets")
    length = max(len(v) for v in list(features_a) + list(features_b))
    a, b = _pad(features_a, length), _pad(features_b, length)

    def mean_k(x, y):
        return float(gaussian_tv_kernel(x[:, None, :], y[None, :, :], kernel_sigma).mean())

    if a.shape == b.shape and np.array_equal(a, b):
        return 0.0
    return max(mean_k(a, a) + mean_k(b, b) - 2 * mean_k(a, b), 0.0)


# ----------------------------------------------------------------------------- features


def degree_features(g: GraphSample) -> np.ndarray:
    deg = g.adjacency.sum(1).astype(int)
    return np.bincount(deg) / max(g.num_nodes, 1)


def clustering_features(g: GraphSample, bins=CLUSTER_BINS) -> np.ndarray:
    cc = list(nx.clustering(g.to_networkx()).values())
    hist, _ = np.histogram(cc, bins=bins, range=(0.0, 1.0))
    return hist / max(hist.sum(), 1)


def _neighbour_sets(adj):
    return [set(np.nonzero(row)[0].tolist()) for row in adj]


def connected_subsets(nbrs, k):
    """All connected induced node subsets of size k (k <= 4) via ESU edge expansion, each once."""
    out = []

    def extend(sub, ext, v):
        if len(sub) == k:
            out.append(tuple(sub))
            return
        ext = set(ext)
        while ext:
            w = ext.pop()
            excl = set().union(*(nbrs[u] for u in sub)) | set(sub)
            new_ext = ext | {u for u in nbrs[w] if u > v and u not in excl}
            extend(sub + [w], new_ext, v)

    for v in range(len(nbrs)):
        extend([v], {u for u in nbrs[v] if u > v}, v)
    return out


def _orbits_of_subset(sub, adj):
    """Orbit id for every node of a connected 3- or 4-node induced subgraph."""
    sub = list(sub)
    d = {u: sum(adj[u, w] for w in sub if w != u) for u in sub}
    m = sum(d.values()) // 2
    if len(sub) == 3:
        if m == 3:
            return {u: 3 for u in sub}
        return {u: (2 if d[u] == 2 else 1) for u in sub}
    if m == 3:
        if max(d.values()) == 3:
            return {u: (7 if d[u] == 3 else 6) for u in sub}
        return {u: (5 if d[u] == 2 else 4) for u in sub}
    if m == 4:
        if max(d.values()) == 2:
            return {u: 8 for u in sub}
        return {u: {1: 9, 2: 10, 3: 11}[d[u]] for u in sub}
    if m == 5:
        return {u: (13 if d[u] == 3 else 12) for u in sub}
    return {u: 14 for u in sub}


def orbit_counts(g: GraphSample) -> np.ndarray:
    """(N, 15) per-node counts of the orbits of all connected graphlets with 2 to 4 nodes."""
    adj = g.adjacency.astype(int)
    n = g.num_nodes
    counts = np.zeros((n, NUM_ORBITS), dtype=np.int64)
    counts[:, 0] = adj.sum(1)
    nbrs = _neighbour_sets(adj)
    for k in (3, 4):
        for sub in connected_subsets(nbrs, k):
            for u, o in _orbits_of_subset(sub, adj).items():
                counts[u, o] += 1
    return counts


def orbit_features(g: GraphSample) -> np.ndarray:
    if g.num_nodes == 0:
        return np.zeros(NUM_ORBITS)
    return orbit_counts(g).sum(0) / g.num_nodes


FEATURES = {"degree": degree_features, "cluster": clustering_features, "orbit": orbit_features}


# ----------------------------------------------------------------------------- isomorphism classes


def _label_match(a, b):
    return a.get("label") == b.get("label")


def _wl(h: nx.Graph):
    return nx.weisfeiler_lehman_graph_hash(h, node_attr="label", edge_attr="label")


class IsoIndex:
    """Isomorphism classes keyed by WL hash, confirmed by an exact check on collisions."""

    def __init__(self):
        self.buckets: dict = {}

    def find(self, g: GraphSample):
        h = g.to_networkx()
        key = _wl(h)
        for rep in self.buckets.get(key, []):
            if nx.is_isomorphic(rep, h, node_match=_label_match, edge_match=_label_match):
                return key, rep, h
        return key, None, h

    def add(self, g: GraphSample) -> bool:
        """Insert g; return True if it opened a new class."""
        key, rep, h = self.find(g)
        if rep is not None:
            return False
        self.buckets.setdefault(key, []).append(h)
        return True

    def contains(self, g: GraphSample) -> bool:
        return self.find(g)[1] is not None


def uniqueness(samples: Sequence[GraphSample]) -> float:
    if not samples:
        raise ValueError("uniqueness needs at least one sample")
    idx = IsoIndex()
    return sum(idx.add(g) for g in samples) / len(samples)


def novelty(samples: Sequence[GraphSample], train_corpus: Sequence[GraphSample]) -> float:
    if not samples:
        raise ValueError("novelty needs at least one sample")
    idx = IsoIndex()
    for g in train_corpus:
        idx.add(g)
    return sum(not idx.contains(g) for g in samples) / len(samples)


def largest_component(g: GraphSample) -> GraphSample:
    """Induced subgraph on the largest connected component; ties go to the one with the smallest node."""
    if g.num_nodes == 0:
        return g
    comps = [sorted(c) for c in nx.connected_components(g.to_networkx())]
    best = min(comps, key=lambda c: (-len(c), c[0]))
    idx = np.array(best)
    return GraphSample.from_types(g.node_types[idx], g.edge_types[np.ix_(idx, idx)], g.num_node_types, g.num_edge_types)


# ----------------------------------------------------------------------------- report


@dataclass
class EvalReport:
    mmd_degree: float
    mmd_cluster: float
    mmd_orbit: float
    uniqueness: float
    novelty: float | None = None
    num_samples: int = 0
    sampling_seconds: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("mmd_degree", "mmd_cluster", "mmd_orbit"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("uniqueness", "novelty"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_json(self) -> str:
        d = asdict(self)
        d["sampling_seconds"] = {str(k): v for k, v in self.sampling_seconds.items()}
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    def write(self, json_path, csv_path=None):
        Path(json_path).write_text(self.to_json())
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["metric", "value"])
                for k in ("mmd_degree", "mmd_cluster", "mmd_orbit", "uniqueness", "novelty"):
                    w.writerow([k, repr(getattr(self, k))])


def compute_mmds(samples, reference, metrics=("degree", "cluster", "orbit")) -> dict:
    out = {}
    for m in metrics:
        f = FEATURES[m]
        out[m] = mmd([f(g) for g in samples], [f(g) for g in reference], KERNEL_SIGMA[m])
    return out


def evaluate(samples, test_corpus, train_corpus=None, use_largest_component=False, sampling_seconds=None,
             metrics=("degree", "cluster", "orbit")) -> EvalReport:
    if use_largest_component:
        samples = [largest_component(g) for g in samples]
    m = compute_mmds(samples, test_corpus, metrics)
    return EvalReport(
        mmd_degree=m.get("degree", 0.0),
        mmd_cluster=m.get("cluster", 0.0),
        mmd_orbit=m.get("orbit", 0.0),
        uniqueness=uniqueness(samples),
        novelty=novelty(samples, train_corpus) if train_corpus is not None else None,
        num_samples=len(samples),
        sampling_seconds=dict(sampling_seconds or {}),
    )


def erdos_renyi_baseline(reference: Sequence[GraphSample], count: int, rng: np.random.Generator):
    """G(n, p) graphs with sizes from the reference histogram and p equal to its pooled edge density."""
    pairs = sum(g.num_nodes * (g.num_nodes - 1) / 2 for g in reference)
    p = sum(g.num_edges for g in reference) / pairs
    out = []
    for n in size_histogram(reference).sample(rng, size=count):
        upper = np.triu(rng.random((n, n)) < p, 1)
        out.append(GraphSample.from_adjacency((upper | upper.T).astype(np.uint8)))
    return out


# ----------------------------------------------------------------------------- contextual probe

PROBE_GRID = [round(0.05 * k, 2) for k in range(21)]
CLASSIFY_TASKS = ("cycle_detect",)
REGRESS_TASKS = ("diameter", "degree_class_count")


def probe_label(g: GraphSample, task: str):
    h = g.to_networkx()
    if task == "cycle_detect":
        return int(h.number_of_edges() > h.number_of_nodes() - nx.number_connected_components(h))
    if task == "diameter":
        return float(nx.diameter(h.subgraph(max(nx.connected_components(h), key=len))))
    if task == "degree_class_count":
        return float(len(np.unique(g.adjacency.sum(1))))
    raise ValueError(f"unknown probe task {task!r}")


def spanning_tree_augment(corpus: Sequence[GraphSample], rng: np.random.Generator):
    """Append one random spanning forest of every graph, so acyclic graphs appear in the probe corpus."""
    out = list(corpus)
    for g in corpus:
        h = g.to_networkx()
        for u, v in h.edges:
            h[u][v]["w"] = rng.random()
        t = nx.minimum_spanning_tree(h, weight="w")
        adj = nx.to_numpy_array(t, nodelist=range(g.num_nodes), dtype=np.uint8)
        out.append(GraphSample.from_adjacency(adj))
    return out


@torch.no_grad()
def contextual_vectors(bundle, corpus, t, rng: np.random.Generator, sde_cfg=None, batch_size=64):
    """Context token g_L of the score network for every graph diffused to time t."""
    sde_cfg = sde_cfg or sde.VpsdeConfig()
    dtype = next(bundle.parameters()).dtype
    out = []
    for s in range(0, len(corpus), batch_size):
        batch = collate(corpus[s : s + batch_size], dtype)
        noise = bundle.encoder.draw_noise(batch, rng) if bundle.enc_cfg.noise_dim else None
        mean = bundle.encoder(batch.x, batch.a, batch.mask, noise)
        m = batch.mask[..., None].to(dtype)
        z0 = mean + bundle.enc_cfg.std * torch.from_numpy(rng.standard_normal(tuple(mean.shape))).to(dtype)
        z0n = bundle.normalizer.normalize(z0) * m
        scale, sigma = sde.marginal_params(sde_cfg, float(t))
        zt = (scale * z0n + sigma * torch.from_numpy(rng.standard_normal(tuple(mean.shape))).to(dtype)) * m
        _, ctx = bundle.score(zt, float(t), batch.mask)
        out.append(ctx.double().numpy())
    return np.concatenate(out)


def probe_contextual(bundle, corpus, t_grid=PROBE_GRID, task="cycle_detect", rng=None, repeats=5,
                     sde_cfg=None, hidden=(64, 64), max_iter=500):
    """Per-t probe quality: accuracy for classification tasks, MAE for regression tasks.

    Each point averages ``repeats`` random 90/10 splits. Returns ``{"t": [...], "metric": [...],
    "baseline": float}``; the baseline is majority-class accuracy or the MAE of predicting the mean.
    """
    from sklearn.neural_network import MLPClassifier, MLPRegressor
    from sklearn.preprocessing import StandardScaler

    rng = rng or np.random.default_rng(0)
    y = np.array([probe_label(g, task) for g in corpus])
    if len(np.unique(y)) < 2:
        warnings.warn(f"probe task {task} has a single label value; skipping")
        return {"t": [], "metric": [], "baseline": float("nan")}
    classify = task in CLASSIFY_TASKS
    n_test = max(1, len(corpus) // 10)
    splits = [rng.permutation(len(corpus)) for _ in range(repeats)]
    if classify:
        baseline = float(max(np.mean(y == c) for c in np.unique(y)))
    else:
        baseline = float(np.mean([np.abs(y[p[:n_test]] - y[p[n_test:]].mean()).mean() for p in splits]))
    curve = []
    for t in t_grid:
        x = contextual_vectors(bundle, list(corpus), t, rng, sde_cfg)
        scores = []
        for r, perm in enumerate(splits):
            test, train = perm[:n_test], perm[n_test:]
            scaler = StandardScaler().fit(x[train])
            seed = int(rng.integers(2**31))
            model = (MLPClassifier if classify else MLPRegressor)(hidden_layer_sizes=hidden, max_iter=max_iter,
                                                                 random_state=seed)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                model.fit(scaler.transform(x[train]), y[train])
            pred = model.predict(scaler.transform(x[test]))
            scores.append(np.mean(pred == y[test]) if classify else np.abs(pred - y[test]).mean())
        curve.append(float(np.mean(scores)))
    return {"t": [float(t) for t in t_grid], "metric": curve, "baseline": baseline, "task": task}
