"""Graph construction and synthetic instance generation.

Graphs pair node features with a weighted adjacency built from projected
feature similarity damped by inverse cosine distance. Synthetic instances
are permuted noisy copies of a common prototype set, which gives every
instance a known ground-truth correspondence for oracle metrics.
"""

from __future__ import annotations

import dataclasses
import os

import numpy as np

from .matcore import load_matrix, save_matrix


@dataclasses.dataclass
class Graph:
    """One graph: node features (n, h), weighted adjacency (n, n), labels (n,).

    Labels are 1-based class ids. The adjacency has a zero diagonal and
    nonnegative finite entries.
    """

    features: np.ndarray
    adjacency: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.adjacency = np.asarray(self.adjacency, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.adjacency.shape != (n, n):
            raise ValueError(
                f"adjacency shape {self.adjacency.shape} does not match {n} nodes"
            )
        if self.labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got {self.labels.shape}")
        if not np.all(np.isfinite(self.adjacency)):
            raise ValueError("adjacency contains non-finite entries")
        if np.any(self.adjacency < 0):
            raise ValueError("adjacency contains negative entries")
        if np.any(np.diag(self.adjacency) != 0):
            raise ValueError("adjacency diagonal must be zero")
        if np.any(self.labels < 1):
            raise ValueError("labels must be 1-based positive class ids")

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]


@dataclasses.dataclass
class Instance:
    """A bundle of graphs to match, with optional ground truth.

    ``gt[i][a]`` is the universe slot of node ``a`` in graph ``i``; outlier
    nodes carry -1. Within one graph no slot repeats.
    """

    graphs: list
    gt: list | None = None
    meta: dict = dataclasses.field(default_factory=dict)

    @property
    def num_graphs(self) -> int:
        return len(self.graphs)


@dataclasses.dataclass(frozen=True)
class AdjacencyParams:
    """Weights for adjacency construction: two (h, h) projections, the
    probability of dropping an off-diagonal edge, and the additive guard
    applied to cosine distances before taking reciprocals."""

    project_x: np.ndarray
    project_y: np.ndarray
    drop_rate: float = 0.1
    epsilon: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.drop_rate <= 1.0:
            raise ValueError(f"drop_rate must be in [0, 1], got {self.drop_rate}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def identity(cls, feat_dim: int, drop_rate: float = 0.0, epsilon: float = 1e-6):
        eye = np.eye(feat_dim)
        return cls(eye, eye, drop_rate=drop_rate, epsilon=epsilon)


def cosine_distance(features) -> np.ndarray:
    """Pairwise cosine distances 1 - cos(v_a, v_b) between feature rows.

    Symmetric, zero diagonal, entries in [0, 2]. Rows with zero norm have no
    direction and raise.
    """
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1)
    if np.any(norms == 0):
        raise ValueError("cosine distance undefined for zero-norm feature rows")
    unit = features / norms[:, None]
    dist = 1.0 - unit @ unit.T
    dist = np.maximum(dist, 0.0)
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


def build_adjacency(features, params: AdjacencyParams, rng=None) -> np.ndarray:
    """Weighted adjacency from projected similarity and geometric proximity.

    Row-softmax of (V Px)(V Py)^T is multiplied elementwise by the reciprocal
    cosine distance 1/(D + epsilon), the diagonal is zeroed, and each
    off-diagonal entry is independently dropped with probability drop_rate.
    """
    features = np.asarray(features, dtype=np.float64)
    sim = (features @ params.project_x) @ (features @ params.project_y).T
    sim = sim - sim.max(axis=1, keepdims=True)
    soft = np.exp(sim)
    soft /= soft.sum(axis=1, keepdims=True)
    adj = soft / (cosine_distance(features) + params.epsilon)
    np.fill_diagonal(adj, 0.0)
    if params.drop_rate > 0.0:
        if rng is None:
            raise ValueError("drop_rate > 0 requires a random source")
        keep = rng.random(adj.shape) >= params.drop_rate
        adj = adj * keep
        np.fill_diagonal(adj, 0.0)
    return adj


def sample_nodes(feature_grid, mask, grid_shape, step: int):
    """Spatially-uniform sampling of foreground cells from a feature grid.

    Visits grid positions (r, c) with r and c both multiples of ``step`` in
    row-major order, keeping cells whose mask label is at least 1.

    Args:
        feature_grid: (H*W, h) per-cell features, row-major.
        mask: H*W integer labels, 0 for background.
        grid_shape: (H, W).
        step: sampling stride, at least 1.

    Returns:
        (features, labels) of the visited foreground cells, in visit order.
    """
    if step < 1:
        raise ValueError(f"step must be at least 1, got {step}")
    feature_grid = np.asarray(feature_grid, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.int64)
    height, width = grid_shape
    if feature_grid.shape[0] != height * width or mask.shape[0] != height * width:
        raise ValueError("feature grid / mask size does not match grid shape")
    if not np.any(mask >= 1):
        raise ValueError("mask has no foreground cells")
    picks = []
    for r in range(0, height, step):
        for c in range(0, width, step):
            idx = r * width + c
            if mask[idx] >= 1:
                picks.append(idx)
    picks = np.array(picks, dtype=np.int64)
    return feature_grid[picks], mask[picks]


def make_synthetic(
    num_graphs: int,
    num_nodes: int,
    feat_dim: int,
    noise_sigma: float = 0.0,
    outliers: int = 0,
    classes: int = 1,
    rng=None,
    seed=None,
) -> Instance:
    """Permuted noisy copies of a common prototype set, with ground truth.

    Draws ``num_nodes`` standard-normal prototype features with round-robin
    class labels. Each graph receives every prototype under an independent
    uniformly random node permutation plus Gaussian feature noise, followed
    by ``outliers`` extra nodes with fresh random features that map to no
    universe slot. Adjacency uses identity projections and no edge dropout.

    ``seed`` is recorded in the instance metadata only; reproducibility is
    governed entirely by the passed rng.
    """
    if num_nodes < 2 or feat_dim < 2:
        raise ValueError("need at least 2 nodes and 2 feature dimensions")
    if rng is None:
        rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((num_nodes, feat_dim))
    proto_labels = (np.arange(num_nodes) % classes) + 1
    adjacency_params = AdjacencyParams.identity(feat_dim)
    graphs = []
    gt = []
    for _ in range(num_graphs):
        perm = rng.permutation(num_nodes)
        noise = rng.standard_normal((num_nodes, feat_dim))
        feats = prototypes[perm] + noise_sigma * noise
        labels = proto_labels[perm]
        slots = perm.astype(np.int64)
        if outliers > 0:
            extra = rng.standard_normal((outliers, feat_dim))
            extra_labels = rng.integers(1, classes + 1, size=outliers)
            feats = np.vstack([feats, extra])
            labels = np.concatenate([labels, extra_labels])
            slots = np.concatenate([slots, np.full(outliers, -1, dtype=np.int64)])
        graphs.append(Graph(feats, build_adjacency(feats, adjacency_params), labels))
        gt.append(slots)
    meta = {
        "m": num_graphs,
        "n": num_nodes,
        "h": feat_dim,
        "noise_sigma": noise_sigma,
        "outliers": outliers,
        "seed": seed,
    }
    return Instance(graphs, gt, meta)


def save_instance(instance: Instance, dirpath) -> None:
    """Serialize an instance to a directory of fixtures.

    Layout: ``meta`` (key=value lines), per-graph ``V_<i>.mat`` features and
    ``A_<i>.mat`` adjacency, ``Y_<i>.txt`` labels (one per line), and
    ``gt_<i>.txt`` with one ``node slot`` pair per inlier node.
    """
    os.makedirs(dirpath, exist_ok=True)
    meta = dict(instance.meta)
    meta.setdefault("m", instance.num_graphs)
    with open(os.path.join(dirpath, "meta"), "w", newline="\n") as fh:
        for key in ("m", "n", "h", "noise_sigma", "outliers", "seed"):
            fh.write(f"{key}={meta.get(key)}\n")
    for i, graph in enumerate(instance.graphs):
        save_matrix(os.path.join(dirpath, f"V_{i}.mat"), graph.features)
        save_matrix(os.path.join(dirpath, f"A_{i}.mat"), graph.adjacency)
        with open(os.path.join(dirpath, f"Y_{i}.txt"), "w", newline="\n") as fh:
            for label in graph.labels:
                fh.write(f"{label}\n")
        if instance.gt is not None:
            with open(os.path.join(dirpath, f"gt_{i}.txt"), "w", newline="\n") as fh:
                for node, slot in enumerate(instance.gt[i]):
                    if slot >= 0:
                        fh.write(f"{node} {slot}\n")


def load_instance(dirpath) -> Instance:
    """Read an instance directory written by :func:`save_instance`."""
    meta = {}
    with open(os.path.join(dirpath, "meta")) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            meta[key] = value
    num_graphs = int(meta["m"])
    graphs = []
    gt = []
    has_gt = True
    for i in range(num_graphs):
        features = load_matrix(os.path.join(dirpath, f"V_{i}.mat"))
        adjacency = load_matrix(os.path.join(dirpath, f"A_{i}.mat"))
        with open(os.path.join(dirpath, f"Y_{i}.txt")) as fh:
            labels = np.array([int(v) for v in fh.read().split()], dtype=np.int64)
        graphs.append(Graph(features, adjacency, labels))
        gt_path = os.path.join(dirpath, f"gt_{i}.txt")
        if os.path.exists(gt_path):
            slots = np.full(features.shape[0], -1, dtype=np.int64)
            with open(gt_path) as fh:
                for line in fh:
                    parts = line.split()
                    if parts:
                        slots[int(parts[0])] = int(parts[1])
            gt.append(slots)
        else:
            has_gt = False
    parsed_meta = {
        "m": num_graphs,
        "n": int(meta["n"]),
        "h": int(meta["h"]),
        "noise_sigma": float(meta["noise_sigma"]),
        "outliers": int(meta["outliers"]),
        "seed": None if meta.get("seed") in (None, "None") else int(meta["seed"]),
    }
    return Instance(graphs, gt if has_gt else None, parsed_meta)
