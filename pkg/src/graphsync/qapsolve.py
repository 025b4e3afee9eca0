"""Test-time multi-graph matching: affinities, the linearized solver, and
the unsupervised matching loss driving adapter fine-tuning.

The solver maximizes a sum of pairwise Koopmans-Beckmann objectives over
cycle-consistent matchings by working in universe coordinates: it repeatedly
accumulates the objective's linearization at the current assignments and
re-projects with Sinkhorn, so the iterates sharpen toward a discrete solution
while consistency stays structural.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .graphgen import Graph
from .matcore import SinkhornParams, sinkhorn
from .universe import AssignmentStack, universe_match


@dataclasses.dataclass(frozen=True)
class AffinityParams:
    """Node-affinity model: two (h, h) projections feeding a tiny scalar MLP.

    The raw similarity (V_i Px)(V_j Py)^T passes elementwise through
    out_w . relu(hidden_w * x + hidden_b) + out_b.
    """

    project_x: np.ndarray
    project_y: np.ndarray
    hidden_w: np.ndarray
    hidden_b: np.ndarray
    out_w: np.ndarray
    out_b: float = 0.0

    def __post_init__(self):
        if self.hidden_w.shape != self.hidden_b.shape or self.hidden_w.shape != self.out_w.shape:
            raise ValueError("MLP layer shapes do not compose")
        for arr in (self.project_x, self.project_y, self.hidden_w, self.hidden_b, self.out_w):
            if not np.all(np.isfinite(arr)):
                raise ValueError("affinity weights contain non-finite entries")

    @classmethod
    def identity(cls, feat_dim: int):
        """Projections set to the identity and an MLP computing f(x) = x
        exactly (relu(x) - relu(-x)). The resulting affinity is the plain
        feature inner product."""
        eye = np.eye(feat_dim)
        return cls(
            project_x=eye,
            project_y=eye,
            hidden_w=np.array([1.0, -1.0]),
            hidden_b=np.zeros(2),
            out_w=np.array([1.0, -1.0]),
            out_b=0.0,
        )

    @classmethod
    def random(cls, feat_dim: int, hidden: int, rng):
        scale = 1.0 / np.sqrt(feat_dim)
        return cls(
            project_x=scale * rng.standard_normal((feat_dim, feat_dim)),
            project_y=scale * rng.standard_normal((feat_dim, feat_dim)),
            hidden_w=rng.standard_normal(hidden),
            hidden_b=rng.standard_normal(hidden),
            out_w=rng.standard_normal(hidden) / np.sqrt(hidden),
            out_b=0.0,
        )


@dataclasses.dataclass(frozen=True)
class SolverParams:
    """Linearized multi-matching solver settings.

    edge_scale weighs edge-to-edge similarity against node affinities,
    focal_gamma amplifies confident affinities in the matching loss, and
    clamp_eps keeps log arguments away from 0 and 1. ``accumulate`` keeps the
    running-sum update of the linearization; disabling it uses a fresh
    gradient every iteration. ``include_self`` keeps the j = i term of the
    gradient sum. ``early_stop`` stops once no block moves more than
    ``change_tol``; disabling it always runs exactly ``max_iters`` rounds.

    The default projection budget is much deeper than for plain relaxed
    matching: the accumulated fields sharpen every round, and shallow
    projections of such fields drift enough to corrupt settled assignments.
    """

    edge_scale: float = 1.0
    focal_gamma: float = 2.0
    max_iters: int = 50
    sinkhorn: SinkhornParams = dataclasses.field(
        default_factory=lambda: SinkhornParams(tau=0.05, max_iters=300, tol=1e-9)
    )
    clamp_eps: float = 1e-7
    change_tol: float = 1e-5
    accumulate: bool = True
    include_self: bool = True
    early_stop: bool = True

    def __post_init__(self):
        if self.edge_scale < 0 or self.focal_gamma < 0:
            raise ValueError("edge_scale and focal_gamma must be nonnegative")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ValueError(f"clamp_eps must be in (0, 0.5), got {self.clamp_eps}")


@dataclasses.dataclass
class Adapter:
    """A single (h, h) feature transform standing in for a tunable network."""

    transform: np.ndarray

    def __post_init__(self):
        self.transform = np.asarray(self.transform, dtype=np.float64)
        if self.transform.ndim != 2 or self.transform.shape[0] != self.transform.shape[1]:
            raise ValueError("adapter transform must be square")
        if not np.all(np.isfinite(self.transform)):
            raise ValueError("adapter transform contains non-finite entries")

    @classmethod
    def identity(cls, feat_dim: int):
        return cls(np.eye(feat_dim))

    def apply(self, features) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.transform


def affinity(feats_i, feats_j, params: AffinityParams) -> np.ndarray:
    """Learned node-to-node affinity between two graphs' features.

    The projected inner-product similarity goes elementwise through the
    scalar MLP; output shape is (n_i, n_j).
    """
    feats_i = np.asarray(feats_i, dtype=np.float64)
    feats_j = np.asarray(feats_j, dtype=np.float64)
    if feats_i.shape[1] != feats_j.shape[1]:
        raise ValueError(
            f"feature dimensions differ: {feats_i.shape[1]} vs {feats_j.shape[1]}"
        )
    raw = (feats_i @ params.project_x) @ (feats_j @ params.project_y).T
    hidden = np.maximum(raw[:, :, None] * params.hidden_w + params.hidden_b, 0.0)
    return hidden @ params.out_w + params.out_b


def pairwise_affinities(features_list, params: AffinityParams) -> dict:
    """Affinity matrices for every ordered pair of graphs, including i = i."""
    return {
        (i, j): affinity(fi, fj, params)
        for i, fi in enumerate(features_list)
        for j, fj in enumerate(features_list)
    }


def taylor_gradient(
    index: int,
    stack: AssignmentStack,
    graphs,
    affinities: dict,
    params: SolverParams,
) -> np.ndarray:
    """Linearization of the summed pairwise matching objective at one block.

    For graph i this is sum_j (edge_scale * A_i U_i U_j^T A_j U_j + M_ij U_j),
    the ascent direction on the quadratic-plus-linear objective under the
    universe factorization X_ij = U_i U_j^T. The j = i term is included
    unless the solver params exclude it.
    """
    adj_i = graphs[index].adjacency
    u_i = stack.blocks[index]
    if adj_i.shape[0] != u_i.shape[0]:
        raise ValueError(
            f"graph {index}: adjacency size {adj_i.shape[0]} vs block rows {u_i.shape[0]}"
        )
    grad = np.zeros_like(u_i)
    pushed_i = adj_i @ u_i
    for j, graph_j in enumerate(graphs):
        if j == index and not params.include_self:
            continue
        u_j = stack.blocks[j]
        m_ij = affinities[(index, j)]
        if m_ij.shape != (u_i.shape[0], u_j.shape[0]):
            raise ValueError(
                f"affinity for pair ({index}, {j}) has shape {m_ij.shape}, "
                f"expected {(u_i.shape[0], u_j.shape[0])}"
            )
        core = u_j.T @ (graph_j.adjacency @ u_j)
        grad = grad + params.edge_scale * pushed_i @ core + m_ij @ u_j
    return grad


@dataclasses.dataclass
class SolveResult:
    """Relaxed solution stack plus convergence bookkeeping."""

    stack: AssignmentStack
    converged: bool
    iterations: int


def solve_multimatch(graphs, embedding, aff_params: AffinityParams, params: SolverParams) -> SolveResult:
    """Jointly match a batch of graphs against a frozen universe embedding.

    Initializes every block by universe matching, then alternates between
    accumulating the objective linearization and Sinkhorn re-projection.
    Stops when all blocks move less than ``change_tol`` in Frobenius norm or
    after ``max_iters`` rounds; ``max_iters=0`` returns the bare
    initialization. The embedding is read-only throughout.
    """
    embedding = np.asarray(embedding, dtype=np.float64)
    blocks = [universe_match(g.features, embedding, params.sinkhorn) for g in graphs]
    affinities = pairwise_affinities([g.features for g in graphs], aff_params)
    acc = [np.zeros_like(b) for b in blocks]
    converged = False
    iterations = 0
    for t in range(1, params.max_iters + 1):
        stack = AssignmentStack(blocks, "relaxed")
        grads = [taylor_gradient(i, stack, graphs, affinities, params) for i in range(len(graphs))]
        new_blocks = []
        for i, grad in enumerate(grads):
            acc[i] = acc[i] + grad if params.accumulate else grad
            if not np.all(np.isfinite(acc[i])):
                raise FloatingPointError(
                    f"non-finite solver state for graph {i} at iteration {t}"
                )
            new_blocks.append(sinkhorn(acc[i], params.sinkhorn))
        change = max(
            float(np.linalg.norm(nb - ob)) for nb, ob in zip(new_blocks, blocks)
        )
        blocks = new_blocks
        iterations = t
        if params.early_stop and change < params.change_tol:
            converged = True
            break
    return SolveResult(AssignmentStack(blocks, "relaxed"), converged, iterations)


def matching_loss(stack: AssignmentStack, affinities: dict, params: SolverParams) -> float:
    """Focal cross-entropy between normalized affinities and factored matchings.

    For every ordered pair i != j, compares P = U_i U_j^T (clamped away from
    0 and 1) against the Sinkhorn-normalized affinity: confident agreement
    costs nearly nothing, confident disagreement is amplified by the focal
    exponent.
    """
    eps = params.clamp_eps
    total = 0.0
    for i, u_i in enumerate(stack.blocks):
        for j, u_j in enumerate(stack.blocks):
            if i == j:
                continue
            overlap = np.clip(u_i @ u_j.T, eps, 1.0 - eps)
            norm_aff = sinkhorn(affinities[(i, j)], params.sinkhorn)
            total += float(
                np.sum(
                    -(norm_aff**params.focal_gamma) * (1.0 - overlap) * np.log(overlap)
                    - (1.0 - norm_aff) ** params.focal_gamma * overlap * np.log1p(-overlap)
                )
            )
    return total


def pair_kbqap_objective(matching, adj_i, adj_j, aff, edge_scale: float) -> float:
    """Koopmans-Beckmann score of one pairwise matching.

    edge_scale * tr(X^T A_i X A_j) + tr(X^T M) for a matching X, adjacencies
    A_i, A_j and node affinity M.
    """
    matching = np.asarray(matching, dtype=np.float64)
    adj_i = np.asarray(adj_i, dtype=np.float64)
    adj_j = np.asarray(adj_j, dtype=np.float64)
    aff = np.asarray(aff, dtype=np.float64)
    n_i, n_j = matching.shape
    if adj_i.shape != (n_i, n_i) or adj_j.shape != (n_j, n_j) or aff.shape != (n_i, n_j):
        raise ValueError(
            f"inconsistent shapes: X {matching.shape}, A_i {adj_i.shape}, "
            f"A_j {adj_j.shape}, M {aff.shape}"
        )
    quad = float(np.trace(matching.T @ adj_i @ matching @ adj_j))
    return edge_scale * quad + float((matching * aff).sum())


def stack_objective(stack: AssignmentStack, graphs, affinities: dict, edge_scale: float) -> float:
    """Summed pairwise objective of a stack's implied matchings, over i < j."""
    total = 0.0
    for i in range(len(stack.blocks)):
        for j in range(i + 1, len(stack.blocks)):
            matching = stack.blocks[i] @ stack.blocks[j].T
            total += pair_kbqap_objective(
                matching,
                graphs[i].adjacency,
                graphs[j].adjacency,
                affinities[(i, j)],
                edge_scale,
            )
    return total


def adapt(
    instance,
    embedding,
    adapter: Adapter,
    aff_params: AffinityParams,
    params: SolverParams,
    lr: float = 1e-3,
    steps: int = 50,
    fd_step: float = 1e-4,
):
    """Fine-tune the adapter against the matching loss on unlabeled graphs.

    Each step evaluates the matching loss of the full pipeline (transform
    features, solve, score) and descends along its central-finite-difference
    gradient with respect to the adapter entries, re-running the whole
    pipeline per perturbation. The solver runs a fixed number of rounds here
    (no early stop) so the differentiated landscape has no stopping-rule
    discontinuities.

    Returns the updated adapter and the loss trace, one value before any
    update plus one after each step.
    """
    fixed_params = dataclasses.replace(params, early_stop=False)
    base_graphs = instance.graphs

    def run_loss(transform):
        graphs = [
            Graph(g.features @ transform, g.adjacency, g.labels) for g in base_graphs
        ]
        feats = [g.features for g in graphs]
        result = solve_multimatch(graphs, embedding, aff_params, fixed_params)
        return matching_loss(result.stack, pairwise_affinities(feats, aff_params), fixed_params)

    transform = np.array(adapter.transform, dtype=np.float64)
    trace = [run_loss(transform)]
    if not np.isfinite(trace[0]):
        raise FloatingPointError("non-finite matching loss before any adapter step")
    for step in range(steps):
        grad = np.zeros_like(transform)
        for p in range(transform.shape[0]):
            for q in range(transform.shape[1]):
                h = fd_step * max(1.0, abs(transform[p, q]))
                probe = transform.copy()
                probe[p, q] += h
                plus = run_loss(probe)
                probe[p, q] -= 2.0 * h
                minus = run_loss(probe)
                grad[p, q] = (plus - minus) / (2.0 * h)
        transform = transform - lr * grad
        loss = run_loss(transform)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite matching loss at adapter step {step}")
        trace.append(loss)
    return Adapter(transform), np.asarray(trace, dtype=np.float64)
