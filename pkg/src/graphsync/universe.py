"""Universe embeddings, universe matchings, and permutation synchronization.

A universe of d slots is the shared index set all graphs map into. Matching
each graph to the universe instead of to every other graph makes pairwise
matchings factor as X_ij = U_i U_j^T, which is cycle-consistent by
construction. The embedding holds one learnable feature row per slot; fitting
it against synchronized targets distills the structure shared by the graphs.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg

from .matcore import SinkhornParams, discretize, frobenius_inner, load_matrix, save_matrix, sinkhorn


@dataclasses.dataclass
class AssignmentStack:
    """Per-graph assignments to the universe: list of (n_i, d) blocks.

    ``mode`` is "relaxed" (rows sum to 1, column sums at most 1, entries in
    (0, 1)) or "binary" (exact partial permutations with full row sums).
    """

    blocks: list
    mode: str = "relaxed"

    def __post_init__(self):
        if self.mode not in ("relaxed", "binary"):
            raise ValueError(f"unknown stack mode {self.mode!r}")
        self.blocks = [np.asarray(b, dtype=np.float64) for b in self.blocks]

    @property
    def num_graphs(self) -> int:
        return len(self.blocks)

    @property
    def universe_dim(self) -> int:
        return self.blocks[0].shape[1]


def validate_stack(stack: AssignmentStack, tol: float = 1e-6) -> None:
    """Raise if any block violates its mode's constraints."""
    for i, block in enumerate(stack.blocks):
        if block.shape[1] != stack.universe_dim:
            raise ValueError(f"block {i} universe size differs")
        if stack.mode == "binary":
            if not np.all((block == 0.0) | (block == 1.0)):
                raise ValueError(f"block {i} is not binary")
            if not np.all(block.sum(axis=1) == 1.0):
                raise ValueError(f"block {i} has a row sum != 1")
            if np.any(block.sum(axis=0) > 1.0):
                raise ValueError(f"block {i} has a column sum > 1")
        else:
            if np.any(block < -tol) or np.any(block > 1.0 + tol):
                raise ValueError(f"block {i} has entries outside [0, 1]")
            if np.any(np.abs(block.sum(axis=1) - 1.0) > tol):
                raise ValueError(f"block {i} row sums deviate beyond {tol}")
            if np.any(block.sum(axis=0) > 1.0 + tol):
                raise ValueError(f"block {i} column sums exceed 1 + {tol}")


def init_universe(size: int, feat_dim: int, rng) -> np.ndarray:
    """Fresh (d, h) embedding: 1/d plus small Gaussian jitter per entry."""
    if size < 1 or feat_dim < 1:
        raise ValueError("universe size and feature dimension must be positive")
    return 1.0 / size + 1e-3 * rng.standard_normal((size, feat_dim))


def universe_size(classes: int, step: int) -> int:
    """Universe size rule: round(100 * (classes + 1) / step)."""
    if step < 1:
        raise ValueError(f"sampling step must be at least 1, got {step}")
    return round(100.0 * (classes + 1) / step)


def universe_match(features, embedding, params: SinkhornParams | None = None) -> np.ndarray:
    """Relaxed matching of graph nodes to universe slots.

    Sinkhorn-projects the similarity ``features @ embedding.T``; rows sum to
    1 and column sums stay at most 1 + tol. The universe must be at least as
    large as the graph.
    """
    features = np.asarray(features, dtype=np.float64)
    embedding = np.asarray(embedding, dtype=np.float64)
    if features.shape[0] > embedding.shape[0]:
        raise ValueError(
            f"graph has {features.shape[0]} nodes but the universe only "
            f"{embedding.shape[0]} slots"
        )
    if features.shape[1] != embedding.shape[1]:
        raise ValueError(
            f"feature dimension mismatch: {features.shape[1]} vs {embedding.shape[1]}"
        )
    return sinkhorn(features @ embedding.T, params)


def class_coupling(graphs) -> np.ndarray:
    """Class-aware similarity over all graphs' nodes.

    With H the stacked one-hot label matrix and A the block-diagonal
    adjacency, returns (H H^T)^T A (H H^T) computed as H (H^T A H) H^T.
    Entries couple nodes of the same class across graphs; the result is
    symmetric whenever every adjacency is.
    """
    labels = np.concatenate([g.labels for g in graphs])
    if labels.min() < 1:
        raise ValueError("labels must be 1-based positive class ids")
    num_classes = int(labels.max())
    onehot = np.zeros((labels.size, num_classes))
    onehot[np.arange(labels.size), labels - 1] = 1.0
    block_adj = scipy.linalg.block_diag(*[g.adjacency for g in graphs])
    class_totals = onehot.T @ block_adj @ onehot
    return onehot @ class_totals @ onehot.T


@dataclasses.dataclass
class HippiResult:
    """Synchronization output plus convergence and input-quality flags."""

    stack: AssignmentStack
    iterations: int
    converged: bool
    symmetry_warning: bool


def hippi(
    coupling,
    stack0: AssignmentStack,
    params: SinkhornParams | None = None,
    change_tol: float = 1e-5,
    max_iters: int = 50,
) -> HippiResult:
    """Higher-order projected power iteration over a coupled similarity.

    Repeats V = C U (U^T C U) on the stacked assignment U, re-projecting
    each graph's block with Sinkhorn, until no block moves more than
    ``change_tol`` in Frobenius norm. A non-symmetric coupling is flagged
    but iterated anyway; a non-finite iterate aborts with the iteration
    index.
    """
    coupling = np.asarray(coupling, dtype=np.float64)
    sizes = [b.shape[0] for b in stack0.blocks]
    total = sum(sizes)
    if coupling.shape != (total, total):
        raise ValueError(
            f"coupling shape {coupling.shape} does not match {total} stacked nodes"
        )
    symmetry_warning = not np.allclose(coupling, coupling.T, rtol=0.0, atol=1e-12)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    stacked = np.vstack(stack0.blocks)
    blocks = list(stack0.blocks)
    iterations = 0
    converged = False
    for t in range(1, max_iters + 1):
        pushed = coupling @ stacked
        update = pushed @ (stacked.T @ pushed)
        if not np.all(np.isfinite(update)):
            raise FloatingPointError(f"non-finite synchronization iterate at iteration {t}")
        new_blocks = [
            sinkhorn(update[offsets[i] : offsets[i + 1]], params)
            for i in range(len(sizes))
        ]
        change = max(
            float(np.linalg.norm(nb - ob)) for nb, ob in zip(new_blocks, blocks)
        )
        blocks = new_blocks
        stacked = np.vstack(blocks)
        iterations = t
        if change < change_tol:
            converged = True
            break
    return HippiResult(AssignmentStack(blocks, "relaxed"), iterations, converged, symmetry_warning)


def multimatch_objective(stack: AssignmentStack, adjacencies) -> float:
    """Synchronization quality as a sum of pairwise reordered-adjacency overlaps.

    Sums the Frobenius inner products <U_i^T A_i U_i, U_j^T A_j U_j> over all
    ordered graph pairs, including i = j.
    """
    inner = [
        block.T @ np.asarray(adj, dtype=np.float64) @ block
        for block, adj in zip(stack.blocks, adjacencies)
    ]
    if len(inner) != len(stack.blocks) or len(adjacencies) != len(stack.blocks):
        raise ValueError("one adjacency per stack block required")
    total = 0.0
    for a in inner:
        for b in inner:
            total += frobenius_inner(a, b)
    return total


def multimatch_objective_stacked(stack: AssignmentStack, adjacencies) -> float:
    """Same objective evaluated as tr(U^T A U U^T A U) on the stacked forms.

    Agrees with :func:`multimatch_objective` whenever the adjacencies are
    symmetric; the two routes cross-check each other.
    """
    if len(adjacencies) != len(stack.blocks):
        raise ValueError("one adjacency per stack block required")
    stacked = np.vstack(stack.blocks)
    block_adj = scipy.linalg.block_diag(*[np.asarray(a, dtype=np.float64) for a in adjacencies])
    core = stacked.T @ block_adj @ stacked
    return float(np.trace(core @ core))


def embed_loss_grad(embedding, targets: AssignmentStack, features_list, alpha: float):
    """Fitting loss and its gradient for the universe embedding.

    loss = sum_i ||T_i - V_i E^T||_F^2 + alpha ||E||_F^2 with binary targets
    T_i; the gradient is sum_i -2 R_i^T V_i + 2 alpha E where R_i is the
    residual T_i - V_i E^T.
    """
    if targets.mode != "binary":
        raise ValueError("targets must be a binary assignment stack")
    if len(features_list) != len(targets.blocks):
        raise ValueError("one feature matrix per target block required")
    embedding = np.asarray(embedding, dtype=np.float64)
    loss = alpha * float((embedding * embedding).sum())
    grad = 2.0 * alpha * embedding
    for target, feats in zip(targets.blocks, features_list):
        feats = np.asarray(feats, dtype=np.float64)
        if target.shape != (feats.shape[0], embedding.shape[0]):
            raise ValueError(
                f"target shape {target.shape} does not match features "
                f"{feats.shape} and universe size {embedding.shape[0]}"
            )
        residual = target - feats @ embedding.T
        loss += float((residual * residual).sum())
        grad = grad - 2.0 * residual.T @ feats
    return loss, grad


@dataclasses.dataclass
class FitResult:
    """Fitted embedding plus the loss recorded at every descent step."""

    embedding: np.ndarray
    losses: np.ndarray


def fit_embeddings(
    instance,
    universe_dim: int,
    alpha: float = 1e-3,
    lr: float = 1e-3,
    steps: int = 200,
    sinkhorn_params: SinkhornParams | None = None,
    change_tol: float = 1e-5,
    sync_iters: int = 20,
    rng=None,
    init=None,
) -> FitResult:
    """Fit the universe embedding on one instance by gradient descent.

    Each step matches every graph to the universe, synchronizes the relaxed
    matchings through the class coupling, discretizes them into binary
    targets, and takes one descent step on the embedding loss. ``steps=0``
    returns the initial embedding unchanged.
    """
    max_nodes = max(g.num_nodes for g in instance.graphs)
    if universe_dim < max_nodes:
        raise ValueError(
            f"universe size {universe_dim} is smaller than the largest graph ({max_nodes})"
        )
    feats = [g.features for g in instance.graphs]
    feat_dim = feats[0].shape[1]
    if init is not None:
        embedding = np.array(init, dtype=np.float64)
    else:
        if rng is None:
            rng = np.random.default_rng()
        embedding = init_universe(universe_dim, feat_dim, rng)
    coupling = class_coupling(instance.graphs)
    losses = []
    for _ in range(steps):
        blocks = [universe_match(v, embedding, sinkhorn_params) for v in feats]
        sync = hippi(
            coupling,
            AssignmentStack(blocks, "relaxed"),
            sinkhorn_params,
            change_tol=change_tol,
            max_iters=sync_iters,
        )
        targets = AssignmentStack([discretize(b) for b in sync.stack.blocks], "binary")
        loss, grad = embed_loss_grad(embedding, targets, feats, alpha)
        losses.append(loss)
        embedding = embedding - lr * grad
    return FitResult(embedding, np.asarray(losses, dtype=np.float64))


def expand_matchings(stack: AssignmentStack) -> dict:
    """All pairwise matchings X_ij = U_i U_j^T from a binary stack.

    Returns a dict over ordered pairs (i, j) with i != j. Every X_ij is a
    binary partial permutation because the blocks share one universe.
    """
    if stack.mode != "binary":
        raise ValueError("matchings expand only from a binary stack; discretize first")
    out = {}
    for i, u_i in enumerate(stack.blocks):
        for j, u_j in enumerate(stack.blocks):
            if i != j:
                out[(i, j)] = u_i @ u_j.T
    return out


def cycle_violations(matchings: dict) -> int:
    """Count entrywise transitivity violations X_ik X_kj <= X_ij.

    ``matchings`` must hold every ordered pair over the graphs it mentions.
    Triples range over distinct (i, k, j); with fewer than three graphs the
    condition is vacuous and the count is 0.
    """
    indices = sorted({i for pair in matchings for i in pair})
    if not indices:
        return 0
    num = max(indices) + 1
    for i in range(num):
        for j in range(num):
            if i != j and (i, j) not in matchings:
                raise ValueError(f"matching set is missing pair ({i}, {j})")
    count = 0
    for i in range(num):
        for k in range(num):
            if k == i:
                continue
            for j in range(num):
                if j == i or j == k:
                    continue
                product = matchings[(i, k)] @ matchings[(k, j)]
                count += int((product > matchings[(i, j)] + 1e-9).sum())
    return count


def save_universe(path, embedding, meta: dict | None = None) -> None:
    """Persist an embedding as a matrix fixture plus a sidecar meta line.

    ``path`` names the ``.mat`` fixture; the meta (d, h, alpha, steps, seed)
    goes to the same path with a ``.meta`` suffix.
    """
    embedding = np.asarray(embedding, dtype=np.float64)
    save_matrix(path, embedding)
    meta = dict(meta or {})
    meta.setdefault("d", embedding.shape[0])
    meta.setdefault("h", embedding.shape[1])
    fields = ("d", "h", "alpha", "steps", "seed")
    line = " ".join(f"{k}={meta.get(k)}" for k in fields)
    with open(str(path).rsplit(".", 1)[0] + ".meta", "w", newline="\n") as fh:
        fh.write(line + "\n")


def load_universe(path):
    """Read an embedding fixture written by :func:`save_universe`.

    Returns ``(embedding, meta)``; meta values come back as strings.
    """
    embedding = load_matrix(path)
    meta = {}
    meta_path = str(path).rsplit(".", 1)[0] + ".meta"
    try:
        with open(meta_path) as fh:
            for token in fh.read().split():
                key, _, value = token.partition("=")
                meta[key] = value
    except FileNotFoundError:
        pass
    return embedding, meta
