"""Brute-force reference solvers and evaluation metrics.

Everything here is exhaustive and only meant for desk-scale verification:
the pair oracle enumerates injective assignments directly, the multi-graph
oracle enumerates per-graph slot assignments so cycle-consistency holds by
construction. Ties break toward the first enumerated candidate, which is
the lexicographically greatest flattened matching; identical inputs always
give identical outputs.
"""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from .universe import AssignmentStack, expand_matchings

MAX_PAIR_NODES = 8
MAX_MULTI_GRAPHS = 3
MAX_MULTI_NODES = 4
MAX_MULTI_UNIVERSE = 6


@dataclasses.dataclass
class EvalReport:
    """Summary of one solver-versus-oracle evaluation."""

    accuracy: float
    objective_ratio: float
    cycle_violation_count: int
    wall_time: float


def brute_force_pair(adj_i, adj_j, aff, edge_scale: float):
    """Exhaustive maximizer of the pairwise Koopmans-Beckmann objective.

    Enumerates every injective assignment of the smaller side's nodes
    (including the choice of assigned subset when sizes differ) and returns
    the best binary matching with its objective value.
    """
    adj_i = np.asarray(adj_i, dtype=np.float64)
    adj_j = np.asarray(adj_j, dtype=np.float64)
    aff = np.asarray(aff, dtype=np.float64)
    n_i, n_j = aff.shape
    if adj_i.shape != (n_i, n_i) or adj_j.shape != (n_j, n_j):
        raise ValueError("adjacency shapes do not match the affinity matrix")
    if n_i > MAX_PAIR_NODES or n_j > MAX_PAIR_NODES:
        raise ValueError(
            f"pair oracle is limited to {MAX_PAIR_NODES} nodes per graph"
        )
    best_value = -np.inf
    best_flat = None
    best = None
    rows = np.arange(min(n_i, n_j))
    # Quadratic term of tr(X^T A_i X A_j) for an assignment a -> sigma(a):
    # sum over matched pairs (a, c) of A_i[a, c] * A_j[sigma(c), sigma(a)].
    if n_i <= n_j:
        for cols in itertools.permutations(range(n_j), n_i):
            cols = np.asarray(cols)
            value = edge_scale * float(
                (adj_i * adj_j[np.ix_(cols, cols)].T).sum()
            ) + float(aff[rows, cols].sum())
            if value > best_value or (
                value == best_value and _flat_key(rows, cols, n_j) > best_flat
            ):
                best_value = value
                best_flat = _flat_key(rows, cols, n_j)
                best = (rows, cols)
    else:
        for picked in itertools.permutations(range(n_i), n_j):
            picked = np.asarray(picked)
            value = edge_scale * float(
                (adj_i[np.ix_(picked, picked)] * adj_j.T).sum()
            ) + float(aff[picked, rows].sum())
            if value > best_value or (
                value == best_value and _flat_key(picked, rows, n_j) > best_flat
            ):
                best_value = value
                best_flat = _flat_key(picked, rows, n_j)
                best = (picked, rows)
    matching = np.zeros((n_i, n_j))
    matching[best[0], best[1]] = 1.0
    return matching, best_value


def _flat_key(rows, cols, n_j):
    # Flattened-matrix comparison key: larger means 1-entries sit earlier
    # (the matching is lexicographically greater when flattened row-major).
    positions = sorted(int(r) * n_j + int(c) for r, c in zip(rows, cols))
    return tuple(-p for p in positions)


def _injection_onehots(count: int, universe_dim: int):
    injections = np.array(
        list(itertools.permutations(range(universe_dim), count)), dtype=np.int64
    )
    onehots = np.zeros((injections.shape[0], count, universe_dim))
    idx = np.arange(count)
    for p, inj in enumerate(injections):
        onehots[p, idx, inj] = 1.0
    return injections, onehots


def _pair_table(onehots_i, onehots_j, adj_i, adj_j, aff, edge_scale):
    # Score every (injection_i, injection_j) combination of one graph pair.
    # tr(X^T A_i X A_j) expands to X[a,b] A_i[a,c] X[c,d] A_j[d,b].
    matchings = np.einsum("pas,qbs->pqab", onehots_i, onehots_j)
    linear = np.einsum("pqab,ab->pq", matchings, aff)
    quad = np.einsum("pqab,ac,pqcd,db->pq", matchings, adj_i, matchings, adj_j)
    return edge_scale * quad + linear


def brute_force_multi(instance, edge_scale: float, universe_dim: int, affinities: dict | None = None):
    """Exhaustive maximizer over cycle-consistent multi-graph matchings.

    Enumerates every injective slot assignment per graph and scores the
    implied matchings X_ij = U_i U_j^T with the summed pairwise objective
    over i < j. Node affinities default to all-ones. Returns the best binary
    stack and its objective value.
    """
    graphs = instance.graphs
    num = len(graphs)
    if num > MAX_MULTI_GRAPHS:
        raise ValueError(f"multi oracle is limited to {MAX_MULTI_GRAPHS} graphs")
    if num < 2:
        raise ValueError("need at least two graphs")
    sizes = [g.num_nodes for g in graphs]
    if max(sizes) > MAX_MULTI_NODES:
        raise ValueError(f"multi oracle is limited to {MAX_MULTI_NODES} nodes per graph")
    if universe_dim > MAX_MULTI_UNIVERSE:
        raise ValueError(f"multi oracle is limited to universe size {MAX_MULTI_UNIVERSE}")
    if universe_dim < max(sizes):
        raise ValueError("universe smaller than the largest graph")
    if affinities is None:
        affinities = {
            (i, j): np.ones((sizes[i], sizes[j]))
            for i in range(num)
            for j in range(num)
        }
    enums = [_injection_onehots(n, universe_dim) for n in sizes]
    tables = {}
    for i in range(num):
        for j in range(i + 1, num):
            tables[(i, j)] = _pair_table(
                enums[i][1],
                enums[j][1],
                graphs[i].adjacency,
                graphs[j].adjacency,
                affinities[(i, j)],
                edge_scale,
            )
    if num == 2:
        table = tables[(0, 1)]
        flat_index = int(np.argmax(table))
        choice = np.unravel_index(flat_index, table.shape)
        best_value = float(table[choice])
    else:
        best_value = -np.inf
        choice = None
        t12 = tables[(1, 2)]
        for p0 in range(enums[0][1].shape[0]):
            candidate = tables[(0, 1)][p0][:, None] + tables[(0, 2)][p0][None, :] + t12
            local = int(np.argmax(candidate))
            p1, p2 = np.unravel_index(local, candidate.shape)
            value = float(candidate[p1, p2])
            if value > best_value:
                best_value = value
                choice = (p0, int(p1), int(p2))
    blocks = [enums[i][1][choice[i]].copy() for i in range(num)]
    return AssignmentStack(blocks, "binary"), best_value


def matching_accuracy(pred, instance) -> float:
    """Fraction of ground-truth node pairs reproduced by a prediction.

    ``pred`` is either a dict of binary matchings over ordered graph pairs
    or a binary assignment stack. Counts, for every ordered pair (i, j) and
    every ground-truth slot shared by a node of each graph, whether the
    matching links those two nodes. Outliers never enter the denominator.
    """
    if instance.gt is None:
        raise ValueError("instance carries no ground truth")
    if isinstance(pred, AssignmentStack):
        pred = expand_matchings(pred)
    num = instance.num_graphs
    total = 0
    correct = 0
    slot_maps = []
    for slots in instance.gt:
        slot_maps.append({int(s): a for a, s in enumerate(slots) if s >= 0})
    for i in range(num):
        for j in range(num):
            if i == j:
                continue
            matching = pred[(i, j)]
            for a, slot in enumerate(instance.gt[i]):
                if slot < 0:
                    continue
                b = slot_maps[j].get(int(slot))
                if b is None:
                    continue
                total += 1
                if matching[a, b] == 1.0:
                    correct += 1
    if total == 0:
        return 0.0
    return correct / total
