"""Multi-graph matching and permutation synchronization toolkit."""

from .backend import BACKEND
from .graphgen import (
    AdjacencyParams,
    Graph,
    Instance,
    build_adjacency,
    cosine_distance,
    load_instance,
    make_synthetic,
    sample_nodes,
    save_instance,
)
from .matcore import (
    SinkhornParams,
    SinkhornResult,
    discretize,
    frobenius_inner,
    load_matrix,
    save_matrix,
    sinkhorn,
)
from .oracle import (
    EvalReport,
    brute_force_multi,
    brute_force_pair,
    matching_accuracy,
)
from .qapsolve import (
    Adapter,
    AffinityParams,
    SolveResult,
    SolverParams,
    adapt,
    affinity,
    matching_loss,
    pair_kbqap_objective,
    pairwise_affinities,
    solve_multimatch,
    stack_objective,
    taylor_gradient,
)
from .universe import (
    AssignmentStack,
    FitResult,
    HippiResult,
    class_coupling,
    cycle_violations,
    embed_loss_grad,
    expand_matchings,
    fit_embeddings,
    hippi,
    init_universe,
    load_universe,
    multimatch_objective,
    multimatch_objective_stacked,
    save_universe,
    universe_match,
    universe_size,
    validate_stack,
)

__version__ = "0.1.0"
