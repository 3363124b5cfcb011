"""Hypergraph-guided heuristic optimization for binary QCQPs.

The pipeline: a hypergraph convolution network proposes per-variable values,
an envelope-based repair recovers a feasible starting point, and parallel
fixed-radius neighborhood search with crossover improves the incumbent.
All subproblem solving uses the built-in small-scale solvers (exhaustive
enumeration, tabu search, and branch and bound over an internal barrier
LP/QP engine).
"""

from .instance import (
    Constraint,
    EvalReport,
    OracleResult,
    QcqpInstance,
    SchemaError,
    TermList,
    VarInfo,
    brute_force_oracle,
    evaluate,
    instance_from_dict,
    instance_to_dict,
    load_instance,
    normalize,
    save_instance,
)
from .generators import QmkpParams, RandqcpParams, gen_qmkp, gen_randqcp
from .hypergraph import BipartiteView, TermHypergraph, build_hypergraph, star_expand
from .mccormick import (
    BoundContext,
    LinearProgram,
    RepairOutcome,
    TermBounds,
    constraint_min_activity,
    linearize_subproblem,
    mccormick_box,
    q_repair,
)
from .ipm import IpmConfig, IpmResult, IpmState, QpStd, cg_solve, ipm_solve, ipm_step
from .ipm_mp import mpnn_emulate_ipm, trace_deviation
from .network import (
    ModelWeights,
    NetConfig,
    PredictionResult,
    TrainConfig,
    bce_loss,
    confidence_order,
    finite_diff_check,
    forward,
    init_weights,
    load_weights,
    save_weights,
    train,
    train_step,
)
from .neighborhood import (
    IncumbentState,
    SearchConfig,
    crossover,
    initial_feasible,
    optimize,
    partition_acp,
    partition_random,
    relaxation_prediction,
    solve_neighborhood,
)
from .subsolvers import SubProblem, subsolve_bnb, subsolve_exhaustive, subsolve_tabu

__version__ = "0.1.0"
