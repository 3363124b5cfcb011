"""Fixed-radius neighborhood search with crossover and bound-test repair.

The loop keeps a feasible incumbent and never degrades it: each round
partitions the variables into neighborhoods of at most ``ceil(alpha_ub * n)``
variables, re-optimizes every neighborhood with a small-scale solver (the
incumbent is always an admissible fallback), merges neighborhood solutions
pairwise, repairs the merged points, re-optimizes the repaired free sets,
and installs the best feasible candidate.

With iteration budgets and a fixed seed the whole trace is reproducible
bit-for-bit: worker results are merged in neighborhood index order, and
every per-task seed derives from (seed, round, task index).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .instance import DEFAULT_FEAS_TOL, QcqpInstance, evaluate, normalize
from .mccormick import q_repair
from .network import PredictionResult, confidence_order, prediction_from_probs
from .rng import SplitMix64, derive_seed
from .subsolvers import (
    SUBSOLVERS,
    SubProblem,
    SubsolveResult,
    subsolve_bnb,
    subsolve_exhaustive,
    subsolve_tabu,
)


class InfeasibleInstanceError(RuntimeError):
    """No feasible point was found even with every variable free."""


@dataclass
class SearchConfig:
    alpha: float = 0.2
    alpha_ub: float = 0.5
    density_threshold: float = 32.0
    rounds: int = 20
    time_limit_ms: Optional[int] = None
    seed: int = 0
    subsolver: str = "exhaustive"
    subsolver_budget: int = 2000
    workers: int = 1
    feas_tol: float = DEFAULT_FEAS_TOL

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0 or not 0.0 < self.alpha_ub <= 1.0:
            raise ValueError("alpha and alpha_ub must lie in (0, 1]")
        if self.alpha > self.alpha_ub:
            raise ValueError("alpha must not exceed alpha_ub")
        if self.subsolver not in SUBSOLVERS:
            raise ValueError(f"unknown subsolver {self.subsolver!r}")


@dataclass
class PartitionPlan:
    neighborhoods: list[np.ndarray]
    strategy: str


@dataclass
class TraceRow:
    round: int
    wall_ms: float
    objective: float
    violated_constraints: int
    neighborhoods: int
    crossovers: int


@dataclass
class IncumbentState:
    assignment: np.ndarray
    objective: float
    rounds_done: int
    trace: list[TraceRow] = field(default_factory=list)


@dataclass
class InitialResult:
    assignment: np.ndarray
    objective: float
    alpha_used: float
    fallback_used: bool
    escalations: int


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

def constraint_variable_lists(instance: QcqpInstance) -> list[list[int]]:
    return [con.terms.variables() for con in instance.constraints]


def partition_acp(instance: QcqpInstance, s_max: int, seed: int) -> PartitionPlan:
    """Constraint-grouped neighborhoods.

    Constraints are shuffled, then each constraint's variables are appended
    to the current neighborhood (skipping ones it already holds) until it
    holds ``s_max`` variables, at which point a fresh neighborhood starts.
    Variables occurring in several constraints may repeat across
    neighborhoods.  The neighborhood count is ceil(total variable slots /
    s_max) when no within-neighborhood duplicates occur, fewer otherwise.
    """
    if s_max < 1:
        raise ValueError("s_max must be >= 1")
    var_lists = constraint_variable_lists(instance)
    order = list(range(len(var_lists)))
    SplitMix64(seed).shuffle(order)
    neighborhoods: list[list[int]] = []
    current: list[int] = []
    current_set: set[int] = set()
    for ci in order:
        for v in var_lists[ci]:
            if v in current_set:
                continue
            current.append(v)
            current_set.add(v)
            if len(current) == s_max:
                neighborhoods.append(current)
                current = []
                current_set = set()
    if current:
        neighborhoods.append(current)
    if not neighborhoods:
        neighborhoods = [list(range(instance.n))[:s_max]]
    return PartitionPlan([np.array(nb, dtype=int) for nb in neighborhoods], "acp")


def partition_random(instance: QcqpInstance, s_max: int, seed: int) -> PartitionPlan:
    """Disjoint chunks of a shuffled variable list; every variable appears
    in exactly one neighborhood."""
    if s_max < 1:
        raise ValueError("s_max must be >= 1")
    order = list(range(instance.n))
    SplitMix64(seed).shuffle(order)
    chunks = [
        np.array(order[k:k + s_max], dtype=int)
        for k in range(0, len(order), s_max)
    ]
    return PartitionPlan(chunks, "random")


def variable_density(instance: QcqpInstance) -> float:
    """Mean number of distinct variables per constraint."""
    if instance.m == 0:
        return float("inf")
    sizes = [len(vs) for vs in constraint_variable_lists(instance)]
    return float(np.mean(sizes))


def choose_partition(instance: QcqpInstance, cfg: SearchConfig) -> str:
    if instance.m == 0:
        return "random"
    return "random" if variable_density(instance) > cfg.density_threshold else "acp"


def make_partition(instance: QcqpInstance, cfg: SearchConfig, s_max: int, seed: int) -> PartitionPlan:
    strategy = choose_partition(instance, cfg)
    if strategy == "acp":
        return partition_acp(instance, s_max, seed)
    return partition_random(instance, s_max, seed)


# ---------------------------------------------------------------------------
# Subsolver dispatch
# ---------------------------------------------------------------------------

def _run_subsolver(
    name: str,
    sub: SubProblem,
    budget: int,
    seed: int,
    first_feasible: bool,
    warm: Optional[np.ndarray],
    tol: float,
) -> SubsolveResult:
    if name == "exhaustive":
        return subsolve_exhaustive(sub, budget=None, first_feasible=first_feasible,
                                   warm=warm, tol=tol)
    if name == "tabu":
        return subsolve_tabu(sub, budget=budget, seed=seed,
                             first_feasible=first_feasible, warm=warm, tol=tol)
    if name == "bnb":
        return subsolve_bnb(sub, budget=budget, first_feasible=first_feasible,
                            warm=warm, tol=tol)
    raise ValueError(f"unknown subsolver {name!r}")


def solve_neighborhood(
    instance: QcqpInstance,
    incumbent: np.ndarray,
    neighborhood: np.ndarray,
    subsolver: str,
    budget: int,
    seed: int = 0,
    tol: float = DEFAULT_FEAS_TOL,
) -> np.ndarray:
    """Re-optimize one neighborhood; never returns anything worse than the
    incumbent (which stays admissible because it is fixed outside N)."""
    if len(neighborhood) == 0 or budget == 0:
        return incumbent
    sub = SubProblem.make(instance, neighborhood, incumbent)
    res = _run_subsolver(subsolver, sub, budget, seed, False, incumbent, tol)
    if not res.feasible:
        return incumbent
    inc_obj = evaluate(instance, incumbent, tol).objective
    sign = 1.0 if instance.sense == "max" else -1.0
    if sign * res.objective >= sign * inc_obj:
        return res.assignment
    return incumbent


def crossover(
    instance: QcqpInstance,
    n1: np.ndarray,
    n2: np.ndarray,
    x1: np.ndarray,
    x2: np.ndarray,
    subsolver: str,
    cap: int,
    budget: int,
    seed: int = 0,
    tol: float = DEFAULT_FEAS_TOL,
) -> np.ndarray:
    """Merge two neighborhood solutions and repair the result.

    The merged point takes ``x1`` inside ``n1`` and ``x2`` elsewhere (x1 is
    the better parent; callers pass them ordered, otherwise they are
    swapped here).  Repair starts from everything fixed at the merged point;
    the subsolver then searches the freed set.  Never degrades: the better
    parent wins if nothing at least as good and feasible is found.
    """
    sign = 1.0 if instance.sense == "max" else -1.0
    o1 = evaluate(instance, x1, tol).objective
    o2 = evaluate(instance, x2, tol).objective
    if sign * o2 > sign * o1:
        x1, x2 = x2, x1
        n1, n2 = n2, n1
        o1, o2 = o2, o1
    merged = x2.copy()
    merged[n1] = x1[n1]
    outcome = q_repair(instance, range(instance.n), merged, cap=cap)
    free = sorted(outcome.unfixed)
    if free:
        sub = SubProblem.make(instance, free, merged)
        res = _run_subsolver(subsolver, sub, budget, seed, False, merged, tol)
        if res.feasible and sign * res.objective >= sign * o1:
            return res.assignment
    else:
        rep = evaluate(instance, merged, tol)
        if rep.feasible and sign * rep.objective >= sign * o1:
            return merged
    return x1


# ---------------------------------------------------------------------------
# Initial feasible point
# ---------------------------------------------------------------------------

def initial_feasible(
    instance: QcqpInstance,
    prediction: PredictionResult,
    cfg: SearchConfig,
) -> InitialResult:
    """Fix the most confidently predicted variables, repair, and search.

    Starts by fixing the first ``(1 - alpha) n`` variables in confidence
    order at their rounded predictions, repairs under the ``alpha_ub n``
    cap, and asks the subsolver for any feasible point of the residual
    subproblem.  On failure the radius escalates (``alpha <- 1.5 alpha`` up
    to ``alpha_ub``); the last resort frees every variable.
    """
    instance = normalize(instance)
    n = instance.n
    if len(prediction.probs) != n:
        raise ValueError("prediction length does not match the instance")
    order = confidence_order(prediction)
    base = prediction.rounded.astype(float)
    cap_total = max(1, int(cfg.alpha_ub * n + 1e-9))
    seed_gen = SplitMix64(derive_seed(cfg.seed, 0xFEA51B1E))
    alpha = cfg.alpha
    escalations = 0

    while True:
        k_fixed = n - max(1, int(round(alpha * n)))
        fixed = order[:k_fixed]
        outcome = q_repair(instance, fixed, base, cap=cap_total)
        if not outcome.residual_violated:
            sub = SubProblem.make(instance, sorted(outcome.unfixed), base)
            res = _run_subsolver(
                cfg.subsolver, sub, cfg.subsolver_budget,
                seed_gen.next_u64(), True, base, cfg.feas_tol,
            )
            if res.feasible:
                return InitialResult(
                    assignment=res.assignment,
                    objective=res.objective,
                    alpha_used=alpha,
                    fallback_used=False,
                    escalations=escalations,
                )
        if alpha < cfg.alpha_ub:
            alpha = min(alpha * 1.5, cfg.alpha_ub)
            escalations += 1
            continue
        break

    # Full relaxation fallback: everything free.  The lower-bound corner is
    # always worth testing before searching.
    lb_point = instance.lb_vector()
    rep = evaluate(instance, lb_point, cfg.feas_tol)
    if rep.feasible:
        return InitialResult(lb_point, rep.objective, 1.0, True, escalations)
    sub = SubProblem.make(instance, range(n), base)
    res = _run_subsolver(cfg.subsolver, sub, cfg.subsolver_budget,
                         seed_gen.next_u64(), True, base, cfg.feas_tol)
    if res.feasible:
        return InitialResult(res.assignment, res.objective, 1.0, True, escalations)
    raise InfeasibleInstanceError(
        "no feasible assignment found within the subsolver budget at full relaxation"
    )


# ---------------------------------------------------------------------------
# The round loop
# ---------------------------------------------------------------------------

def _neighborhood_job(args):
    instance, incumbent, nb, subsolver, budget, seed, tol = args
    return solve_neighborhood(instance, incumbent, nb, subsolver, budget, seed, tol)


def _crossover_job(args):
    instance, n1, n2, x1, x2, subsolver, cap, budget, seed, tol = args
    return crossover(instance, n1, n2, x1, x2, subsolver, cap, budget, seed, tol)


def _run_jobs(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def optimize(
    instance: QcqpInstance,
    prediction: PredictionResult,
    cfg: SearchConfig,
) -> IncumbentState:
    """Full loop: initial point, then rounds of parallel neighborhood search
    and pairwise crossover, keeping the best feasible incumbent."""
    instance = normalize(instance)
    if not instance.is_binary():
        raise ValueError("optimize() handles all-binary instances")
    n = instance.n
    sign = 1.0 if instance.sense == "max" else -1.0
    t0 = time.perf_counter()

    init = initial_feasible(instance, prediction, cfg)
    incumbent = init.assignment
    inc_obj = init.objective
    trace = [TraceRow(0, (time.perf_counter() - t0) * 1000.0, inc_obj, 0, 0, 0)]

    s_max = min(n, max(1, int(np.ceil(cfg.alpha_ub * n - 1e-9))))
    rounds_done = 0
    for rnd in range(1, cfg.rounds + 1):
        if cfg.time_limit_ms is not None:
            if (time.perf_counter() - t0) * 1000.0 >= cfg.time_limit_ms:
                break
        plan = make_partition(instance, cfg, s_max, derive_seed(cfg.seed, rnd, 1))
        l = len(plan.neighborhoods)
        nb_jobs = [
            (instance, incumbent, nb, cfg.subsolver, cfg.subsolver_budget,
             derive_seed(cfg.seed, rnd, 2, k), cfg.feas_tol)
            for k, nb in enumerate(plan.neighborhoods)
        ]
        solutions = _run_jobs(_neighborhood_job, nb_jobs, cfg.workers)

        cx_jobs = []
        for k in range(l // 2):
            n1, n2 = plan.neighborhoods[2 * k], plan.neighborhoods[2 * k + 1]
            x1, x2 = solutions[2 * k], solutions[2 * k + 1]
            cx_jobs.append((instance, n1, n2, x1, x2, cfg.subsolver, s_max,
                            cfg.subsolver_budget, derive_seed(cfg.seed, rnd, 3, k),
                            cfg.feas_tol))
        children = _run_jobs(_crossover_job, cx_jobs, cfg.workers)

        pool = list(children)
        if l % 2 == 1:
            pool.append(solutions[-1])
        pool.append(incumbent)
        best_x, best_obj = incumbent, inc_obj
        for cand in pool:
            rep = evaluate(instance, cand, cfg.feas_tol)
            if rep.feasible and sign * rep.objective > sign * best_obj:
                best_x, best_obj = cand, rep.objective
        incumbent, inc_obj = best_x, best_obj
        rounds_done = rnd
        violated = int((evaluate(instance, incumbent, cfg.feas_tol).violations > cfg.feas_tol).sum())
        trace.append(TraceRow(
            rnd, (time.perf_counter() - t0) * 1000.0, inc_obj,
            violated, l, len(children),
        ))
    return IncumbentState(
        assignment=incumbent,
        objective=inc_obj,
        rounds_done=rounds_done,
        trace=trace,
    )


# ---------------------------------------------------------------------------
# Predictor-free fallback: relaxation rounding
# ---------------------------------------------------------------------------

def relaxation_prediction(instance: QcqpInstance, ipm_cfg=None) -> PredictionResult:
    """Probabilities from the envelope-linearized relaxation with every
    variable free: solve the LP, clip the variable values into (0, 1)."""
    from .ipm import IpmConfig, solve_lp
    from .mccormick import BoundContext, linearize_subproblem

    instance = normalize(instance)
    ctx = BoundContext(cur_lb=instance.lb_vector(), cur_ub=instance.ub_vector())
    lp = linearize_subproblem(instance, ctx, include_objective=True)
    if lp.n_vars == 0:
        return prediction_from_probs(np.full(instance.n, 0.5))
    sol = solve_lp(lp, ipm_cfg or IpmConfig(delta=0.12, tol=1e-8, max_iter=60, best_effort=True))
    probs = np.full(instance.n, 0.5)
    for i, col in lp.free_index.items():
        probs[i] = min(max(float(sol.x[col]), 0.0), 1.0)
    return prediction_from_probs(probs)
