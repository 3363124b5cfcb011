"""Built-in small-scale solvers for fixed-radius subproblems.

A subproblem fixes most variables at a base assignment and re-optimizes the
free set.  All three solvers work on a dense reduction of the instance to
the free variables (fixed values folded into constants and linear terms;
squares of binary variables folded into linear terms), and all report a
full-space assignment.

* ``subsolve_exhaustive``: chunked enumeration of the free hypercube, exact.
* ``subsolve_tabu``: single-flip local search with a short tabu list and an
  adaptive infeasibility penalty.
* ``subsolve_bnb``: best-first branch and bound whose node bound is the
  envelope-linearized relaxation solved by the barrier method.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .instance import DEFAULT_FEAS_TOL, QcqpInstance, binary_block, evaluate
from .ipm import IpmConfig, solve_lp
from .mccormick import BoundContext, constraint_min_activity, linearize_subproblem
from .rng import SplitMix64

EXHAUSTIVE_MAX_FREE = 22


@dataclass
class SubProblem:
    """A base assignment plus the set of variables left free."""

    instance: QcqpInstance
    free: np.ndarray            # sorted variable indices
    base: np.ndarray            # full-length values; free entries are ignored

    @staticmethod
    def make(instance: QcqpInstance, free, base) -> "SubProblem":
        free = np.array(sorted(int(i) for i in free), dtype=int)
        base = np.asarray(base, dtype=float).copy()
        if base.shape != (instance.n,):
            raise ValueError("base assignment length does not match the instance")
        return SubProblem(instance=instance, free=free, base=base)

    def lift(self, free_values: np.ndarray) -> np.ndarray:
        x = self.base.copy()
        x[self.free] = free_values
        return x


@dataclass
class SubsolveResult:
    feasible: bool
    assignment: Optional[np.ndarray]
    objective: Optional[float]
    nodes: int = 0


@dataclass
class _Reduced:
    """Rows (objective first) over the free variables, with binary squares
    folded into the linear part."""

    const: np.ndarray   # (m+1,)
    lin: np.ndarray     # (m+1, f)
    quad: np.ndarray    # (m+1, f, f) strict upper triangle
    rhs: np.ndarray     # (m,)
    sense: str

    @staticmethod
    def build(sub: SubProblem) -> "_Reduced":
        inst = sub.instance
        if not inst.is_normalized():
            raise ValueError("subproblems require a normalized instance")
        for i in sub.free:
            if inst.vars[i].vtype != "binary":
                raise ValueError("subsolvers handle binary free variables only")
        pos = {int(v): k for k, v in enumerate(sub.free)}
        f = len(sub.free)
        rows = [inst.objective] + [c.terms for c in inst.constraints]
        const = np.zeros(len(rows))
        lin = np.zeros((len(rows), f))
        quad = np.zeros((len(rows), f, f))
        base = sub.base
        for r, terms in enumerate(rows):
            for i, c in terms.linear:
                if i in pos:
                    lin[r, pos[i]] += c
                else:
                    const[r] += c * base[i]
            for i, j, c in terms.quadratic:
                fi, fj = i in pos, j in pos
                if fi and fj:
                    if i == j:
                        lin[r, pos[i]] += c  # x^2 == x for binary x
                    else:
                        quad[r, pos[i], pos[j]] += c
                elif fi:
                    lin[r, pos[i]] += c * base[j]
                elif fj:
                    lin[r, pos[j]] += c * base[i]
                else:
                    const[r] += c * base[i] * base[j]
        rhs = np.array([c.rhs for c in inst.constraints], dtype=float)
        return _Reduced(const=const, lin=lin, quad=quad, rhs=rhs, sense=inst.sense)

    def batch_rows(self, X: np.ndarray) -> np.ndarray:
        vals = self.const[None, :] + X @ self.lin.T
        if self.quad.any():
            vals += np.einsum("kf,rfg,kg->kr", X, self.quad, X)
        return vals

    def point_rows(self, x: np.ndarray) -> np.ndarray:
        return self.batch_rows(x[None, :])[0]

    # Interaction matrix for O(f) flip deltas: row value change when x_i
    # flips by d is d * (lin[i] + sym[i, :] . x).
    def sym(self) -> np.ndarray:
        return self.quad + np.transpose(self.quad, (0, 2, 1))


def subsolve_exhaustive(
    sub: SubProblem,
    budget: Optional[int] = None,
    first_feasible: bool = False,
    warm: Optional[np.ndarray] = None,
    tol: float = DEFAULT_FEAS_TOL,
    chunk: int = 1 << 14,
) -> SubsolveResult:
    """Exact optimum over the free hypercube (lexicographic tie-break)."""
    f = len(sub.free)
    if f > EXHAUSTIVE_MAX_FREE:
        raise ValueError(f"{f} free variables exceed the enumeration limit {EXHAUSTIVE_MAX_FREE}")
    red = _Reduced.build(sub)
    maximize = red.sense == "max"

    if warm is not None and first_feasible:
        rows = red.point_rows(np.asarray(warm, dtype=float)[sub.free])
        if (rows[1:] <= red.rhs + tol).all():
            x = sub.lift(np.asarray(warm, dtype=float)[sub.free])
            return SubsolveResult(True, x, float(rows[0]), nodes=1)

    best_obj = None
    best_free = None
    total = 1 << f
    seen = 0
    for start in range(0, total, chunk):
        count = min(chunk, total - start)
        if budget is not None and seen >= budget:
            break
        if budget is not None:
            count = min(count, budget - seen)
        X = binary_block(start, count, f)
        vals = red.batch_rows(X)
        seen += count
        feas = (vals[:, 1:] <= red.rhs[None, :] + tol).all(axis=1) if len(red.rhs) else np.ones(count, bool)
        if not feas.any():
            continue
        obj = vals[:, 0]
        if first_feasible:
            row = int(np.flatnonzero(feas)[0])
            return SubsolveResult(True, sub.lift(X[row]), float(obj[row]), nodes=seen)
        obj_feas = obj[feas]
        pos = int(np.argmax(obj_feas)) if maximize else int(np.argmin(obj_feas))
        cand = float(obj_feas[pos])
        if best_obj is None or (cand > best_obj if maximize else cand < best_obj):
            best_obj = cand
            best_free = X[np.flatnonzero(feas)[pos]].copy()
    if best_obj is None:
        return SubsolveResult(False, None, None, nodes=seen)
    return SubsolveResult(True, sub.lift(best_free), best_obj, nodes=seen)


def subsolve_tabu(
    sub: SubProblem,
    budget: int = 2000,
    seed: int = 0,
    first_feasible: bool = False,
    warm: Optional[np.ndarray] = None,
    tol: float = DEFAULT_FEAS_TOL,
    tenure: int = 7,
    penalty_window: int = 20,
) -> SubsolveResult:
    """Single-flip tabu search over the free variables.

    Moves maximize ``sense * objective - rho * total_violation``; the
    penalty weight doubles after ``penalty_window`` consecutive infeasible
    steps and halves (down to 1) whenever the current point is feasible.
    A flipped variable is tabu for ``tenure`` moves unless flipping it beats
    the best feasible value seen; with every move tabu and no aspiration,
    the entry closest to expiry moves first.
    """
    f = len(sub.free)
    red = _Reduced.build(sub)
    sign = 1.0 if red.sense == "max" else -1.0
    start = (np.asarray(warm, dtype=float) if warm is not None else sub.base)[sub.free].copy()
    x = np.round(start)
    rows = red.point_rows(x)
    sym = red.sym()
    has_quad = red.quad.any()

    def violation(r):
        return float(np.maximum(r[1:] - red.rhs, 0.0).sum()) if len(red.rhs) else 0.0

    def max_violation(r):
        return float(np.maximum(r[1:] - red.rhs, 0.0).max()) if len(red.rhs) else 0.0

    best_feas_x = None
    best_feas_obj = None

    def consider(xv, r):
        nonlocal best_feas_x, best_feas_obj
        if max_violation(r) <= tol:
            obj = float(r[0])
            if best_feas_obj is None or sign * obj > sign * best_feas_obj:
                best_feas_x = xv.copy()
                best_feas_obj = obj

    consider(x, rows)
    if first_feasible and best_feas_x is not None:
        return SubsolveResult(True, sub.lift(best_feas_x), best_feas_obj, nodes=0)
    if f == 0 or budget <= 0:
        if best_feas_x is not None:
            return SubsolveResult(True, sub.lift(best_feas_x), best_feas_obj, nodes=0)
        return SubsolveResult(False, sub.lift(x), None, nodes=0)

    rng = SplitMix64(seed)
    tabu_until = np.full(f, -1, dtype=np.int64)
    rho = 1.0
    infeasible_streak = 0
    for move in range(budget):
        d = 1.0 - 2.0 * x
        if has_quad:
            inter = np.einsum("rfg,g->rf", sym, x)
        else:
            inter = np.zeros_like(red.lin)
        deltas = d[None, :] * (red.lin + inter)       # (m+1, f) row changes per flip
        cand_rows = rows[:, None] + deltas            # (m+1, f)
        cand_viol = (
            np.maximum(cand_rows[1:] - red.rhs[:, None], 0.0).sum(axis=0)
            if len(red.rhs) else np.zeros(f)
        )
        scores = sign * cand_rows[0] - rho * cand_viol
        cand_maxviol = (
            np.maximum(cand_rows[1:] - red.rhs[:, None], 0.0).max(axis=0)
            if len(red.rhs) else np.zeros(f)
        )
        aspiring = (cand_maxviol <= tol) & (
            np.full(f, True) if best_feas_obj is None else sign * cand_rows[0] > sign * best_feas_obj
        )
        allowed = (tabu_until < move) | aspiring
        if allowed.any():
            pool = np.flatnonzero(allowed)
            best_score = scores[pool].max()
            ties = pool[scores[pool] >= best_score - 1e-12]
            pick = int(ties[rng.below(len(ties))]) if len(ties) > 1 else int(ties[0])
        else:
            # Everything tabu: take the oldest entry (earliest expiry, ties by index).
            pick = int(np.lexsort((np.arange(f), tabu_until))[0])
        x[pick] = 1.0 - x[pick]
        rows = rows + deltas[:, pick]
        tabu_until[pick] = move + tenure
        consider(x, rows)
        if first_feasible and best_feas_x is not None:
            break
        if max_violation(rows) <= tol:
            rho = max(1.0, rho / 2.0)
            infeasible_streak = 0
        else:
            infeasible_streak += 1
            if infeasible_streak >= penalty_window:
                rho *= 2.0
                infeasible_streak = 0

    if best_feas_x is None:
        return SubsolveResult(False, sub.lift(np.round(start)), None, nodes=budget)
    # Re-evaluate exactly: incremental row updates drift at float precision.
    lifted = sub.lift(best_feas_x)
    report = evaluate(sub.instance, lifted, tol=tol)
    return SubsolveResult(report.feasible, lifted, report.objective, nodes=budget)


# ---------------------------------------------------------------------------
# Branch and bound with envelope-relaxation bounds
# ---------------------------------------------------------------------------

_BOUND_MARGIN = 1e-6


def _node_bounds(sub: SubProblem, fixed_free: dict[int, float]) -> BoundContext:
    inst = sub.instance
    lb = inst.lb_vector()
    ub = inst.ub_vector()
    free_set = set(int(i) for i in sub.free)
    for i in range(inst.n):
        if i not in free_set:
            lb[i] = ub[i] = sub.base[i]
    for i, v in fixed_free.items():
        lb[i] = ub[i] = v
    return BoundContext(cur_lb=lb, cur_ub=ub)


def subsolve_bnb(
    sub: SubProblem,
    budget: int = 400,
    first_feasible: bool = False,
    warm: Optional[np.ndarray] = None,
    tol: float = DEFAULT_FEAS_TOL,
    ipm_cfg: Optional[IpmConfig] = None,
) -> SubsolveResult:
    """Best-first branch and bound on the free variables.

    Each node solves the envelope-linearized relaxation (objective products
    included, so the LP value is an optimistic bound).  Nodes whose bound
    cannot beat the incumbent are pruned; integral relaxation solutions are
    promoted to incumbents after an exact feasibility check.  Branching
    picks the free variable with the most fractional relaxation value, ties
    by index.
    """
    inst = sub.instance
    maximize = inst.sense == "max"
    ipm_cfg = ipm_cfg or IpmConfig(delta=0.12, tol=1e-9, max_iter=60, best_effort=True)

    best_x = None
    best_obj = None

    def better(a, b):
        return a > b if maximize else a < b

    def consider(x_full):
        nonlocal best_x, best_obj
        rep = evaluate(inst, x_full, tol=tol)
        if rep.feasible and (best_obj is None or better(rep.objective, best_obj)):
            best_x = x_full.copy()
            best_obj = rep.objective
            return True
        return False

    if warm is not None:
        consider(np.asarray(warm, dtype=float))
        if first_feasible and best_x is not None:
            return SubsolveResult(True, best_x, best_obj, nodes=0)

    def node_bound_and_relax(fixed_free):
        """(bound, relaxation values per free var or None) for a node.

        Returns (None, None) when the node is certifiably infeasible."""
        ctx = _node_bounds(sub, fixed_free)
        for con in inst.constraints:
            if constraint_min_activity(con, ctx) > con.rhs + 1e-9:
                return None, None
        lp = linearize_subproblem(inst, ctx, include_objective=True)
        if lp.n_vars == 0:
            return lp.obj_const, {}
        sol = solve_lp(lp, ipm_cfg)
        slack = _BOUND_MARGIN * (1.0 + abs(sol.objective))
        bound = sol.objective + slack if maximize else sol.objective - slack
        if not sol.converged:
            bound = math.inf if maximize else -math.inf  # keep the node alive
        relax = {i: float(sol.x[col]) for i, col in lp.free_index.items()}
        return bound, relax

    counter = 0
    heap: list = []

    def push(fixed_free):
        nonlocal counter
        bound, relax = node_bound_and_relax(fixed_free)
        if bound is None:
            return
        key = -bound if maximize else bound
        heapq.heappush(heap, (key, counter, fixed_free, bound, relax))
        counter += 1

    push({})
    nodes = 0
    while heap and nodes < budget:
        _, _, fixed_free, bound, relax = heapq.heappop(heap)
        nodes += 1
        if best_obj is not None and not better(bound, best_obj):
            continue
        undecided = [int(i) for i in sub.free if i not in fixed_free]
        if not undecided:
            x_full = sub.base.copy()
            for i, v in fixed_free.items():
                x_full[i] = v
            consider(x_full)
            if first_feasible and best_x is not None:
                break
            continue
        frac = {i: min(relax.get(i, 0.5), 1.0 - relax.get(i, 0.5)) for i in undecided}
        if all(v <= 1e-6 for v in frac.values()):
            # Integral relaxation: candidate incumbent, then branch anyway if it fails.
            x_full = sub.base.copy()
            for i, v in fixed_free.items():
                x_full[i] = v
            for i in undecided:
                x_full[i] = round(relax.get(i, 0.0))
            if consider(x_full):
                if first_feasible:
                    break
                continue
        branch_var = max(undecided, key=lambda i: (frac[i], -i))
        for value in (0.0, 1.0):
            child = dict(fixed_free)
            child[branch_var] = value
            push(child)
    if best_x is None:
        return SubsolveResult(False, None, None, nodes=nodes)
    return SubsolveResult(True, best_x, best_obj, nodes=nodes)


SUBSOLVERS = {
    "exhaustive": subsolve_exhaustive,
    "tabu": subsolve_tabu,
    "bnb": subsolve_bnb,
}
