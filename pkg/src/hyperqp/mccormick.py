"""Envelope bounds for bilinear terms and the bound-test repair procedure.

The envelope of a product x*y over a box [lx, ux] x [ly, uy] is the classic
pair of linear over/under-estimator families

    xy <= min(ly*x + ux*y - ly*ux,  lx*y + uy*x - lx*uy)
    xy >= max(ly*x + lx*y - lx*ly,  uy*x + ux*y - ux*uy)

whose extreme values over the box are attained at corners, so the box range
of a product is simply [min corner products, max corner products].  That
corner rule powers everything here:

* ``constraint_min_activity`` lower-bounds a <= constraint's left side under
  a partial fixing (fixed variables become degenerate boxes),
* ``q_repair`` walks provably violated constraints and unfixes their fixed
  variables until the lower bound drops below the right-hand side,
* ``linearize_subproblem`` instantiates the envelope inequalities as an LP
  over auxiliary product variables, used for relaxation bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .instance import Constraint, QcqpInstance, TermList

REPAIR_TOL = 1e-9


@dataclass(frozen=True)
class TermBounds:
    lo: float
    hi: float


def mccormick_box(l_i: float, u_i: float, l_j: float, u_j: float) -> TermBounds:
    """Range of x_i * x_j over the box: min and max of the corner products."""
    for v in (l_i, u_i, l_j, u_j):
        if not math.isfinite(v):
            raise ValueError("mccormick_box() requires finite bounds")
    if l_i > u_i or l_j > u_j:
        raise ValueError("mccormick_box() requires lb <= ub on both inputs")
    corners = (l_i * l_j, l_i * u_j, u_i * l_j, u_i * u_j)
    return TermBounds(min(corners), max(corners))


@dataclass
class BoundContext:
    """Current per-variable bounds: original for unfixed, a point for fixed."""

    cur_lb: np.ndarray
    cur_ub: np.ndarray

    @staticmethod
    def from_fixing(instance: QcqpInstance, fixed: Iterable[int], values) -> "BoundContext":
        lb = instance.lb_vector()
        ub = instance.ub_vector()
        values = np.asarray(values, dtype=float)
        if values.shape != (instance.n,):
            raise ValueError("values length does not match the instance")
        fixed_idx = np.fromiter(fixed, dtype=int) if not isinstance(fixed, np.ndarray) else fixed
        if len(fixed_idx):
            lb[fixed_idx] = values[fixed_idx]
            ub[fixed_idx] = values[fixed_idx]
        return BoundContext(cur_lb=lb, cur_ub=ub)

    def release(self, i: int, orig_lb: float, orig_ub: float) -> None:
        self.cur_lb[i] = orig_lb
        self.cur_ub[i] = orig_ub

    def is_point(self, i: int) -> bool:
        return self.cur_lb[i] == self.cur_ub[i]


def constraint_min_activity(con: Constraint, ctx: BoundContext) -> float:
    """Lowest achievable left side of a <= constraint over the context box.

    Positive coefficients take the low end of their term's range, negative
    ones the high end; product terms use the corner rule.
    """
    if con.sense != "le":
        raise ValueError("constraint_min_activity() expects a normalized <= constraint")
    total = 0.0
    lb, ub = ctx.cur_lb, ctx.cur_ub
    for i, c in con.terms.linear:
        total += c * (lb[i] if c > 0 else ub[i])
    for i, j, c in con.terms.quadratic:
        box = mccormick_box(lb[i], ub[i], lb[j], ub[j])
        total += c * (box.lo if c > 0 else box.hi)
    return total


@dataclass
class RepairEvent:
    constraint: int
    variable: int
    activity_before: float
    activity_after: float


@dataclass
class RepairOutcome:
    fixed: set[int]
    unfixed: set[int]
    unfixed_by_repair: list[int]
    residual_violated: list[int]
    events: list[RepairEvent] = field(default_factory=list)

    def to_trace_json(self) -> list[dict]:
        return [
            {
                "constraint": e.constraint,
                "variable": e.variable,
                "min_activity_before": e.activity_before,
                "min_activity_after": e.activity_after,
            }
            for e in self.events
        ]


def _constraint_terms_in_order(con: Constraint):
    """Terms in storage order: linear entries first, then quadratic pairs."""
    for i, c in con.terms.linear:
        yield (i,)
    for i, j, _ in con.terms.quadratic:
        yield (i, j) if i != j else (i,)


def q_repair(
    instance: QcqpInstance,
    fixed: Iterable[int],
    incumbent,
    cap: Optional[int] = None,
    tol: float = REPAIR_TOL,
) -> RepairOutcome:
    """Unfix variables of constraints whose lower bound certifies violation.

    Constraints are visited in index order.  Whenever the minimum activity of
    a constraint exceeds its right-hand side, the constraint's terms are
    walked in storage order and any still-fixed variables they touch are
    released back to their original bounds (both endpoints of a product
    term), until the recomputed minimum activity clears the right-hand side
    or the terms run out.  ``cap`` bounds the total unfixed count after
    repair; constraints that cannot be cleared within the cap are reported in
    ``residual_violated``.  Released variables are never re-fixed.
    """
    if not instance.is_normalized():
        raise ValueError("q_repair() requires a normalized instance")
    incumbent = np.asarray(incumbent, dtype=float)
    if incumbent.shape != (instance.n,):
        raise ValueError("incumbent length does not match the instance")
    n = instance.n
    if cap is None:
        cap = n
    fixed_set = set(int(i) for i in fixed)
    unfixed_set = set(range(n)) - fixed_set
    ctx = BoundContext.from_fixing(instance, fixed_set, incumbent)
    slots = max(0, cap - len(unfixed_set))
    orig_lb = instance.lb_vector()
    orig_ub = instance.ub_vector()
    unfixed_by_repair: list[int] = []
    residual: list[int] = []
    events: list[RepairEvent] = []

    for ci, con in enumerate(instance.constraints):
        activity = constraint_min_activity(con, ctx)
        if activity <= con.rhs + tol:
            continue
        for term_vars in _constraint_terms_in_order(con):
            if activity <= con.rhs + tol:
                break
            touched = [v for v in term_vars if v in fixed_set]
            if not touched or len(touched) > slots:
                continue
            for v in touched:
                before = activity
                fixed_set.remove(v)
                unfixed_set.add(v)
                ctx.release(v, orig_lb[v], orig_ub[v])
                slots -= 1
                activity = constraint_min_activity(con, ctx)
                unfixed_by_repair.append(v)
                events.append(RepairEvent(ci, v, before, activity))
        if activity > con.rhs + tol:
            residual.append(ci)

    return RepairOutcome(
        fixed=fixed_set,
        unfixed=unfixed_set,
        unfixed_by_repair=unfixed_by_repair,
        residual_violated=residual,
        events=events,
    )


# ---------------------------------------------------------------------------
# Envelope linearization of a partially fixed instance
# ---------------------------------------------------------------------------

@dataclass
class LinearProgram:
    """Linear rows over [free original variables] + [product variables].

    Rows are all of the form ``coef . v <= rhs``.  ``obj_lin``/``obj_const``
    carry the linear part of the objective over the LP variables;
    ``obj_quadratic_free`` lists objective monomials between free variables
    that were left quadratic (empty when the objective was linearized too).
    ``sense`` is inherited from the instance.
    """

    n_vars: int
    lo: np.ndarray
    hi: np.ndarray
    rows: np.ndarray          # (n_rows, n_vars)
    rhs: np.ndarray           # (n_rows,)
    obj_lin: np.ndarray
    obj_const: float
    sense: str
    free_index: dict[int, int]            # original var -> LP column
    phi_index: dict[tuple[int, int], int] # product pair -> LP column
    obj_quadratic_free: list[tuple[int, int, float]]


def _envelope_rows(col_x, col_y, col_phi, lx, ux, ly, uy, n_vars):
    """Four envelope inequalities for phi = x*y as <= rows."""
    rows, rhs = [], []

    def row(entries, b):
        r = np.zeros(n_vars)
        for col, coef in entries:
            r[col] += coef
        rows.append(r)
        rhs.append(b)

    # phi <= ly*x + ux*y - ly*ux      ->  phi - ly*x - ux*y <= -ly*ux
    row([(col_phi, 1.0), (col_x, -ly), (col_y, -ux)], -ly * ux)
    # phi <= uy*x + lx*y - lx*uy
    row([(col_phi, 1.0), (col_x, -uy), (col_y, -lx)], -lx * uy)
    # phi >= ly*x + lx*y - lx*ly      ->  -phi + ly*x + lx*y <= lx*ly
    row([(col_phi, -1.0), (col_x, ly), (col_y, lx)], lx * ly)
    # phi >= uy*x + ux*y - ux*uy
    row([(col_phi, -1.0), (col_x, uy), (col_y, ux)], ux * uy)
    return rows, rhs


def linearize_subproblem(
    instance: QcqpInstance,
    ctx: BoundContext,
    include_objective: bool = False,
) -> LinearProgram:
    """Replace constraint products with box-bounded auxiliary variables.

    Fixed variables (point boxes in ``ctx``) are substituted: a product of
    two fixed variables folds into the right-hand side, a product with one
    fixed endpoint becomes a linear term on the free one.  Products of two
    free variables get one shared auxiliary column with the four envelope
    rows instantiated at the context bounds.  By default the objective stays
    quadratic (the repair path never needs it); ``include_objective`` also
    linearizes objective products, which makes the result a pure LP usable
    as an optimistic relaxation bound.
    """
    if not instance.is_normalized():
        raise ValueError("linearize_subproblem() requires a normalized instance")
    n = instance.n
    free_vars = [i for i in range(n) if not ctx.is_point(i)]
    free_index = {v: k for k, v in enumerate(free_vars)}
    point_val = ctx.cur_lb  # == cur_ub for fixed variables

    # Collect free-free product pairs needing an auxiliary column.
    pairs: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()

    def want_pair(i, j):
        key = (i, j)
        if key not in seen:
            seen.add(key)
            pairs.append(key)

    term_rows: list[TermList] = [c.terms for c in instance.constraints]
    if include_objective:
        term_rows.append(instance.objective)
    for terms in term_rows:
        for i, j, _ in terms.quadratic:
            if i in free_index and j in free_index:
                want_pair(i, j)

    n_vars = len(free_vars) + len(pairs)
    phi_index = {p: len(free_vars) + k for k, p in enumerate(pairs)}
    lo = np.zeros(n_vars)
    hi = np.zeros(n_vars)
    for v, col in free_index.items():
        lo[col] = ctx.cur_lb[v]
        hi[col] = ctx.cur_ub[v]
    for (i, j), col in phi_index.items():
        box = mccormick_box(ctx.cur_lb[i], ctx.cur_ub[i], ctx.cur_lb[j], ctx.cur_ub[j])
        lo[col] = box.lo
        hi[col] = box.hi

    def linearized(terms: TermList) -> tuple[np.ndarray, float]:
        coef = np.zeros(n_vars)
        const = 0.0
        for i, c in terms.linear:
            if i in free_index:
                coef[free_index[i]] += c
            else:
                const += c * point_val[i]
        for i, j, c in terms.quadratic:
            fi, fj = i in free_index, j in free_index
            if fi and fj:
                coef[phi_index[(i, j)]] += c
            elif fi:
                coef[free_index[i]] += c * point_val[j]
            elif fj:
                coef[free_index[j]] += c * point_val[i]
            else:
                const += c * point_val[i] * point_val[j]
        return coef, const

    rows: list[np.ndarray] = []
    rhs: list[float] = []
    for con in instance.constraints:
        coef, const = linearized(con.terms)
        rows.append(coef)
        rhs.append(con.rhs - const)
    for (i, j), col in phi_index.items():
        env_rows, env_rhs = _envelope_rows(
            free_index[i], free_index[j], col,
            ctx.cur_lb[i], ctx.cur_ub[i], ctx.cur_lb[j], ctx.cur_ub[j],
            n_vars,
        )
        rows.extend(env_rows)
        rhs.extend(env_rhs)

    if include_objective:
        obj_lin, obj_const = linearized(instance.objective)
        leftover: list[tuple[int, int, float]] = []
    else:
        obj_lin = np.zeros(n_vars)
        obj_const = 0.0
        leftover = []
        for i, c in instance.objective.linear:
            if i in free_index:
                obj_lin[free_index[i]] += c
            else:
                obj_const += c * point_val[i]
        for i, j, c in instance.objective.quadratic:
            fi, fj = i in free_index, j in free_index
            if fi and fj:
                leftover.append((i, j, c))
            elif fi:
                obj_lin[free_index[i]] += c * point_val[j]
            elif fj:
                obj_lin[free_index[j]] += c * point_val[i]
            else:
                obj_const += c * point_val[i] * point_val[j]

    return LinearProgram(
        n_vars=n_vars,
        lo=lo,
        hi=hi,
        rows=np.array(rows).reshape(len(rows), n_vars) if rows else np.zeros((0, n_vars)),
        rhs=np.array(rhs, dtype=float),
        obj_lin=obj_lin,
        obj_const=float(obj_const),
        sense=instance.sense,
        free_index=free_index,
        phi_index=phi_index,
        obj_quadratic_free=leftover,
    )
