"""Primal-dual barrier solver for convex QPs in standard form.

The problem shape is

    min 0.5 x^T Q x + c^T x   s.t.  A x >= b,  x >= 0

with slacks ``w = A x - b`` and duals ``y`` (constraints), ``z`` (variable
sign).  Each iteration solves the reduced Newton system for ``dy`` with a
conjugate-gradient loop whose inner matrix applications go through a dense
Cholesky factor of ``X^-1 Z + Q``, recovers ``dx``, ``dz``, ``dw`` in closed
form, advances by the largest step keeping all complementarity products
nonnegative (damped by 0.99), and shrinks the barrier weight by a fixed
factor.

All reductions in this module go through :func:`d_dot` / :func:`mv` /
:func:`mtv`, which fix the summation semantics (numpy pairwise reduction
over a fixed layout).  The message-passing mirror in :mod:`.ipm_mp` reduces
its per-edge messages the same way, so the two paths can be compared at
tolerances far below float noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .mccormick import LinearProgram

# Relative squared-residual threshold at which the CG loop stops early.
CG_REL_TOL_SQ = 1e-28


class CgBreakdownError(RuntimeError):
    """p^T u <= 0 inside CG: the reduced system is not positive definite."""

    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"conjugate gradient breakdown at iteration {iteration} "
                         "(nonconvex quadratic term?)")


class IpmStallError(RuntimeError):
    pass


def d_dot(a: np.ndarray, b: np.ndarray) -> float:
    return float((a * b).sum())


def mv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """A @ x with fixed reduction semantics."""
    return (A * x[None, :]).sum(axis=1)


def mtv(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """A.T @ y with fixed reduction semantics."""
    return (A * y[:, None]).sum(axis=0)


@dataclass
class QpStd:
    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    convexity_checked: bool = False

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, len(self.c))
        self.b = np.asarray(self.b, dtype=float)
        n = len(self.c)
        if self.Q.shape != (n, n):
            raise ValueError(f"Q must be ({n}, {n}), got {self.Q.shape}")
        if not np.allclose(self.Q, self.Q.T, atol=1e-12):
            raise ValueError("Q must be symmetric")
        if self.b.shape != (self.A.shape[0],):
            raise ValueError("b length must match the row count of A")

    @property
    def n(self) -> int:
        return len(self.c)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return 0.5 * d_dot(x, mv(self.Q, x)) + d_dot(self.c, x)


@dataclass
class IpmState:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    w: np.ndarray
    mu: float

    def copy(self) -> "IpmState":
        return IpmState(self.x.copy(), self.z.copy(), self.y.copy(), self.w.copy(), self.mu)


@dataclass
class IpmConfig:
    delta: float = 0.1          # barrier shrink factor, in (0, 1)
    tol: float = 1e-8
    max_iter: int = 200
    # Inner CG budget.  One sweep of m iterations is exact only in exact
    # arithmetic; in floats the late ill-conditioned systems need a few
    # sweeps (the residual early-exit makes extras free).  None -> 4 m.
    cg_iters: Optional[int] = None
    step_scale: float = 0.99
    best_effort: bool = False   # accept a Q that fails the convexity check

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


@dataclass
class IterRecord:
    state: IpmState
    dx: np.ndarray
    dy: np.ndarray
    dz: np.ndarray
    dw: np.ndarray
    alpha: float
    primal_res: float
    dual_res: float
    complementarity: float


@dataclass
class IpmTrace:
    records: list[IterRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)


@dataclass
class IpmResult:
    x: np.ndarray
    objective: float
    state: IpmState
    trace: IpmTrace
    converged: bool
    iterations: int


def initial_state(qp: QpStd) -> IpmState:
    n, m = qp.n, qp.m
    x = np.ones(n)
    z = np.ones(n)
    y = np.ones(m)
    w = np.ones(m)
    mu = (d_dot(z, x) + d_dot(y, w)) / (n + m)
    return IpmState(x, z, y, w, mu)


def _factor_system(qp: QpStd, s: IpmState):
    M = qp.Q.copy()
    idx = np.arange(qp.n)
    M[idx, idx] = M[idx, idx] + s.z / s.x
    return cho_factor(M)


def cg_solve(qp: QpStd, s: IpmState, iters: Optional[int] = None, _factor=None) -> np.ndarray:
    """Conjugate-gradient sweep for dy on the reduced Newton system.

    Runs ``iters`` iterations (default: one per constraint, which is exact
    in exact arithmetic), stopping early once the squared residual falls
    below ``CG_REL_TOL_SQ`` relative to its initial value.
    """
    m = qp.m
    if m == 0:
        return np.zeros(0)
    if iters is None:
        iters = m
    factor = _factor if _factor is not None else _factor_system(qp, s)
    A, Q, b, c = qp.A, qp.Q, qp.b, qp.c
    x, z, y, w, mu = s.x, s.z, s.y, s.w, s.mu

    t = ((c - mtv(A, y)) + mv(Q, x)) - mu / x
    p = ((b - mv(A, x)) + mu / y) + mv(A, cho_solve(factor, t))
    v = -p
    dy = np.zeros(m)
    vv = d_dot(v, v)
    vv0 = vv
    for it in range(iters):
        if vv <= CG_REL_TOL_SQ * max(1.0, vv0):
            break
        u = mv(A, cho_solve(factor, mtv(A, p))) + (w / y) * p
        pu = d_dot(p, u)
        if pu <= 0.0:
            raise CgBreakdownError(it)
        alpha = vv / pu
        dy = dy + alpha * p
        v_new = v + alpha * u
        vv_new = d_dot(v_new, v_new)
        beta = vv_new / vv
        v = v_new
        vv = vv_new
        p = -v + beta * p
    return dy


def per_coordinate_alpha(a: np.ndarray, da: np.ndarray, b: np.ndarray, db: np.ndarray) -> np.ndarray:
    """Smallest positive root of (a + t*da)(b + t*db) = 0 per coordinate.

    Returns inf where the product never crosses zero for t > 0.  The current
    products ``a*b`` are strictly positive, so the first positive root is the
    largest step that keeps this coordinate's product nonnegative throughout.
    """
    a0 = a * b
    a1 = a * db + da * b
    a2 = da * db
    out = np.full(a.shape, np.inf)
    lin = a2 == 0.0
    down = lin & (a1 < 0.0)
    if down.any():
        out[down] = -a0[down] / a1[down]
    quad = ~lin
    disc = a1 * a1 - 4.0 * a2 * a0
    has_real = quad & (disc >= 0.0)
    if has_real.any():
        sq = np.sqrt(np.where(has_real, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = (-a1 - sq) / (2.0 * a2)
            r2 = (-a1 + sq) / (2.0 * a2)
        for r in (r1, r2):
            mask = has_real & (r > 0.0) & (r < out)
            out[mask] = r[mask]
    return out


def step_length(s: IpmState, dx, dz, dy, dw) -> float:
    cand_v = per_coordinate_alpha(s.x, dx, s.z, dz)
    cand_c = per_coordinate_alpha(s.y, dy, s.w, dw)
    alpha = np.inf
    if len(cand_v):
        alpha = min(alpha, float(cand_v.min()))
    if len(cand_c):
        alpha = min(alpha, float(cand_c.min()))
    if math.isinf(alpha):
        alpha = 1.0  # nothing blocks: take the full Newton step
    return alpha


def residuals(qp: QpStd, s: IpmState) -> tuple[float, float, float]:
    rho = (qp.b - mv(qp.A, s.x)) + s.w
    sigma = ((qp.c + mv(qp.Q, s.x)) - mtv(qp.A, s.y)) - s.z
    primal = float(np.abs(rho).max()) if len(rho) else 0.0
    dual = float(np.abs(sigma).max()) if len(sigma) else 0.0
    comp = d_dot(s.x, s.z) + d_dot(s.y, s.w)
    return primal, dual, comp


def kkt_residual(qp: QpStd, s: IpmState) -> float:
    primal, dual, comp = residuals(qp, s)
    return max(primal, dual, comp)


def convergence_measure(qp: QpStd, s: IpmState) -> float:
    """Stopping measure: residuals plus the average complementarity product.

    Normalizing the complementarity by (n + m) stops the barrier loop before
    the vanishing products make X^-1 Z too ill-conditioned to factor.
    """
    primal, dual, comp = residuals(qp, s)
    return max(primal, dual, comp / (qp.n + qp.m))


def ipm_step(qp: QpStd, s: IpmState, cfg: IpmConfig) -> tuple[IpmState, IterRecord]:
    """One barrier iteration: Newton directions, damped step, mu shrink."""
    factor = _factor_system(qp, s)
    A, Q, c = qp.A, qp.Q, qp.c
    x, z, y, w, mu = s.x, s.z, s.y, s.w, s.mu

    cg_iters = cfg.cg_iters if cfg.cg_iters is not None else 4 * qp.m
    dy = cg_solve(qp, s, cg_iters, _factor=factor)
    rhs = ((mtv(A, y + dy) - c) - mv(Q, x)) + mu / x
    dx = cho_solve(factor, rhs)
    dz = (mu - x * z - z * dx) / x
    dw = (mu - y * w - w * dy) / y if qp.m else np.zeros(0)

    alpha = step_length(s, dx, dz, dy, dw)
    if alpha <= 0.0:
        raise IpmStallError("steplength collapsed to zero")
    scale = cfg.step_scale * alpha
    new = IpmState(
        x + scale * dx,
        z + scale * dz,
        y + scale * dy,
        w + scale * dw,
        cfg.delta * mu,
    )
    primal, dual, comp = residuals(qp, new)
    rec = IterRecord(
        state=new.copy(), dx=dx, dy=dy, dz=dz, dw=dw, alpha=alpha,
        primal_res=primal, dual_res=dual, complementarity=comp,
    )
    return new, rec


def check_convexity(qp: QpStd) -> bool:
    try:
        np.linalg.cholesky(qp.Q + 1e-10 * np.eye(qp.n))
        return True
    except np.linalg.LinAlgError:
        return False


def ipm_solve(qp: QpStd, cfg: Optional[IpmConfig] = None) -> IpmResult:
    """Run the barrier iteration from the all-ones start until the KKT
    residuals and complementarity drop below tolerance."""
    cfg = cfg or IpmConfig()
    if not qp.convexity_checked:
        qp.convexity_checked = True
        if not check_convexity(qp) and not cfg.best_effort:
            raise ValueError("objective matrix failed the convexity check; "
                             "pass best_effort=True to proceed anyway")
    state = initial_state(qp)
    mu0 = state.mu
    trace = IpmTrace()
    best_state = state.copy()
    best_res = convergence_measure(qp, state)
    converged = False
    it = 0
    for it in range(cfg.max_iter):
        res = convergence_measure(qp, state)
        if res < best_res:
            best_res = res
            best_state = state.copy()
        if res < cfg.tol:
            converged = True
            break
        if state.mu < 1e-13 * max(1.0, mu0):
            break  # barrier exhausted; pushing further only loses precision
        try:
            state, rec = ipm_step(qp, state, cfg)
        except (np.linalg.LinAlgError, IpmStallError, CgBreakdownError, ValueError):
            break
        trace.records.append(rec)
    final_res = convergence_measure(qp, state)
    if final_res < best_res:
        best_res = final_res
        best_state = state.copy()
    x = best_state.x
    return IpmResult(
        x=x,
        objective=qp.objective(x),
        state=best_state,
        trace=trace,
        converged=converged or best_res < cfg.tol,
        iterations=it + 1,
    )


# ---------------------------------------------------------------------------
# Bridges from box LPs / instances to standard form
# ---------------------------------------------------------------------------

@dataclass
class LpSolution:
    x: np.ndarray          # in the LP's own variable space
    objective: float       # in the LP's own sense
    converged: bool


def qp_from_lp(lp: LinearProgram) -> tuple[QpStd, np.ndarray, float, float]:
    """Shift a box LP into standard form.

    Returns (qp, lo, obj_sign, obj_offset): the LP column vector is
    ``lo + x_std``; LP objective value = obj_sign * qp_objective + offset.
    """
    lo, hi = lp.lo, lp.hi
    span = hi - lo
    if np.any(span <= 0):
        raise ValueError("qp_from_lp() needs nondegenerate boxes")
    n = lp.n_vars
    rows = [-lp.rows, -np.eye(n)]
    rhs = [-(lp.rhs - mv(lp.rows, lo)), -span]
    A = np.vstack(rows)
    b = np.concatenate(rhs)
    sign = -1.0 if lp.sense == "max" else 1.0
    c = sign * lp.obj_lin
    offset = lp.obj_const + d_dot(lp.obj_lin, lo)
    qp = QpStd(Q=np.zeros((n, n)), c=c, A=A, b=b, convexity_checked=True)
    return qp, lo, sign, offset


def solve_lp(lp: LinearProgram, cfg: Optional[IpmConfig] = None) -> LpSolution:
    if lp.obj_quadratic_free:
        raise ValueError("solve_lp() needs a fully linearized objective")
    if lp.n_vars == 0:
        return LpSolution(x=np.zeros(0), objective=lp.obj_const, converged=True)
    cfg = cfg or IpmConfig(tol=1e-9, max_iter=80)
    qp, lo, sign, offset = qp_from_lp(lp)
    res = ipm_solve(qp, cfg)
    x = lo + res.state.x
    objective = sign * res.objective + offset
    return LpSolution(x=x, objective=objective, converged=res.converged)


def qp_from_instance(instance) -> tuple[QpStd, np.ndarray, float, float]:
    """Standard-form QP from a continuous, linearly constrained instance.

    Variables are shifted by their lower bounds; finite upper bounds become
    extra rows.  Raises if any constraint carries a quadratic term.
    """
    from .instance import normalize, symmetric_q

    instance = normalize(instance)
    n = instance.n
    lb = instance.lb_vector()
    ub = instance.ub_vector()
    for ci, con in enumerate(instance.constraints):
        if con.terms.quadratic:
            raise ValueError(f"constraint {ci} has quadratic terms; "
                             "the barrier solver handles linear constraints only")
    sign = -1.0 if instance.sense == "max" else 1.0
    S = symmetric_q(instance.objective, n)
    Q = sign * 2.0 * S
    c_lin = np.zeros(n)
    for i, coef in instance.objective.linear:
        c_lin[i] += coef
    # objective(x) = x^T S x + c_lin . x; substitute x = lb + x'
    c_shift = sign * (2.0 * mv(S, lb) + c_lin)
    offset = d_dot(lb, mv(S, lb)) + d_dot(c_lin, lb)
    rows = []
    rhs = []
    for con in instance.constraints:
        coef = np.zeros(n)
        for i, cval in con.terms.linear:
            coef[i] += cval
        rows.append(-coef)                       # sum coef x <= rhs  ->  -coef x' >= -(rhs - coef.lb)
        rhs.append(-(con.rhs - d_dot(coef, lb)))
    span = ub - lb
    finite = np.isfinite(span)
    for i in np.flatnonzero(finite):
        coef = np.zeros(n)
        coef[i] = -1.0
        rows.append(coef)
        rhs.append(-span[i])
    A = np.vstack(rows) if rows else np.zeros((0, n))
    b = np.array(rhs, dtype=float)
    qp = QpStd(Q=Q, c=c_shift, A=A, b=b)
    return qp, lb, sign, offset
