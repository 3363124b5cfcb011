"""Message-passing mirror of the barrier iteration.

This module re-executes every step of :func:`hyperqp.ipm.ipm_step` on a
graph view of the QP: one node per variable (holding ``x_i, z_i``), one node
per constraint (holding ``y_j, w_j``), and one coordinator node (holding
``mu`` and the scalar reduction results).  Edges carry the matrix entries:
constraint/variable edges hold ``A[j, i]``, variable/variable edges through
the quadratic objective hold ``Q[i, k]``.

Every matrix-vector product is realized as per-edge messages followed by a
per-node sum; every inner product is a node-to-coordinator reduction; the
steplength is computed per node and min-reduced at the coordinator.  The one
step with no edge-local decomposition is applying ``(X^-1 Z + Q)^-1``: the
variable nodes jointly assemble the system (each node contributes its own
row: its quadratic-edge weights plus ``z_i / x_i`` on the diagonal) and the
solve happens as a joint node operation, exactly as the equivalence argument
treats it.

Per-node reductions use the same fixed pairwise summation as the dense path,
so matching traces is a sharp test of the schedule, not of float noise.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .ipm import (
    CG_REL_TOL_SQ,
    CgBreakdownError,
    IpmConfig,
    IpmState,
    IpmTrace,
    IterRecord,
    IpmStallError,
    QpStd,
    initial_state,
    per_coordinate_alpha,
    residuals,
)

# --- message primitives ----------------------------------------------------

def _cons_to_vars(A: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Each constraint j sends A[j, i] * vals[j] along its edges; variable
    nodes sum their inbox."""
    msgs = A * vals[:, None]
    return msgs.sum(axis=0)


def _vars_to_cons(A: np.ndarray, vals: np.ndarray) -> np.ndarray:
    msgs = A * vals[None, :]
    return msgs.sum(axis=1)


def _vars_to_vars(Q: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """Variable-to-variable hop along quadratic-objective edges."""
    msgs = Q * vals[None, :]
    return msgs.sum(axis=1)


def _reduce_sum(node_vals: np.ndarray) -> float:
    """Node-to-coordinator reduction."""
    return float(node_vals.sum())


def _joint_variable_solve(factor, rhs: np.ndarray) -> np.ndarray:
    """Joint operation over the variable nodes (see module docstring)."""
    return cho_solve(factor, rhs)


def _assemble_variable_system(qp: QpStd, x: np.ndarray, z: np.ndarray):
    """Each variable node owns one row: its quadratic-edge weights plus the
    local diagonal term z_i / x_i."""
    M = qp.Q.copy()
    idx = np.arange(qp.n)
    M[idx, idx] = M[idx, idx] + z / x
    return cho_factor(M)


# --- the emulated iteration -------------------------------------------------

def _emulated_cg(qp: QpStd, st: IpmState, factor, iters: int) -> np.ndarray:
    """Conjugate-gradient sweep with p, v, dy living on constraint nodes."""
    A, Q, b, c = qp.A, qp.Q, qp.b, qp.c
    x, z, y, w, mu = st.x, st.z, st.y, st.w, st.mu
    m = qp.m
    if m == 0:
        return np.zeros(0)

    # Initial direction: constraint nodes assemble the reduced-system
    # residual from two message rounds through the variable layer.
    h_ay = _cons_to_vars(A, y)                       # constraints -> variables
    h_qx = _vars_to_vars(Q, x)                       # objective-edge hop
    t = ((c - h_ay) + h_qx) - mu / x                 # local on variable nodes
    h_sol = _joint_variable_solve(factor, t)
    h_back = _vars_to_cons(A, h_sol)                 # variables -> constraints
    p = ((b - _vars_to_cons(A, x)) + mu / y) + h_back
    v = -p                                           # local on constraint nodes
    dy = np.zeros(m)
    vv = _reduce_sum(v * v)                          # constraints -> coordinator
    vv0 = vv
    for it in range(iters):
        if vv <= CG_REL_TOL_SQ * max(1.0, vv0):
            break
        h1 = _cons_to_vars(A, p)
        h2 = _joint_variable_solve(factor, h1)
        h3 = _vars_to_cons(A, h2)
        u = h3 + (w / y) * p                         # local on constraint nodes
        pu = _reduce_sum(p * u)                      # reduction at coordinator
        if pu <= 0.0:
            raise CgBreakdownError(it)
        alpha = vv / pu                              # local at coordinator
        dy = dy + alpha * p                          # coordinator broadcasts alpha
        v_new = v + alpha * u
        vv_new = _reduce_sum(v_new * v_new)
        beta = vv_new / vv
        v = v_new
        vv = vv_new
        p = -v + beta * p
    return dy


def mpnn_step(qp: QpStd, st: IpmState, cfg: IpmConfig) -> tuple[IpmState, IterRecord]:
    """One barrier iteration executed as the message schedule."""
    A, Q, c = qp.A, qp.Q, qp.c
    x, z, y, w, mu = st.x, st.z, st.y, st.w, st.mu
    factor = _assemble_variable_system(qp, x, z)
    iters = cfg.cg_iters if cfg.cg_iters is not None else 4 * qp.m

    dy = _emulated_cg(qp, st, factor, iters)

    # dx: one constraints->variables pass with the updated duals, one
    # objective-edge hop, then the joint solve.
    h1 = _cons_to_vars(A, y + dy)
    h4 = _vars_to_vars(Q, x)
    rhs = ((h1 - c) - h4) + mu / x
    dx = _joint_variable_solve(factor, rhs)

    # Local updates on variable / constraint nodes.
    dz = (mu - x * z - z * dx) / x
    dw = (mu - y * w - w * dy) / y if qp.m else np.zeros(0)

    # Per-node step bounds, min-reduced at the coordinator.
    cand_v = per_coordinate_alpha(x, dx, z, dz)
    cand_c = per_coordinate_alpha(y, dy, w, dw)
    alpha = np.inf
    if len(cand_v):
        alpha = min(alpha, float(cand_v.min()))
    if len(cand_c):
        alpha = min(alpha, float(cand_c.min()))
    if np.isinf(alpha):
        alpha = 1.0
    if alpha <= 0.0:
        raise IpmStallError("steplength collapsed to zero")

    scale = cfg.step_scale * alpha                   # coordinator broadcast
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


def mpnn_emulate_ipm(qp: QpStd, cfg: Optional[IpmConfig] = None, iters: int = 30) -> IpmTrace:
    """Run ``iters`` emulated iterations from the all-ones start."""
    cfg = cfg or IpmConfig()
    st = initial_state(qp)
    # mu is itself two reductions at the coordinator:
    h1 = _reduce_sum(st.z * st.x)
    h2 = _reduce_sum(st.y * st.w)
    st.mu = (h1 + h2) / (qp.n + qp.m)
    trace = IpmTrace()
    for _ in range(iters):
        st, rec = mpnn_step(qp, st, cfg)
        trace.records.append(rec)
    return trace


def trace_deviation(a: IpmTrace, b: IpmTrace) -> list[float]:
    """Per-iteration max absolute difference across states and directions."""
    if len(a) != len(b):
        raise ValueError("traces have different lengths")
    out = []
    for ra, rb in zip(a.records, b.records):
        parts = [
            np.abs(ra.state.x - rb.state.x).max(initial=0.0),
            np.abs(ra.state.z - rb.state.z).max(initial=0.0),
            np.abs(ra.state.y - rb.state.y).max(initial=0.0),
            np.abs(ra.state.w - rb.state.w).max(initial=0.0),
            abs(ra.state.mu - rb.state.mu),
            np.abs(ra.dx - rb.dx).max(initial=0.0),
            np.abs(ra.dy - rb.dy).max(initial=0.0),
            np.abs(ra.dz - rb.dz).max(initial=0.0),
            np.abs(ra.dw - rb.dw).max(initial=0.0),
            abs(ra.alpha - rb.alpha),
        ]
        out.append(float(max(parts)))
    return out


def direct_trace(qp: QpStd, cfg: Optional[IpmConfig] = None, iters: int = 30) -> IpmTrace:
    """Reference trace from the dense path, same start and iteration count."""
    from .ipm import ipm_step

    cfg = cfg or IpmConfig()
    st = initial_state(qp)
    trace = IpmTrace()
    for _ in range(iters):
        st, rec = ipm_step(qp, st, cfg)
        trace.records.append(rec)
    return trace
