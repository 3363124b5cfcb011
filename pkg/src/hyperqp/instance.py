"""Core data model for binary/box-constrained QCQP instances.

An instance is a quadratic objective plus quadratic constraints over bounded
variables.  Terms are stored as monomial coefficient lists: a quadratic entry
``(i, j, c)`` with ``i <= j`` means ``c * x_i * x_j`` (``i == j`` means
``c * x_i**2``), so every monomial has exactly one owner entry and no
double-counting convention is needed.  Converting to a symmetric matrix form
halves off-diagonal coefficients (see :func:`symmetric_q`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

DEFAULT_FEAS_TOL = 1e-6
DEFAULT_INT_TOL = 1e-6

VTYPES = ("binary", "integer", "continuous")
SENSES = ("min", "max")
CON_SENSES = ("le", "ge", "eq")


class SchemaError(ValueError):
    """Raised when an instance document violates the schema.

    The message always names the offending field path.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class VarInfo:
    name: str
    lb: float
    ub: float
    vtype: str = "binary"

    def __post_init__(self):
        if self.vtype not in VTYPES:
            raise SchemaError(f"var {self.name!r}.type", f"unknown type {self.vtype!r}")
        if not (math.isfinite(self.lb) and math.isfinite(self.ub)):
            raise SchemaError(f"var {self.name!r}", "bounds must be finite")
        if self.lb > self.ub:
            raise SchemaError(f"var {self.name!r}", f"lb {self.lb} > ub {self.ub}")
        if self.vtype == "binary" and (self.lb, self.ub) != (0.0, 1.0):
            raise SchemaError(f"var {self.name!r}", "binary variables need bounds [0, 1]")


@dataclass(frozen=True)
class TermList:
    """Linear and quadratic monomials, keyed by variable index."""

    linear: tuple[tuple[int, float], ...] = ()
    quadratic: tuple[tuple[int, int, float], ...] = ()

    @staticmethod
    def make(linear: Iterable[Sequence] = (), quadratic: Iterable[Sequence] = ()) -> "TermList":
        lin = tuple((int(i), float(c)) for i, c in linear)
        quad = tuple((int(i), int(j), float(c)) for i, j, c in quadratic)
        return TermList(lin, quad)

    @property
    def n_terms(self) -> int:
        return len(self.linear) + len(self.quadratic)

    def variables(self) -> list[int]:
        """Distinct variable indices touched by this term list, ascending."""
        seen = {i for i, _ in self.linear}
        for i, j, _ in self.quadratic:
            seen.add(i)
            seen.add(j)
        return sorted(seen)

    def negated(self) -> "TermList":
        return TermList(
            tuple((i, -c) for i, c in self.linear),
            tuple((i, j, -c) for i, j, c in self.quadratic),
        )

    def value(self, x: np.ndarray) -> float:
        total = 0.0
        for i, c in self.linear:
            total += c * x[i]
        for i, j, c in self.quadratic:
            total += c * x[i] * x[j]
        return float(total)


@dataclass(frozen=True)
class Constraint:
    terms: TermList
    sense: str
    rhs: float


@dataclass(frozen=True)
class QcqpInstance:
    name: str
    sense: str
    vars: tuple[VarInfo, ...]
    objective: TermList
    constraints: tuple[Constraint, ...]
    seed_provenance: Optional[int] = None

    @property
    def n(self) -> int:
        return len(self.vars)

    @property
    def m(self) -> int:
        return len(self.constraints)

    def is_binary(self) -> bool:
        return all(v.vtype == "binary" for v in self.vars)

    def is_normalized(self) -> bool:
        return all(c.sense == "le" for c in self.constraints)

    def lb_vector(self) -> np.ndarray:
        return np.array([v.lb for v in self.vars], dtype=float)

    def ub_vector(self) -> np.ndarray:
        return np.array([v.ub for v in self.vars], dtype=float)


@dataclass
class EvalReport:
    objective: float
    activities: np.ndarray
    violations: np.ndarray
    max_violation: float
    bound_violation: float
    integrality_violation: float
    feasible: bool


@dataclass
class OracleResult:
    feasible: bool
    assignment: Optional[np.ndarray]
    objective: Optional[float]
    evaluated: int = 0


# ---------------------------------------------------------------------------
# Term validation shared by loader and constructors
# ---------------------------------------------------------------------------

def _check_terms(terms: TermList, n: int, path: str, allow_empty: bool) -> None:
    seen_lin: set[int] = set()
    for k, (i, c) in enumerate(terms.linear):
        where = f"{path}.linear[{k}]"
        if not 0 <= i < n:
            raise SchemaError(where, f"index {i} out of range for {n} variables")
        if i in seen_lin:
            raise SchemaError(where, f"duplicate linear index {i}")
        if not math.isfinite(c) or c == 0.0:
            raise SchemaError(where, f"coefficient must be finite and nonzero, got {c}")
        seen_lin.add(i)
    seen_quad: set[tuple[int, int]] = set()
    for k, (i, j, c) in enumerate(terms.quadratic):
        where = f"{path}.quadratic[{k}]"
        if not (0 <= i < n and 0 <= j < n):
            raise SchemaError(where, f"index pair ({i}, {j}) out of range for {n} variables")
        if i > j:
            raise SchemaError(where, f"pair ({i}, {j}) must satisfy i <= j")
        if (i, j) in seen_quad:
            raise SchemaError(where, f"duplicate quadratic pair ({i}, {j})")
        if not math.isfinite(c) or c == 0.0:
            raise SchemaError(where, f"coefficient must be finite and nonzero, got {c}")
        seen_quad.add((i, j))
    if not allow_empty and terms.n_terms == 0:
        raise SchemaError(path, "constraint has no terms")


def validate_instance(instance: QcqpInstance) -> None:
    if instance.sense not in SENSES:
        raise SchemaError("sense", f"must be one of {SENSES}, got {instance.sense!r}")
    n = instance.n
    _check_terms(instance.objective, n, "objective", allow_empty=True)
    for ci, con in enumerate(instance.constraints):
        if con.sense not in CON_SENSES:
            raise SchemaError(f"constraints[{ci}].sense", f"unknown sense {con.sense!r}")
        if not math.isfinite(con.rhs):
            raise SchemaError(f"constraints[{ci}].rhs", "must be finite")
        _check_terms(con.terms, n, f"constraints[{ci}]", allow_empty=False)


# ---------------------------------------------------------------------------
# JSON load/save
# ---------------------------------------------------------------------------

def _terms_from_doc(doc: dict, path: str) -> TermList:
    if not isinstance(doc, dict):
        raise SchemaError(path, "expected an object with 'linear'/'quadratic'")
    lin_doc = doc.get("linear", [])
    quad_doc = doc.get("quadratic", [])
    try:
        lin = tuple((int(e[0]), float(e[1])) for e in lin_doc)
    except (TypeError, ValueError, IndexError) as exc:
        raise SchemaError(f"{path}.linear", f"malformed entry: {exc}") from None
    try:
        quad = tuple((int(e[0]), int(e[1]), float(e[2])) for e in quad_doc)
    except (TypeError, ValueError, IndexError) as exc:
        raise SchemaError(f"{path}.quadratic", f"malformed entry: {exc}") from None
    return TermList(lin, quad)


def instance_from_dict(doc: dict) -> QcqpInstance:
    if not isinstance(doc, dict):
        raise SchemaError("$", "top level must be an object")
    for key in ("name", "sense", "vars", "objective", "constraints"):
        if key not in doc:
            raise SchemaError(key, "missing required key")
    vars_doc = doc["vars"]
    if not isinstance(vars_doc, list) or not vars_doc:
        raise SchemaError("vars", "must be a non-empty array")
    vinfos = []
    for k, v in enumerate(vars_doc):
        try:
            vinfos.append(
                VarInfo(
                    name=str(v["name"]),
                    lb=float(v["lb"]),
                    ub=float(v["ub"]),
                    vtype=str(v.get("type", "binary")),
                )
            )
        except SchemaError:
            raise
        except (TypeError, KeyError, ValueError) as exc:
            raise SchemaError(f"vars[{k}]", f"malformed variable: {exc}") from None
    constraints = []
    cons_doc = doc["constraints"]
    if not isinstance(cons_doc, list):
        raise SchemaError("constraints", "must be an array")
    for ci, c in enumerate(cons_doc):
        if not isinstance(c, dict):
            raise SchemaError(f"constraints[{ci}]", "must be an object")
        try:
            sense = str(c["sense"])
            rhs = float(c["rhs"])
        except (TypeError, KeyError, ValueError) as exc:
            raise SchemaError(f"constraints[{ci}]", f"malformed constraint: {exc}") from None
        constraints.append(Constraint(_terms_from_doc(c, f"constraints[{ci}]"), sense, rhs))
    seed = doc.get("seed_provenance")
    instance = QcqpInstance(
        name=str(doc["name"]),
        sense=str(doc["sense"]),
        vars=tuple(vinfos),
        objective=_terms_from_doc(doc["objective"], "objective"),
        constraints=tuple(constraints),
        seed_provenance=None if seed is None else int(seed),
    )
    validate_instance(instance)
    return instance


def load_instance(data) -> QcqpInstance:
    """Parse an instance from JSON bytes/str, a parsed dict, or a file path."""
    if isinstance(data, QcqpInstance):
        return data
    if isinstance(data, dict):
        return instance_from_dict(data)
    if isinstance(data, (bytes, bytearray)):
        text = data.decode("utf-8")
    elif isinstance(data, str) and data.lstrip().startswith("{"):
        text = data
    else:
        with open(data, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON: {exc}") from None
    return instance_from_dict(doc)


def _terms_to_doc(terms: TermList) -> dict:
    # Canonical ordering: linear by index, quadratic by (i, j).
    return {
        "linear": [[i, c] for i, c in sorted(terms.linear)],
        "quadratic": [[i, j, c] for i, j, c in sorted(terms.quadratic)],
    }


def instance_to_dict(instance: QcqpInstance) -> dict:
    doc = {
        "name": instance.name,
        "sense": instance.sense,
        "vars": [
            {"name": v.name, "lb": v.lb, "ub": v.ub, "type": v.vtype}
            for v in instance.vars
        ],
        "objective": _terms_to_doc(instance.objective),
        "constraints": [
            {**_terms_to_doc(c.terms), "sense": c.sense, "rhs": c.rhs}
            for c in instance.constraints
        ],
    }
    if instance.seed_provenance is not None:
        doc["seed_provenance"] = instance.seed_provenance
    return doc


def save_instance(instance: QcqpInstance, path=None) -> str:
    """Serialize canonically (sorted terms, fixed key order, exact floats)."""
    text = json.dumps(instance_to_dict(instance), indent=1) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


# ---------------------------------------------------------------------------
# Normalization and evaluation
# ---------------------------------------------------------------------------

def normalize(instance: QcqpInstance) -> QcqpInstance:
    """Rewrite every constraint in <= form.

    ``>=`` constraints are negated termwise; equalities split into a
    ``<=`` pair.  The objective, its sense, and the variable order are
    untouched.  Idempotent: an already-normalized instance is returned as is.
    """
    if instance.is_normalized():
        return instance
    out: list[Constraint] = []
    for con in instance.constraints:
        if con.sense == "le":
            out.append(con)
        elif con.sense == "ge":
            out.append(Constraint(con.terms.negated(), "le", -con.rhs))
        else:  # eq -> {<=, negated <=}
            out.append(Constraint(con.terms, "le", con.rhs))
            out.append(Constraint(con.terms.negated(), "le", -con.rhs))
    return replace(instance, constraints=tuple(out))


def evaluate(instance: QcqpInstance, x, tol: float = DEFAULT_FEAS_TOL) -> EvalReport:
    """Objective, per-constraint activities, and violation measures at x."""
    if not instance.is_normalized():
        raise ValueError("evaluate() requires a normalized (<= only) instance")
    x = np.asarray(x, dtype=float)
    if x.shape != (instance.n,):
        raise ValueError(f"assignment length {x.shape} does not match n={instance.n}")
    objective = instance.objective.value(x)
    activities = np.array([c.terms.value(x) for c in instance.constraints], dtype=float)
    rhs = np.array([c.rhs for c in instance.constraints], dtype=float)
    violations = np.maximum(activities - rhs, 0.0)
    max_violation = float(violations.max()) if len(violations) else 0.0
    lb = instance.lb_vector()
    ub = instance.ub_vector()
    bound_violation = float(np.maximum(np.maximum(lb - x, x - ub), 0.0).max())
    int_mask = np.array([v.vtype != "continuous" for v in instance.vars])
    if int_mask.any():
        integrality = float(np.abs(x[int_mask] - np.round(x[int_mask])).max())
    else:
        integrality = 0.0
    feasible = max(max_violation, bound_violation, integrality) <= tol
    return EvalReport(
        objective=objective,
        activities=activities,
        violations=violations,
        max_violation=max_violation,
        bound_violation=bound_violation,
        integrality_violation=integrality,
        feasible=feasible,
    )


# ---------------------------------------------------------------------------
# Dense-array form and exhaustive oracle
# ---------------------------------------------------------------------------

@dataclass
class DenseForm:
    """Objective + constraints compiled to dense arrays for batch evaluation.

    Row 0 of ``lin``/``quad`` is the objective; rows 1.. are constraints.
    ``quad`` keeps the monomial convention (upper triangle only).
    """

    lin: np.ndarray      # (m+1, n)
    quad: np.ndarray     # (m+1, n, n), upper triangular incl. diagonal
    const: np.ndarray    # (m+1,)
    rhs: np.ndarray      # (m,)

    @staticmethod
    def from_instance(instance: QcqpInstance) -> "DenseForm":
        n, m = instance.n, instance.m
        lin = np.zeros((m + 1, n))
        quad = np.zeros((m + 1, n, n))
        rows = [instance.objective] + [c.terms for c in instance.constraints]
        for r, terms in enumerate(rows):
            for i, c in terms.linear:
                lin[r, i] += c
            for i, j, c in terms.quadratic:
                quad[r, i, j] += c
        rhs = np.array([c.rhs for c in instance.constraints], dtype=float)
        return DenseForm(lin=lin, quad=quad, const=np.zeros(m + 1), rhs=rhs)

    def batch_values(self, X: np.ndarray) -> np.ndarray:
        """Values of all rows at each assignment in X (k, n) -> (k, m+1)."""
        vals = self.const[None, :] + X @ self.lin.T
        vals += np.einsum("kf,rfg,kg->kr", X, self.quad, X)
        return vals


def binary_block(start: int, count: int, n: int) -> np.ndarray:
    """Rows ``start .. start+count`` of the lexicographic 0/1 enumeration.

    Index k maps to the assignment whose bits are k written MSB-first, so
    increasing k walks assignments in lexicographic order of (x_0, x_1, ...).
    """
    idx = np.arange(start, start + count, dtype=np.uint64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint64)
    return ((idx[:, None] >> shifts[None, :]) & np.uint64(1)).astype(float)


def brute_force_oracle(
    instance: QcqpInstance,
    max_free: int = 22,
    tol: float = DEFAULT_FEAS_TOL,
    chunk: int = 1 << 15,
) -> OracleResult:
    """Exact optimum of a small all-binary instance by full enumeration.

    Ties are broken toward the lexicographically smallest assignment (the
    enumeration is lexicographic and only strict improvements replace the
    incumbent), which keeps regression fixtures stable.
    """
    instance = normalize(instance)
    if not instance.is_binary():
        raise ValueError("brute_force_oracle() handles all-binary instances only")
    n = instance.n
    if n > max_free:
        raise ValueError(f"too many variables for enumeration: {n} > {max_free}")
    dense = DenseForm.from_instance(instance)
    better = np.greater if instance.sense == "max" else np.less
    best_obj = None
    best_x = None
    total = 1 << n
    evaluated = 0
    for start in range(0, total, chunk):
        count = min(chunk, total - start)
        X = binary_block(start, count, n)
        vals = dense.batch_values(X)
        feas = (vals[:, 1:] <= dense.rhs[None, :] + tol).all(axis=1) if instance.m else np.ones(count, bool)
        evaluated += count
        if not feas.any():
            continue
        obj = vals[:, 0]
        obj_feas = obj[feas]
        pos = int(np.argmax(obj_feas)) if instance.sense == "max" else int(np.argmin(obj_feas))
        cand_obj = float(obj_feas[pos])
        if best_obj is None or better(cand_obj, best_obj):
            row = np.flatnonzero(feas)[pos]
            best_obj = cand_obj
            best_x = X[row].copy()
    if best_obj is None:
        return OracleResult(feasible=False, assignment=None, objective=None, evaluated=evaluated)
    return OracleResult(feasible=True, assignment=best_x, objective=best_obj, evaluated=evaluated)


def symmetric_q(terms: TermList, n: int) -> np.ndarray:
    """Symmetric matrix Q with x^T Q x equal to the quadratic part of terms."""
    q = np.zeros((n, n))
    for i, j, c in terms.quadratic:
        if i == j:
            q[i, i] += c
        else:
            q[i, j] += 0.5 * c
            q[j, i] += 0.5 * c
    return q
