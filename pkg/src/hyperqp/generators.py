"""Seeded generators for the two benchmark families.

Both families are maximization problems over binary variables with all
coefficients drawn U(0, 1) from the SplitMix64 stream (see :mod:`.rng`), so
the all-zeros assignment is always feasible.  Draw order is part of the
format and documented per generator; same seed means byte-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

from .instance import Constraint, QcqpInstance, TermList, VarInfo
from .rng import SplitMix64


@dataclass(frozen=True)
class QmkpParams:
    """Multi-knapsack with pairwise item interaction values.

    ``edge_factor`` controls the number of interaction pairs:
    ``|E| = round(edge_factor * n)`` distinct unordered pairs.
    """

    n: int
    m: int
    edge_factor: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 2 or self.m < 1 or self.edge_factor <= 0:
            raise ValueError("QmkpParams requires n >= 2, m >= 1, edge_factor > 0")


@dataclass(frozen=True)
class RandqcpParams:
    """Weighted vertex selection with one quadratic constraint per hyperedge."""

    n: int
    m: int
    arity_min: int = 2
    arity_max: int = 5
    seed: int = 0

    def __post_init__(self):
        if not (2 <= self.arity_min <= self.arity_max <= self.n):
            raise ValueError("RandqcpParams requires 2 <= arity_min <= arity_max <= n")
        if self.m < 1:
            raise ValueError("RandqcpParams requires m >= 1")


def gen_qmkp(p: QmkpParams) -> QcqpInstance:
    """Generate a knapsack instance with interaction terms.

    Draw order: item values c_0..c_{n-1}; interaction pairs by rejection
    sampling (i, j both uniform, rejected on i == j or duplicates); pair
    values q in sorted-pair order; then per knapsack k the weights
    a_0..a_{n-1}.  Each capacity is exactly half the weight sum,
    rhs_k = 0.5 * sum_i a_i^k, with the sum taken in index order.
    """
    n_edges = int(round(p.edge_factor * p.n))
    max_edges = p.n * (p.n - 1) // 2
    if n_edges > max_edges:
        raise ValueError(f"edge_factor {p.edge_factor} asks for {n_edges} pairs, only {max_edges} exist")
    gen = SplitMix64(p.seed)
    values = [gen.uniform_positive() for _ in range(p.n)]
    pairs: set[tuple[int, int]] = set()
    while len(pairs) < n_edges:
        i = gen.below(p.n)
        j = gen.below(p.n)
        if i == j:
            continue
        pairs.add((min(i, j), max(i, j)))
    quad = [(i, j, gen.uniform_positive()) for i, j in sorted(pairs)]
    objective = TermList.make(
        linear=[(i, values[i]) for i in range(p.n)],
        quadratic=quad,
    )
    constraints = []
    for _ in range(p.m):
        weights = [gen.uniform_positive() for _ in range(p.n)]
        rhs = 0.5 * sum(weights)
        constraints.append(
            Constraint(TermList.make(linear=list(enumerate(weights))), "le", rhs)
        )
    return QcqpInstance(
        name=f"qmkp-n{p.n}-m{p.m}-s{p.seed}",
        sense="max",
        vars=tuple(VarInfo(f"x{i}", 0.0, 1.0, "binary") for i in range(p.n)),
        objective=objective,
        constraints=tuple(constraints),
        seed_provenance=p.seed,
    )


def gen_randqcp(p: RandqcpParams) -> QcqpInstance:
    """Generate a hyperedge-constrained vertex selection instance.

    Draw order: vertex weights c_0..c_{n-1}; then per hyperedge its arity
    (uniform in [arity_min, arity_max]), its member vertices (distinct,
    rejection-sampled, then sorted), the linear coefficients a_i in member
    order, and the pair coefficients q_ij in lexicographic pair order.  The
    right-hand side equals the hyperedge arity.
    """
    gen = SplitMix64(p.seed)
    weights = [gen.uniform_positive() for _ in range(p.n)]
    objective = TermList.make(linear=list(enumerate(weights)))
    constraints = []
    for _ in range(p.m):
        arity = p.arity_min + gen.below(p.arity_max - p.arity_min + 1)
        members = sorted(gen.sample(p.n, arity))
        linear = [(i, gen.uniform_positive()) for i in members]
        quad = []
        for a in range(arity):
            for b in range(a + 1, arity):
                quad.append((members[a], members[b], gen.uniform_positive()))
        constraints.append(
            Constraint(TermList.make(linear=linear, quadratic=quad), "le", float(arity))
        )
    return QcqpInstance(
        name=f"randqcp-n{p.n}-m{p.m}-s{p.seed}",
        sense="max",
        vars=tuple(VarInfo(f"x{i}", 0.0, 1.0, "binary") for i in range(p.n)),
        objective=objective,
        constraints=tuple(constraints),
        seed_provenance=p.seed,
    )
