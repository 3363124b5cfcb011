"""Term hypergraph for normalized instances.

Every monomial of the objective or a constraint becomes one 3-member
hyperedge joining the variables it touches to the row it lives in:

* linear term ``c * x_i`` in row r:      {v_i, aux_zero, r}
* square term ``c * x_i^2`` in row r:    {v_i, aux_square, r}
* bilinear term ``c * x_i x_j`` in row r: {v_i, v_j, r}

where r is the objective vertex or a constraint vertex.  The two auxiliary
vertices mark the degree of the term so every hyperedge has exactly three
members.  The coefficient rides on the hyperedge feature vector; vertex
features encode kinds, bounds, right-hand sides, and one random dimension
per variable (a tie-breaker that lets the network distinguish otherwise
symmetric variables).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .instance import QcqpInstance
from .rng import SplitMix64

KIND_VARIABLE = 0
KIND_AUX_ZERO = 1
KIND_AUX_SQUARE = 2
KIND_CONSTRAINT = 3
KIND_OBJECTIVE = 4

N_KINDS = 5
PAYLOAD_DIM = 6
VERTEX_FEATURE_DIM = N_KINDS + PAYLOAD_DIM
EDGE_FEATURE_DIM = 5

BOUND_CLIP = 1e6
BOUND_SCALE = 1e-3


@dataclass
class TermHypergraph:
    n_vars: int
    n_cons: int
    vertex_kinds: np.ndarray      # (V,) int
    vertex_features: np.ndarray   # (V, VERTEX_FEATURE_DIM)
    edge_members: np.ndarray      # (E, 3) vertex ids
    edge_features: np.ndarray     # (E, EDGE_FEATURE_DIM)
    feature_seed: int

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_kinds)

    @property
    def n_edges(self) -> int:
        return len(self.edge_members)

    @property
    def aux_zero(self) -> int:
        return self.n_vars

    @property
    def aux_square(self) -> int:
        return self.n_vars + 1

    def constraint_vertex(self, k: int) -> int:
        return self.n_vars + 2 + k

    @property
    def objective_vertex(self) -> int:
        return self.n_vars + 2 + self.n_cons

    # Flat incidence arrays for convolution (one entry per membership).
    def incidence(self) -> tuple[np.ndarray, np.ndarray]:
        flat_v = self.edge_members.ravel()
        flat_e = np.repeat(np.arange(self.n_edges), 3)
        return flat_v, flat_e

    def vertex_degrees(self) -> np.ndarray:
        """Hyperedge-neighbor counts per vertex."""
        flat_v, _ = self.incidence()
        deg = np.zeros(self.n_vertices, dtype=float)
        np.add.at(deg, flat_v, 1.0)
        return deg


@dataclass
class BipartiteView:
    """Star expansion: one node per hyperedge, wired to its three members."""

    n_v_nodes: int
    n_e_nodes: int
    edges: np.ndarray          # (3E, 2): columns (v_node, e_node)
    edge_features: np.ndarray  # (3E, EDGE_FEATURE_DIM), inherited per parent


def _clip_scale(v: float) -> float:
    return max(-BOUND_CLIP, min(BOUND_CLIP, v)) * BOUND_SCALE


def build_hypergraph(instance: QcqpInstance, feature_seed: int = 0) -> TermHypergraph:
    """One hyperedge per term of a normalized instance, with features."""
    if not instance.is_normalized():
        raise ValueError("build_hypergraph() requires a normalized instance")
    n, m = instance.n, instance.m
    n_vertices = n + 2 + m + 1
    kinds = np.empty(n_vertices, dtype=int)
    kinds[:n] = KIND_VARIABLE
    kinds[n] = KIND_AUX_ZERO
    kinds[n + 1] = KIND_AUX_SQUARE
    kinds[n + 2:n + 2 + m] = KIND_CONSTRAINT
    kinds[n + 2 + m] = KIND_OBJECTIVE

    gen = SplitMix64(feature_seed)
    feats = np.zeros((n_vertices, VERTEX_FEATURE_DIM))
    feats[np.arange(n_vertices), kinds] = 1.0
    for i, v in enumerate(instance.vars):
        feats[i, N_KINDS + 0] = 1.0 if v.vtype == "binary" else 0.0
        feats[i, N_KINDS + 1] = 1.0 if v.vtype == "integer" else 0.0
        feats[i, N_KINDS + 2] = 1.0 if v.vtype == "continuous" else 0.0
        feats[i, N_KINDS + 3] = _clip_scale(v.lb)
        feats[i, N_KINDS + 4] = _clip_scale(v.ub)
        feats[i, N_KINDS + 5] = gen.uniform()
    for k, con in enumerate(instance.constraints):
        row = n + 2 + k
        feats[row, N_KINDS + 0] = con.rhs
        feats[row, N_KINDS + 1] = con.terms.n_terms
    obj_row = n + 2 + m
    feats[obj_row, N_KINDS + 0] = 1.0 if instance.sense == "max" else -1.0
    feats[obj_row, N_KINDS + 1] = instance.objective.n_terms

    members: list[tuple[int, int, int]] = []
    efeats: list[tuple[float, float, float, float, float]] = []
    aux_zero, aux_square = n, n + 1

    def add_terms(terms, target, is_objective):
        flag = 1.0 if is_objective else 0.0
        for i, c in terms.linear:
            members.append((i, aux_zero, target))
            efeats.append((c, flag, 1.0, 0.0, 0.0))
        for i, j, c in terms.quadratic:
            if i == j:
                members.append((i, aux_square, target))
                efeats.append((c, flag, 0.0, 1.0, 0.0))
            else:
                members.append((i, j, target))
                efeats.append((c, flag, 0.0, 0.0, 1.0))

    add_terms(instance.objective, obj_row, True)
    for k, con in enumerate(instance.constraints):
        add_terms(con.terms, n + 2 + k, False)

    edge_members = np.array(members, dtype=int).reshape(len(members), 3)
    edge_features = np.array(efeats, dtype=float).reshape(len(efeats), EDGE_FEATURE_DIM)
    return TermHypergraph(
        n_vars=n,
        n_cons=m,
        vertex_kinds=kinds,
        vertex_features=feats,
        edge_members=edge_members,
        edge_features=edge_features,
        feature_seed=feature_seed,
    )


def star_expand(h: TermHypergraph) -> BipartiteView:
    """Bipartite graph with one node per hyperedge; every bipartite edge
    inherits its parent hyperedge's feature."""
    flat_v, flat_e = h.incidence()
    edges = np.stack([flat_v, flat_e], axis=1)
    return BipartiteView(
        n_v_nodes=h.n_vertices,
        n_e_nodes=h.n_edges,
        edges=edges,
        edge_features=h.edge_features[flat_e],
    )


def hypergraph_to_dict(h: TermHypergraph) -> dict:
    """Debug dump for inspection and cross-checks."""
    kind_names = {
        KIND_VARIABLE: "variable",
        KIND_AUX_ZERO: "aux_zero",
        KIND_AUX_SQUARE: "aux_square",
        KIND_CONSTRAINT: "constraint",
        KIND_OBJECTIVE: "objective",
    }
    return {
        "n_vars": h.n_vars,
        "n_cons": h.n_cons,
        "feature_seed": h.feature_seed,
        "vertices": [
            {"id": i, "kind": kind_names[int(k)], "features": list(map(float, f))}
            for i, (k, f) in enumerate(zip(h.vertex_kinds, h.vertex_features))
        ],
        "hyperedges": [
            {"members": list(map(int, mem)), "features": list(map(float, f))}
            for mem, f in zip(h.edge_members, h.edge_features)
        ],
    }
