"""Benchmark harness: methods x instances x seeds, traces, summary, figures.

Each run writes one trace CSV (fixed header
``round,wall_ms,objective,violated_constraints,neighborhoods,crossovers``);
the harness aggregates final objectives into a summary JSON (mean/std over
seeds) and renders convergence figures alongside.  Failures are recorded
per row and do not stop the sweep.
"""

from __future__ import annotations

import csv
import json
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .instance import QcqpInstance, evaluate, load_instance, normalize
from .neighborhood import IncumbentState, SearchConfig, optimize, relaxation_prediction
from .network import forward, load_weights
from .rng import derive_seed

TRACE_HEADER = ["round", "wall_ms", "objective", "violated_constraints",
                "neighborhoods", "crossovers"]


@dataclass
class MethodSpec:
    name: str
    subsolver: str = "exhaustive"
    alpha: float = 0.25
    alpha_ub: float = 0.5
    rounds: int = 20
    subsolver_budget: int = 2000
    density_threshold: float = 32.0
    weights_path: Optional[str] = None   # None -> relaxation-rounding prediction
    time_limit_ms: Optional[int] = None

    @staticmethod
    def parse(text: str) -> "MethodSpec":
        """Compact form ``subsolver[@alpha_ub]``, e.g. ``tabu@0.3``."""
        if "@" in text:
            solver, ub = text.split("@", 1)
            return MethodSpec(name=text, subsolver=solver, alpha_ub=float(ub),
                              alpha=min(0.25, float(ub)))
        return MethodSpec(name=text, subsolver=text)


def write_trace_csv(path, state: IncumbentState) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for row in state.trace:
            writer.writerow([
                row.round, repr(row.wall_ms), repr(row.objective),
                row.violated_constraints, row.neighborhoods, row.crossovers,
            ])


def read_trace_csv(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append({
                "round": int(row["round"]),
                "wall_ms": float(row["wall_ms"]),
                "objective": float(row["objective"]),
                "violated_constraints": int(row["violated_constraints"]),
                "neighborhoods": int(row["neighborhoods"]),
                "crossovers": int(row["crossovers"]),
            })
    return out


def make_prediction(instance: QcqpInstance, method: MethodSpec, feature_seed: int):
    if method.weights_path is None:
        return relaxation_prediction(instance)
    weights = load_weights(method.weights_path)
    from .hypergraph import build_hypergraph

    graph = build_hypergraph(instance, feature_seed=feature_seed)
    pred, _ = forward(weights, graph)
    return pred


def run_single(instance: QcqpInstance, method: MethodSpec, seed: int,
               workers: int = 1) -> IncumbentState:
    instance = normalize(instance)
    pred = make_prediction(instance, method, feature_seed=derive_seed(seed, 0xFEA7))
    cfg = SearchConfig(
        alpha=method.alpha,
        alpha_ub=method.alpha_ub,
        rounds=method.rounds,
        time_limit_ms=method.time_limit_ms,
        seed=seed,
        subsolver=method.subsolver,
        subsolver_budget=method.subsolver_budget,
        density_threshold=method.density_threshold,
        workers=workers,
    )
    return optimize(instance, pred, cfg)


@dataclass
class BenchReport:
    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.rows if r["status"] != "ok")

    def to_dict(self) -> dict:
        return {"config": self.config, "rows": self.rows, "summary": self.summary}


def summarize(rows: list[dict]) -> list[dict]:
    """Per (instance, method) mean/std of the final objective over seeds."""
    groups: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        if r["status"] == "ok":
            groups.setdefault((r["instance"], r["method"]), []).append(r)
    out = []
    for (inst, method), rs in sorted(groups.items()):
        objs = np.array([r["objective"] for r in rs])
        out.append({
            "instance": inst,
            "method": method,
            "seeds": len(rs),
            "objective_mean": float(objs.mean()),
            "objective_std": float(objs.std()),
            "wall_ms_mean": float(np.mean([r["wall_ms"] for r in rs])),
        })
    return out


def run_bench(
    instance_paths: list,
    methods: list[MethodSpec],
    seeds: list[int],
    out_dir,
    workers: int = 1,
    render_figures: bool = True,
    extra_config: Optional[dict] = None,
) -> BenchReport:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(exist_ok=True)
    report = BenchReport(config={
        "methods": [asdict(m) for m in methods],
        "seeds": seeds,
        "instances": [str(p) for p in instance_paths],
        **(extra_config or {}),
    })
    traces: dict[str, dict[str, list[list[dict]]]] = {}
    for path in instance_paths:
        instance = normalize(load_instance(path))
        for method in methods:
            for seed in seeds:
                tag = f"{instance.name}_{method.name}_s{seed}"
                trace_path = trace_dir / f"{tag}.csv"
                row = {
                    "instance": instance.name, "method": method.name, "seed": seed,
                    "status": "ok", "objective": None, "feasible": None,
                    "wall_ms": None, "rounds": None, "error": None,
                    "trace": str(trace_path.relative_to(out_dir)),
                }
                t0 = time.perf_counter()
                try:
                    state = run_single(instance, method, seed, workers=workers)
                    rep = evaluate(instance, state.assignment)
                    write_trace_csv(trace_path, state)
                    row.update(
                        objective=state.objective,
                        feasible=bool(rep.feasible),
                        wall_ms=(time.perf_counter() - t0) * 1000.0,
                        rounds=state.rounds_done,
                    )
                    traces.setdefault(instance.name, {}).setdefault(method.name, []).append(
                        [vars(t) for t in state.trace]
                    )
                except Exception as exc:  # recorded, sweep continues
                    row.update(status="failed",
                               error=f"{type(exc).__name__}: {exc}",
                               wall_ms=(time.perf_counter() - t0) * 1000.0)
                    row["traceback"] = traceback.format_exc(limit=4)
                report.rows.append(row)
    report.summary = summarize(report.rows)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1)
        fh.write("\n")
    if render_figures:
        from .plots import render_convergence, render_summary

        for inst_name, per_method in traces.items():
            render_convergence(inst_name, per_method, out_dir / f"convergence_{inst_name}.png")
        if report.summary:
            render_summary(report.summary, out_dir / "summary.png")
    return report
