"""Command-line front door.

Subcommands: generate, label, train, predict, solve, oracle, ipm,
check-equivalence, bench.  Global flags (--config, --seed, --threads,
--out-dir) may also come from a JSON config file; explicit command-line
values win.  The default output directory can be set with the
``HYPERQP_OUT_DIR`` environment variable.  Every output document embeds the
effective configuration that produced it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bench import MethodSpec, run_bench, run_single, write_trace_csv
from .generators import QmkpParams, RandqcpParams, gen_qmkp, gen_randqcp
from .hypergraph import build_hypergraph
from .instance import (
    SchemaError,
    brute_force_oracle,
    evaluate,
    load_instance,
    normalize,
    save_instance,
)
from .ipm import IpmConfig, ipm_solve, kkt_residual, qp_from_instance
from .network import (
    TrainConfig,
    forward,
    load_weights,
    save_weights,
    train,
)
from .rng import derive_seed

EQUIVALENCE_TOL = 1e-9


def _out_dir(args) -> Path:
    base = args.out_dir or os.environ.get("HYPERQP_OUT_DIR") or "."
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _effective(args, names) -> dict:
    return {k: getattr(args, k) for k in names if hasattr(args, k)}


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if "entries" not in doc:
        raise SystemExit(f"manifest {path} has no 'entries' key")
    return doc


def _manifest_paths(manifest_path, entries, key="instance"):
    root = Path(manifest_path).parent
    out = []
    for e in entries:
        if e.get(key) is None:
            continue
        p = Path(e[key])
        out.append(p if p.is_absolute() else root / p)
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    out_dir = _out_dir(args)
    names = ["family", "n", "m", "count", "seed", "edge_factor", "arity_min", "arity_max"]
    config = _effective(args, names)
    entries = []
    for k in range(args.count):
        seed = args.seed + k
        if args.family == "qmkp":
            inst = gen_qmkp(QmkpParams(n=args.n, m=args.m, edge_factor=args.edge_factor, seed=seed))
        elif args.family == "randqcp":
            inst = gen_randqcp(RandqcpParams(n=args.n, m=args.m, arity_min=args.arity_min,
                                             arity_max=args.arity_max, seed=seed))
        else:
            raise SystemExit(f"unknown family {args.family!r}")
        if args.out and args.count == 1:
            path = Path(args.out)
            path.parent.mkdir(parents=True, exist_ok=True)
        else:
            path = out_dir / f"{inst.name}.json"
        if path.exists() and not args.force:
            raise SystemExit(f"{path} exists; pass --force to overwrite")
        save_instance(inst, path)
        entries.append({"instance": path.name if path.parent == out_dir else str(path),
                        "label": None})
    if not (args.out and args.count == 1):
        _write_json(out_dir / "manifest.json",
                    {"version": 1, "config": config, "entries": entries})
    print(f"wrote {args.count} instance(s)")
    return 0


def cmd_label(args) -> int:
    manifest = _load_manifest(args.manifest)
    root = Path(args.manifest).parent
    label_dir = root / "labels"
    label_dir.mkdir(exist_ok=True)
    config = _effective(args, ["labeler", "seed", "rounds", "subsolver", "max_free"])
    skipped = 0
    for entry in manifest["entries"]:
        inst_path = Path(entry["instance"])
        if not inst_path.is_absolute():
            inst_path = root / inst_path
        instance = normalize(load_instance(inst_path))
        if args.labeler == "oracle":
            res = brute_force_oracle(instance, max_free=args.max_free)
            if not res.feasible:
                print(f"skipping infeasible instance {instance.name}", file=sys.stderr)
                skipped += 1
                continue
            values, objective = res.assignment, res.objective
        else:
            method = MethodSpec(name="labeler", subsolver=args.subsolver,
                                rounds=args.rounds, alpha_ub=args.alpha_ub,
                                density_threshold=args.density_threshold)
            state = run_single(instance, method, args.seed)
            values, objective = state.assignment, state.objective
        label_path = label_dir / f"{inst_path.stem}.label.json"
        _write_json(label_path, {
            "instance": instance.name,
            "objective": objective,
            "values": [float(v) for v in values],
            "provenance": config,
        })
        entry["label"] = str(label_path.relative_to(root))
    _write_json(args.manifest, manifest)
    print(f"labeled {len(manifest['entries']) - skipped} instance(s), skipped {skipped}")
    return 0 if skipped == 0 else 1


def cmd_train(args) -> int:
    manifest = _load_manifest(args.manifest)
    root = Path(args.manifest).parent
    dataset = []
    for entry in manifest["entries"]:
        if not entry.get("label"):
            continue
        inst = normalize(load_instance(root / entry["instance"]))
        with open(root / entry["label"], encoding="utf-8") as fh:
            label_doc = json.load(fh)
        graph = build_hypergraph(inst, feature_seed=derive_seed(args.seed, 0xFEA7))
        dataset.append((graph, np.array(label_doc["values"], dtype=float)))
    if not dataset:
        raise SystemExit("manifest has no labeled entries; run `hyperqp label` first")
    cfg = TrainConfig(lr=args.lr, weight_decay=args.weight_decay, epochs=args.epochs,
                      batch_size=args.batch_size, seed=args.seed)
    weights, curve = train(dataset, cfg)
    save_weights(weights, args.out)
    doc = {"config": {**_effective(args, ["lr", "weight_decay", "epochs", "batch_size", "seed"]),
                      "n_instances": len(dataset)},
           "loss_curve": curve}
    _write_json(args.curve_out or (Path(args.out).with_suffix(".curve.json")), doc)
    print(f"trained on {len(dataset)} instances; "
          f"loss {curve[0]:.4f} -> {curve[-1]:.4f}; weights at {args.out}")
    return 0


def cmd_predict(args) -> int:
    instance = normalize(load_instance(args.instance))
    weights = load_weights(args.weights)
    graph = build_hypergraph(instance, feature_seed=derive_seed(args.seed, 0xFEA7))
    pred, _ = forward(weights, graph)
    doc = {
        "instance": instance.name,
        "config": _effective(args, ["weights", "seed"]),
        "logits": [float(v) for v in pred.logits],
        "probs": [float(v) for v in pred.probs],
        "rounded": [int(v) for v in pred.rounded],
    }
    _write_json(args.out, doc)
    print(f"predictions for {instance.name} -> {args.out}")
    return 0


def cmd_solve(args) -> int:
    instance = normalize(load_instance(args.instance))
    method = MethodSpec(
        name="cli",
        subsolver=args.subsolver,
        alpha=args.alpha,
        alpha_ub=args.alpha_ub,
        rounds=args.rounds,
        subsolver_budget=args.budget,
        density_threshold=args.density_threshold,
        weights_path=None if args.no_predictor else args.weights,
        time_limit_ms=args.time_ms,
    )
    if not args.no_predictor and args.weights is None:
        raise SystemExit("pass --weights <file> or --no-predictor")
    state = run_single(instance, method, args.seed, workers=args.threads)
    rep = evaluate(instance, state.assignment)
    if args.trace_out:
        write_trace_csv(args.trace_out, state)
    doc = {
        "instance": instance.name,
        "config": {**asdict(method), "seed": args.seed, "threads": args.threads},
        "objective": state.objective,
        "feasible": bool(rep.feasible),
        "rounds": state.rounds_done,
        "assignment": [float(v) for v in state.assignment],
    }
    out = args.out or (_out_dir(args) / f"solution_{instance.name}.json")
    _write_json(out, doc)
    print(f"{instance.name}: objective {state.objective:.6f} "
          f"feasible={rep.feasible} rounds={state.rounds_done} -> {out}")
    return 0


def cmd_oracle(args) -> int:
    paths = ([args.instance] if args.instance
             else _manifest_paths(args.manifest, _load_manifest(args.manifest)["entries"]))
    rows = []
    for p in paths:
        instance = normalize(load_instance(p))
        res = brute_force_oracle(instance, max_free=args.max_free)
        rows.append({
            "instance": instance.name,
            "feasible": res.feasible,
            "objective": res.objective,
            "assignment": None if res.assignment is None else [float(v) for v in res.assignment],
        })
        print(f"{instance.name}: optimum "
              f"{res.objective if res.feasible else 'infeasible'}")
    out = args.out or (_out_dir(args) / "oracle.json")
    _write_json(out, {"config": _effective(args, ["max_free"]), "results": rows})
    return 0


def cmd_ipm(args) -> int:
    instance = load_instance(args.instance)
    qp, lb, sign, offset = qp_from_instance(instance)
    cfg = IpmConfig(delta=args.delta, tol=args.tol, max_iter=args.max_iter)
    res = ipm_solve(qp, cfg)
    x = lb + res.state.x
    objective = sign * res.objective + offset
    doc = {
        "instance": instance.name,
        "config": {"delta": args.delta, "tol": args.tol, "max_iter": args.max_iter},
        "converged": res.converged,
        "iterations": res.iterations,
        "kkt_residual": kkt_residual(qp, res.state),
        "objective": objective,
        "x": [float(v) for v in x],
    }
    out = args.out or (_out_dir(args) / f"ipm_{instance.name}.json")
    _write_json(out, doc)
    print(f"{instance.name}: objective {objective:.8f} converged={res.converged} -> {out}")
    return 0 if res.converged else 1


def cmd_check_equivalence(args) -> int:
    from .ipm import QpStd
    from .ipm_mp import direct_trace, mpnn_emulate_ipm, trace_deviation

    rng = np.random.default_rng(args.seed)
    worst_overall = 0.0
    print(f"{'case':>5s} {'n':>3s} {'m':>3s} {'max deviation':>14s}")
    for k in range(args.instances):
        n = int(rng.integers(2, 9))
        m = int(rng.integers(2, 9))
        M = rng.normal(size=(n, n))
        Q = M.T @ M + np.eye(n)
        c = rng.normal(size=n)
        A = rng.normal(size=(m, n))
        x0 = np.abs(rng.normal(size=n)) + 0.1
        b = A @ x0 - (np.abs(rng.normal(size=m)) + 0.1)
        qp = QpStd(Q=Q, c=c, A=A, b=b)
        cfg = IpmConfig()
        dev = max(trace_deviation(direct_trace(qp, cfg, args.iters),
                                  mpnn_emulate_ipm(qp, cfg, args.iters)))
        worst_overall = max(worst_overall, dev)
        print(f"{k:5d} {n:3d} {m:3d} {dev:14.3e}")
    ok = worst_overall < EQUIVALENCE_TOL
    print(f"worst deviation {worst_overall:.3e} ({'OK' if ok else 'FAIL'} at {EQUIVALENCE_TOL})")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    manifest = _load_manifest(args.manifest)
    paths = _manifest_paths(args.manifest, manifest["entries"])
    methods = [MethodSpec.parse(m.strip()) for m in args.methods.split(",") if m.strip()]
    for m in methods:
        m.rounds = args.rounds
        m.subsolver_budget = args.budget
        m.density_threshold = args.density_threshold
        if args.weights:
            m.weights_path = args.weights
    seeds = [derive_seed(args.seed, 0xBE7C, k) for k in range(args.seeds)]
    report = run_bench(
        paths, methods, seeds, _out_dir(args),
        workers=args.threads,
        render_figures=not args.no_figures,
        extra_config=_effective(args, ["manifest", "methods", "seeds", "rounds",
                                       "budget", "seed", "threads"]),
    )
    n_ok = len(report.rows) - report.n_failed
    print(f"bench: {n_ok}/{len(report.rows)} runs ok; summary at "
          f"{_out_dir(args) / 'summary.json'}")
    return 0 if report.n_failed == 0 else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperqp",
        description="Hypergraph-guided neighborhood search for binary QCQPs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON file with defaults for any flag")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out-dir", default=None)

    p = sub.add_parser("generate", help="write benchmark instances")
    common(p)
    p.add_argument("--family", required=True, choices=["qmkp", "randqcp"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--edge-factor", type=float, default=5.0)
    p.add_argument("--arity-min", type=int, default=2)
    p.add_argument("--arity-max", type=int, default=5)
    p.add_argument("--out", help="single-instance output path")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("label", help="attach solution labels to a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--labeler", choices=["oracle", "optimize"], default="oracle")
    p.add_argument("--max-free", type=int, default=22)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--alpha-ub", type=float, default=0.4)
    p.add_argument("--subsolver", default="tabu")
    p.add_argument("--density-threshold", type=float, default=32.0)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the predictor on a labeled manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--curve-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-variable probabilities for one instance")
    common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("solve", help="run the full optimization loop")
    common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--weights")
    p.add_argument("--no-predictor", action="store_true",
                   help="use the relaxation-rounding prediction instead of weights")
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--alpha-ub", type=float, default=0.5)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--time-ms", type=int, default=None)
    p.add_argument("--subsolver", choices=["exhaustive", "tabu", "bnb"], default="exhaustive")
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--density-threshold", type=float, default=32.0)
    p.add_argument("--trace-out")
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="exact optimum of small binary instances")
    common(p)
    p.add_argument("--instance")
    p.add_argument("--manifest")
    p.add_argument("--max-free", type=int, default=22)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("ipm", help="barrier-solve a continuous instance")
    common(p)
    p.add_argument("--instance", required=True)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ipm)

    p = sub.add_parser("check-equivalence",
                       help="compare message-passing and dense barrier traces")
    common(p)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--iters", type=int, default=30)
    p.set_defaults(func=cmd_check_equivalence)

    p = sub.add_parser("bench", help="methods x instances x seeds sweep")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--methods", default="exhaustive@0.5",
                   help="comma list of subsolver[@alpha_ub]")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--density-threshold", type=float, default=32.0)
    p.add_argument("--weights", help="use this predictor for every method")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def _apply_config_file(parser, argv):
    """Let a JSON config supply defaults; explicit flags still win."""
    probe, _ = parser.parse_known_args(argv)
    if not getattr(probe, "config", None):
        return argv
    with open(probe.config, encoding="utf-8") as fh:
        doc = json.load(fh)
    flat = {k.replace("-", "_"): v for k, v in doc.items()}
    for action_parser in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
        defaults = {k: v for k, v in flat.items()
                    if any(a.dest == k for a in action_parser._actions)}  # noqa: SLF001
        action_parser.set_defaults(**defaults)
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    argv = _apply_config_file(parser, argv)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"instance error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
