"""Command-line front end.

Subcommands: ``gendata`` emits a dataset/model pair, ``attack`` runs the
minimum-norm attack over a dataset, ``sweep`` runs hyperparameter sweeps
with sample- or dataset-level tuning, ``qd`` and ``report`` derive metric
CSVs from stored traces without re-running attacks, ``demo2d`` dumps the
per-step trajectory of a run on the built-in 2D model, and ``verify``
executes the oracle checks.

Every command writes a run manifest next to its outputs; two runs with
equal manifests produce byte-identical output files. All randomness flows
from a single seed (flag ``--seed``, falling back to the MINNORM_SEED
environment variable) through the Philox counter-based generator.

Exit codes: 0 success, 1 verification failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import DdnConfig, PgdConfig
from .datagen import DATASET_KINDS, demo2d_model, draw_init_candidates, generate_dataset
from .fmn import AttackConfig, fmn_attack
from .harness import (
    RunRecord,
    SweepResults,
    SweepSpec,
    build_report,
    export_traces,
    import_traces,
    qd_curve,
    run_attack,
    run_sweep,
    timing_report,
    write_qd_csv,
    write_report_csv,
    _atomic_write,
)
from .model import AttackGoal, Sample, UNTARGETED, load_dataset, load_model
from .projections import NormKind, dual_norm_of

GRID_GAMMA0 = (0.05, 0.3)
GRID_ALPHA0 = {"low": (1.0, 5.0, 10.0), "linf": (10.0, 100.0, 1000.0)}
GRID_DDN_EPS0 = (0.03, 0.1, 0.3, 1.0, 3.0)
GRID_DDN_STEPS = (200, 1000)
GRID_PGD_ALPHA = (0.001, 0.01, 0.1, 1.0, 2.0, 8.0)


class UsageError(Exception):
    """Invalid flags, files or configuration; maps to exit code 2."""


def _resolve_seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("MINNORM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"MINNORM_SEED must be an integer, got {env!r}") from None
    return 0


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_payload(config) -> dict:
    payload = {}
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if f.name == "init_points":
            continue  # derived from the seed, not part of the identity
        if isinstance(v, NormKind):
            v = str(v)
        elif isinstance(v, AttackGoal):
            v = {"targeted": v.targeted, "target_class": v.target_class}
        payload[f.name] = v
    return payload


def _write_manifest(out_path, argv, seed, config_payload, inputs, outputs, extra=None):
    payload = {
        "command": list(argv),
        "tool_version": __version__,
        "seed": seed,
        "config": config_payload,
        "config_hash": hashlib.sha256(
            json.dumps(config_payload, sort_keys=True).encode()
        ).hexdigest(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        payload.update(extra)
    path = Path(str(out_path) + ".manifest.json")
    _atomic_write(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


def _read_manifest(traces_path) -> dict:
    path = Path(str(traces_path) + ".manifest.json")
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def _goal_from_args(args, model) -> AttackGoal:
    if getattr(args, "target", None) is None:
        return UNTARGETED
    if not 1 <= args.target <= model.num_classes:
        raise UsageError(
            f"--target {args.target} out of range 1..{model.num_classes}"
        )
    return AttackGoal.targeted(args.target)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gendata(args, argv) -> int:
    out = Path(args.out)
    generate_dataset(args.kind, args.n, args.d, _resolve_seed(args.seed), out_dir=out)
    data, model = out / "data.csv", out / "model.json"
    _write_manifest(
        data,
        argv,
        _resolve_seed(args.seed),
        {"kind": args.kind, "n": args.n, "d": args.d},
        inputs=(),
        outputs=(data, model),
    )
    print(f"wrote {data} and {model}")
    return 0


def cmd_attack(args, argv) -> int:
    model = load_model(args.model)
    samples = load_dataset(args.data)
    goal = _goal_from_args(args, model)
    seed = _resolve_seed(args.seed)
    p = NormKind.from_string(args.norm)
    base = AttackConfig(
        p=p,
        steps=args.steps,
        alpha0=args.alpha0,
        alphaK=args.alphaK,
        gamma0=args.gamma0,
        gammaK=args.gammaK,
        init=args.init,
        goal=goal,
        seed=seed,
    )
    runs = []
    n_found = 0
    for si, sample in enumerate(samples):
        cfg = base
        if base.init == "adversarial":
            cfg = dataclasses.replace(
                base, init_points=draw_init_candidates(samples, si, goal, seed)
            )
        records, elapsed_ms = run_attack(model, sample, "fmn", cfg)
        runs.append(RunRecord(si, 0, "fmn", records, elapsed_ms))
        if math.isfinite(records[-1].best_norm):
            n_found += 1
    results = SweepResults(
        attack="fmn",
        tuning="sample",
        budget=max(len(r.records) for r in runs),
        n_samples=len(samples),
        n_configs=1,
        runs=runs,
        norm=p,
    )
    export_traces(results, args.out, measure_time=args.measure_time)
    _write_manifest(
        args.out,
        argv,
        seed,
        _config_payload(base),
        inputs=(args.model, args.data),
        outputs=(args.out,),
        extra={"attack": "fmn", "norm": str(p), "tuning": "sample", "budget": results.budget},
    )
    print(f"attacked {len(samples)} samples, adversarial found for {n_found}; traces at {args.out}")
    return 0


def _standard_grid(attack: str, p: NormKind, goal, seed: int, eps: float | None):
    if attack == "fmn":
        alphas = GRID_ALPHA0["linf" if p is NormKind.LINF else "low"]
        return tuple(
            AttackConfig(
                p=p, steps=1000, alpha0=a0, gamma0=g0, init=init, goal=goal, seed=seed
            )
            for a0 in alphas
            for g0 in GRID_GAMMA0
            for init in ("input", "adversarial")
        )
    if attack == "ddn":
        if p is not NormKind.L2:
            raise UsageError("ddn is an l2 attack; use --norm l2")
        return tuple(
            DdnConfig(eps0=e0, steps=k, goal=goal)
            for e0 in GRID_DDN_EPS0
            for k in GRID_DDN_STEPS
        )
    if eps is None:
        raise UsageError("pgd sweeps need --eps for the fixed budget")
    return tuple(
        PgdConfig(p=p, eps=eps, steps=1000, alpha=a, goal=goal, seed=seed)
        for a in GRID_PGD_ALPHA
    )


def _grid_from_file(attack: str, path, p: NormKind, goal, seed: int):
    try:
        entries = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read grid file {path}: {exc}") from None
    if not isinstance(entries, list) or not entries:
        raise UsageError(f"grid file {path} must hold a non-empty JSON list")
    configs = []
    for entry in entries:
        if attack == "fmn":
            configs.append(AttackConfig(p=p, goal=goal, seed=seed, **entry))
        elif attack == "ddn":
            configs.append(DdnConfig(goal=goal, **entry))
        else:
            configs.append(PgdConfig(p=p, goal=goal, seed=seed, **entry))
    return tuple(configs)


def cmd_sweep(args, argv) -> int:
    model = load_model(args.model)
    samples = load_dataset(args.data)
    goal = _goal_from_args(args, model)
    seed = _resolve_seed(args.seed)
    p = NormKind.from_string(args.norm)
    if args.paper_grid:
        configs = _standard_grid(args.attack, p, goal, seed, args.eps)
    elif args.grid:
        configs = _grid_from_file(args.attack, args.grid, p, goal, seed)
    else:
        raise UsageError("sweep needs --grid FILE or --paper-grid")
    spec = SweepSpec(attack=args.attack, configs=configs, tuning=args.tuning, budget=args.budget)

    def config_for(si, sample, cfg):
        if isinstance(cfg, AttackConfig) and cfg.init == "adversarial":
            return dataclasses.replace(
                cfg, init_points=draw_init_candidates(samples, si, goal, seed)
            )
        return cfg

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = out / "traces.jsonl"
    results = run_sweep(model, samples, spec, jobs=args.jobs, config_for=config_for)
    export_traces(results, traces, measure_time=args.measure_time)
    # derive report and curve from the persisted traces so the CSV bytes
    # depend only on the trace file (identical to a later `report` run)
    persisted = import_traces(traces, tuning=args.tuning, budget=args.budget, norm=p)
    report = build_report(persisted)
    report_csv = out / "report.csv"
    write_report_csv([report], report_csv)
    qd_csv = out / "qd.csv"
    write_qd_csv(report.qd, qd_csv)
    _write_manifest(
        traces,
        argv,
        seed,
        [_config_payload(c) for c in configs],
        inputs=(args.model, args.data),
        outputs=(traces, report_csv, qd_csv),
        extra={
            "attack": args.attack,
            "norm": str(p),
            "tuning": args.tuning,
            "budget": args.budget,
        },
    )
    print(
        f"swept {len(configs)} configs over {len(samples)} samples "
        f"(median {report.median:g} at Q={args.budget}, "
        f"{timing_report(results):.3f} ms/query measured); outputs in {out}"
    )
    return 0


def _results_from_traces(args) -> SweepResults:
    manifest = _read_manifest(args.traces)
    tuning = getattr(args, "tuning", None) or manifest.get("tuning", "sample")
    budget = getattr(args, "budget", None) or manifest.get("budget")
    norm = manifest.get("norm")
    return import_traces(
        args.traces,
        tuning=tuning,
        budget=budget,
        norm=NormKind.from_string(norm) if norm else None,
    )


def cmd_qd(args, argv) -> int:
    results = _results_from_traces(args)
    curve = qd_curve(results)
    write_qd_csv(curve, args.out)
    _write_manifest(
        args.out,
        argv,
        _resolve_seed(None),
        {"tuning": results.tuning, "budget": results.budget},
        inputs=(args.traces,),
        outputs=(args.out,),
    )
    print(f"wrote {args.out}")
    return 0


def cmd_report(args, argv) -> int:
    reports = []
    for traces in args.traces:
        ns = argparse.Namespace(traces=traces, tuning=args.tuning, budget=args.budget)
        results = _results_from_traces(ns)
        reports.append(build_report(results))
    write_report_csv(reports, args.out)
    _write_manifest(
        args.out,
        argv,
        _resolve_seed(None),
        {"traces": [str(t) for t in args.traces]},
        inputs=tuple(args.traces),
        outputs=(args.out,),
    )
    print(f"wrote {args.out}")
    return 0


def cmd_demo2d(args, argv) -> int:
    seed = _resolve_seed(args.seed)
    model = demo2d_model()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(4,))))
    start = np.array([0.16, 0.22]) + rng.uniform(-0.04, 0.04, size=2)
    sample = Sample(x=start, y=1)
    cfg = AttackConfig(
        p=NormKind.L2, steps=args.steps, alpha0=1.0, gamma0=0.3, seed=seed
    )
    rows = []

    def on_iterate(k, x, rec):
        rows.append(
            f"{k},{float(x[0])!r},{float(x[1])!r},{rec.loss!r},{rec.eps!r},"
            f"{'inf' if math.isinf(rec.best_norm) else repr(rec.best_norm)}"
        )

    result = fmn_attack(model, sample, cfg, on_iterate=on_iterate)
    _atomic_write(args.out, "k,x1,x2,loss,eps,best_norm\n" + "\n".join(rows) + "\n")
    _write_manifest(
        args.out,
        argv,
        seed,
        _config_payload(cfg),
        inputs=(),
        outputs=(args.out,),
    )
    print(
        f"demo run: found={result.found} best l2 norm="
        f"{result.best_norm:.5f} over {result.queries} queries; steps at {args.out}"
    )
    return 0


def cmd_verify(args, argv) -> int:
    from .projections import NormKind as NK
    from .verify import run_checks

    dual_fn = dual_norm_of
    if args.inject_wrong_dual:
        # Mutation hook: mispair the duals to prove the checks can fail.
        def dual_fn(p):
            return {NK.L1: NK.L2, NK.L2: NK.L1, NK.LINF: NK.L2, NK.L0: NK.L2}[p]

    checks = run_checks(quick=args.quick, dual_norm_fn=dual_fn)
    width = max(len(c.name) for c in checks)
    all_pass = True
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        all_pass &= c.passed
        print(f"{status}  {c.name:{width}}  {c.detail}")
    print("verification:", "all checks passed" if all_pass else "FAILURES above")
    return 0 if all_pass else 1


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minnorm",
        description="Minimum-norm adversarial attacks and evaluation harness.",
    )
    parser.add_argument("--version", action="version", version=f"minnorm {__version__}")
    sub = parser.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gendata", help="generate a dataset/model pair")
    g.add_argument("--kind", choices=DATASET_KINDS, required=True)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gendata)

    a = sub.add_parser("attack", help="run the minimum-norm attack over a dataset")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--norm", choices=["l0", "l1", "l2", "linf"], required=True)
    a.add_argument("--steps", type=int, default=100)
    a.add_argument("--alpha0", type=float, default=1.0)
    a.add_argument("--alphaK", type=float, default=1e-5)
    a.add_argument("--gamma0", type=float, default=0.05)
    a.add_argument("--gammaK", type=float, default=1e-4)
    a.add_argument("--init", choices=["input", "adversarial"], default="input")
    a.add_argument("--target", type=int, help="1-based target class (targeted attack)")
    a.add_argument("--seed", type=int)
    a.add_argument("--out", required=True, help="output JSONL trace file")
    a.add_argument("--measure-time", action="store_true",
                   help="persist measured per-query times (breaks byte reproducibility)")
    a.set_defaults(func=cmd_attack)

    s = sub.add_parser("sweep", help="hyperparameter sweep with tuning modes")
    s.add_argument("--attack", choices=["fmn", "ddn", "pgd"], required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--norm", choices=["l0", "l1", "l2", "linf"], required=True)
    s.add_argument("--grid", help="JSON file with a list of config objects")
    s.add_argument("--paper-grid", action="store_true",
                   help="use the standard hyperparameter grid for the attack")
    s.add_argument("--tuning", choices=["sample", "dataset"], default="sample")
    s.add_argument("--budget", type=int, default=1000)
    s.add_argument("--eps", type=float, help="fixed budget (pgd sweeps)")
    s.add_argument("--target", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--measure-time", action="store_true")
    s.set_defaults(func=cmd_sweep)

    q = sub.add_parser("qd", help="query-distortion curve from stored traces")
    q.add_argument("--traces", required=True)
    q.add_argument("--tuning", choices=["sample", "dataset"])
    q.add_argument("--budget", type=int)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_qd)

    r = sub.add_parser("report", help="metric report CSV from stored traces")
    r.add_argument("--traces", nargs="+", required=True)
    r.add_argument("--tuning", choices=["sample", "dataset"])
    r.add_argument("--budget", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    d = sub.add_parser("demo2d", help="per-step trajectory on the built-in 2D model")
    d.add_argument("--seed", type=int)
    d.add_argument("--steps", type=int, default=300)
    d.add_argument("--out", default="demo2d.csv")
    d.set_defaults(func=cmd_demo2d)

    v = sub.add_parser("verify", help="run oracle and property checks")
    v.add_argument("--quick", action="store_true", help="reduced instance counts")
    v.add_argument("--inject-wrong-dual", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
