"""Sweeps, evaluation metrics and persistent trace formats.

A sweep runs one attack kind over every (sample, config) pair up to a
query budget and keeps the full per-query traces. Metrics follow the
minimum-norm evaluation conventions: a sample's perturbation size is 0
when the clean input is already misclassified, infinity when the attack
never found an adversarial within the budget, and the best norm by the
given query count otherwise. Medians take the lower middle element for
even counts, so the statistic stays finite whenever more than half the
samples are evaded.

Traces persist as JSONL (one record per query) and reports as CSV; both
writes are atomic (temp file + rename) and byte-deterministic unless
measured timings are explicitly requested.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import ddn_attack, pgd_attack
from .fmn import TraceRecord, fmn_attack
from .projections import NormKind

ATTACK_KINDS = ("fmn", "ddn", "pgd")
DEFAULT_QD_GRID = (1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
TUNING_MODES = ("sample", "dataset")


class TraceFormatError(ValueError):
    """Raised when a persisted trace file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class SweepSpec:
    """One attack kind, a list of configs, a tuning mode and a query budget."""

    attack: str
    configs: tuple
    tuning: str = "sample"
    budget: int = 1000

    def __post_init__(self):
        if self.attack not in ATTACK_KINDS:
            raise ValueError(f"unknown attack {self.attack!r}; expected one of {ATTACK_KINDS}")
        if not self.configs:
            raise ValueError("sweep needs at least one config")
        if self.tuning not in TUNING_MODES:
            raise ValueError(f"tuning must be one of {TUNING_MODES}, got {self.tuning!r}")
        if self.budget < 1:
            raise ValueError(f"budget must be >= 1, got {self.budget}")


@dataclass
class RunRecord:
    """Trace of one attack execution on one (sample, config) pair."""

    sample: int
    config: int
    attack: str
    records: list
    elapsed_ms: float = 0.0


@dataclass
class SweepResults:
    """Raw sweep output plus the context needed to evaluate it."""

    attack: str
    tuning: str
    budget: int
    n_samples: int
    n_configs: int
    runs: list = field(default_factory=list)
    norm: NormKind | None = None


def _config_norm(attack: str, config) -> NormKind:
    if attack == "ddn":
        return NormKind.L2
    return config.p


def run_attack(model, sample, attack: str, config):
    """Execute one attack and return (records, elapsed_ms)."""
    t0 = time.perf_counter()
    if attack == "fmn":
        result = fmn_attack(model, sample, config)
    elif attack == "ddn":
        result = ddn_attack(model, sample, config)
    elif attack == "pgd":
        result = pgd_attack(model, sample, config)
    else:
        raise ValueError(f"unknown attack {attack!r}")
    elapsed_ms = (time.perf_counter() - t0) * 1000.0
    return result.trace.records, elapsed_ms


def _run_pair(args):
    model, sample, attack, config, si, ci, budget = args
    records, elapsed_ms = run_attack(model, sample, attack, config)
    return RunRecord(si, ci, attack, records[:budget], elapsed_ms)


def run_sweep(
    model, samples, spec: SweepSpec, jobs: int = 1, out_path=None, config_for=None
) -> SweepResults:
    """Run every (sample, config) pair up to the budget.

    Attack-level failures are ordinary results (infinite best norm) and
    never abort the sweep. With jobs > 1 the pairs execute in a process
    pool; results are ordered by (sample, config) either way, so outputs
    are identical. When ``out_path`` is given the raw traces are persisted
    as JSONL. ``config_for(sample_idx, sample, config)`` may specialize a
    config per sample (used to inject per-sample adversarial init points).
    """
    samples = list(samples)
    norms = {_config_norm(spec.attack, c) for c in spec.configs}
    if len(norms) != 1:
        raise ValueError("all configs in a sweep must target the same norm")
    tasks = [
        (
            model,
            s,
            spec.attack,
            config_for(si, s, cfg) if config_for is not None else cfg,
            si,
            ci,
            spec.budget,
        )
        for si, s in enumerate(samples)
        for ci, cfg in enumerate(spec.configs)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            runs = list(pool.map(_run_pair, tasks))
    else:
        runs = [_run_pair(t) for t in tasks]
    runs.sort(key=lambda r: (r.sample, r.config))
    results = SweepResults(
        attack=spec.attack,
        tuning=spec.tuning,
        budget=spec.budget,
        n_samples=len(samples),
        n_configs=len(spec.configs),
        runs=runs,
        norm=norms.pop(),
    )
    if out_path is not None:
        export_traces(results, out_path)
    return results


# ---------------------------------------------------------------------------
# Per-sample values and metrics


def trace_value_at(records, Q: int) -> float:
    """Best-so-far norm after the first min(Q, len) queries of a trace."""
    if Q < 1:
        raise ValueError(f"query budget must be >= 1, got {Q}")
    if not records:
        return math.inf
    idx = min(Q, len(records)) - 1
    return records[idx].best_norm


def _step_curves(results: SweepResults, Q: int) -> np.ndarray:
    """(n_samples, n_configs, Q) best-so-far values, forward-filled."""
    curves = np.full((results.n_samples, results.n_configs, Q), math.inf)
    for run in results.runs:
        vals = np.full(Q, math.inf)
        prev = math.inf
        pos = 0
        for rec in run.records:
            if rec.query > Q:
                break
            vals[pos : rec.query - 1] = prev
            vals[rec.query - 1] = rec.best_norm
            prev = rec.best_norm
            pos = rec.query
        vals[pos:] = prev
        curves[run.sample, run.config] = vals
    return curves


def median_lower(values) -> float:
    """Median as the lower middle element for even counts."""
    vals = sorted(float(v) for v in values)
    if not vals:
        raise ValueError("median of empty collection")
    n = len(vals)
    return vals[(n - 1) // 2]


def per_sample_values(results: SweepResults, Q: int | None = None) -> np.ndarray:
    """Per-sample perturbation sizes at Q under the sweep's tuning mode.

    Sample-level tuning takes each sample's best config; dataset-level
    tuning picks the single config with the smallest dataset median at Q
    (lowest index on ties) and reports it for all samples.
    """
    Q = results.budget if Q is None else min(Q, results.budget)
    matrix = np.full((results.n_samples, results.n_configs), math.inf)
    for run in results.runs:
        matrix[run.sample, run.config] = trace_value_at(run.records, Q)
    if results.tuning == "sample":
        return matrix.min(axis=1)
    medians = [median_lower(matrix[:, c]) for c in range(results.n_configs)]
    best = int(np.argmin(medians))
    return matrix[:, best]


def median_perturbation(results: SweepResults, Q: int | None = None) -> float:
    """Median per-sample perturbation size at Q (0/infinity conventions)."""
    return median_lower(per_sample_values(results, Q))


def qd_curve(results: SweepResults, q_grid=None):
    """Query-distortion curve: (Q, median) at each grid point.

    Per-sample best-so-far across executions is taken before the median,
    so the curve is non-increasing.
    """
    if q_grid is None:
        q_grid = [q for q in DEFAULT_QD_GRID if q <= results.budget]
        if not q_grid or q_grid[-1] != results.budget:
            q_grid.append(results.budget)
    q_grid = list(q_grid)
    if any(b <= a for a, b in zip(q_grid, q_grid[1:])):
        raise ValueError("q_grid must be strictly ascending")
    return [(q, median_perturbation(results, q)) for q in q_grid]


def _median_curve(results: SweepResults, Q: int) -> np.ndarray:
    """Median per-sample best-so-far at every query count 1..Q."""
    curves = _step_curves(results, Q)
    if results.tuning == "sample":
        combined = curves.min(axis=1)  # (n_samples, Q)
        return np.array([median_lower(combined[:, q]) for q in range(Q)])
    per_config = np.array(
        [[median_lower(curves[:, c, q]) for q in range(Q)] for c in range(results.n_configs)]
    )
    return per_config.min(axis=0)


def convergence_queries(results: SweepResults, Q: int | None = None):
    """Smallest q whose median is within 10% of the median at Q.

    Returns infinity when the attack never gets there (median at Q is
    infinite).
    """
    Q = results.budget if Q is None else min(Q, results.budget)
    med_curve = _median_curve(results, Q)
    target = med_curve[Q - 1]
    if math.isinf(target):
        return math.inf
    threshold = 1.10 * target
    for q in range(1, Q + 1):
        if med_curve[q - 1] <= threshold:
            return q
    return math.inf


def robust_accuracy(results: SweepResults, eps: float, p: NormKind | None = None) -> float:
    """Fraction of samples not evaded within budget eps."""
    if p is not None and results.norm is not None and p is not results.norm:
        raise ValueError(f"results are for norm {results.norm}, asked for {p}")
    values = per_sample_values(results)
    return float(np.mean(values > eps))


def success_rate_at_eps(results: SweepResults, eps: float) -> float:
    """Fraction of samples evaded with perturbation size <= eps."""
    values = per_sample_values(results)
    return float(np.mean(values <= eps))


def timing_report(results: SweepResults) -> float:
    """Mean milliseconds per query: total wall time over total queries."""
    total_ms = sum(run.elapsed_ms for run in results.runs)
    total_q = sum(len(run.records) for run in results.runs)
    if total_q == 0:
        raise ValueError("timing report over empty results")
    return total_ms / total_q


@dataclass
class EvalReport:
    """Aggregated metrics for one sweep."""

    attack: str
    norm: str
    tuning: str
    budget: int
    median: float
    qd: list
    convergence_q: float
    ms_per_query: float
    robust_accuracy: dict = field(default_factory=dict)
    success_rates: dict = field(default_factory=dict)


def build_report(results: SweepResults, eps_list=()) -> EvalReport:
    return EvalReport(
        attack=results.attack,
        norm=str(results.norm) if results.norm else "",
        tuning=results.tuning,
        budget=results.budget,
        median=median_perturbation(results),
        qd=qd_curve(results),
        convergence_q=convergence_queries(results),
        ms_per_query=timing_report(results),
        robust_accuracy={e: robust_accuracy(results, e) for e in eps_list},
        success_rates={e: success_rate_at_eps(results, e) for e in eps_list},
    )


# ---------------------------------------------------------------------------
# Persistence


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _norm_to_json(x: float):
    return "inf" if math.isinf(x) else float(x)


def export_traces(results: SweepResults, path, measure_time: bool = False) -> None:
    """Write one JSONL record per query, atomically.

    By default ``t_ms`` is written as 0.0 so repeated runs produce
    byte-identical files; pass measure_time=True to persist the measured
    per-query milliseconds instead (in-memory timings are always kept).
    """
    lines = []
    for run in results.runs:
        t_ms = run.elapsed_ms / len(run.records) if (measure_time and run.records) else 0.0
        for rec in run.records:
            lines.append(
                json.dumps(
                    {
                        "sample": run.sample,
                        "config": run.config,
                        "attack": run.attack,
                        "q": rec.query,
                        "best_norm": _norm_to_json(rec.best_norm),
                        "loss": rec.loss,
                        "eps": rec.eps,
                        "t_ms": t_ms,
                    }
                )
            )
    _atomic_write(path, "\n".join(lines) + "\n" if lines else "")


def import_traces(path, tuning: str = "sample", budget: int | None = None,
                  norm: NormKind | None = None) -> SweepResults:
    """Rebuild SweepResults from a JSONL trace file.

    Tuning mode, budget and norm are not part of the record schema; they
    come from the caller (the CLI reads them from the run manifest).
    """
    grouped: dict = {}
    attack = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                si, ci, q = int(rec["sample"]), int(rec["config"]), int(rec["q"])
                best = math.inf if rec["best_norm"] == "inf" else float(rec["best_norm"])
                entry = TraceRecord(q, best, float(rec["loss"]), float(rec["eps"]))
                t_ms = float(rec["t_ms"])
                attack = rec["attack"]
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise TraceFormatError(f"{path}: line {lineno}: {exc}") from None
            grouped.setdefault((si, ci), []).append((entry, t_ms))
    if not grouped:
        raise TraceFormatError(f"{path}: no trace records")
    runs = []
    for (si, ci), entries in sorted(grouped.items()):
        entries.sort(key=lambda e: e[0].query)
        runs.append(
            RunRecord(
                sample=si,
                config=ci,
                attack=attack,
                records=[e[0] for e in entries],
                elapsed_ms=sum(e[1] for e in entries),
            )
        )
    n_samples = max(si for si, _ in grouped) + 1
    n_configs = max(ci for _, ci in grouped) + 1
    max_q = max(len(r.records) for r in runs)
    return SweepResults(
        attack=attack,
        tuning=tuning,
        budget=budget if budget is not None else max_q,
        n_samples=n_samples,
        n_configs=n_configs,
        runs=runs,
        norm=norm,
    )


def write_qd_csv(curve, path) -> None:
    """QD curve as CSV with columns q,median_norm."""
    lines = ["q,median_norm"]
    for q, med in curve:
        lines.append(f"{q},{_fmt(med)}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_report_csv(reports, path) -> None:
    """Report CSV with one row per sweep."""
    lines = ["attack,norm,tuning,Q,median,convergence_q,ms_per_query"]
    for r in reports:
        lines.append(
            f"{r.attack},{r.norm},{r.tuning},{r.budget},"
            f"{_fmt(r.median)},{_fmt(r.convergence_q)},{_fmt(r.ms_per_query)}"
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    return repr(x)
