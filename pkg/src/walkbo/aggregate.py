"""Convergence tables from BO results files."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

Z95 = 1.959963984540054


class AggregateError(ValueError):
    pass


@dataclass(frozen=True)
class Row:
    kernel: str
    trial: int
    n: int
    mean_best: float
    ci_half: float
    ci_flag: str
    frac_below: float


def runs_by_kernel(rows: list[dict]) -> dict:
    """kernel -> {(run_seed, env): best_so_far trace ordered by trial}."""
    traces: dict = defaultdict(dict)
    for r in rows:
        traces[r["kernel"]].setdefault((r["run_seed"], r.get("env", "")), []).append(
            (r["trial"], r["best_so_far"], r["cost"]))
    out = {}
    for kernel, runs in traces.items():
        out[kernel] = {}
        for key, items in runs.items():
            items.sort()
            trials = [t for t, _, _ in items]
            if trials != list(range(1, len(trials) + 1)):
                raise AggregateError(f"{kernel} run {key}: trials are not 1..n")
            out[kernel][key] = (np.array([b for _, b, _ in items]), np.array([c for _, _, c in items]))
    return out


def check_budget(runs: dict) -> int:
    budgets = {len(tr) for per_kernel in runs.values() for tr, _ in per_kernel.values()}
    if not budgets:
        raise AggregateError("results are empty")
    if len(budgets) > 1:
        raise AggregateError(f"mixed budgets in results: {sorted(budgets)}")
    return budgets.pop()


def aggregate(rows: list[dict], threshold: float) -> list[Row]:
    """Per (kernel, trial): mean best-so-far, normal 95% half-width, fraction of runs below ``threshold``.

    A single run has no spread estimate; its half-width is reported as 0
    with ``ci_flag = "n=1"``.
    """
    runs = runs_by_kernel(rows)
    budget = check_budget(runs)
    out = []
    for kernel in sorted(runs):
        best = np.vstack([tr for tr, _ in runs[kernel].values()])
        n = best.shape[0]
        for t in range(budget):
            col = best[:, t]
            mean = float(np.mean(col))
            if n > 1:
                half = float(Z95 * np.std(col, ddof=1) / np.sqrt(n))
                flag = ""
            else:
                half, flag = 0.0, "n=1"
            out.append(Row(kernel, t + 1, n, mean, half, flag, float(np.mean(col < threshold))))
    return out


def trials_to_threshold(rows: list[dict], threshold: float) -> dict:
    """kernel -> list of first trial with cost below ``threshold`` (None if never), per run."""
    runs = runs_by_kernel(rows)
    out = {}
    for kernel, per in runs.items():
        hits = []
        for key in sorted(per, key=lambda k: (k[0], str(k[1]))):
            _, cost = per[key]
            idx = np.flatnonzero(cost < threshold)
            hits.append(int(idx[0]) + 1 if idx.size else None)
        out[kernel] = hits
    return out


def median_trials(hits: list, budget: int) -> float:
    """Median trials-to-threshold, counting runs that never got there as budget + 1."""
    return float(np.median([budget + 1 if h is None else h for h in hits]))


def success_fraction(hits: list, trial: int) -> float:
    return float(np.mean([h is not None and h <= trial for h in hits]))


COLUMNS = ("kernel", "trial", "n", "mean_best", "ci95_half", "ci_flag", "frac_below")


def to_csv(rows: list[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r.kernel, r.trial, r.n, repr(r.mean_best), repr(r.ci_half), r.ci_flag,
                    repr(r.frac_below)])
    return buf.getvalue()


def to_table(rows: list[Row]) -> str:
    head = f"{'kernel':<8} {'trial':>5} {'n':>4} {'mean best':>12} {'± 95%':>10} {'below':>6}"
    lines = [head, "-" * len(head)]
    for r in rows:
        half = f"{r.ci_half:10.4g}" if not r.ci_flag else f"{'0 (n=1)':>10}"
        lines.append(f"{r.kernel:<8} {r.trial:>5} {r.n:>4} {r.mean_best:12.5g} {half} {r.frac_below:6.2f}")
    return "\n".join(lines) + "\n"
