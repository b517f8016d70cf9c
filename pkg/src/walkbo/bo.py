"""Bayesian optimization loop: EI over a seeded candidate set."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from walkbo.gp import GPState, KernelSpec, expected_improvement, fit_hyperparams
from walkbo.sim.walker import Bounds

log = logging.getLogger(__name__)

N_CANDIDATES = 10_000
N_LOCAL = 25
LOCAL_SCALE = 0.05


@dataclass
class TrialRecord:
    trial: int
    params: np.ndarray
    cost: float
    best_so_far: float
    seconds: float = 0.0
    failed: bool = False


@dataclass
class BOResult:
    kernel: str
    seed: int
    records: list = field(default_factory=list)
    env: str = "nominal"

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    @property
    def best_trace(self) -> np.ndarray:
        return np.array([r.best_so_far for r in self.records])

    def trials_to(self, threshold: float) -> int | None:
        """First trial (1-based) whose cost is below ``threshold``."""
        hit = np.flatnonzero(self.costs < threshold)
        return int(hit[0]) + 1 if hit.size else None


def candidate_set(bounds: Bounds, observed: np.ndarray, rng: np.random.Generator,
                  n_random: int = N_CANDIDATES, n_local: int = N_LOCAL,
                  local_scale: float = LOCAL_SCALE) -> np.ndarray:
    """Uniform points in the box plus Gaussian perturbations of each observed point."""
    parts = [bounds.uniform(rng, n_random)]
    if observed is not None and len(observed) and n_local > 0:
        width = bounds.hi - bounds.lo
        for x in np.atleast_2d(observed):
            local = x + local_scale * width * rng.standard_normal((n_local, bounds.dim))
            parts.append(np.clip(local, bounds.lo, bounds.hi))
    return np.vstack(parts)


def acquire_next(gp: GPState, candidates: np.ndarray, best: float | None = None) -> tuple[int, np.ndarray]:
    """Index of the EI maximizer among ``candidates`` (lowest index on ties) and all EI values."""
    candidates = np.atleast_2d(candidates)
    if candidates.shape[0] == 0:
        raise ValueError("empty candidate set")
    if best is None:
        best = float(gp.y.min()) if gp.n else 0.0
    mu, var = gp.predict(candidates)
    ei = expected_improvement(mu, var, best)
    return int(np.argmax(ei)), ei


def bo_run(objective: Callable[[np.ndarray], float], kernel: KernelSpec, bounds: Bounds,
           budget: int, seed: int, failure_cost: float = 100.0, n_candidates: int = N_CANDIDATES,
           fit_starts: int = 3, env: str = "nominal",
           on_trial: Callable[[TrialRecord], None] | None = None) -> BOResult:
    """Minimize ``objective`` with exactly ``budget`` evaluations.

    The first point is uniform in ``bounds``; later points maximize EI of a
    median-centered GP whose hyperparameters are refit every trial.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if kernel.feature_range is None:
        kernel = kernel.with_range(bounds)
    rng = np.random.default_rng(seed)
    result = BOResult(kernel.kind, seed, env=env)
    X: list[np.ndarray] = []
    y: list[float] = []
    hyper = None
    best = np.inf

    for trial in range(1, budget + 1):
        t0 = time.perf_counter()
        if trial == 1:
            x = bounds.uniform(rng, 1)[0]
        else:
            gp = GPState(np.array(X), np.array(y), replace(kernel, hyper=hyper), center=True)
            fit = fit_hyperparams(gp, seed=int(rng.integers(2**31)), n_starts=fit_starts)
            if np.isfinite(fit.lml):
                # carry fitted values forward; before the first fit the
                # defaults are rebuilt from the current cost variance
                hyper = fit.hyper
            gp.set_hyper(fit.hyper)
            cands = candidate_set(bounds, np.array(X), rng, n_random=n_candidates)
            idx, _ = acquire_next(gp, cands, best=float(np.min(y)))
            x = cands[idx]

        failed = False
        try:
            cost = float(objective(x))
            if not np.isfinite(cost):
                raise FloatingPointError("objective returned a non-finite cost")
        except Exception as exc:  # noqa: BLE001 - any objective failure is recorded, not raised
            log.warning("trial %d failed (%s); recording cost %g", trial, exc, failure_cost)
            cost, failed = failure_cost, True
        X.append(np.array(x, dtype=float))
        y.append(cost)
        best = min(best, cost)
        rec = TrialRecord(trial, X[-1], cost, best, time.perf_counter() - t0, failed)
        result.records.append(rec)
        if on_trial is not None:
            on_trial(rec)
    return result


RESULT_COLUMNS = ("run_seed", "env", "kernel", "trial")


def write_results(results, path, dim: int):
    """One row per trial: run_seed, env, kernel, trial, param_0.., cost, best_so_far."""
    header = list(RESULT_COLUMNS) + [f"param_{i}" for i in range(dim)] + ["cost", "best_so_far"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for res in results:
            for r in res.records:
                w.writerow([res.seed, res.env, res.kernel, r.trial, *(repr(float(v)) for v in r.params),
                            repr(float(r.cost)), repr(float(r.best_so_far))])


def read_results(path) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        cols = reader.fieldnames or []
        missing = [c for c in RESULT_COLUMNS + ("cost", "best_so_far") if c not in cols]
        if missing:
            raise ValueError(f"{path}: not a results file (missing {', '.join(missing)})")
        pcols = [c for c in cols if c.startswith("param_")]
        out = []
        for row in reader:
            out.append({
                "run_seed": int(row["run_seed"]),
                "env": row["env"] or "nominal",
                "kernel": row["kernel"],
                "trial": int(row["trial"]),
                "params": [float(row[c]) for c in pcols],
                "cost": float(row["cost"]),
                "best_so_far": float(row["best_so_far"]),
            })
    return out
