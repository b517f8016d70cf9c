"""Training-data pipeline: Sobol grid, batch rollouts, dataset CSV."""

from __future__ import annotations

import hashlib
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from walkbo import costs
from walkbo.sim import _core
from walkbo.sim.walker import Bounds, SimConfig, TrajectorySummary, rollout_many

FORMAT = "walkbo-dataset"
FORMAT_VERSION = 1
SUMMARY_COLUMNS = ("t_walk", "energy", "x_torso", "z_torso", "theta_torso", "x_com", "z_com",
                   "v_mean", "fell", "x_fall")
MAX_SOBOL_DIM = 21201


def sobol_grid(bounds: Bounds, n: int) -> np.ndarray:
    """First ``n`` unscrambled Sobol points after the origin, mapped into ``bounds``."""
    if n < 1:
        raise ValueError("need at least one grid point")
    if bounds.dim > MAX_SOBOL_DIM:
        raise ValueError(f"Sobol direction numbers only cover {MAX_SOBOL_DIM} dimensions")
    eng = qmc.Sobol(bounds.dim, scramble=False)
    with warnings.catch_warnings():
        # balance warning for non power-of-two n
        warnings.simplefilter("ignore", UserWarning)
        u = eng.random(n + 1)[1:]
    return bounds.scale(u)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class Dataset:
    header: dict
    params: np.ndarray
    summaries: np.ndarray
    cost: np.ndarray
    score: np.ndarray | None

    @property
    def n(self) -> int:
        return self.params.shape[0]

    @property
    def d(self) -> int:
        return self.params.shape[1]

    @property
    def fell(self) -> np.ndarray:
        return self.summaries[:, _core.S_FELL] > 0.5

    @property
    def c_walk(self) -> float | None:
        v = self.header.get("c_walk", "undefined")
        return None if v == "undefined" else float(v)

    @property
    def walk_fraction(self) -> float:
        return float(np.mean(~self.fell)) if self.n else 0.0

    def features(self) -> np.ndarray:
        """The 8 trajectory-summary components per row."""
        return self.summaries[:, :8]

    def write(self, path) -> str:
        lines = [f"# format={FORMAT}", f"# version={FORMAT_VERSION}"]
        for k, v in self.header.items():
            lines.append(f"# {k}={v}")
        cols = [f"param_{i}" for i in range(self.d)] + list(SUMMARY_COLUMNS) + ["cost"]
        if self.score is not None:
            cols.append("score")
        lines.append(",".join(cols))
        for i in range(self.n):
            row = [_fmt(v) for v in self.params[i]]
            s = self.summaries[i]
            row += [_fmt(v) for v in s[:8]]
            row += ["1" if s[_core.S_FELL] > 0.5 else "0", _fmt(s[_core.S_XFALL]), _fmt(self.cost[i])]
            if self.score is not None:
                row.append(_fmt(self.score[i]))
            lines.append(",".join(row))
        text = "\n".join(lines) + "\n"
        with open(path, "w") as f:
            f.write(text)
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def read(cls, path) -> "Dataset":
        header = {}
        with open(path) as f:
            lines = f.read().splitlines()
        i = 0
        while i < len(lines) and lines[i].startswith("#"):
            k, _, v = lines[i][1:].strip().partition("=")
            header[k] = v
            i += 1
        if header.pop("format", None) != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} file")
        header.pop("version", None)
        cols = lines[i].split(",")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[i + 1:] if ln],
                        dtype=float).reshape(-1, len(cols))
        d = sum(c.startswith("param_") for c in cols)
        params = data[:, :d]
        summaries = data[:, d:d + len(SUMMARY_COLUMNS)]
        cost = data[:, cols.index("cost")]
        score = data[:, cols.index("score")] if "score" in cols else None
        return cls(header, params, summaries, cost, score)


def _rollout_chunk(args):
    params, cfg = args
    return rollout_many(params, cfg)


def run_rollouts(grid: np.ndarray, cfg: SimConfig, workers: int = 1, chunk: int = 512):
    """Rollouts for every grid row, in grid order."""
    grid = np.atleast_2d(grid)
    if workers <= 1 or grid.shape[0] <= chunk:
        return rollout_many(grid, cfg)
    pieces = [(grid[i:i + chunk], cfg) for i in range(0, grid.shape[0], chunk)]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_rollout_chunk, pieces))
    return np.vstack([p[0] for p in parts]), np.vstack([p[1] for p in parts])


def generate_dataset(grid, cfg: SimConfig, cost: costs.CostSpec, bounds: Bounds | None = None,
                     workers: int | None = None) -> Dataset:
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[0] == 0:
        raise ValueError("grid is empty")
    bounds = bounds or cfg.controller.bounds
    workers = workers if workers is not None else int(os.environ.get("WALKBO_WORKERS", "1"))
    summaries, speeds = run_rollouts(grid, cfg, workers)
    cost_col = np.array([costs.evaluate(TrajectorySummary.from_array(s, sp), cost)
                         for s, sp in zip(summaries, speeds)])
    walking = summaries[:, _core.S_FELL] < 0.5
    header = {
        "d": grid.shape[1],
        "family": cfg.family,
        "bounds_low": " ".join(_fmt(v) for v in bounds.low),
        "bounds_high": " ".join(_fmt(v) for v in bounds.high),
        "cost_kind": cost.kind,
        "v_tgt": " ".join(_fmt(v) for v in np.atleast_1d(cost.v_tgt)),
        "sim_digest": cfg.digest(),
        "horizon": _fmt(cfg.horizon),
        "rows": grid.shape[0],
        "walk_fraction": _fmt(walking.mean()),
    }
    if walking.any():
        c_walk = float(np.mean(cost_col[walking]))
        header["c_walk"] = _fmt(c_walk)
        score = costs.score_transform(cost_col, c_walk)
    else:
        header["c_walk"] = "undefined"
        score = None
    return Dataset(header, grid, summaries, cost_col, score)
