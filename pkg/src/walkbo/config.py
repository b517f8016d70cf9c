"""Experiment configuration files (INI syntax).

Every key is optional except where noted; unknown sections or keys are
rejected so that typos surface as errors instead of silently using defaults.
Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from walkbo import costs
from walkbo.gp import KERNELS, canonical_kind
from walkbo.nnet import TrainConfig
from walkbo.sim.walker import FAMILIES, Bounds, PerturbationFactors, SimConfig, perturb, rough_ground


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path + (f", line {line}" if line is not None else "") + ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


# SimConfig fields settable from the [sim] section
SIM_FLOAT_KEYS = ("torso_mass", "torso_inertia", "com_offset", "leg_length", "z_des", "theta_des",
                  "k_pz", "k_dz", "timestep", "theta_max", "gravity", "init_speed_ratio",
                  "swing_apex", "swing_retraction", "z_min")

SCHEMA = {
    "experiment": ("family", "kernels", "cost", "v_tgt", "seeds", "budget", "perturbation_seeds",
                   "ground_seeds", "pairing", "candidates", "fit_starts", "bounds", "ground_extent"),
    "sim": ("schedule", "horizon", "bo_horizon") + SIM_FLOAT_KEYS,
    "data": ("points",),
    "train": ("score_hidden", "traj_hidden", "epochs", "batch_size", "lr", "lr_decay", "decay_every",
              "momentum", "val_fraction", "seed"),
    "paths": ("dataset", "score_model", "traj_model", "results"),
}

DEFAULT_HORIZON = {"raibert5": 3.5, "extended": 5.0}
DEFAULT_POINTS = {"raibert5": 5000, "extended": 20000}
DEFAULT_SCHEDULE = {"raibert5": ((1, 1.0),), "extended": ((4, 0.8), (4, 1.0), (1, 1.2))}


@dataclass(frozen=True)
class Environment:
    """One BO test condition: perturbation seed and ground seed (0 means none / flat)."""

    perturbation_seed: int = 0
    ground_seed: int = 0

    @property
    def label(self) -> str:
        if self.perturbation_seed == 0 and self.ground_seed == 0:
            return "nominal"
        return f"p{self.perturbation_seed}-g{self.ground_seed}"


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "raibert5"
    kernels: tuple = ("SE",)
    cost: str = "atrias"
    v_tgt: tuple | None = None
    seeds: tuple = (0,)
    budget: int = 20
    perturbation_seeds: tuple = ()
    ground_seeds: tuple = ()
    pairing: str = "paired"
    candidates: int = 10_000
    fit_starts: int = 3
    bounds: Bounds | None = None
    ground_extent: float = 40.0
    schedule: tuple | None = None
    horizon: float | None = None
    bo_horizon: float | None = None
    sim_overrides: tuple = ()
    points: int | None = None
    score_hidden: tuple = (64, 32, 16)
    traj_hidden: tuple = (256, 128, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: Path = Path("dataset.csv")
    score_model: Path = Path("score_model.txt")
    traj_model: Path = Path("traj_model.txt")
    results: Path = Path("results.csv")

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if not self.seeds:
            raise ConfigError("seed list is empty")
        if not self.kernels:
            raise ConfigError("kernel list is empty")
        if self.budget < 1:
            raise ConfigError("budget must be at least 1")
        if self.pairing not in ("paired", "product"):
            raise ConfigError("pairing must be 'paired' or 'product'")
        if self.cost not in costs.KINDS:
            raise ConfigError(f"unknown cost {self.cost!r}")

    # -- derived settings -------------------------------------------------------

    @property
    def search_bounds(self) -> Bounds:
        return self.bounds or FAMILIES[self.family].bounds

    @property
    def target_schedule(self) -> tuple:
        return self.schedule or DEFAULT_SCHEDULE[self.family]

    @property
    def data_horizon(self) -> float:
        return self.horizon or DEFAULT_HORIZON[self.family]

    @property
    def objective_horizon(self) -> float:
        return self.bo_horizon or self.data_horizon

    @property
    def n_points(self) -> int:
        return self.points or DEFAULT_POINTS[self.family]

    def cost_spec(self) -> costs.CostSpec:
        if self.v_tgt is not None:
            v = self.v_tgt
        else:
            v = tuple(s for _, s in self.target_schedule)
        if self.cost == "smooth" or len(v) == 1:
            v = v[0]
        return costs.CostSpec.default(self.cost, v)

    def sim_config(self, horizon: float | None = None, env: Environment = Environment()) -> SimConfig:
        base = SimConfig(family=self.family, schedule=self.target_schedule,
                         horizon=horizon or self.data_horizon, **dict(self.sim_overrides))
        if env.ground_seed:
            base = replace(base, ground=rough_ground(env.ground_seed, self.ground_extent))
        if env.perturbation_seed:
            base = perturb(base, env.perturbation_seed)
        return base

    def environments(self) -> list[Environment]:
        p = self.perturbation_seeds or (0,)
        g = self.ground_seeds or (0,)
        if len(p) == 1 and len(g) > 1:
            p = p * len(g)
        if len(g) == 1 and len(p) > 1:
            g = g * len(p)
        if len(p) != len(g):
            raise ConfigError("perturbation_seeds and ground_seeds must have equal length")
        return [Environment(int(a), int(b)) for a, b in zip(p, g)]

    def cells(self) -> list[tuple[str, int, Environment]]:
        """(kernel, run seed, environment) for every BO run, in output order."""
        envs = self.environments()
        if self.pairing == "paired" and len(envs) > 1:
            if len(envs) != len(self.seeds):
                raise ConfigError("paired mode needs one environment per seed")
            pairs = list(zip(self.seeds, envs))
        else:
            pairs = [(s, e) for e in envs for s in self.seeds]
        return [(k, s, e) for k in self.kernels for s, e in pairs]

    def model_path(self, kernel: str) -> Path | None:
        return {"SE": None, "asymNN": self.score_model, "trajNN": self.traj_model}[kernel]


# -- parsing -------------------------------------------------------------------


def _key_lines(text: str) -> dict:
    """(section, key) -> line number, and (section, None) -> header line."""
    out = {}
    section = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out[(section, None)] = i
            continue
        for sep in ("=", ":"):
            if sep in line:
                out[(section, line.split(sep, 1)[0].strip().lower())] = i
                break
    return out


def parse_int_list(text: str) -> tuple:
    """Comma-separated non-negative integers; ``a-b`` expands to the inclusive range."""
    out = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        a, dash, b = part.partition("-")
        if dash:
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError(f"empty range {part!r}")
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return tuple(out)


def parse_float_list(text: str) -> tuple:
    return tuple(float(p) for p in text.replace(",", " ").split())


def parse_schedule(text: str) -> tuple:
    """``steps:speed`` pairs separated by commas, e.g. ``4:0.8, 4:1.0, 1:1.2``."""
    out = []
    for part in (p.strip() for p in text.split(",")):
        if not part:
            continue
        n, _, v = part.partition(":")
        if not _:
            raise ValueError(f"schedule entry {part!r} is not steps:speed")
        out.append((int(n), float(v)))
    if not out:
        raise ValueError("schedule is empty")
    return tuple(out)


def load_bounds(path: Path) -> Bounds:
    """Bounds file: one ``low high`` pair per line, ``#`` comments allowed."""
    low, high = [], []
    with open(path) as f:
        lines = f.read().splitlines()
    for i, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise ConfigError("expected 'low high'", path, i)
        try:
            lo, hi = float(parts[0]), float(parts[1])
        except ValueError:
            raise ConfigError("bounds must be numbers", path, i) from None
        if not lo < hi:
            raise ConfigError("low must be below high", path, i)
        low.append(lo)
        high.append(hi)
    if not low:
        raise ConfigError("bounds file is empty", path, max(len(lines), 1))
    return Bounds(tuple(low), tuple(high))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse_config(text, path)


def parse_config(text: str, path=None) -> ExperimentConfig:
    base_dir = Path(path).parent if path is not None else Path(".")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(path or "<config>"))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside any [section]", path, exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(exc.message.split(": ", 1)[-1] if hasattr(exc, "message") else str(exc),
                          path, exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ConfigError("unparseable line", path, line) from None

    lines = _key_lines(text)
    if not cp.sections():
        raise ConfigError("config has no sections", path, 1)
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", path, lines.get((sec, None)))
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", path, lines.get((sec, key)))

    def get(sec, key, conv, default=None):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key).strip()
        line = lines.get((sec, key))
        if raw == "":
            raise ConfigError(f"{key} is empty", path, line)
        try:
            return conv(raw)
        except ConfigError:
            raise
        except (ValueError, OSError) as exc:
            raise ConfigError(f"bad value for {key}: {exc}", path, line) from None

    def resolve(p: str) -> Path:
        q = Path(os.path.expanduser(p))
        return q if q.is_absolute() else base_dir / q

    def kernels(raw):
        ks = tuple(canonical_kind(k.strip()) for k in raw.split(",") if k.strip())
        if len(set(ks)) != len(ks):
            raise ValueError("kernel listed twice")
        return ks

    def seed_list(raw):
        s = parse_int_list(raw)
        if any(v < 0 for v in s):
            raise ValueError("seeds must be non-negative")
        return s

    def positive_int(raw):
        v = int(raw)
        if v < 1:
            raise ValueError("must be a positive integer")
        return v

    def positive_float(raw):
        v = float(raw)
        if not v > 0:
            raise ValueError("must be positive")
        return v

    def bounds_file(raw):
        p = resolve(raw)
        if not p.exists():
            raise ValueError(f"bounds file {p} not found")
        return load_bounds(p)

    def hidden(raw):
        h = tuple(int(v) for v in raw.replace(",", " ").split())
        if not h or any(v < 1 for v in h):
            raise ValueError("hidden layer widths must be positive integers")
        return h

    kw = {}
    e = "experiment"
    family = get(e, "family", str, "raibert5")
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r} (choose {', '.join(FAMILIES)})", path,
                          lines.get((e, "family")))
    kw["family"] = family
    kw["kernels"] = get(e, "kernels", kernels, ("SE",))
    cost = get(e, "cost", str, "atrias")
    if cost not in costs.KINDS:
        raise ConfigError(f"unknown cost {cost!r} (choose {', '.join(costs.KINDS)})", path,
                          lines.get((e, "cost")))
    kw["cost"] = cost
    kw["v_tgt"] = get(e, "v_tgt", parse_float_list)
    kw["seeds"] = get(e, "seeds", seed_list, (0,))
    kw["budget"] = get(e, "budget", positive_int, 20)
    kw["perturbation_seeds"] = get(e, "perturbation_seeds", seed_list, ())
    kw["ground_seeds"] = get(e, "ground_seeds", seed_list, ())
    kw["pairing"] = get(e, "pairing", str, "paired")
    kw["candidates"] = get(e, "candidates", positive_int, 10_000)
    kw["fit_starts"] = get(e, "fit_starts", positive_int, 3)
    kw["bounds"] = get(e, "bounds", bounds_file)
    kw["ground_extent"] = get(e, "ground_extent", positive_float, 40.0)

    s = "sim"
    kw["schedule"] = get(s, "schedule", parse_schedule)
    kw["horizon"] = get(s, "horizon", positive_float)
    kw["bo_horizon"] = get(s, "bo_horizon", positive_float)
    kw["sim_overrides"] = tuple((k, get(s, k, float)) for k in SIM_FLOAT_KEYS if cp.has_option(s, k))

    kw["points"] = get("data", "points", positive_int)

    t = "train"
    kw["score_hidden"] = get(t, "score_hidden", hidden, (64, 32, 16))
    kw["traj_hidden"] = get(t, "traj_hidden", hidden, (256, 128, 64))
    tkw = {}
    for f in fields(TrainConfig):
        if f.name != "loss" and cp.has_option(t, f.name):
            tkw[f.name] = get(t, f.name, int if f.type in ("int", int) else float)
    try:
        kw["train"] = TrainConfig(**tkw)
    except ValueError as exc:
        raise ConfigError(str(exc), path, lines.get((t, None))) from None

    for key in SCHEMA["paths"]:
        v = get("paths", key, resolve)
        if v is not None:
            kw[key] = v
        else:
            kw[key] = base_dir / ExperimentConfig.__dataclass_fields__[key].default

    try:
        cfg = ExperimentConfig(**kw)
        # probe the derived objects so that bad combinations fail at load time
        cfg.environments()
        cfg.cells()
        sim = cfg.sim_config()
        if cfg.bounds is not None and cfg.bounds.dim != FAMILIES[cfg.family].dim:
            raise ConfigError(f"bounds file has {cfg.bounds.dim} rows, family {cfg.family} needs "
                              f"{FAMILIES[cfg.family].dim}", path, lines.get((e, "bounds")))
        cfg.cost_spec()
        t_max = max(cfg.search_bounds.high[2::3][:FAMILIES[cfg.family].n_phases])
        for key, h in (("horizon", cfg.data_horizon), ("bo_horizon", cfg.objective_horizon)):
            if h < t_max:
                raise ConfigError(f"{key} {h:g} s is shorter than the longest step time {t_max:g} s",
                                  path, lines.get((s, key)))
        del sim
    except ConfigError as exc:
        if exc.path is None and path is not None:
            raise ConfigError(str(exc), path) from None
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
    return cfg


__all__ = ["ConfigError", "Environment", "ExperimentConfig", "KERNELS", "PerturbationFactors",
           "load_bounds", "load_config", "parse_config", "parse_int_list", "parse_schedule"]
