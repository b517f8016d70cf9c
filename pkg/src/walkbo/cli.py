"""Command-line front end: ``walkbo {generate,train,bo,aggregate}``.

Exit codes: 0 success, 2 configuration or usage error, 3 failure while running.
The worker count for rollouts and BO runs comes from ``WALKBO_WORKERS``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from walkbo import aggregate as agg
from walkbo import bo, costs, datagen, nnet
from walkbo.config import ConfigError, Environment, ExperimentConfig, load_config
from walkbo.gp import KERNELS, KernelSpec, canonical_kind
from walkbo.sim.walker import rollout

log = logging.getLogger("walkbo")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
WORKERS_ENV = "WALKBO_WORKERS"


class CommandError(RuntimeError):
    """Failure while running a command (exit code 3)."""


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1").strip() or "1"
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1")
    return n


def _prepare_out(path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# -- generate -----------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = load_config(args.config)
    out = _prepare_out(args.out or cfg.dataset)
    grid = datagen.sobol_grid(cfg.search_bounds, cfg.n_points)
    ds = datagen.generate_dataset(grid, cfg.sim_config(), cfg.cost_spec(), cfg.search_bounds,
                                  workers=worker_count())
    digest = ds.write(out)
    c_walk = ds.c_walk
    print(f"rows          {ds.n}")
    print(f"dimension     {ds.d}")
    print(f"walk fraction {ds.walk_fraction:.4f}")
    print(f"below {cfg.cost_spec().threshold:g}     {np.mean(ds.cost < cfg.cost_spec().threshold):.4f}")
    print(f"c_walk        {'undefined (no walking rows)' if c_walk is None else f'{c_walk:.6g}'}")
    print(f"wrote {out}")
    print(f"sha256 {digest}")
    return EXIT_OK


# -- train --------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    data_path = Path(cfg.dataset)
    if not data_path.exists():
        raise CommandError(f"dataset {data_path} not found; run 'walkbo generate' first")
    ds = datagen.Dataset.read(data_path)
    if ds.d != cfg.search_bounds.dim:
        raise CommandError(f"dataset has {ds.d} parameters, config family needs {cfg.search_bounds.dim}")
    if args.target == "score":
        if ds.score is None:
            raise CommandError("dataset has no score column (no walking rows, c_walk undefined); "
                               "the score target cannot be trained")
        y, hidden, default_out = ds.score, cfg.score_hidden, cfg.score_model
    else:
        y, hidden, default_out = ds.features(), cfg.traj_hidden, cfg.traj_model
    tc = cfg.train if args.seed is None else replace(cfg.train, seed=args.seed)
    net = nnet.train(ds.params, y, list(hidden), tc)
    out = _prepare_out(args.out or default_out)
    digest = net.save(out)
    tr, va = net.split
    yy = y if y.ndim > 1 else y[:, None]
    print(f"target        {args.target} ({net.n_out} output{'s' if net.n_out > 1 else ''})")
    print(f"layers        {'-'.join(str(s) for s in net.sizes)}")
    print(f"train L1      {nnet.l1(net, ds.params[tr], yy[tr]):.6g}  (normalized {net.history[-1][0]:.4g})")
    print(f"val L1        {nnet.l1(net, ds.params[va], yy[va]):.6g}  (normalized {net.history[-1][1]:.4g})")
    print(f"wrote {out}")
    print(f"sha256 {digest}")
    return EXIT_OK


# -- bo -----------------------------------------------------------------------------


@lru_cache(maxsize=4)
def _load_net(path: str, mtime: float) -> nnet.MLP:
    return nnet.MLP.load(path)


def _kernel_for(cfg: ExperimentConfig, kind: str) -> KernelSpec:
    path = cfg.model_path(kind)
    if path is None:
        return KernelSpec(kind)
    p = Path(path)
    return KernelSpec(kind, net=_load_net(str(p), p.stat().st_mtime))


def run_cell(cfg: ExperimentConfig, kind: str, seed: int, env: Environment) -> bo.BOResult:
    """One BO run: kernel ``kind`` from seed ``seed`` in environment ``env``."""
    sim = cfg.sim_config(cfg.objective_horizon, env)
    spec = cfg.cost_spec()

    def objective(x):
        return costs.evaluate(rollout(x, sim), spec)

    def progress(rec):
        log.info("%s seed=%d env=%s trial=%d cost=%.6g best=%.6g (%.2fs)", kind, seed, env.label,
                 rec.trial, rec.cost, rec.best_so_far, rec.seconds)

    return bo.bo_run(objective, _kernel_for(cfg, kind), cfg.search_bounds, cfg.budget, seed,
                     failure_cost=spec.worst_case, n_candidates=cfg.candidates,
                     fit_starts=cfg.fit_starts, env=env.label, on_trial=progress)


def _cell_task(payload):
    cfg, kind, seed, env = payload
    try:
        return run_cell(cfg, kind, seed, env), None
    except Exception as exc:  # noqa: BLE001 - reported by the parent, matrix continues
        return None, f"{type(exc).__name__}: {exc}"


def select_cells(cfg: ExperimentConfig, kernel: str | None, seed: int | None) -> list:
    cells = cfg.cells()
    if kernel is not None:
        cells = [c for c in cells if c[0] == kernel]
    if seed is not None:
        cells = [c for c in cells if c[1] == seed]
    if not cells:
        raise ConfigError("no BO runs left after applying --kernel/--seed")
    return cells


def cmd_bo(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.budget is not None:
        overrides["budget"] = args.budget
    kernel = canonical_kind(args.kernel) if args.kernel else None
    if kernel is not None and kernel not in cfg.kernels:
        overrides["kernels"] = (kernel,)
    if args.seed is not None and args.seed not in cfg.seeds:
        if cfg.pairing == "paired" and len(cfg.environments()) > 1:
            raise ConfigError(f"seed {args.seed} has no paired environment in the config")
        overrides["seeds"] = (args.seed,)
    if overrides:
        cfg = replace(cfg, **overrides)
    cells = select_cells(cfg, kernel, args.seed)
    for kind in sorted({c[0] for c in cells}):
        path = cfg.model_path(kind)
        if path is not None and not Path(path).exists():
            raise ConfigError(f"{kind} needs the model file {path}; run 'walkbo train' first")

    workers = worker_count()
    payloads = [(cfg, k, s, e) for k, s, e in cells]
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(_cell_task, payloads))
    else:
        outcomes = [_cell_task(p) for p in payloads]

    results, failures = [], []
    for (k, s, e), (res, err) in zip(cells, outcomes):
        if err is None:
            results.append(res)
        else:
            failures.append((k, s, e.label, err))
            log.error("BO run %s seed=%d env=%s failed: %s", k, s, e.label, err)

    out = _prepare_out(args.out or cfg.results)
    bo.write_results(results, out, cfg.search_bounds.dim)
    threshold = cfg.cost_spec().threshold
    print(f"{len(results)} runs, {sum(len(r.records) for r in results)} evaluations -> {out}")
    for kind in cfg.kernels:
        runs = [r for r in results if r.kernel == kind]
        if not runs:
            continue
        hits = [r.trials_to(threshold) for r in runs]
        print(f"{kind:<7} below {threshold:g}: {agg.success_fraction(hits, cfg.budget):.2f} of runs, "
              f"median trials {agg.median_trials(hits, cfg.budget):g}")
    if failures:
        print(f"{len(failures)} run(s) failed:", file=sys.stderr)
        for k, s, e, err in failures:
            print(f"  {k} seed={s} env={e}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- aggregate ------------------------------------------------------------------------


def cmd_aggregate(args) -> int:
    if args.threshold is not None:
        threshold = args.threshold
    elif args.config is not None:
        threshold = load_config(args.config).cost_spec().threshold
    else:
        threshold = costs.WALK_THRESHOLD[args.cost]
    path = args.results
    if path is None:
        if args.config is None:
            raise ConfigError("give a results file or --config")
        path = load_config(args.config).results
    path = Path(path)
    if not path.exists():
        raise CommandError(f"results file {path} not found")
    try:
        rows = bo.read_results(path)
        table = agg.aggregate(rows, threshold)
    except (ValueError, KeyError) as exc:
        raise CommandError(str(exc)) from None
    out = _prepare_out(args.out or path.with_name(path.stem + "_summary.csv"))
    out.write_text(agg.to_csv(table))
    sys.stdout.write(agg.to_table(table))
    print(f"wrote {out}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="walkbo", description="Learned-kernel Bayesian optimization for a planar walker.")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="roll out a Sobol grid and write the dataset CSV")
    g.add_argument("--config", required=True)
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a feature network on the dataset")
    t.add_argument("--config", required=True)
    t.add_argument("--target", choices=("score", "traj"), required=True,
                   help="score: 1 output for asymNN, traj: 8 summaries for trajNN")
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bo", help="run the kernel x seed x environment matrix")
    b.add_argument("--config", required=True)
    b.add_argument("--seed", type=int, help="run only this seed")
    b.add_argument("--budget", type=int, help="evaluations per run")
    b.add_argument("--kernel", choices=KERNELS, type=lambda s: canonical_kind(s) if s.lower() in
                   {k.lower() for k in KERNELS} else s, help="run only this kernel")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bo)

    a = sub.add_parser("aggregate", help="convergence table from a results CSV")
    a.add_argument("results", nargs="?")
    a.add_argument("--config")
    a.add_argument("--threshold", type=float, help="walking threshold (default from the cost)")
    a.add_argument("--cost", choices=costs.KINDS, default="atrias",
                   help="cost whose threshold to use without --config")
    a.add_argument("--out")
    a.set_defaults(func=cmd_aggregate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if getattr(args, "budget", None) is not None and args.budget < 1:
        print("walkbo: error: --budget must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"walkbo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("command failed", exc_info=True)
        print(f"walkbo: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
