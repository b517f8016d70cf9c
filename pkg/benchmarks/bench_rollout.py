"""Rollout throughput with the numba kernels versus the plain Python fallback.

Each mode runs in its own interpreter because the JIT switch is read at
import time.  Both modes roll out the same Sobol batch; the script checks
that they agree and prints rollouts per second and the speedup.

    python3 benchmarks/bench_rollout.py [--n 2000] [--family raibert5] [--fallback-n 40]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from walkbo import datagen
from walkbo.sim import FAMILIES, SimConfig, rollout_many
from walkbo._jit import JIT_DISABLED
family, n, horizon = sys.argv[1], int(sys.argv[2]), float(sys.argv[3])
cfg = SimConfig(family=family, horizon=horizon,
                schedule=((4, 0.8), (4, 1.0), (1, 1.2)) if family == "extended" else ((1, 1.0),))
grid = datagen.sobol_grid(FAMILIES[family].bounds, n)
t0 = time.perf_counter()
rollout_many(grid[:2], cfg)        # compile (or warm) outside the timed region
warm = time.perf_counter() - t0
t0 = time.perf_counter()
out, _ = rollout_many(grid, cfg)
dt = time.perf_counter() - t0
json.dump({"jit": not JIT_DISABLED, "n": n, "seconds": dt, "warmup": warm,
           "summaries": out.tolist()}, sys.stdout)
"""


def run(mode_disabled: bool, family: str, n: int, horizon: float) -> dict:
    env = dict(os.environ, WALKBO_DISABLE_JIT="1" if mode_disabled else "0")
    res = subprocess.run([sys.executable, "-c", CHILD, family, str(n), str(horizon)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", default="raibert5", choices=("raibert5", "extended"))
    ap.add_argument("--n", type=int, default=2000, help="rollouts timed with the JIT")
    ap.add_argument("--fallback-n", type=int, default=40, help="rollouts timed without the JIT")
    ap.add_argument("--horizon", type=float, default=3.5)
    args = ap.parse_args(argv)

    fast = run(False, args.family, args.n, args.horizon)
    slow = run(True, args.family, args.fallback_n, args.horizon)
    import numpy as np

    a = np.array(fast["summaries"])[: args.fallback_n]
    b = np.array(slow["summaries"])
    worst = float(np.max(np.abs(a - b))) if a.size else 0.0
    rate_fast = fast["n"] / fast["seconds"]
    rate_slow = slow["n"] / slow["seconds"]
    print(f"family {args.family}, horizon {args.horizon:g} s")
    print(f"{'mode':<10} {'rollouts':>9} {'seconds':>9} {'per s':>10} {'warm-up s':>10}")
    print(f"{'numba':<10} {fast['n']:>9} {fast['seconds']:>9.3f} {rate_fast:>10.1f} {fast['warmup']:>10.2f}")
    print(f"{'python':<10} {slow['n']:>9} {slow['seconds']:>9.3f} {rate_slow:>10.1f} {slow['warmup']:>10.2f}")
    print(f"speedup {rate_fast / rate_slow:.0f}x; max |difference| over shared rows {worst:.3g}")
    return 0 if worst < 1e-6 else 1


if __name__ == "__main__":
    sys.exit(main())
