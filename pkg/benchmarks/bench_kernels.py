"""Time the compiled and numpy kernel backends on the semicircle datum.

Usage: python3 benchmarks/bench_kernels.py [--sizes 64 128 256] [--steps 200] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from neumann_mcf import backend
from neumann_mcf.evolve import SolverConfig
from neumann_mcf.grid import GridSpec
from neumann_mcf.initial_data import DiskSet, build_g


def _best(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(sizes, steps: int, repeat: int, eps: float = 1e-3) -> list[dict]:
    kernels = backend.available()
    rows = []
    for n in sizes:
        grid = GridSpec(1.0, 1.0, n, n + 1)
        u = np.array(build_g(DiskSet((0.5, 0.0), 0.25), grid).field.values)
        dt = SolverConfig(eps, 1.0, 1.0).max_dt(grid)
        ref = None
        for name, k in sorted(kernels.items()):
            for scheme in ("flux", "sigma"):
                out = k.advance(u, grid.hx, grid.hy, eps, dt, steps, scheme)
                if scheme == "flux":
                    ref = out if ref is None else ref
                    diff = float(np.max(np.abs(out - ref)))
                else:
                    diff = float("nan")
                t_adv = _best(lambda: k.advance(u, grid.hx, grid.hy, eps, dt, steps, scheme), repeat)
                rows.append({"n": n, "backend": name, "kernel": f"advance[{scheme}]",
                             "us_per_step": 1e6 * t_adv / steps, "max_diff_vs_first": diff})
            t_diag = _best(lambda: [k.diagnostics(u, grid.hx, grid.hy, eps) for _ in range(20)], repeat)
            rows.append({"n": n, "backend": name, "kernel": "diagnostics", "us_per_step": 1e6 * t_diag / 20,
                         "max_diff_vs_first": float("nan")})
    return rows


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rows = bench(args.sizes, args.steps, args.repeat)
    print(f"{'n':>5} {'backend':>9} {'kernel':>16} {'us/call':>10} {'max |diff|':>11}")
    for r in rows:
        print(f"{r['n']:>5} {r['backend']:>9} {r['kernel']:>16} {r['us_per_step']:>10.1f} "
              f"{r['max_diff_vs_first']:>11.2e}")
    by = {(r["n"], r["backend"], r["kernel"]): r["us_per_step"] for r in rows}
    for n in args.sizes:
        if (n, "compiled", "advance[flux]") in by:
            print(f"n={n}: compiled advance[flux] speed-up x{by[(n, 'python', 'advance[flux]')] / by[(n, 'compiled', 'advance[flux]')]:.1f}")


if __name__ == "__main__":
    main()
