"""Compare the compiled kernel backend against the numpy/scipy fallback.

Backend choice happens at import time through ``AMGTHETA_BACKEND``, so
this script re-runs itself in a subprocess per backend and prints a
side-by-side table.  Timed pieces: the raw CSR kernels (matvec,
Gauss-Seidel sweep, transpose, matmat) and an end-to-end AMG solve.

Usage::

    python3 benchmarks/bench_backends.py [--n 192] [--theta 0.25] [--repeats 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time


def best_of(repeats: int, fn) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_worker(n: int, theta: float, repeats: int) -> None:
    from amgtheta import amg, sparse
    from amgtheta._backend import backend_name
    from amgtheta.pipeline import make_problem
    from amgtheta.problems import assemble

    inst = assemble(make_problem("poisson", n))
    a, b = inst.a, inst.b
    import numpy as np

    x = np.linspace(-1.0, 1.0, a.nrows)
    timings = {
        "spmv": best_of(repeats, lambda: sparse.spmv(a, x)),
        "gs_sweep": best_of(repeats, lambda: sparse.tri_sweep(a, x, b, 1)),
        "transpose": best_of(repeats, lambda: sparse.transpose(a)),
        "matmat": best_of(repeats, lambda: sparse.matmat(a, a)),
    }
    opts = amg.SolverOptions(theta=theta)

    def solve_once():
        h = amg.setup_hierarchy(a, opts)
        amg.solve(h, b)

    timings["amg_solve"] = best_of(max(1, repeats // 2), solve_once)
    print(json.dumps({"backend": backend_name(), "timings": timings}))


def run_backend(name: str, args: argparse.Namespace) -> dict | None:
    env = dict(os.environ, AMGTHETA_BACKEND=name)
    proc = subprocess.run(
        [
            sys.executable,
            os.path.abspath(__file__),
            "--worker",
            "--n", str(args.n),
            "--theta", str(args.theta),
            "--repeats", str(args.repeats),
        ],
        env=env,
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        sys.stderr.write(f"{name} backend unavailable:\n{proc.stderr}")
        return None
    return json.loads(proc.stdout.splitlines()[-1])


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=192, help="grid parameter")
    parser.add_argument("--theta", type=float, default=0.25)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args(argv)
    if args.worker:
        run_worker(args.n, args.theta, args.repeats)
        return 0

    results = {}
    for name in ("compiled", "python"):
        out = run_backend(name, args)
        if out is not None:
            results[name] = out["timings"]
    if not results:
        return 1
    names = sorted(next(iter(results.values())))
    print(f"poisson n={args.n} ({(args.n - 1) ** 2} unknowns), "
          f"theta={args.theta}, best of {args.repeats}")
    header = f"{'kernel':<12}" + "".join(f"{k:>14}" for k in results)
    if len(results) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for key in names:
        row = f"{key:<12}"
        for timing in results.values():
            row += f"{timing[key] * 1e3:>12.3f}ms"
        if len(results) == 2:
            ratio = results["python"][key] / results["compiled"][key]
            row += f"{ratio:>9.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
