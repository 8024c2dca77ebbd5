"""Compare the compiled and numpy kernel backends.

Usage::

    python3 benchmarks/bench_kernels.py [--nx 40] [--repeat 20] [--steps 3]

Times each kernel on an ``nx x nx`` droplet field and a few full time steps
of the bundled example with either backend selected.
"""

from __future__ import annotations

import argparse
import time
import timeit

import numpy as np

from esdiffuse import kernels
from esdiffuse.config import bundled_config_path, parse_config
from esdiffuse.driver import initial_state, make_problem
from esdiffuse.selfcheck import reference_mixture
from esdiffuse.stepper import step


def _fields(nx):
    X, Y = np.meshgrid(np.arange(nx) + 0.5, np.arange(nx) + 0.5, indexing="ij")
    w = 0.5 * (1 + np.tanh((nx / 4 - np.hypot(X - nx / 2, Y - nx / 2)) / 2))
    n = np.array([7430.2, 673.6])[:, None, None] + np.array([-563.9, 4117.9])[:, None, None] * w
    T = np.full((nx, nx), 310.0)
    return n, T


def _time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(nx, repeat):
    mix = reference_mixture()
    n, T = _fields(nx)
    target = kernels.internal_energy(mix, n, T)
    guess = np.full_like(T, 300.0)
    cases = {
        "free_energy": lambda b: kernels.free_energy(mix, n, T, backend=b),
        "entropy": lambda b: kernels.entropy(mix, n, T, backend=b),
        "mu_part(convex)": lambda b: kernels.mu_part(mix, n, T, 0.0, "convex", backend=b),
        "hess_part(convex)": lambda b: kernels.hess_part(mix, n, T, 0.0, "convex", backend=b),
        "recover_temperature": lambda b: kernels.recover_temperature(mix, n, target, guess, 100.0, 1000.0,
                                                                     1e-12, backend=b),
    }
    backends = kernels.available_backends()
    print(f"kernels on a {nx}x{nx} field, best of {repeat} [ms]")
    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases.items():
        t = [_time(lambda b=b: fn(b), repeat) * 1e3 for b in backends]
        line = f"{name:<22}" + "".join(f"{v:12.3f}" for v in t)
        if len(t) > 1:
            line += f"{t[0] / t[1]:11.1f}x"
        print(line)


def bench_steps(steps):
    cfg = parse_config(bundled_config_path())
    prob = make_problem(cfg)
    saved = kernels.BACKEND
    print(f"\nfull time steps of the bundled example ({steps} steps) [s]")
    try:
        for b in kernels.available_backends():
            kernels.BACKEND = b
            st = initial_state(cfg)
            t0 = time.perf_counter()
            for _ in range(steps):
                st, _ = step(prob, st)
            print(f"{b:<22}{time.perf_counter() - t0:12.3f}")
    finally:
        kernels.BACKEND = saved


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--nx", type=int, default=40)
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--steps", type=int, default=3)
    args = p.parse_args(argv)
    bench_kernels(args.nx, args.repeat)
    if args.steps > 0:
        bench_steps(args.steps)


if __name__ == "__main__":
    main()
