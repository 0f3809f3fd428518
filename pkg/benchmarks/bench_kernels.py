"""Compiled vs pure-Python coordinate-descent kernels.

Times full sweeps and the two one-dimensional subproblem solvers on the same
inputs for each available backend and checks that the results agree.

    python benchmarks/bench_kernels.py [--B 3 --N 40 --L 16 --M 64 --repeat 5]
"""
import argparse
import time

import numpy as np

from covdet.kernels import available_backends, get_backend
from covdet.solver_core import SolverState
from covdet.solvers import make_config
from covdet.system_model import make_instance, simulate_received


def time_sweeps(mod, state0, exact, sweeps, seed):
    st = state0.copy()
    conf = make_config("vanilla" if exact else "inexact")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    for _ in range(sweeps):
        order = rng.permutation(st.size).astype(np.int64)
        mod.sweep(st.inv_sigmas, st.sig_hat, st.St, st.Gt, st.cell, st.a, order, exact, conf.mu0_floor, conf.beta,
                  conf.max_backtracks)
    return time.perf_counter() - t0, st.a.copy()


def time_subproblems(mod, probs, exact):
    t0 = time.perf_counter()
    out = []
    for xi, zeta, a in probs:
        if exact:
            out.append(mod.solve_exact(xi, zeta, a))
        else:
            mu0 = mod.init_mu(xi, zeta, 0, 1e-2)
            out.append(mod.solve_inexact(xi, zeta, 0, a, mu0, 2.0, 40)[0])
    return time.perf_counter() - t0, np.array(out)


def random_subproblems(B, count, rng):
    probs = []
    for _ in range(count):
        a = float(rng.uniform(0, 1))
        xi = rng.uniform(0.01, 0.99, B) / max(a, 1e-3)
        xi = np.minimum(xi, 0.99 / max(a, 1e-12))
        zeta = xi * xi * rng.uniform(0.2, 3.0, B)
        probs.append((np.ascontiguousarray(xi), np.ascontiguousarray(zeta), a))
    return probs


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--B", type=int, default=3)
    p.add_argument("--N", type=int, default=40)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--L", type=int, default=16)
    p.add_argument("--M", type=int, default=64)
    p.add_argument("--sweeps", type=int, default=5)
    p.add_argument("--subproblems", type=int, default=2000)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    inst = make_instance("hex", args.B, args.N, args.K, args.L, seed=args.seed)
    state0 = SolverState.from_instance(inst, simulate_received(inst, args.M))
    probs = random_subproblems(args.B, args.subproblems, np.random.default_rng(args.seed))
    backends = available_backends()
    if "cython" not in backends:
        print("compiled extension not built; timing the python backend only")

    results = {}
    print(f"B={args.B} N={args.N} L={args.L} M={args.M}  (best of {args.repeat})")
    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for label, fn in [
        ("sweep exact", lambda m: time_sweeps(m, state0, True, args.sweeps, args.seed)),
        ("sweep inexact", lambda m: time_sweeps(m, state0, False, args.sweeps, args.seed)),
        ("subproblem exact", lambda m: time_subproblems(m, probs, True)),
        ("subproblem inexact", lambda m: time_subproblems(m, probs, False)),
    ]:
        times = {}
        for b in backends:
            mod = get_backend(b)
            best, out = min((fn(mod) for _ in range(args.repeat)), key=lambda r: r[0])
            times[b] = best
            results[(label, b)] = out
        line = f"{label:<22}" + "".join(f"{times[b]:>11.4f}s" for b in backends)
        if len(backends) > 1:
            line += f"{times['python'] / times['cython']:>11.1f}x"
        print(line)
    if len(backends) > 1:
        dev = max(float(np.max(np.abs(results[(k, 'cython')] - results[(k, 'python')])))
                  for k in {k for k, _ in results})
        print(f"max |cython - python| over all outputs: {dev:.2e}")


if __name__ == "__main__":
    main()
