"""Command-line entry point: ``covdet <command> [options]``.

Parameter precedence is built-in defaults < ``--preset`` < ``--config`` <
explicit flags. Every command writes its CSVs plus a ``run.toml`` echo of
the resolved configuration into ``--out-dir``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import platform
import sys

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import experiments as ex
from .kernels import BACKEND, NumericalFailure
from .solver_core import SolverState
from .solvers import VARIANTS, make_config, run_cd
from .system_model import load_instance, save_instance, simulate_received

log = logging.getLogger("covdet")

COMMANDS = ("simulate", "detect", "phase", "errordist", "mc", "bench", "check-bound", "norm-exp")


class ConfigError(Exception):
    pass


def _int_list(text: str) -> list:
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_or_list(text: str):
    vals = _int_list(text)
    return vals[0] if len(vals) == 1 else vals


def _str_or_list(text: str):
    vals = [v.strip() for v in text.split(",") if v.strip()]
    return vals[0] if len(vals) == 1 else vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--config", help="TOML file with experiment parameters")
    g.add_argument("--preset", help="named desk-scale preset (fig1 ... fig10, table3, bound)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out-dir", "--out", dest="out_dir")
    g.add_argument("--workers", type=int)
    g.add_argument("-v", "--verbose", action="store_true")

    p = common.add_argument_group("parameters")
    p.add_argument("--layout", choices=["hex", "square"])
    p.add_argument("--B", "--b", "-B", dest="B", type=int, help="number of cells")
    p.add_argument("--R", dest="R", type=float, help="cell radius in metres")
    p.add_argument("--N", "--n", "-N", dest="N", type=_int_or_list, help="devices per cell (one value or comma list)")
    p.add_argument("--K", "-K", dest="K", type=_int_or_list, help="active devices per cell")
    p.add_argument("--L", "-L", dest="L", type=int, help="sequence length")
    p.add_argument("--M", "-M", dest="M", type=_int_or_list, help="antennas (comma list allowed)")
    p.add_argument("--seq-type", dest="seq_type", type=_str_or_list, help="I, II, III or a comma list")
    p.add_argument("--sigma2", type=float, help="noise variance (overrides the link budget)")
    p.add_argument("--solvers", type=lambda t: [v.strip() for v in t.split(",") if v.strip()],
                   help=f"comma list from {','.join(VARIANTS)}")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--L-grid", "--l-grid", dest="L_grid", type=_int_list)
    p.add_argument("--K-grid", "--k-grid", dest="K_grid", type=_int_list)
    p.add_argument("--count", type=int, help="predicted error samples")
    p.add_argument("--scale-factors", dest="scale_factors", type=_float_list)
    p.add_argument("--B-list", dest="B_list", type=_int_list)
    p.add_argument("--gamma", type=float)

    parser = argparse.ArgumentParser(prog="covdet", description="Covariance-based activity detection experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("simulate", parents=[common], help="write an instance fixture")
    sp.add_argument("--with-covariances", action="store_true", help="also write sample covariances for M")
    sp = sub.add_parser("detect", parents=[common], help="run one solver on one instance")
    sp.add_argument("--instance", help="directory written by 'simulate' (default: generate from the seed)")
    sub.add_parser("phase", parents=[common], help="consistency phase diagram")
    sp = sub.add_parser("errordist", parents=[common], help="predicted (and empirical) error distribution")
    sp.add_argument("--no-empirical", action="store_true", help="skip the solver trials")
    sub.add_parser("mc", parents=[common], help="Monte-Carlo detection performance")
    sub.add_parser("bench", parents=[common], help="solver timing and error trajectories")
    sub.add_parser("check-bound", parents=[common], help="out-of-cell interference bound")
    sub.add_parser("norm-exp", parents=[common], help="signature rescaling experiment")
    return parser


_NON_PARAMS = {"command", "config", "preset", "verbose", "instance", "with_covariances", "no_empirical"}


def resolve_config(args: argparse.Namespace) -> ex.ExperimentConfig:
    """Merge defaults, preset, config file and explicit flags."""
    merged: dict = {}
    if args.preset:
        try:
            cmd, d = ex.preset_config(args.preset)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if cmd != args.command:
            raise ConfigError(f"preset {args.preset!r} belongs to the {cmd!r} command")
        merged.update(d)
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                d = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        d.pop("command", None)
        merged.update(d)
    for k, v in vars(args).items():
        if k not in _NON_PARAMS and v is not None:
            merged[k] = v
    merged.setdefault("out_dir", os.path.join("runs", args.preset or args.command))
    try:
        return ex.ExperimentConfig.from_dict(merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def write_run_toml(cfg: ex.ExperimentConfig, command: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    doc = {"command": command, "config": cfg.to_dict(),
           "environment": {"python": platform.python_version(), "numpy": np.__version__,
                           "machine": platform.machine(), "processor": platform.processor() or "unknown",
                           "kernel_backend": BACKEND}}
    path = os.path.join(cfg.out_dir, "run.toml")
    with open(path, "wb") as fh:
        tomli_w.dump(doc, fh)
    return path


# ------------------------------------------------------------ commands


def cmd_simulate(cfg, args):
    inst = cfg.instance(cfg.seed)
    save_instance(inst, cfg.out_dir)
    if args.with_covariances:
        covs = simulate_received(inst, cfg.M_list[0])
        from .io import write_matrix
        for b in range(inst.B):
            C = covs.mats[b]
            inter = np.empty((C.shape[0], 2 * C.shape[1]))
            inter[:, 0::2], inter[:, 1::2] = C.real, C.imag
            write_matrix(os.path.join(cfg.out_dir, f"cov_{b}.csv"), inter)
    print(f"instance written to {cfg.out_dir} (BN={inst.total_devices}, active={int(inst.a_true.sum())})")


def cmd_detect(cfg, args):
    inst = load_instance(args.instance) if args.instance else cfg.instance(cfg.seed)
    covs = simulate_received(inst, cfg.M_list[0])
    conf = make_config(cfg.solvers[0], epsilon=cfg.epsilon, max_sweeps=cfg.max_sweeps, seed=cfg.seed)
    sol = run_cd(SolverState.from_instance(inst, covs), conf)
    sol.export(cfg.out_dir)
    pe = ex.equal_error_probability(sol.a_hat, inst.a_true, ex.threshold_grid(cfg.grid_points))
    print(f"{conf.name}: sweeps={sol.sweeps} updates={sol.coord_updates_total} v_inf={sol.v_inf_trace[-1]:.3g} "
          f"converged={sol.converged} time={sol.wall_time:.3f}s pe={pe:.4f}")


def cmd_phase(cfg, args):
    counts = ex.run_phase(cfg)
    for st, c in counts.items():
        print(f"type {st}: success fractions\n{c / cfg.trials}")


def cmd_errordist(cfg, args):
    res = ex.run_errordist(cfg, empirical=not args.no_empirical)
    for M, (pred, emp) in res.items():
        msg = f"M={M}: {pred.samples.shape[0]} predicted samples"
        if emp is not None:
            msg += f", {emp.shape[0]} solver trials"
        print(msg)


def cmd_mc(cfg, args):
    res = ex.run_monte_carlo(cfg)
    for row in res.summary:
        print(" ".join(str(v) for v in row))


def cmd_bench(cfg, args):
    res = ex.benchmark_solvers(cfg)
    for name in cfg.solvers:
        rows = [r for r in res.summary if r[2] == name]
        t = np.median([r[3] for r in rows])
        upd = np.mean([r[7] for r in rows])
        print(f"{name}: median time {t:.3f}s, mean coordinate updates {upd:.0f}")


def cmd_check_bound(cfg, args):
    rows = ex.run_check_bound(cfg)
    bad = sum(not r[-1] for r in rows)
    print(f"{len(rows)} base-station checks, {bad} violations, C={rows[0][5]:.4g}")
    return 0


def cmd_norm_exp(cfg, args):
    rows = ex.run_norm_experiment(cfg)
    for c in cfg.scale_factors:
        print(f"factor {c}: mean ratio to factor 1 = {ex.norm_ratio(rows, c):.4g}")


HANDLERS = {"simulate": cmd_simulate, "detect": cmd_detect, "phase": cmd_phase, "errordist": cmd_errordist,
            "mc": cmd_mc, "bench": cmd_bench, "check-bound": cmd_check_bound, "norm-exp": cmd_norm_exp}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.command == "bench" and len(cfg.solvers) < 2:
            raise ConfigError("bench needs at least two solvers")
        write_run_toml(cfg, args.command)
        HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
