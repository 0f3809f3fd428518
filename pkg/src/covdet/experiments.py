"""Monte-Carlo orchestration, solver benchmarking and the norm-rescale experiment.

Every trial derives its own seed from the run seed and the trial index, so
(config, seed) fixes every output byte regardless of the worker count.
"""
from __future__ import annotations

import dataclasses
import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .io import write_csv
from .kernels import NumericalFailure
from .metrics import equal_error_from_curves, equal_error_probability, pm_pf, pm_pf_curves, threshold_grid
from .solver_core import SolverState
from .solvers import VARIANTS, make_config, run_cd
from .system_model import (PL_INTERCEPT_DB, SystemInstance, build_cell_layout, make_instance,
                           noise_variance_from_budget, place_devices, simulate_received, substream)

__all__ = ["ExperimentConfig", "TrialRecord", "SolverOutcome", "PRESETS", "trial_seed", "instance_digest",
           "pm_pf", "equal_error_probability", "run_trial", "run_monte_carlo", "benchmark_solvers",
           "norm_rescale_experiment", "run_norm_experiment", "norm_ratio", "run_phase", "run_errordist",
           "run_check_bound", "emit_csv", "threshold_grid", "preset_config"]


@dataclass
class ExperimentConfig:
    """Resolved parameters of one run; unused fields are ignored by a given command."""

    scenario: str = "custom"
    layout: str = "hex"
    B: int = 3
    R: float = 500.0
    N: int | list = 40
    K: int | list = 5
    L: int = 16
    M: int | list = 64
    seq_type: str | list = "I"
    sigma2: float | None = None
    tx_dBm: float = 23.0
    noise_dBm_per_Hz: float = -169.0
    bandwidth_Hz: float = 1e7
    min_dist_m: float = 10.0
    solvers: list = field(default_factory=lambda: ["active_set_inexact"])
    epsilon: float = 1e-3
    max_sweeps: int = 1000
    trials: int = 10
    grid_points: int = 400
    seed: int = 0
    out_dir: str = "runs/out"
    workers: int = 1
    # phase diagrams
    L_grid: list = field(default_factory=lambda: [6, 8, 10])
    K_grid: list = field(default_factory=lambda: [1, 2, 4, 8, 12, 16, 20, 25])
    # error distribution
    count: int = 2000
    # norm experiment
    scale_factors: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    device_kind: str = "inactive"
    # interference bound
    gamma: float = 3.76
    B_list: list = field(default_factory=lambda: [7, 19, 37])

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("B", "L", "trials", "grid_points", "max_sweeps", "count", "workers"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("N", "K", "M"):
            vals = np.atleast_1d(getattr(self, name))
            if name == "K":
                if np.any(vals < 0):
                    raise ValueError("K must be nonnegative")
            elif np.any(vals < 1):
                raise ValueError(f"{name} must be positive")
        if self.R <= 0 or self.epsilon <= 0:
            raise ValueError("R and epsilon must be positive")
        for s in self.solvers:
            if s not in VARIANTS:
                raise ValueError(f"unknown solver {s!r}; choose from {sorted(VARIANTS)}")
        for t in np.atleast_1d(self.seq_type):
            if str(t).upper() not in ("I", "II", "III"):
                raise ValueError(f"unknown sequence type {t!r}")
        if self.layout not in ("hex", "square"):
            raise ValueError(f"unknown layout {self.layout!r}")

    @property
    def noise_variance(self) -> float:
        if self.sigma2 is not None:
            return float(self.sigma2)
        return noise_variance_from_budget(self.tx_dBm, self.noise_dBm_per_Hz, self.bandwidth_Hz)

    @property
    def M_list(self) -> list:
        return [int(v) for v in np.atleast_1d(self.M)]

    @property
    def seq_types(self) -> list:
        return [str(v).upper() for v in np.atleast_1d(self.seq_type)]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, np.ndarray):
                v = v.tolist()
            out[f.name] = v
        return out

    def instance(self, seed: int, seq_type: str | None = None) -> SystemInstance:
        return make_instance(self.layout, self.B, self.N, self.K, self.L,
                             seq_type=seq_type or self.seq_types[0], R=self.R, sigma2=self.noise_variance,
                             min_dist_m=self.min_dist_m, seed=seed)


# Desk-scale experiment presets; dimensions shrunk so each
# preset finishes in minutes on one core.
PRESETS: dict[str, dict] = {
    # scaling law: N = 50 instead of 200
    "fig1": dict(command="phase", N=50, B=1, L_grid=[6, 8, 10, 12, 14], K_grid=list(range(1, 26, 2)), trials=100),
    # predicted vs empirical error distribution: B = 3, N = 40 instead of 7 x 200
    "fig2": dict(command="errordist", B=3, N=40, K=5, L=12, M=256, count=10000, trials=500),
    "fig3": dict(command="errordist", B=3, N=40, K=5, L=12, M=[64, 128, 256], count=10000, trials=500),
    # sequence types
    "fig4": dict(command="mc", B=3, N=60, K=6, L=12, M=128, seq_type=["I", "II", "III"], trials=200,
                 solvers=["active_set_inexact"]),
    # running-time comparisons, 7 hex cells (N = 300 instead of 1000)
    "fig5a": dict(command="bench", layout="hex", B=7, N=300, K=15, L=30, M=64, trials=20,
                  solvers=["vanilla", "inexact", "active_set_vanilla", "active_set_inexact"]),
    "fig5b": dict(command="bench", layout="hex", B=7, N=[480] + [270] * 6, K=[24] + [14] * 6, L=30, M=64, trials=20,
                  solvers=["vanilla", "inexact", "active_set_vanilla", "active_set_inexact"]),
    "fig5c": dict(command="bench", layout="hex", B=7, N=[120] + [330] * 6, K=[6] + [17] * 6, L=30, M=64, trials=20,
                  solvers=["vanilla", "inexact", "active_set_vanilla", "active_set_inexact"]),
    # 3 x 3 square grid
    "fig6a": dict(command="bench", layout="square", B=9, N=300, K=15, L=30, M=64, trials=20,
                  solvers=["vanilla", "inexact", "active_set_vanilla", "active_set_inexact"]),
    "fig6b": dict(command="bench", layout="square", B=9, N=[540] + [270] * 8, K=[27] + [14] * 8, L=30, M=64,
                  trials=20, solvers=["vanilla", "inexact", "active_set_vanilla", "active_set_inexact"]),
    "fig6c": dict(command="bench", layout="square", B=9, N=[60] + [330] * 8, K=[3] + [17] * 8, L=30, M=64,
                  trials=20, solvers=["vanilla", "inexact", "active_set_vanilla", "active_set_inexact"]),
    # running time versus B and versus N (one bench per value; pass B / N on the command line to sweep)
    "fig7": dict(command="bench", layout="hex", B=7, N=100, K=10, L=20, M=128, trials=10,
                 solvers=["vanilla", "inexact", "active_set_vanilla", "active_set_inexact"]),
    "fig8": dict(command="bench", layout="hex", B=7, N=200, K=20, L=20, M=128, trials=10,
                 solvers=["vanilla", "inexact", "active_set_vanilla", "active_set_inexact"]),
    # probability of error versus M for the three sequence types
    "fig9": dict(command="mc", B=3, N=60, K=6, L=12, M=[32, 64, 128, 256], seq_type=["I", "II", "III"], trials=100,
                 solvers=["active_set_inexact"]),
    # per-iteration coordinate updates, vanilla vs active set
    "fig10": dict(command="bench", layout="hex", B=7, N=300, K=15, L=30, M=64, trials=1,
                  solvers=["vanilla", "active_set_vanilla"]),
    "table3": dict(command="norm-exp", B=3, N=40, K=5, L=16, M=256, seq_type="II", trials=20,
                   scale_factors=[0.5, 1.0, 2.0], solvers=["vanilla"], epsilon=1e-6),
    "bound": dict(command="check-bound", B_list=[7, 19, 37], N=50, trials=100, gamma=3.76),
}


def preset_config(name: str) -> tuple[str, dict]:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    d = dict(PRESETS[name])
    cmd = d.pop("command")
    d["scenario"] = name
    return cmd, d


# ------------------------------------------------------------ records


@dataclass
class SolverOutcome:
    a_hat: np.ndarray | None
    wall_time: float
    sweeps: int
    coord_updates: int
    v_inf: float
    converged: bool
    pm: np.ndarray | None
    pf: np.ndarray | None
    pe: float
    failed: bool = False
    error: str = ""


@dataclass
class TrialRecord:
    """Outcome of one Monte-Carlo trial for every configured solver."""

    trial: int
    seed: int
    digest: str
    M: int
    seq_type: str
    a_true: np.ndarray
    outcomes: dict


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(trial),)).generate_state(1, dtype=np.uint32)[0])


def instance_digest(instance: SystemInstance) -> str:
    h = hashlib.sha1()
    for arr in (instance.S, instance.G, instance.a_true):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def _solve(instance, covs, name, cfg: ExperimentConfig, grid, solver_seed, progress=None) -> SolverOutcome:
    conf = make_config(name, epsilon=cfg.epsilon, max_sweeps=cfg.max_sweeps, seed=solver_seed)
    try:
        state = SolverState.from_instance(instance, covs)
        sol = run_cd(state, conf, progress=progress)
    except NumericalFailure as exc:
        return SolverOutcome(None, math.nan, 0, 0, math.nan, False, None, None, math.nan, True, str(exc))
    pm, pf = pm_pf_curves(sol.a_hat, instance.a_true, grid)
    pe, _ = equal_error_from_curves(pm, pf, grid)
    return SolverOutcome(sol.a_hat, sol.wall_time, sol.sweeps, sol.coord_updates_total, sol.v_inf_trace[-1],
                         sol.converged, pm, pf, pe)


def run_trial(cfg: ExperimentConfig, trial: int, M: int | None = None, seq_type: str | None = None) -> TrialRecord:
    """One fresh instance, one channel draw, every configured solver started from zero."""
    s = trial_seed(cfg.seed, trial)
    M = cfg.M_list[0] if M is None else int(M)
    inst = cfg.instance(s, seq_type)
    covs = simulate_received(inst, M)
    grid = threshold_grid(cfg.grid_points)
    outs = {name: _solve(inst, covs, name, cfg, grid, s) for name in cfg.solvers}
    return TrialRecord(trial, s, instance_digest(inst), M, inst.seq_type, inst.a_true, outs)


def _trial_job(args):
    cfg, trial, M, seq_type = args
    return run_trial(cfg, trial, M, seq_type)


def _map(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def emit_csv(path, header, rows) -> str:
    """Header plus rows, shortest round-trip numerics, fixed column order."""
    return write_csv(path, header, rows)


@dataclass
class MonteCarloResult:
    records: list
    summary: list  # rows of SUMMARY_HEADER
    curves: dict  # (seq_type, M, solver) -> (pm, pf)
    grid: np.ndarray


SUMMARY_HEADER = ["seq_type", "M", "solver", "trials_ok", "trials_failed", "mean_pe", "se_pe", "time_p50_s",
                  "time_p90_s"]


def aggregate(records, solvers, grid) -> tuple[list, dict]:
    """Mean curves and summary statistics per (sequence type, M, solver), failed trials excluded."""
    keys = sorted({(r.seq_type, r.M) for r in records})
    summary, curves = [], {}
    for st, M in keys:
        recs = [r for r in records if r.seq_type == st and r.M == M]
        for name in solvers:
            ok = [r.outcomes[name] for r in recs if not r.outcomes[name].failed]
            nfail = len(recs) - len(ok)
            if ok:
                pm = np.mean([o.pm for o in ok], axis=0)
                pf = np.mean([o.pf for o in ok], axis=0)
                pes = np.array([o.pe for o in ok])
                times = np.array([o.wall_time for o in ok])
                se = float(pes.std(ddof=1) / np.sqrt(pes.size)) if pes.size > 1 else math.nan
                row = [st, M, name, len(ok), nfail, float(pes.mean()), se, float(np.quantile(times, 0.5)),
                       float(np.quantile(times, 0.9))]
            else:
                pm = pf = np.full(grid.size, math.nan)
                row = [st, M, name, 0, nfail, math.nan, math.nan, math.nan, math.nan]
            curves[(st, M, name)] = (pm, pf)
            summary.append(row)
    return summary, curves


def run_monte_carlo(cfg: ExperimentConfig, write: bool = True) -> MonteCarloResult:
    """Trials over every (sequence type, M) combination; writes per-trial and aggregate CSVs."""
    grid = threshold_grid(cfg.grid_points)
    jobs = [(cfg, t, M, st) for st in cfg.seq_types for M in cfg.M_list for t in range(cfg.trials)]
    records = _map(_trial_job, jobs, cfg.workers)
    summary, curves = aggregate(records, cfg.solvers, grid)
    res = MonteCarloResult(records, summary, curves, grid)
    if write:
        write_monte_carlo(res, cfg.out_dir, cfg.solvers)
    return res


def write_monte_carlo(res: MonteCarloResult, out_dir, solvers) -> None:
    os.makedirs(out_dir, exist_ok=True)
    trows, arows = [], []
    for r in res.records:
        for name in solvers:
            o = r.outcomes[name]
            trows.append([r.seq_type, r.M, r.trial, r.seed, r.digest, name, o.wall_time, o.sweeps, o.coord_updates,
                          o.v_inf, o.converged, o.pe, o.failed])
            if o.a_hat is not None:
                arows.extend([r.seq_type, r.M, r.trial, name, i, r.a_true[i], o.a_hat[i]] for i in range(o.a_hat.size))
    emit_csv(os.path.join(out_dir, "trials.csv"),
             ["seq_type", "M", "trial", "seed", "digest", "solver", "wall_time_s", "sweeps", "coord_updates", "v_inf",
              "converged", "pe", "failed"], trows)
    emit_csv(os.path.join(out_dir, "ahat.csv"), ["seq_type", "M", "trial", "solver", "index", "a_true", "a_hat"], arows)
    crow = []
    for (st, M, name), (pm, pf) in res.curves.items():
        crow.extend([st, M, name, l, p, f] for l, p, f in zip(res.grid, pm, pf))
    emit_csv(os.path.join(out_dir, "pmpf.csv"), ["seq_type", "M", "solver", "threshold", "pm", "pf"], crow)
    emit_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_HEADER, res.summary)


# ------------------------------------------------------------ benchmarking


class _Recorder:
    """Snapshots ``a`` at geometric wall-clock checkpoints (x1.5 from 1 ms)."""

    def __init__(self, first: float = 1e-3, factor: float = 1.5):
        self.next = first
        self.factor = factor
        self.snaps = []

    def __call__(self, a, elapsed):
        if elapsed >= self.next:
            self.snaps.append((elapsed, a.copy()))
            while self.next <= elapsed:
                self.next *= self.factor


@dataclass
class BenchResult:
    summary: list
    trajectory: list
    iterations: list
    mean_trajectory: list


def benchmark_solvers(cfg: ExperimentConfig, write: bool = True, record_trajectory: bool = True) -> BenchResult:
    """Time every solver on the same instances and record error-versus-time trajectories."""
    if len(cfg.solvers) < 2:
        raise ValueError("benchmarking needs at least two solvers")
    grid = threshold_grid(cfg.grid_points)
    summary, traj, iters = [], [], []
    M = cfg.M_list[0]
    for t in range(cfg.trials):
        s = trial_seed(cfg.seed, t)
        inst = cfg.instance(s)
        covs = simulate_received(inst, M)
        for name in cfg.solvers:
            rec = _Recorder() if record_trajectory else None
            conf = make_config(name, epsilon=cfg.epsilon, max_sweeps=cfg.max_sweeps, seed=s)
            state = SolverState.from_instance(inst, covs)
            sol = run_cd(state, conf, progress=rec)
            pe_final = equal_error_probability(sol.a_hat, inst.a_true, grid)
            summary.append([t, s, name, sol.wall_time, sol.wall_time if sol.converged else math.nan, sol.converged,
                            sol.sweeps, sol.coord_updates_total, sol.final_objective, pe_final])
            for k, (n_upd, n_mov) in enumerate(zip(sol.coord_updates_per_sweep, sol.moved_per_sweep), start=1):
                iters.append([t, name, k, n_upd, n_mov])
            traj.append([t, name, 0.0, equal_error_probability(np.zeros_like(inst.a_true), inst.a_true, grid)])
            if rec is not None:
                for el, a in rec.snaps:
                    traj.append([t, name, el, equal_error_probability(a, inst.a_true, grid)])
            traj.append([t, name, sol.wall_time, pe_final])
    mean_traj = _mean_trajectory(traj, cfg.solvers, cfg.trials)
    res = BenchResult(summary, traj, iters, mean_traj)
    if write:
        os.makedirs(cfg.out_dir, exist_ok=True)
        emit_csv(os.path.join(cfg.out_dir, "bench_summary.csv"),
                 ["trial", "seed", "solver", "wall_time_s", "time_to_eps_s", "converged", "sweeps",
                  "coord_updates_total", "final_objective", "pe_final"], summary)
        emit_csv(os.path.join(cfg.out_dir, "bench_trajectory.csv"), ["trial", "solver", "elapsed_s", "pe"], traj)
        emit_csv(os.path.join(cfg.out_dir, "bench_iterations.csv"),
                 ["trial", "solver", "iteration", "coord_updates", "nonzero_steps"], iters)
        emit_csv(os.path.join(cfg.out_dir, "bench_trajectory_mean.csv"), ["solver", "checkpoint_s", "mean_pe"],
                 mean_traj)
    return res


def _mean_trajectory(traj, solvers, trials):
    """Average error at common checkpoints, holding each run's last value until it is superseded."""
    if not traj:
        return []
    tmax = max(r[2] for r in traj)
    cps = [0.0]
    c = 1e-3
    while c < tmax * 1.5:
        cps.append(c)
        c *= 1.5
    out = []
    for name in solvers:
        per_trial = []
        for t in range(trials):
            pts = [(r[2], r[3]) for r in traj if r[0] == t and r[1] == name]
            if not pts:
                continue
            times = np.array([p[0] for p in pts])
            vals = np.array([p[1] for p in pts])
            idx = np.searchsorted(times, cps, side="right") - 1
            per_trial.append(vals[np.maximum(idx, 0)])
        if per_trial:
            mean = np.mean(per_trial, axis=0)
            out.extend([name, cp, float(v)] for cp, v in zip(cps, mean))
    return out


# ------------------------------------------------------------ norm experiment


def fixed_realization(instance: SystemInstance, M: int, rng: np.random.Generator):
    """Channels (B, BN, M) and unit-variance noise (B, L, M) held fixed across rescalings."""
    B, BN, L = instance.B, instance.total_devices, instance.L
    s2 = 1.0 / math.sqrt(2.0)
    H = (rng.standard_normal((B, BN, M)) + 1j * rng.standard_normal((B, BN, M))) * s2
    W = (rng.standard_normal((B, L, M)) + 1j * rng.standard_normal((B, L, M))) * s2
    return H, W


def covariances_from(S, G, a, sigma2, H, W) -> np.ndarray:
    M = H.shape[2]
    out = np.empty((G.shape[0], S.shape[0], S.shape[0]), dtype=complex)
    for b in range(G.shape[0]):
        Y = (S * np.sqrt(G[b] * a)[None, :]) @ H[b] + math.sqrt(sigma2) * W[b]
        C = (Y @ Y.conj().T) / M
        out[b] = 0.5 * (C + C.conj().T)
    return out


def norm_rescale_experiment(instance: SystemInstance, M: int, scale_factors, rng: np.random.Generator,
                            device: int | None = None, device_kind: str = "inactive", solver: str = "vanilla",
                            epsilon: float = 1e-6, max_sweeps: int = 5000, solver_seed: int = 0) -> list:
    """Estimate of one device's activity as its signature is rescaled.

    The channel and noise realisation is drawn once; for each factor ``c`` the
    device's sequence is replaced by ``c * s`` both in the transmitted signal
    and in the detector, and the MLE is re-solved from zero.

    Returns
    -------
    list of (device, factor, a_hat_device)
    """
    factors = [float(c) for c in scale_factors]
    if any(c <= 0 for c in factors):
        raise ValueError("scale factors must be positive")
    if device is None:
        pool = np.flatnonzero(instance.a_true < 0.5) if device_kind == "inactive" else np.flatnonzero(instance.a_true > 0.5)
        if pool.size == 0:
            raise ValueError(f"instance has no {device_kind} device")
        device = int(rng.choice(pool))
    H, W = fixed_realization(instance, M, rng)
    conf = make_config(solver, epsilon=epsilon, max_sweeps=max_sweeps, seed=solver_seed)
    rows = []
    for c in factors:
        S = instance.S.copy()
        S[:, device] *= c
        mats = covariances_from(S, instance.G, instance.a_true, instance.sigma2, H, W)
        state = SolverState(S, instance.G, mats, instance.sigma2, instance.N)
        sol = run_cd(state, conf)
        rows.append((device, c, float(sol.a_hat[device])))
    return rows


def run_norm_experiment(cfg: ExperimentConfig, write: bool = True) -> list:
    """Repeat the rescale experiment over ``cfg.trials`` realisations."""
    rows = []
    for t in range(cfg.trials):
        s = trial_seed(cfg.seed, t)
        inst = cfg.instance(s)
        res = norm_rescale_experiment(inst, cfg.M_list[0], cfg.scale_factors, substream(s, "channels"),
                                      device_kind=cfg.device_kind, solver=cfg.solvers[0], epsilon=cfg.epsilon,
                                      max_sweeps=max(cfg.max_sweeps, 5000), solver_seed=s)
        rows.extend([t, s, dev, cfg.device_kind, c, a] for dev, c, a in res)
    if write:
        emit_csv(os.path.join(cfg.out_dir, "norm.csv"), ["trial", "seed", "device", "device_kind", "factor", "a_hat"],
                 rows)
    return rows


def norm_ratio(rows, factor: float, base: float = 1.0) -> float:
    """Ratio of the mean estimate under ``factor`` to the mean under ``base``."""
    num = [r[-1] for r in rows if r[-2] == factor]
    den = [r[-1] for r in rows if r[-2] == base]
    return float(np.mean(num) / np.mean(den)) if den and np.mean(den) > 0 else math.nan


# ------------------------------------------------------------ phase, error distribution, bound


def run_phase(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Consistency success counts over ``L_grid x K_grid`` for each sequence type."""
    from .scaling import phase_diagram, write_phase_csv

    N = int(np.atleast_1d(cfg.N)[0])
    out = {}
    for st in cfg.seq_types:
        counts = phase_diagram(N, cfg.B, cfg.L_grid, cfg.K_grid, trials=cfg.trials, seq_type=st, layout=cfg.layout,
                               seed=cfg.seed, workers=cfg.workers)
        out[st] = counts
        if write:
            write_phase_csv(os.path.join(cfg.out_dir, f"phase_{st}.csv"), counts, cfg.L_grid, cfg.K_grid, cfg.B, st,
                            cfg.trials)
    return out


def first_consistent_instance(cfg: ExperimentConfig, max_tries: int = 100) -> SystemInstance:
    """First instance (seed, seed + 1, ...) that passes the consistency check."""
    from .scaling import check_consistency

    for k in range(max_tries):
        inst = cfg.instance(cfg.seed + k)
        if check_consistency(inst.S, inst.G, inst.a_true).consistent:
            return inst
    raise ValueError("no consistent instance found; increase L or reduce K")


def empirical_errors(instance: SystemInstance, M: int, trials: int, seed: int, solver: str = "vanilla",
                     epsilon: float = 1e-5, max_sweeps: int = 5000, workers: int = 1) -> np.ndarray:
    """``a_hat - a_true`` over fresh channel/noise draws on a fixed instance, shape (trials, BN)."""
    jobs = [(instance, M, trial_seed(seed, t), solver, epsilon, max_sweeps) for t in range(trials)]
    return np.array(_map(_empirical_job, jobs, workers))


def _empirical_job(args):
    instance, M, s, solver, epsilon, max_sweeps = args
    covs = simulate_received(instance, M, rng=substream(s, "channels"))
    conf = make_config(solver, epsilon=epsilon, max_sweeps=max_sweeps, seed=s)
    sol = run_cd(SolverState.from_instance(instance, covs), conf)
    return sol.a_hat - instance.a_true


def run_errordist(cfg: ExperimentConfig, write: bool = True, empirical: bool = True) -> dict:
    """Predicted error samples and, optionally, matching empirical solver errors for each M."""
    from .error_analysis import predicted_error_distribution

    inst = first_consistent_instance(cfg)
    grid = threshold_grid(cfg.grid_points)
    out = {}
    multi = len(cfg.M_list) > 1
    for M in cfg.M_list:
        d = os.path.join(cfg.out_dir, f"M{M}") if multi else cfg.out_dir
        pred = predicted_error_distribution(inst, M, cfg.count, substream(cfg.seed, "noise"), grid=grid)
        emp = None
        if empirical:
            emp = empirical_errors(inst, M, cfg.trials, cfg.seed, solver=cfg.solvers[0],
                                   epsilon=min(cfg.epsilon, 1e-5), max_sweeps=max(cfg.max_sweeps, 5000),
                                   workers=cfg.workers)
        if write:
            pred.write(d, inst.a_true)
            if emp is not None:
                kind = np.where(inst.a_true > 0.5, "one", "zero")
                emit_csv(os.path.join(d, "empirical_errors.csv"), ["trial", "coord_type", "error_value"],
                         ((t, kind[i], float(emp[t, i])) for t in range(emp.shape[0]) for i in range(emp.shape[1])))
                pm, pf = _pooled_curves(emp, inst.a_true, grid)
                emit_csv(os.path.join(d, "empirical_pmpf.csv"), ["threshold", "pm", "pf"], zip(grid, pm, pf))
        out[M] = (pred, emp)
    return out


def _pooled_curves(errors, a_true, grid):
    """PM/PF of ``a_true + errors`` pooled over all rows."""
    a_hat = (errors + a_true[None, :]).ravel()
    truth = np.broadcast_to(a_true, errors.shape).ravel()
    return pm_pf_curves(a_hat, truth, grid)


# gains P0 (D0 / D)^gamma with D0 = 1 km reproduce the dB path-loss law
P0_DEFAULT = 10.0 ** (-PL_INTERCEPT_DB / 10.0)
D0_DEFAULT = 1000.0


def run_check_bound(cfg: ExperimentConfig, write: bool = True) -> list:
    """Compare the summed strongest out-of-cell gains with the closed-form constant on hex layouts."""
    from .scaling import interference_bound

    gamma = cfg.gamma
    N = int(np.atleast_1d(cfg.N)[0])
    rows = []
    for B in cfg.B_list:
        layout = build_cell_layout("hex", int(B), cfg.R)
        for t in range(cfg.trials):
            s = trial_seed(cfg.seed, t)
            pos = place_devices(layout, N, cfg.min_dist_m, substream(s, "positions"))
            lhs, C = interference_bound(layout, gamma, P0_DEFAULT, D0_DEFAULT, cfg.R, pos, N)
            rows.extend([int(B), t, s, b, float(lhs[b]), C, bool(lhs[b] <= C)] for b in range(int(B)))
    if write:
        emit_csv(os.path.join(cfg.out_dir, "bound.csv"), ["B", "trial", "seed", "bs", "lhs", "C", "holds"], rows)
    return rows
