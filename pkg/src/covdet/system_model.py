"""Synthetic multi-cell instances: layout, devices, fading, sequences, covariances.

All randomness is drawn from named substreams of one seed so that, e.g.,
changing the antenna count never perturbs the sequences or device positions.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .io import read_matrix, write_matrix

SQRT3 = math.sqrt(3.0)

# 128.1 + 37.6 log10(d_km) dB
PL_INTERCEPT_DB = 128.1
PL_SLOPE_DB = 37.6
PATH_LOSS_EXPONENT = PL_SLOPE_DB / 10.0

_STREAMS = {"positions": 0, "sequences": 1, "activity": 2, "channels": 3, "noise": 4}


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one purpose (positions, sequences, ...)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_STREAMS[name],)))


@dataclass(frozen=True)
class CellLayout:
    kind: str
    B: int
    R: float
    bs_positions: np.ndarray  # (B, 2) meters

    def lattice_indices(self) -> np.ndarray:
        """(k, 2*l') integer pairs for hex layouts; x = 1.5 R k, y = (sqrt3 R / 2) * m."""
        if self.kind != "hex":
            raise ValueError("lattice indices only defined for hex layouts")
        k = np.rint(self.bs_positions[:, 0] / (1.5 * self.R)).astype(int)
        m = np.rint(self.bs_positions[:, 1] / (SQRT3 * self.R / 2)).astype(int)
        return np.column_stack([k, m])


@dataclass
class SystemInstance:
    layout: CellLayout
    N: np.ndarray  # devices per cell, (B,)
    K: np.ndarray  # active devices per cell, (B,)
    device_positions: np.ndarray  # (BN, 2)
    S: np.ndarray  # (L, BN) complex
    G: np.ndarray  # (B, BN) linear gains, G[b, i] = gain from device i to BS b
    sigma2: float
    a_true: np.ndarray  # (BN,) float 0/1
    seed: int
    seq_type: str = "I"
    meta: dict = field(default_factory=dict)

    @property
    def B(self) -> int:
        return self.layout.B

    @property
    def L(self) -> int:
        return self.S.shape[0]

    @property
    def total_devices(self) -> int:
        return int(self.S.shape[1])

    @property
    def cell_of(self) -> np.ndarray:
        return cell_index(self.N)

    def covariance(self, a: np.ndarray | None = None) -> np.ndarray:
        """True covariances S G_b diag(a) S^H + sigma2 I, shape (B, L, L)."""
        a = self.a_true if a is None else a
        return model_covariances(self.S, self.G, a, self.sigma2)


@dataclass
class SampleCovariances:
    mats: np.ndarray  # (B, L, L) complex Hermitian
    M: int


def cell_index(N_per_cell) -> np.ndarray:
    N_per_cell = np.asarray(N_per_cell, dtype=int)
    return np.repeat(np.arange(N_per_cell.size), N_per_cell)


def model_covariances(S, G, a, sigma2) -> np.ndarray:
    L = S.shape[0]
    w = G * np.asarray(a, dtype=float)[None, :]  # (B, BN)
    out = (S[None, :, :] * w[:, None, :]) @ S.conj().T
    out += sigma2 * np.eye(L)[None, :, :]
    return 0.5 * (out + out.conj().transpose(0, 2, 1))


def _per_cell(value, B: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=int))
    if arr.size == 1:
        arr = np.full(B, int(arr[0]))
    if arr.size != B:
        raise ValueError(f"{name} must be a scalar or have one entry per cell ({B}), got {arr.size}")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


# ---------------------------------------------------------------- geometry


def build_cell_layout(kind: str, B: int, R: float) -> CellLayout:
    """Base-station coordinates for a hexagonal lattice or a square grid.

    Hex cells are flat-topped with circumradius ``R``; BS ``(k, l)`` sits at
    ``(1.5 R k, sqrt(3) R (l + (k mod 2) / 2))`` and cells are filled ring by
    ring outward from the origin. Square cells have side ``2R``.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    if R <= 0:
        raise ValueError("R must be positive")
    if kind == "hex":
        rings = 1
        while 1 + 3 * rings * (rings + 1) < B:
            rings += 1
        pts = []
        span = 2 * rings + 2
        for k in range(-span, span + 1):
            for l in range(-span, span + 1):
                m = 2 * l + (k % 2)  # y in units of sqrt3 R / 2
                x = 1.5 * R * k
                y = SQRT3 * R * m / 2.0
                pts.append((math.hypot(x, y), math.atan2(y, x) % (2 * math.pi), k, m))
        pts.sort(key=lambda p: (round(p[0] / R, 9), round(p[1], 9)))
        chosen = pts[:B]
        pos = np.array([[1.5 * R * k, SQRT3 * R * m / 2.0] for _, _, k, m in chosen])
    elif kind == "square":
        side = int(round(math.sqrt(B)))
        if side * side != B:
            raise ValueError("square layouts need a perfect-square B")
        offs = (np.arange(side) - (side - 1) / 2.0) * 2.0 * R
        xx, yy = np.meshgrid(offs, offs, indexing="xy")
        pos = np.column_stack([xx.ravel(), yy.ravel()])
        order = np.lexsort((np.arctan2(pos[:, 1], pos[:, 0]) % (2 * np.pi), np.round(np.hypot(pos[:, 0], pos[:, 1]), 9)))
        pos = pos[order]
    else:
        raise ValueError(f"unsupported layout kind {kind!r}")
    pos = np.where(np.abs(pos) < 1e-9 * R, 0.0, pos)
    return CellLayout(kind=kind, B=B, R=float(R), bs_positions=pos)


def in_cell(kind: str, R: float, rel_xy: np.ndarray) -> np.ndarray:
    """Membership test for points given relative to their cell centre."""
    x = np.abs(rel_xy[..., 0])
    y = np.abs(rel_xy[..., 1])
    if kind == "hex":
        return (y <= SQRT3 * R / 2) & (SQRT3 * x + y <= SQRT3 * R)
    return (x <= R) & (y <= R)


def place_devices(layout: CellLayout, N_per_cell, min_dist_m: float, rng: np.random.Generator,
                  max_attempts: int = 10_000) -> np.ndarray:
    """Uniform device positions inside each cell, at least ``min_dist_m`` from the own BS."""
    R = layout.R
    if not 0 <= min_dist_m < R:
        raise ValueError("min_dist_m must lie in [0, R)")
    N = _per_cell(N_per_cell, layout.B, "N_per_cell")
    half_h = SQRT3 * R / 2 if layout.kind == "hex" else R
    out = np.empty((int(N.sum()), 2))
    pos = 0
    for b, n_b in enumerate(N):
        got = np.empty((0, 2))
        attempts = 0
        while got.shape[0] < n_b:
            if attempts >= max_attempts:
                raise RuntimeError("device placement rejection sampling did not finish; min_dist_m too large?")
            attempts += 1
            need = n_b - got.shape[0]
            cand = np.column_stack([
                rng.uniform(-R, R, size=2 * need + 8),
                rng.uniform(-half_h, half_h, size=2 * need + 8),
            ])
            ok = in_cell(layout.kind, R, cand) & (np.hypot(cand[:, 0], cand[:, 1]) >= min_dist_m)
            got = np.vstack([got, cand[ok]])
        out[pos:pos + n_b] = got[:n_b] + layout.bs_positions[b]
        pos += n_b
    return out


def path_loss_gain(distance_km):
    """Linear gain for the 128.1 + 37.6 log10(d) dB path-loss law (d in km)."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    g = 10.0 ** (-(PL_INTERCEPT_DB + PL_SLOPE_DB * np.log10(d)) / 10.0)
    return float(g) if g.ndim == 0 else g


def noise_variance_from_budget(tx_dBm: float, noise_dBm_per_Hz: float, bandwidth_Hz: float) -> float:
    """Noise power over the band, normalised by the transmit power."""
    if bandwidth_Hz <= 0:
        raise ValueError("bandwidth must be positive")
    return 10.0 ** ((noise_dBm_per_Hz + 10.0 * math.log10(bandwidth_Hz) - tx_dBm) / 10.0)


DEFAULT_SIGMA2 = noise_variance_from_budget(23.0, -169.0, 1e7)


def generate_sequences(seq_type: str, L: int, B: int, N, rng: np.random.Generator) -> np.ndarray:
    """Signature matrix ``S`` of shape (L, total devices).

    Type I: i.i.d. QPSK entries of unit modulus. Type II: columns uniform on
    the complex sphere of radius sqrt(L). Type III: i.i.d. CN(0, 1) entries.
    """
    if L < 2:
        raise ValueError("L must be >= 2")
    total = int(np.sum(_per_cell(N, B, "N")))
    seq_type = str(seq_type).upper()
    if seq_type == "I":
        c = math.sqrt(2.0) / 2.0
        re = rng.choice([-c, c], size=(L, total))
        im = rng.choice([-c, c], size=(L, total))
        return re + 1j * im
    z = (rng.standard_normal((L, total)) + 1j * rng.standard_normal((L, total))) / math.sqrt(2.0)
    if seq_type == "II":
        return z * (math.sqrt(L) / np.linalg.norm(z, axis=0))[None, :]
    if seq_type == "III":
        return z
    raise ValueError(f"unknown sequence type {seq_type!r}")


def compute_fading(layout: CellLayout, device_positions: np.ndarray) -> np.ndarray:
    """Gains G[b, i] from every device i to every BS b."""
    diff = device_positions[None, :, :] - layout.bs_positions[:, None, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    if np.any(dist <= 0):
        raise ValueError("a device coincides with a base station")
    return path_loss_gain(dist / 1000.0)


def sample_activity(B: int, K_per_cell, N_per_cell, rng: np.random.Generator) -> np.ndarray:
    N = _per_cell(N_per_cell, B, "N_per_cell")
    K = _per_cell(K_per_cell, B, "K_per_cell")
    if np.any(K > N):
        raise ValueError("K cannot exceed N in any cell")
    a = np.zeros(int(N.sum()))
    start = 0
    for n_b, k_b in zip(N, K):
        idx = rng.choice(n_b, size=k_b, replace=False)
        a[start + idx] = 1.0
        start += n_b
    return a


def make_instance(kind: str = "hex", B: int = 1, N=40, K=5, L: int = 16, seq_type: str = "I",
                  R: float = 500.0, sigma2: float = DEFAULT_SIGMA2, min_dist_m: float = 10.0,
                  seed: int = 0) -> SystemInstance:
    """Convenience constructor drawing a full ground-truth world from one seed."""
    layout = build_cell_layout(kind, B, R)
    Nv = _per_cell(N, B, "N")
    Kv = _per_cell(K, B, "K")
    positions = place_devices(layout, Nv, min_dist_m, substream(seed, "positions"))
    S = generate_sequences(seq_type, L, B, Nv, substream(seed, "sequences"))
    G = compute_fading(layout, positions)
    a_true = sample_activity(B, Kv, Nv, substream(seed, "activity"))
    return SystemInstance(layout=layout, N=Nv, K=Kv, device_positions=positions, S=S, G=G,
                          sigma2=float(sigma2), a_true=a_true, seed=int(seed), seq_type=str(seq_type).upper(),
                          meta={"min_dist_m": float(min_dist_m)})


def simulate_received(instance: SystemInstance, M: int, rng: np.random.Generator | None = None,
                      noise_rng: np.random.Generator | None = None) -> SampleCovariances:
    """Draw Rayleigh channels and noise, return per-BS sample covariances Y Y^H / M."""
    if M < 1:
        raise ValueError("M must be >= 1")
    if rng is None:
        rng = substream(instance.seed, "channels")
    if noise_rng is None:
        noise_rng = rng
    S, G, a = instance.S, instance.G, instance.a_true
    L = S.shape[0]
    act = np.flatnonzero(a > 0)
    mats = np.empty((instance.B, L, L), dtype=complex)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for b in range(instance.B):
        H = (rng.standard_normal((act.size, M)) + 1j * rng.standard_normal((act.size, M))) * inv_sqrt2
        W = (noise_rng.standard_normal((L, M)) + 1j * noise_rng.standard_normal((L, M))) * inv_sqrt2
        amp = np.sqrt(G[b, act] * a[act])
        Y = (S[:, act] * amp[None, :]) @ H + math.sqrt(instance.sigma2) * W
        C = (Y @ Y.conj().T) / M
        mats[b] = 0.5 * (C + C.conj().T)
    return SampleCovariances(mats=mats, M=int(M))


# ---------------------------------------------------------------- snapshots


def save_instance(instance: SystemInstance, out_dir) -> str:
    """Write ``meta.toml``, ``S.csv``, ``G.csv``, ``a_true.csv`` and ``positions.csv``."""
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "layout": instance.layout.kind,
        "B": int(instance.B),
        "R": float(instance.layout.R),
        "N": [int(v) for v in instance.N],
        "K": [int(v) for v in instance.K],
        "L": int(instance.L),
        "sigma2": float(instance.sigma2),
        "seed": int(instance.seed),
        "seq_type": instance.seq_type,
        "min_dist_m": float(instance.meta.get("min_dist_m", 10.0)),
    }
    with open(os.path.join(out_dir, "meta.toml"), "wb") as fh:
        tomli_w.dump(meta, fh)
    inter = np.empty((instance.L, 2 * instance.total_devices))
    inter[:, 0::2] = instance.S.real
    inter[:, 1::2] = instance.S.imag
    write_matrix(os.path.join(out_dir, "S.csv"), inter)
    write_matrix(os.path.join(out_dir, "G.csv"), instance.G)
    write_matrix(os.path.join(out_dir, "a_true.csv"), instance.a_true[:, None])
    write_matrix(os.path.join(out_dir, "positions.csv"), instance.device_positions)
    return os.fspath(out_dir)


def load_instance(in_dir) -> SystemInstance:
    """Inverse of :func:`save_instance`; arrays are read back exactly."""
    with open(os.path.join(in_dir, "meta.toml"), "rb") as fh:
        meta = tomllib.load(fh)
    layout = build_cell_layout(meta["layout"], int(meta["B"]), float(meta["R"]))
    inter = read_matrix(os.path.join(in_dir, "S.csv"))
    S = inter[:, 0::2] + 1j * inter[:, 1::2]
    G = read_matrix(os.path.join(in_dir, "G.csv"))
    a_true = read_matrix(os.path.join(in_dir, "a_true.csv"))[:, 0]
    pos = read_matrix(os.path.join(in_dir, "positions.csv"))
    return SystemInstance(layout=layout, N=np.asarray(meta["N"], dtype=int), K=np.asarray(meta["K"], dtype=int),
                          device_positions=pos, S=S, G=G, sigma2=float(meta["sigma2"]), a_true=a_true,
                          seed=int(meta["seed"]), seq_type=str(meta["seq_type"]),
                          meta={"min_dist_m": float(meta.get("min_dist_m", 10.0))})
