"""Scenario simulation: random-walk trajectories, smartphone-grade IMU
noise, control-point placement and a geometric multipath CSI generator.

Every operation is a pure function of (inputs, seed); per-sample RNG
substreams are derived from (seed, sample_index) so chunked and serial
CSI synthesis agree bit-for-bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import (
    SPEED_OF_LIGHT,
    ControlPointConfig,
    ImuNoiseConfig,
    ScenarioConfig,
)
from .errors import ConfigurationError, DegenerateGeometryError, InputError

_WALLS = ("x0", "x1", "y0", "y1")


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...) -- stable across runs."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class TrajectorySeries:
    """Ground-truth kinematics sampled on a strictly increasing time grid.

    ``velocities[i]`` is the backward difference ``(x[i]-x[i-1])/dt[i-1]``
    (with ``velocities[0] = velocities[1]``) and ``accelerations[i]`` the
    matching difference of velocities, so double integration of the stored
    accelerations from the initial state reproduces ``positions`` exactly.
    """
    timestamps: np.ndarray   # (N,)
    positions: np.ndarray    # (N, D)
    velocities: np.ndarray   # (N, D)
    accelerations: np.ndarray  # (N, D)

    def __post_init__(self):
        n = len(self.timestamps)
        if not (self.positions.shape[0] == self.velocities.shape[0]
                == self.accelerations.shape[0] == n):
            raise InputError("trajectory arrays must have equal length")
        if n >= 2 and np.min(np.diff(self.timestamps)) <= 0:
            raise InputError("timestamps must be strictly increasing")

    @property
    def n_samples(self) -> int:
        return len(self.timestamps)

    def step_dt(self) -> np.ndarray:
        return np.diff(self.timestamps)

    def step_accel(self) -> np.ndarray:
        """Per-step acceleration rows aligned with ``step_dt()``."""
        return self.accelerations[1:]


@dataclass(frozen=True)
class ImuSeries:
    """Noisy per-step global-frame accelerations; row k covers the step
    from sample k to k+1."""
    dt: np.ndarray      # (N-1,)
    accel: np.ndarray   # (N-1, D)
    temperature: float = 25.0

    def __post_init__(self):
        if len(self.dt) != self.accel.shape[0]:
            raise InputError("dt and accel must have equal length")
        if len(self.dt) and np.min(self.dt) <= 0:
            raise InputError("all dt must be > 0")


@dataclass(frozen=True)
class ControlPoint:
    """One anchoring visit: measured position/velocity at a sample index."""
    sample_index: int
    position: np.ndarray   # (D,)
    velocity: np.ndarray   # (D,)
    radius: float = 0.20
    cp_id: int = 0


@dataclass(frozen=True)
class CsiDataset:
    """Pilot-subtone channel frequency responses per (sample, TRP, antenna)."""
    cfr: np.ndarray            # complex64 (S, T, A, K)
    snr_db: np.ndarray         # (S, T, A) injected SNR
    sample_indices: np.ndarray  # (S,) -> trajectory row
    meta: dict


def simulate_trajectory(config: ScenarioConfig, seed: int) -> TrajectorySeries:
    """Random walk with bounded per-step turns, reflecting off the floor
    rectangle walls; fixed step length and step duration."""
    w = config.walker
    floor = config.floor
    w.validate()
    floor.validate()
    n = w.n_samples
    rng = substream(seed, 0)

    pos = np.empty((n, 2))
    pos[0] = w.start if w.start is not None else (floor.width / 2, floor.height / 2)
    heading = rng.uniform(0, 2 * np.pi)
    turns = rng.uniform(-w.max_turn, w.max_turn, size=n - 1)
    for i in range(1, n):
        heading += turns[i - 1]
        p = pos[i - 1] + w.step_size * np.array([np.cos(heading), np.sin(heading)])
        # mirror the step (and heading) off any wall it crosses
        for _ in range(8):
            if p[0] < 0:
                p[0] = -p[0]
                heading = np.pi - heading
            elif p[0] > floor.width:
                p[0] = 2 * floor.width - p[0]
                heading = np.pi - heading
            elif p[1] < 0:
                p[1] = -p[1]
                heading = -heading
            elif p[1] > floor.height:
                p[1] = 2 * floor.height - p[1]
                heading = -heading
            else:
                break
        pos[i] = np.clip(p, [0, 0], [floor.width, floor.height])

    t = np.arange(n) * w.step_dt
    dt = np.diff(t)
    vel = np.empty_like(pos)
    vel[1:] = (pos[1:] - pos[:-1]) / dt[:, None]
    vel[0] = vel[1]
    acc = np.zeros_like(pos)
    acc[1:] = (vel[1:] - vel[:-1]) / dt[:, None]
    return TrajectorySeries(t, pos, vel, acc)


def simulate_imu(truth: TrajectorySeries, cfg: ImuNoiseConfig,
                 temperature: float | None = None) -> ImuSeries:
    """Apply scale error, per-axis split constant/temperature bias and
    white noise with std ``noise_density * sqrt(1/dt)`` to the true
    per-step accelerations."""
    if truth.n_samples < 2:
        raise InputError("need at least 2 samples to simulate an IMU")
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    dt = truth.step_dt()
    accel = truth.step_accel().copy()
    d = accel.shape[1]
    temp = cfg.reference_temperature if temperature is None else temperature
    dtemp = temp - cfg.reference_temperature

    scale = 1.0 + cfg.temperature_scale_factor / 100.0 * dtemp
    # scalar bias specs are split across axes to preserve total magnitude
    sign_cb = rng.integers(0, 2, size=d) * 2 - 1
    sign_tb = rng.integers(0, 2, size=d) * 2 - 1
    bias = (sign_cb * cfg.constant_bias + sign_tb * cfg.temperature_bias * dtemp) / np.sqrt(d)
    sigma = cfg.noise_density * np.sqrt(1.0 / dt)
    noise = rng.standard_normal(accel.shape) * sigma[:, None]
    return ImuSeries(dt, accel * scale + bias + noise, temp)


def _anchored_runs(dist_ok: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of consecutive True values as (start, stop) inclusive."""
    runs = []
    i = 0
    n = len(dist_ok)
    while i < n:
        if dist_ok[i]:
            j = i
            while j + 1 < n and dist_ok[j + 1]:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    return runs


def place_control_points(truth: TrajectorySeries, spec: ControlPointConfig,
                         seed: int) -> list[ControlPoint]:
    """Expand physical control points into one anchor record per visit.

    A visit is a maximal run of samples within ``radius`` of a control
    point location; its anchor sample is the run midpoint, except that a
    run containing an explicitly listed index anchors at that index.
    Measured positions get optional Gaussian noise applied before the
    velocity difference, so velocity noise is induced the same way a real
    re-measurement would induce it.
    """
    spec.validate()
    n = truth.n_samples
    rng = substream(seed, 1)
    if spec.indices is not None:
        idx = np.asarray(spec.indices, dtype=int)
        if np.any(idx < 0) or np.any(idx >= n):
            raise ConfigurationError("control point index out of range")
    else:
        if spec.count > n:
            raise ConfigurationError("more control points than samples")
        idx = np.sort(rng.choice(n, size=spec.count, replace=False))
    locations = truth.positions[idx]

    dists = np.linalg.norm(truth.positions[:, None, :] - locations[None, :, :], axis=2)
    nearest = np.argmin(dists, axis=1)
    covered = dists[np.arange(n), nearest] <= spec.radius

    fixed = set(int(i) for i in idx) if spec.indices is not None else set()
    anchors: list[ControlPoint] = []
    for start, stop in _anchored_runs(covered):
        listed = [i for i in range(start, stop + 1) if i in fixed]
        mid = listed[0] if listed else (start + stop) // 2
        cp_id = int(nearest[mid])
        pos_noise = rng.normal(0.0, spec.noise_sigma, size=2) if spec.noise_sigma else np.zeros(2)
        nbr_noise = rng.normal(0.0, spec.noise_sigma, size=2) if spec.noise_sigma else np.zeros(2)
        p_meas = truth.positions[mid] + pos_noise
        if mid >= 1:
            nbr = truth.positions[mid - 1] + nbr_noise
            vel = (p_meas - nbr) / (truth.timestamps[mid] - truth.timestamps[mid - 1])
        else:
            nbr = truth.positions[1] + nbr_noise
            vel = (nbr - p_meas) / (truth.timestamps[1] - truth.timestamps[0])
        anchors.append(ControlPoint(mid, p_meas, vel, spec.radius, cp_id))
    return anchors


def _antenna_positions(config: ScenarioConfig) -> np.ndarray:
    """(T, A, 3) antenna phase centers: small linear array along x."""
    trps = config.floor.trp_positions()
    a = np.arange(config.antennas_per_trp) * config.channel.antenna_spacing
    out = np.repeat(trps[:, None, :], config.antennas_per_trp, axis=1).copy()
    out[:, :, 0] += a[None, :]
    return out


def _image_points(ant: np.ndarray, config: ScenarioConfig) -> np.ndarray:
    """Single-bounce wall images of one antenna position, fixed wall order."""
    w, h = config.floor.width, config.floor.height
    x, y, z = ant
    images = np.array([
        [-x, y, z],
        [2 * w - x, y, z],
        [x, -y, z],
        [x, 2 * h - y, z],
    ])
    return images[: config.channel.n_reflections]


def synth_csi(truth: TrajectorySeries, config: ScenarioConfig, seed: int) -> CsiDataset:
    """LoS + single-bounce image-method reflections + complex Gaussian
    noise at the configured SNR, sampled on the pilot comb."""
    config.carrier.validate()
    config.channel.validate()
    if len(config.floor.trps) < 1:
        raise ConfigurationError("need at least one TRP")

    carrier = config.carrier
    k_pilots = carrier.n_pilots
    df = carrier.pilot_spacing_hz
    fc = carrier.carrier_freq_hz
    gamma = config.channel.reflection_coeff

    ue = np.column_stack([truth.positions,
                          np.full(truth.n_samples, config.floor.ue_height)])
    ants = _antenna_positions(config)
    n_trp, n_ant = ants.shape[:2]
    s = truth.n_samples

    # path source points per (t, a): antenna itself + wall images
    sources = []
    for t in range(n_trp):
        for a in range(n_ant):
            pts = np.vstack([ants[t, a][None, :], _image_points(ants[t, a], config)])
            amps = np.concatenate([[1.0], np.full(len(pts) - 1, gamma)])
            sources.append((pts, amps))

    cfr = np.empty((s, n_trp, n_ant, k_pilots), dtype=np.complex64)
    pilots = np.arange(k_pilots)
    chunk = max(1, int(4e6 / max(1, k_pilots * 5)))
    for t in range(n_trp):
        for a in range(n_ant):
            pts, amps = sources[t * n_ant + a]
            for lo in range(0, s, chunk):
                hi = min(lo + chunk, s)
                diff = ue[lo:hi, None, :] - pts[None, :, :]
                dist = np.linalg.norm(diff, axis=2)           # (chunk, L)
                if np.min(dist) < 1e-9:
                    raise DegenerateGeometryError(
                        f"UE colocated with TRP {t} antenna {a}")
                tau = dist / SPEED_OF_LIGHT
                gain = (amps[None, :] / dist) * np.exp(-2j * np.pi * fc * tau)
                phase = np.exp(-2j * np.pi * tau[:, :, None] * (df * pilots)[None, None, :])
                cfr[lo:hi, t, a, :] = np.einsum("cl,clk->ck", gain, phase)

    snr_db = np.full((s, n_trp, n_ant), float(config.channel.snr_db))
    if np.isfinite(config.channel.snr_db):
        p_sig = np.mean(np.abs(cfr.astype(np.complex128)) ** 2, axis=-1)
        sigma = np.sqrt(p_sig * 10.0 ** (-config.channel.snr_db / 10.0) / 2.0)
        for i in range(s):
            rng = substream(seed, 2, i)
            nz = rng.standard_normal((n_trp, n_ant, k_pilots, 2))
            cfr[i] += (sigma[i][:, :, None] * (nz[..., 0] + 1j * nz[..., 1])).astype(np.complex64)

    meta = {
        "n_pilots": k_pilots,
        "pilot_spacing_hz": df,
        "bin_duration_s": carrier.bin_duration_s,
        "n_trps": n_trp,
        "antennas_per_trp": n_ant,
        "snr_db": float(config.channel.snr_db),
    }
    return CsiDataset(cfr, snr_db, np.arange(s, dtype=np.int64), meta)


def train_test_split(n: int, train_frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random split by sample; returns (train_idx, test_idx) sorted."""
    rng = substream(seed, 3)
    perm = rng.permutation(n)
    cut = int(round(n * train_frac))
    return np.sort(perm[:cut]), np.sort(perm[cut:])
