"""CSI preprocessing: CFR -> CIR, LoS peak alignment, SNR estimation and
filtering, per-antenna normalization, training-time CIR jitter.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, EmptyDatasetError, InputError
from .sim import CsiDataset


@dataclass(frozen=True)
class CirDataset:
    """Channel impulse responses per (sample, TRP, antenna, delay bin)."""
    cir: np.ndarray            # complex (S, T, A, B)
    snr_db: np.ndarray         # (S, T, A)
    sample_indices: np.ndarray  # (S,)
    meta: dict


@dataclass(frozen=True)
class FeatureMatrix:
    """Flattened per-sample features in (TRP-major, antenna, bin) order."""
    features: np.ndarray       # (S, T*A*bins*(1 or 2))
    sample_indices: np.ndarray  # (S,) surviving trajectory rows
    norms: np.ndarray          # (S, T, A) per-antenna scale removed
    n_trps: int
    n_antennas: int
    feature_bins: int
    mode: str = "magnitude"

    @property
    def block_size(self) -> int:
        return self.features.shape[1] // (self.n_trps * self.n_antennas)


@dataclass
class AlignReport:
    shifts: np.ndarray          # (S,) applied circular shift per sample
    peak_found: np.ndarray      # (S,) bool
    fallback_t0: int            # dataset-median peak used when none found
    t_bin: int = 20
    dropped: list = field(default_factory=list)


def cfr_to_cir(dataset: CsiDataset, n_pilots: int | None = None) -> CirDataset:
    """Inverse DFT over the pilot comb, per (sample, TRP, antenna).

    Uses the 1/K convention, so ``||cir||_2 == ||cfr||_2 / sqrt(K)``.
    """
    expected = n_pilots if n_pilots is not None else dataset.meta.get("n_pilots")
    if expected is not None and dataset.cfr.shape[-1] != expected:
        raise InputError(
            f"CFR length {dataset.cfr.shape[-1]} != pilot count {expected}")
    cir = np.fft.ifft(dataset.cfr, axis=-1)
    return CirDataset(cir, dataset.snr_db, dataset.sample_indices, dict(dataset.meta))


def detect_los_peak(cir: np.ndarray, threshold: float | None = None,
                    max_fraction: float = 0.3) -> int | None:
    """Earliest local maximum of |cir| above the threshold.

    ``threshold=None`` applies the default policy
    ``max(6 * median(|cir|), max_fraction * max(|cir|))``.  The
    max-relative floor sits above the -13 dB leakage sidelobes of a
    band-limited path, which otherwise register as spurious early peaks
    once alignment rolls the wrapped tail ahead of the true arrival.
    Returns None when no bin qualifies.
    """
    mag = np.abs(np.asarray(cir))
    if mag.size == 0:
        raise InputError("empty CIR")
    if threshold is None:
        threshold = max(6.0 * float(np.median(mag)),
                        max_fraction * float(np.max(mag)))
    left = np.empty_like(mag)
    left[0] = -np.inf
    left[1:] = mag[:-1]
    right = np.empty_like(mag)
    right[-1] = -np.inf
    right[:-1] = mag[1:]
    peaks = np.flatnonzero((mag > threshold) & (mag >= left) & (mag >= right))
    return int(peaks[0]) if peaks.size else None


def align_los(dataset: CirDataset, reference: tuple[int, int] = (0, 0),
              t_bin: int = 20, threshold: float | None = None
              ) -> tuple[CirDataset, AlignReport]:
    """Roll every CIR of a sample so the reference antenna's first peak
    lands on ``t_bin``; samples with no detectable peak use the dataset
    median peak as the assumed arrival bin."""
    s, n_trp, n_ant, b = dataset.cir.shape
    rt, ra = reference
    if not (0 <= rt < n_trp and 0 <= ra < n_ant):
        raise ConfigurationError(f"reference antenna {reference} out of range")
    if not 0 <= t_bin < b:
        raise ConfigurationError(f"t_bin {t_bin} outside CIR of length {b}")

    t0 = np.empty(s, dtype=np.int64)
    found = np.zeros(s, dtype=bool)
    for i in range(s):
        peak = detect_los_peak(dataset.cir[i, rt, ra], threshold)
        if peak is not None:
            t0[i] = peak
            found[i] = True
    fallback = int(np.median(t0[found])) if found.any() else t_bin
    t0[~found] = fallback

    shifts = t_bin - t0
    out = np.empty_like(dataset.cir)
    for i in range(s):
        out[i] = np.roll(dataset.cir[i], shifts[i], axis=-1)
    report = AlignReport(shifts=shifts, peak_found=found,
                         fallback_t0=fallback, t_bin=t_bin)
    meta = dict(dataset.meta)
    meta["aligned_t_bin"] = t_bin
    return CirDataset(out, dataset.snr_db, dataset.sample_indices, meta), report


def compute_snr(dataset: CirDataset, signal_window: tuple[int, int] | None = None,
                noise_window: tuple[int, int] | None = None,
                t_bin: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Window-based SNR estimate in dB per (sample, TRP, antenna).

    Signal power is taken around the aligned LoS window minus the noise
    floor; noise power comes from a window in the middle of the delay
    axis (circularly farthest from the peak, where leakage sidelobes are
    negligible), scaled to the full band.  Returns
    (snr_db, zero_noise_mask); zero noise power yields +inf.
    """
    b = dataset.cir.shape[-1]
    if signal_window is None:
        signal_window = (max(0, t_bin - 4), min(b, t_bin + 28))
    if noise_window is None:
        noise_window = (3 * b // 8, 5 * b // 8)
    s0, s1 = signal_window
    n0, n1 = noise_window
    if s1 <= s0 or n1 <= n0:
        raise InputError("SNR windows must be nonempty")

    mag2 = np.abs(dataset.cir) ** 2
    noise_bin = np.mean(mag2[..., n0:n1], axis=-1)
    sig = np.sum(mag2[..., s0:s1], axis=-1) - (s1 - s0) * noise_bin
    sig = np.maximum(sig, 0.0)
    total_noise = noise_bin * b
    zero_noise = total_noise <= 0
    with np.errstate(divide="ignore"):
        snr = np.where(zero_noise, np.inf,
                       10.0 * np.log10(np.where(zero_noise, 1.0, sig)
                                       / np.where(zero_noise, 1.0, total_noise)))
    return snr, zero_noise


def filter_and_normalize(dataset: CirDataset, snr_db: np.ndarray,
                         snr_threshold: float, feature_bins: int = 256,
                         reference: tuple[int, int] = (0, 0),
                         mode: str = "magnitude"
                         ) -> tuple[FeatureMatrix, np.ndarray]:
    """Drop samples whose reference-antenna SNR is below the threshold,
    truncate CIRs to the leading ``feature_bins`` bins, scale every
    (sample, TRP, antenna) block to unit L2 norm and flatten TRP-major.

    Returns (features, kept_sample_indices).
    """
    if not np.isfinite(snr_threshold) and snr_threshold > 0:
        raise InputError("snr_threshold must be finite or -inf")
    s, n_trp, n_ant, b = dataset.cir.shape
    if feature_bins > b:
        raise InputError(f"feature_bins {feature_bins} exceeds CIR length {b}")
    rt, ra = reference
    keep = snr_db[:, rt, ra] >= snr_threshold
    if not keep.any():
        raise EmptyDatasetError("SNR filter removed every sample")

    cir = dataset.cir[keep, :, :, :feature_bins]
    if mode == "magnitude":
        blocks = np.abs(cir)
    elif mode == "reim":
        blocks = np.concatenate([cir.real, cir.imag], axis=-1)
    else:
        raise InputError(f"unknown feature mode '{mode}'")
    norms = np.linalg.norm(blocks, axis=-1)
    safe = np.where(norms > 0, norms, 1.0)
    blocks = blocks / safe[..., None]
    features = blocks.reshape(blocks.shape[0], -1).astype(np.float64)
    kept_idx = dataset.sample_indices[keep]
    fm = FeatureMatrix(features, kept_idx, norms, n_trp, n_ant,
                       feature_bins, mode)
    return fm, kept_idx


def flat_index(trp: int, antenna: int, bin_: int, n_antennas: int,
               block_size: int) -> int:
    """(TRP, antenna, bin) -> flat feature column."""
    return (trp * n_antennas + antenna) * block_size + bin_


def unflat_index(col: int, n_antennas: int, block_size: int) -> tuple[int, int, int]:
    block, bin_ = divmod(col, block_size)
    trp, antenna = divmod(block, n_antennas)
    return trp, antenna, bin_


def augment_cir_shift(rows: np.ndarray, rng: np.random.Generator,
                      block_size: int, max_shift: int = 7) -> np.ndarray:
    """Jitter each feature row by one shared circular shift of all its
    antenna blocks, drawn uniformly from [-max_shift, max_shift]."""
    rows2 = np.atleast_2d(rows)
    n, width = rows2.shape
    if width % block_size:
        raise InputError("row width not a multiple of the block size")
    shifts = rng.integers(-max_shift, max_shift + 1, size=n)
    blocks = rows2.reshape(n, -1, block_size)
    idx = (np.arange(block_size)[None, :] - shifts[:, None]) % block_size
    out = np.take_along_axis(blocks, idx[:, None, :], axis=2).reshape(n, width)
    return out if rows.ndim == 2 else out[0]
