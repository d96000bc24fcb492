"""Dead-reckoning, the forward-backward correction optimizer and
whole-trajectory pseudo-label extraction.

A segment spans the samples between two consecutive control-point visits.
Per-step acceleration corrections are optimized by plain full-batch
gradient descent on the misalignment objective (see :mod:`imuloc.kernels`
for the loss definition and its exact reverse-mode gradient); the best
iterate by total loss is returned, which keeps the result non-worsening
for any fixed step count.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import FitConfig
from .errors import ConfigurationError, FitDivergedError, InputError
from .sim import ControlPoint, ImuSeries, substream


@dataclass(frozen=True)
class Segment:
    """IMU steps between two anchors; arrays cover N steps / N+1 states."""
    dt: np.ndarray          # (N,)
    accel_imu: np.ndarray   # (N, D)
    x_start: np.ndarray     # (D,)
    v_start: np.ndarray
    x_end: np.ndarray
    v_end: np.ndarray
    first_sample: int = 0   # trajectory row of state 0

    def __post_init__(self):
        if self.accel_imu.shape[0] != len(self.dt) or len(self.dt) < 1:
            raise InputError("segment needs >= 1 step with matching dt")

    @property
    def n_steps(self) -> int:
        return len(self.dt)


@dataclass
class FitResult:
    corrections: np.ndarray   # (N, D)
    x_fwd: np.ndarray         # (N+1, D)
    v_fwd: np.ndarray
    x_bwd: np.ndarray
    v_bwd: np.ndarray
    pseudo_labels: np.ndarray  # (N+1, D) = (x_fwd + x_bwd) / 2
    loss_total: float
    loss_x: float
    loss_v: float
    loss_reg: float
    initial_loss: float
    best_step: int


@dataclass
class TrajectoryFit:
    """Pseudo-labels over the full sample stream plus diagnostics."""
    pseudo_labels: np.ndarray     # (S, D)
    dead_reckoning: np.ndarray    # (S, D) zero-correction baseline
    one_sided: np.ndarray         # (S,) bool: no terminating anchor
    segments: list[dict] = field(default_factory=list)


def dead_reckon(accel: np.ndarray, x0: np.ndarray, v0: np.ndarray,
                dt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Double integration: v[k+1] = v[k] + a[k] dt[k], then
    x[k+1] = x[k] + v[k+1] dt[k].  Returns N+1 states including the
    initial one."""
    accel = np.asarray(accel, dtype=np.float64)
    dt = np.asarray(dt, dtype=np.float64)
    if accel.shape[0] != len(dt):
        raise InputError("accel and dt length mismatch")
    x, v = kernels.integrate_forward(accel, dt, np.asarray(x0, dtype=np.float64),
                                     np.asarray(v0, dtype=np.float64))
    return x, v


def integrate_forward(segment: Segment, corrections: np.ndarray
                      ) -> tuple[np.ndarray, np.ndarray]:
    return kernels.integrate_forward(segment.accel_imu + corrections,
                                     segment.dt, segment.x_start, segment.v_start)


def integrate_backward(segment: Segment, corrections: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray]:
    return kernels.integrate_backward(segment.accel_imu + corrections,
                                      segment.dt, segment.x_end, segment.v_end)


def _anchor_arrays(segment: Segment, model_anchors, anchor_mask):
    n = segment.n_steps
    d = segment.accel_imu.shape[1]
    if model_anchors is None:
        return np.zeros((n + 1, d)), np.zeros(n + 1, dtype=bool)
    anchors = np.asarray(model_anchors, dtype=np.float64)
    if anchors.shape != (n + 1, d):
        raise InputError(f"model anchors must have shape {(n + 1, d)}")
    if anchor_mask is None:
        mask = np.ones(n + 1, dtype=bool)
    else:
        mask = np.asarray(anchor_mask, dtype=bool)
        if mask.shape != (n + 1,):
            raise InputError("anchor mask length mismatch")
    return anchors, mask


def fb_loss(segment: Segment, corrections: np.ndarray, config: FitConfig,
            model_anchors: np.ndarray | None = None,
            anchor_mask: np.ndarray | None = None):
    """Loss components and exact gradient w.r.t. the corrections.

    Returns (total, loss_x, loss_v, loss_reg, grad).  With model anchors,
    the position term compares both integration passes against the anchor
    at every masked state instead of against each other.
    """
    anchors, mask = _anchor_arrays(segment, model_anchors, anchor_mask)
    cor = np.asarray(corrections, dtype=np.float64)
    if cor.shape != segment.accel_imu.shape:
        raise InputError("corrections shape mismatch")
    return kernels.fb_loss_grad(cor, segment.accel_imu, segment.dt,
                                segment.x_start, segment.v_start,
                                segment.x_end, segment.v_end,
                                config.w_x, config.w_v, config.w_reg,
                                anchors, mask)


def _stable_lr(args, shape, lr: float, rng: np.random.Generator) -> float:
    """Cap the step size at the gradient-descent stability bound.

    The objective is exactly quadratic in the corrections, so a
    Hessian-vector product is a single gradient difference and a few
    power iterations estimate the top eigenvalue.  Segments short enough
    for the configured rate (anything up to ~1000 steps at the defaults)
    are untouched; very long segments get a safely stable rate instead of
    diverging.  The top of the spectrum is often a near-degenerate
    cluster, so the (always-from-below) power estimate converges slowly;
    the cap 1.0/lambda tolerates a 2x underestimate, and fit_segment
    halves further if descent still fails outright.
    """
    g0 = kernels.fb_loss_grad(np.zeros(shape), *args)[4]
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(12):
        hv = kernels.fb_loss_grad(v, *args)[4] - g0
        lam = np.linalg.norm(hv)
        if lam == 0.0 or not np.isfinite(lam):
            return lr
        v = hv / lam
    return min(lr, 1.0 / lam)


def fit_segment(segment: Segment, config: FitConfig, seed: int,
                model_anchors: np.ndarray | None = None,
                anchor_mask: np.ndarray | None = None,
                init_corrections: np.ndarray | None = None) -> FitResult:
    """Gradient descent on the corrections from a small Gaussian init."""
    config.validate()
    anchors, mask = _anchor_arrays(segment, model_anchors, anchor_mask)
    rng = substream(seed, 4)
    if init_corrections is not None:
        cor = np.array(init_corrections, dtype=np.float64)
    else:
        cor = rng.normal(0.0, config.init_sigma, size=segment.accel_imu.shape)

    args = (segment.accel_imu, segment.dt, segment.x_start, segment.v_start,
            segment.x_end, segment.v_end, config.w_x, config.w_v, config.w_reg,
            anchors, mask)
    step_size = _stable_lr(args, cor.shape, config.learning_rate, rng)
    init_cor = cor.copy()
    best_cor = cor.copy()
    initial = None
    for attempt in range(9):
        cor[...] = init_cor
        best_loss = np.inf
        best_step = 0
        total = np.inf
        failed_at = None
        for step in range(config.steps):
            total, _, _, _, grad = kernels.fb_loss_grad(cor, *args)
            if not np.isfinite(total):
                if step == 0:
                    raise FitDivergedError(0)  # non-finite inputs
                failed_at = step
                break
            if initial is None:
                initial = total
            if total < best_loss:
                best_loss = total
                best_cor[...] = cor
                best_step = step
            cor -= step_size * grad
        if failed_at is None and (best_step > 0 or total <= initial):
            break
        if attempt == 8:
            raise FitDivergedError(failed_at if failed_at is not None else config.steps - 1)
        # descent blew up or never improved: the eigenvalue estimate
        # missed a top cluster, halve and rerun
        step_size *= 0.5

    total, lx, lv, lreg, _ = kernels.fb_loss_grad(best_cor, *args)
    at = segment.accel_imu + best_cor
    x_f, v_f = kernels.integrate_forward(at, segment.dt, segment.x_start, segment.v_start)
    x_b, v_b = kernels.integrate_backward(at, segment.dt, segment.x_end, segment.v_end)
    return FitResult(best_cor, x_f, v_f, x_b, v_b, 0.5 * (x_f + x_b),
                     float(total), float(lx), float(lv), float(lreg),
                     float(initial), best_step)


def build_segments(imu: ImuSeries, control_points: list[ControlPoint]
                   ) -> tuple[list[Segment], list[tuple[str, int]]]:
    """Cut the sample stream at control-point visits.

    Returns (segments, loose_ends); loose ends are ('head', first_anchor)
    and/or ('tail', last_anchor) stretches with no terminating anchor.
    """
    if not control_points:
        raise ConfigurationError("need at least one control point")
    cps = sorted(control_points, key=lambda c: c.sample_index)
    n_samples = len(imu.dt) + 1
    for cp in cps:
        if not 0 <= cp.sample_index < n_samples:
            raise ConfigurationError("control point outside the sample stream")

    segments = []
    for a, b in zip(cps[:-1], cps[1:]):
        i, j = a.sample_index, b.sample_index
        if j <= i:
            continue
        segments.append(Segment(
            dt=imu.dt[i:j], accel_imu=imu.accel[i:j],
            x_start=np.asarray(a.position, dtype=np.float64),
            v_start=np.asarray(a.velocity, dtype=np.float64),
            x_end=np.asarray(b.position, dtype=np.float64),
            v_end=np.asarray(b.velocity, dtype=np.float64),
            first_sample=i))
    loose = []
    if cps[0].sample_index > 0:
        loose.append(("head", cps[0].sample_index))
    if cps[-1].sample_index < n_samples - 1:
        loose.append(("tail", cps[-1].sample_index))
    return segments, loose


def fit_trajectory(imu: ImuSeries, control_points: list[ControlPoint],
                   config: FitConfig, seed: int,
                   model_anchors: np.ndarray | None = None,
                   model_anchor_mask: np.ndarray | None = None) -> TrajectoryFit:
    """Fit every anchored segment independently and concatenate the
    pseudo-labels; stretches without a terminating anchor fall back to
    one-sided dead-reckoning from the nearest anchor and are flagged.

    ``model_anchors`` (S, D) with its optional (S,) mask turns on the
    refinement loss that pulls both passes toward model predictions.
    """
    cps = sorted(control_points, key=lambda c: c.sample_index)
    segments, loose = build_segments(imu, cps)
    n_samples = len(imu.dt) + 1
    d = imu.accel.shape[1]

    pseudo = np.full((n_samples, d), np.nan)
    dr = np.full((n_samples, d), np.nan)
    one_sided = np.zeros(n_samples, dtype=bool)
    diags = []

    for k, seg in enumerate(segments):
        i, j = seg.first_sample, seg.first_sample + seg.n_steps
        anchors = mask = None
        if model_anchors is not None:
            anchors = np.asarray(model_anchors, dtype=np.float64)[i:j + 1]
            mask = (np.ones(j + 1 - i, dtype=bool) if model_anchor_mask is None
                    else np.asarray(model_anchor_mask, dtype=bool)[i:j + 1])
        res = fit_segment(seg, config, seed=seed, model_anchors=anchors,
                          anchor_mask=mask,
                          init_corrections=_segment_init(seg, config, seed, k))
        pseudo[i:j + 1] = res.pseudo_labels
        x_dr, _ = kernels.integrate_forward(seg.accel_imu, seg.dt,
                                            seg.x_start, seg.v_start)
        dr[i:j + 1] = x_dr
        diags.append({
            "first_sample": i, "n_steps": seg.n_steps,
            "initial_loss": res.initial_loss, "final_loss": res.loss_total,
            "loss_x": res.loss_x, "loss_v": res.loss_v, "loss_reg": res.loss_reg,
            # each pass hits its own anchor exactly; the residual at the
            # opposite anchor measures the remaining inconsistency
            "fwd_end_residual": float(np.linalg.norm(res.x_fwd[-1] - seg.x_end)),
            "bwd_start_residual": float(np.linalg.norm(res.x_bwd[0] - seg.x_start)),
            "one_sided": False,
        })

    for kind, anchor_idx in loose:
        cp = cps[0] if kind == "head" else cps[-1]
        if kind == "head":
            i, j = 0, anchor_idx
            x, _ = kernels.integrate_backward(imu.accel[i:j], imu.dt[i:j],
                                              np.asarray(cp.position, float),
                                              np.asarray(cp.velocity, float))
            sl = slice(i, j)  # anchor sample itself belongs to a segment
            pseudo[sl] = x[:-1]
            dr[sl] = x[:-1]
            one_sided[sl] = True
        else:
            i, j = anchor_idx, n_samples - 1
            x, _ = kernels.integrate_forward(imu.accel[i:j], imu.dt[i:j],
                                             np.asarray(cp.position, float),
                                             np.asarray(cp.velocity, float))
            pseudo[i + 1:j + 1] = x[1:]
            dr[i + 1:j + 1] = x[1:]
            one_sided[i + 1:j + 1] = True
        diags.append({"first_sample": i, "n_steps": j - i, "one_sided": True,
                      "kind": kind})

    if not segments:
        # single anchor, never revisited: everything is one-sided
        cp = cps[0]
        pseudo[cp.sample_index] = cp.position
        dr[cp.sample_index] = cp.position

    # anchor samples take the measured control-point positions
    for cp in cps:
        pseudo[cp.sample_index] = cp.position
        dr[cp.sample_index] = cp.position

    return TrajectoryFit(pseudo, dr, one_sided, diags)


def _segment_init(seg: Segment, config: FitConfig, seed: int, index: int) -> np.ndarray:
    rng = substream(seed, 4, index)
    return rng.normal(0.0, config.init_sigma, size=seg.accel_imu.shape)
