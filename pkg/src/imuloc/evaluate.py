"""Error metrics, the constant-velocity RTS smoother used at validation
time, and the iterative pseudo-label refinement loop.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .config import FitConfig, SmootherConfig, TrainConfig
from .errors import InputError, NumericalError
from .fit import fit_trajectory
from .model import MlpModel, TrainResult, mlp_forward, train_mlp
from .sim import ControlPoint, ImuSeries

PERCENTILE = 90.0


def horizontal_error(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Euclidean distance in the ground plane (height ignored)."""
    pred = np.atleast_2d(pred)
    truth = np.atleast_2d(truth)
    if pred.shape[0] != truth.shape[0]:
        raise InputError("pred and truth lengths differ")
    d = pred[:, :2] - truth[:, :2]
    return np.sqrt(np.sum(d * d, axis=1))


@dataclass(frozen=True)
class ErrorReport:
    """Per-sample horizontal errors with the standard aggregates."""
    errors: np.ndarray
    mean: float
    median: float
    p90: float

    @classmethod
    def from_errors(cls, errors: np.ndarray) -> "ErrorReport":
        errors = np.asarray(errors, dtype=np.float64)
        return cls(errors, float(np.mean(errors)), float(np.median(errors)),
                   float(np.percentile(errors, PERCENTILE)))

    @classmethod
    def from_positions(cls, pred, truth) -> "ErrorReport":
        return cls.from_errors(horizontal_error(pred, truth))


def seed_statistics(values: list[float]) -> dict:
    """Mean +- std and 0.1/0.9 quantile band over seed replicates."""
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "q10": float(np.quantile(v, 0.1)), "q90": float(np.quantile(v, 0.9)),
            "median": float(np.median(v))}


def rts_smooth(positions: np.ndarray, timestamps: np.ndarray,
               config: SmootherConfig | None = None) -> np.ndarray:
    """Forward Kalman filter + backward Rauch-Tung-Striebel pass under a
    per-axis constant-velocity model; output length equals input."""
    cfg = config or SmootherConfig()
    cfg.validate()
    pos = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    if pos.shape[0] < 2:
        raise InputError("need at least 2 samples to smooth")
    if pos.shape[0] != len(timestamps):
        raise InputError("positions and timestamps lengths differ")
    dts = np.diff(np.asarray(timestamps, dtype=np.float64))
    if np.min(dts) <= 0:
        raise InputError("timestamps must be strictly increasing")

    n, d = pos.shape
    q2 = cfg.process_noise ** 2
    r = cfg.obs_noise ** 2
    out = np.empty_like(pos)
    for axis in range(d):
        z = pos[:, axis]
        m = np.empty((n, 2))
        p = np.empty((n, 2, 2))
        m_pred = np.empty((n, 2))
        p_pred = np.empty((n, 2, 2))
        m[0] = (z[0], 0.0)
        p[0] = np.diag([r, cfg.init_vel_var])
        m_pred[0] = m[0]
        p_pred[0] = p[0]
        for k in range(1, n):
            dt = dts[k - 1]
            f = np.array([[1.0, dt], [0.0, 1.0]])
            q = q2 * np.array([[dt ** 3 / 3.0, dt ** 2 / 2.0],
                               [dt ** 2 / 2.0, dt]])
            m_pred[k] = f @ m[k - 1]
            p_pred[k] = f @ p[k - 1] @ f.T + q
            s = p_pred[k, 0, 0] + r
            if not np.isfinite(s) or s <= 0:
                raise NumericalError(f"singular innovation covariance at sample {k}")
            gain = p_pred[k][:, 0] / s
            m[k] = m_pred[k] + gain * (z[k] - m_pred[k, 0])
            p[k] = p_pred[k] - np.outer(gain, p_pred[k][0, :])
        ms = m.copy()
        for k in range(n - 2, -1, -1):
            dt = dts[k]
            f = np.array([[1.0, dt], [0.0, 1.0]])
            try:
                gain = p[k] @ f.T @ np.linalg.inv(p_pred[k + 1])
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"singular predicted covariance at sample {k}") from exc
            ms[k] = m[k] + gain @ (ms[k + 1] - m_pred[k + 1])
        out[:, axis] = ms[:, 0]
    return out if np.asarray(positions).ndim == 2 else out[:, 0]


def model_hash(model: MlpModel) -> str:
    h = hashlib.sha256()
    for w in model.weights + model.biases:
        h.update(np.ascontiguousarray(w, dtype=np.float64).tobytes())
    return h.hexdigest()


@dataclass
class RefinementIteration:
    pseudo_labels: np.ndarray
    train: TrainResult
    test_pred: np.ndarray | None
    pseudo_report: ErrorReport | None = None
    test_report: ErrorReport | None = None
    model_hash: str = ""


@dataclass
class RefinementResult:
    iterations: list[RefinementIteration] = field(default_factory=list)


def refinement_loop(train_features: np.ndarray, train_rows: np.ndarray,
                    imu: ImuSeries, control_points: list[ControlPoint],
                    fit_config: FitConfig, train_config: TrainConfig,
                    epochs_schedule: list[int], seed: int,
                    test_features: np.ndarray | None = None,
                    test_rows: np.ndarray | None = None,
                    truth_positions: np.ndarray | None = None,
                    augment_block: int | None = None) -> RefinementResult:
    """Alternate forward-backward fitting and network training.

    Iteration 0 fits plain pseudo-labels and trains a fresh network on
    them; each later iteration predicts the train rows, refits with those
    predictions as anchors and retrains a fresh network.  Per-iteration
    pseudo-label and test error reports are recorded when
    ``truth_positions`` is given.
    """
    if len(epochs_schedule) < 1:
        raise InputError("need at least one refinement iteration")
    n_samples = len(imu.dt) + 1
    result = RefinementResult()
    anchors = None
    anchor_mask = None

    for it, epochs in enumerate(epochs_schedule):
        fit_seed = _child_int(seed, 7, it)
        tf = fit_trajectory(imu, control_points, fit_config, fit_seed,
                            model_anchors=anchors, model_anchor_mask=anchor_mask)
        pseudo = tf.pseudo_labels

        cfg = _with_epochs(train_config, epochs)
        tr = train_mlp(train_features, pseudo[train_rows], cfg,
                       seed=_child_int(seed, 8, it), pseudo_labels=True,
                       augment_block=augment_block)

        item = RefinementIteration(pseudo, tr, None, model_hash=model_hash(tr.model))
        if truth_positions is not None:
            item.pseudo_report = ErrorReport.from_positions(pseudo, truth_positions)
        if test_features is not None and len(test_features):
            item.test_pred = mlp_forward(tr.model, test_features)
            if truth_positions is not None and test_rows is not None:
                item.test_report = ErrorReport.from_positions(
                    item.test_pred, truth_positions[test_rows])
        result.iterations.append(item)

        if it + 1 < len(epochs_schedule):
            pred = mlp_forward(tr.model, train_features)[:, :pseudo.shape[1]]
            anchors = np.zeros((n_samples, pseudo.shape[1]))
            anchors[train_rows] = pred
            anchor_mask = np.zeros(n_samples, dtype=bool)
            anchor_mask[train_rows] = True
    return result


def _with_epochs(cfg: TrainConfig, epochs: int) -> TrainConfig:
    import dataclasses
    return dataclasses.replace(cfg, epochs=epochs)


def _child_int(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=key)
    return int(ss.generate_state(1)[0])
