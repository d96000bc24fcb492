"""CSI -> position regressors: a from-scratch fully-connected network
(tanh hidden layers, Adam, smooth-L1 loss, training-time augmentations)
and the k-nearest-neighbor baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .config import TrainConfig
from .container import read_container, write_container
from .csi import augment_cir_shift
from .errors import InputError, NumericalError
from .sim import substream


@dataclass
class MlpModel:
    """Affine layers with tanh on all but the last."""
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights],
                        [b.copy() for b in self.biases])


def init_mlp(input_dim: int, hidden: list[int], out_dim: int, seed: int,
             dtype=np.float64) -> MlpModel:
    """Uniform fan-in scaled init (+-1/sqrt(fan_in)), zero biases."""
    rng = substream(seed, 5)
    widths = [input_dim] + list(hidden) + [out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpModel(weights, biases)


def mlp_forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Batch forward pass; raises on feature-dimension mismatch."""
    x = np.atleast_2d(x)
    if x.shape[1] != model.weights[0].shape[0]:
        raise InputError(
            f"feature dim {x.shape[1]} != model input {model.weights[0].shape[0]}")
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
    return h


def _forward_cached(model: MlpModel, x: np.ndarray):
    acts = [x]
    last = len(model.weights) - 1
    h = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return acts


def smooth_l1(pred: np.ndarray, target: np.ndarray, beta: float = 1.0
              ) -> tuple[float, np.ndarray]:
    """Mean smooth-L1 over all elements and its gradient w.r.t. pred."""
    if pred.shape != target.shape:
        raise InputError("pred and target shapes differ")
    if beta <= 0:
        raise InputError("beta must be > 0")
    r = pred - target
    a = np.abs(r)
    quad = a < beta
    loss = np.where(quad, 0.5 * r * r / beta, a - 0.5 * beta)
    grad = np.clip(r / beta, -1.0, 1.0) / r.size
    return float(np.mean(loss)), grad


def mlp_backward(model: MlpModel, x: np.ndarray, grad_out: np.ndarray
                 ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of a scalar loss w.r.t. all parameters, given d(loss)/d(output)."""
    acts = _forward_cached(model, x)
    gw = [np.empty_like(w) for w in model.weights]
    gb = [np.empty_like(b) for b in model.biases]
    delta = grad_out
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i][...] = acts[i].T @ delta
        gb[i][...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (1.0 - acts[i] ** 2)
    return gw, gb


class Adam:
    """Standard Adam with bias-corrected moment estimates."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


@dataclass
class TrainResult:
    model: MlpModel          # final-epoch parameters
    best_model: MlpModel     # lowest mean epoch loss
    loss_curve: np.ndarray   # (epochs,)
    config: TrainConfig = field(repr=False, default=None)


def train_mlp(features: np.ndarray, labels: np.ndarray, config: TrainConfig,
              seed: int, pseudo_labels: bool = False,
              augment_block: int | None = None) -> TrainResult:
    """Shuffled mini-batch Adam training with smooth-L1 loss.

    ``pseudo_labels=True`` enables the uniform +-label_noise jitter on the
    targets; ``augment_block`` (feature block size) enables the shared
    circular CIR shift per sample.  Deterministic given the seed.

    ``config.input_scale`` multiplies the features during training and is
    folded into the first affine layer of the returned models, so
    inference always consumes raw features.  ``center_output_bias``
    starts the output bias at the label mean; position targets sit far
    from zero and Adam at small rates crawls there otherwise.
    """
    config.validate()
    dtype = np.float64 if config.dtype == "float64" else np.float32
    x = np.asarray(features, dtype=dtype)
    y = np.asarray(labels, dtype=dtype)
    if y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise InputError("features and labels must be 2-D with equal rows")
    label_dim = y.shape[1]
    if y.shape[1] < config.out_dim:
        pad = np.zeros((y.shape[0], config.out_dim - y.shape[1]), dtype=dtype)
        y = np.hstack([y, pad])

    if config.input_scale != 1.0:
        x = x * dtype(config.input_scale)
    model = init_mlp(x.shape[1], config.hidden, config.out_dim, seed, dtype)
    if config.center_output_bias and len(y):
        model.biases[-1][:label_dim] = y[:, :label_dim].mean(axis=0)
    params = model.weights + model.biases
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = substream(seed, 6)

    n = x.shape[0]
    curve = np.empty(config.epochs)
    best = (np.inf, model.copy())
    for epoch in range(config.epochs):
        if config.epochs > config.lr_drop_last and epoch >= config.epochs - config.lr_drop_last:
            opt.lr = config.learning_rate * config.lr_drop
        else:
            opt.lr = config.learning_rate
        perm = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            sel = perm[lo:lo + config.batch_size]
            xb = x[sel]
            yb = y[sel]
            if augment_block:
                xb = augment_cir_shift(xb, rng, augment_block, config.cir_shift)
            if pseudo_labels and config.label_noise > 0:
                yb = yb + rng.uniform(-config.label_noise, config.label_noise,
                                      size=yb.shape).astype(dtype)
            pred = mlp_forward(model, xb)
            loss, gout = smooth_l1(pred, yb, config.smooth_l1_beta)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            gw, gb = mlp_backward(model, xb, gout.astype(dtype))
            opt.step(gw + gb)
            total += loss * len(sel)
        curve[epoch] = total / n
        if curve[epoch] < best[0]:
            best = (curve[epoch], model.copy())
    best_model = best[1]
    if config.input_scale != 1.0:
        model.weights[0] *= dtype(config.input_scale)
        if best_model is not model:
            best_model.weights[0] *= dtype(config.input_scale)
    return TrainResult(model, best_model, curve, config)


def save_mlp(path: str | Path, model: MlpModel, meta: dict | None = None,
             config: TrainConfig | None = None) -> None:
    arrays = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"w{i}"] = w.astype(np.float32)
        arrays[f"b{i}"] = b.astype(np.float32)
    info = {"widths": model.widths, "activation": "tanh", "n_layers": len(model.weights)}
    if config is not None:
        import dataclasses
        import hashlib
        import json
        blob = json.dumps(dataclasses.asdict(config), sort_keys=True).encode()
        info["config_hash"] = hashlib.sha256(blob).hexdigest()[:16]
    info.update(meta or {})
    write_container(path, arrays, info)


def load_mlp(path: str | Path) -> tuple[MlpModel, dict]:
    arrays, meta = read_container(path)
    n = meta["n_layers"]
    model = MlpModel([arrays[f"w{i}"].astype(np.float64) for i in range(n)],
                     [arrays[f"b{i}"].astype(np.float64) for i in range(n)])
    return model, meta


@dataclass(frozen=True)
class KnnModel:
    """L1-distance neighbor regressor over stored training rows."""
    features: np.ndarray
    labels: np.ndarray
    k: int = 7

    def __post_init__(self):
        if not 1 <= self.k <= len(self.features):
            raise InputError("k must be in [1, train size]")


def knn_predict(model: KnnModel, queries: np.ndarray) -> np.ndarray:
    """Mean label of the k nearest train rows (L1 distance, ties broken
    by lower train index via stable ordering)."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    dists = kernels.l1_distances(q, np.asarray(model.features, dtype=np.float64))
    order = np.argsort(dists, axis=1, kind="stable")[:, :model.k]
    preds = model.labels[order].mean(axis=1)
    return preds if np.asarray(queries).ndim == 2 else preds[0]
