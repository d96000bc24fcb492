"""Configuration dataclasses and the JSON scenario file loader.

A scenario file is a nested key/value JSON document; every key maps onto a
field of one of the dataclasses below, and omitted keys keep the defaults.
Unknown keys are a :class:`ConfigurationError` so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

SPEED_OF_LIGHT = 299_792_458.0


@dataclass
class CarrierConfig:
    """5G-style carrier: 100 MHz band, 30 kHz subcarriers, pilots on every
    fourth subtone."""
    bandwidth_hz: float = 100e6
    scs_hz: float = 30e3
    n_subcarriers: int = 3264
    pilot_stride: int = 4
    carrier_freq_hz: float = 3.5e9

    @property
    def n_pilots(self) -> int:
        return -(-self.n_subcarriers // self.pilot_stride)

    @property
    def pilot_spacing_hz(self) -> float:
        return self.scs_hz * self.pilot_stride

    @property
    def bin_duration_s(self) -> float:
        # CIR delay-bin width after the inverse DFT over the pilot comb
        return 1.0 / (self.n_pilots * self.pilot_spacing_hz)

    def validate(self) -> None:
        if self.n_subcarriers < 1 or self.pilot_stride < 1:
            raise ConfigurationError("carrier: subcarriers and stride must be >= 1")
        if self.bandwidth_hz <= 0 or self.scs_hz <= 0:
            raise ConfigurationError("carrier: bandwidth and scs must be > 0")


@dataclass
class ImuNoiseConfig:
    """Smartphone-grade accelerometer error model.

    Defaults are the imuSensor configuration used throughout: temperature
    scale factor 0.008 %/degC, constant bias 0.1962 m/s^2, temperature bias
    0.0014715 m/s^2/degC, noise density 0.0012361 m/s^2/sqrt(Hz).
    """
    temperature_scale_factor: float = 0.008
    constant_bias: float = 0.1962
    temperature_bias: float = 0.0014715
    noise_density: float = 0.0012361
    reference_temperature: float = 25.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("temperature_scale_factor", "constant_bias",
                     "temperature_bias", "noise_density"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"imu: {name} must be >= 0")


@dataclass
class WalkerConfig:
    n_samples: int = 10000
    step_size: float = 0.20
    step_dt: float = 0.16
    max_turn: float = 0.4
    start: list[float] | None = None  # None -> floor center

    def validate(self) -> None:
        if self.n_samples < 2:
            raise ConfigurationError("walker: need at least 2 samples")
        if self.step_size <= 0 or self.step_dt <= 0:
            raise ConfigurationError("walker: step_size and step_dt must be > 0")


@dataclass
class FloorConfig:
    width: float = 30.0
    height: float = 20.0
    ue_height: float = 1.0
    trp_height: float = 3.0
    # TRP ground positions; z defaults to trp_height when omitted
    trps: list[list[float]] = field(default_factory=lambda: [
        [2.0, 2.0], [28.0, 2.0], [15.0, 18.0]])

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ConfigurationError("floor: extents must be > 0")
        if not self.trps:
            raise ConfigurationError("floor: need at least one TRP")

    def trp_positions(self) -> np.ndarray:
        out = np.empty((len(self.trps), 3))
        for i, t in enumerate(self.trps):
            out[i, :2] = t[:2]
            out[i, 2] = t[2] if len(t) > 2 else self.trp_height
        return out


@dataclass
class ChannelConfig:
    n_reflections: int = 4          # single-bounce wall images, at most 4
    reflection_coeff: float = 0.6
    snr_db: float = 20.0
    antenna_spacing: float = 0.05

    def validate(self) -> None:
        if not 0 <= self.n_reflections <= 4:
            raise ConfigurationError("channel: n_reflections must be in [0, 4]")


@dataclass
class ControlPointConfig:
    indices: list[int] | None = None  # fixed trajectory sample indices
    count: int = 3                    # used when indices is None
    radius: float = 0.20
    noise_sigma: float = 0.0

    def validate(self) -> None:
        if self.indices is not None and len(self.indices) == 0:
            raise ConfigurationError("control_points: empty index list")
        if self.indices is None and self.count < 1:
            raise ConfigurationError("control_points: count must be >= 1")
        if self.radius < 0 or self.noise_sigma < 0:
            raise ConfigurationError("control_points: radius and noise_sigma must be >= 0")


@dataclass
class FitConfig:
    learning_rate: float = 1e-4
    steps: int = 2000
    w_x: float = 1.0
    w_v: float = 1e3
    w_reg: float = 1e4
    init_sigma: float = 0.01  # per-component std of the correction init

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigurationError("fit: steps must be >= 1")
        if min(self.w_x, self.w_v, self.w_reg) <= 0:
            raise ConfigurationError("fit: loss weights must be > 0")
        if self.learning_rate <= 0:
            raise ConfigurationError("fit: learning_rate must be > 0")


@dataclass
class TrainConfig:
    hidden: list[int] = field(default_factory=lambda: [1024, 512])
    out_dim: int = 3
    learning_rate: float = 1e-4
    lr_drop: float = 0.1
    lr_drop_last: int = 50
    batch_size: int = 256
    epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    smooth_l1_beta: float = 1.0
    label_noise: float = 0.05     # uniform +-5 cm, pseudo-labels only
    cir_shift: int = 7            # shared circular shift range per sample
    dtype: str = "float64"
    input_scale: float = 1.0      # folded into the first layer after training
    center_output_bias: bool = True

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("train: batch_size and epochs must be >= 1")
        if self.smooth_l1_beta <= 0:
            raise ConfigurationError("train: smooth_l1_beta must be > 0")
        if self.dtype not in ("float64", "float32"):
            raise ConfigurationError("train: dtype must be float64 or float32")


@dataclass
class SmootherConfig:
    process_noise: float = 0.1   # white-acceleration scale, m/s^2
    obs_noise: float = 0.1       # position observation std, m
    init_vel_var: float = 1e9
    enabled: bool = True

    def validate(self) -> None:
        if self.process_noise <= 0 or self.obs_noise <= 0:
            raise ConfigurationError("smoother: noise scales must be > 0")


@dataclass
class PipelineConfig:
    epochs_supervised: int = 600
    epochs_imu: int = 100
    epochs_ablation: int = 300
    epochs_refine: list[int] = field(default_factory=lambda: [100, 200, 300, 400])
    knn_k: int = 7
    train_frac: float = 0.9
    snr_threshold_db: float = 0.0

    def validate(self) -> None:
        if not 0 < self.train_frac < 1:
            raise ConfigurationError("pipeline: train_frac must be in (0, 1)")
        if not self.epochs_refine:
            raise ConfigurationError("pipeline: epochs_refine must be nonempty")
        if self.knn_k < 1:
            raise ConfigurationError("pipeline: knn_k must be >= 1")


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    scenario_seed: int = 0
    floor: FloorConfig = field(default_factory=FloorConfig)
    carrier: CarrierConfig = field(default_factory=CarrierConfig)
    walker: WalkerConfig = field(default_factory=WalkerConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    control_points: ControlPointConfig = field(default_factory=ControlPointConfig)
    imu: ImuNoiseConfig = field(default_factory=ImuNoiseConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    antennas_per_trp: int = 1
    temperature: float | None = None   # None -> imu.reference_temperature
    t_bin: int = 20
    feature_bins: int = 256
    feature_mode: str = "magnitude"    # or "reim"
    reference_trp: int = 0
    reference_antenna: int = 0
    smoother_in_eval: bool = True

    def validate(self) -> None:
        for sub in (self.floor, self.carrier, self.walker, self.channel,
                    self.control_points, self.imu, self.fit, self.train,
                    self.smoother, self.pipeline):
            sub.validate()
        if self.antennas_per_trp < 1:
            raise ConfigurationError("antennas_per_trp must be >= 1")
        if self.feature_mode not in ("magnitude", "reim"):
            raise ConfigurationError("feature_mode must be 'magnitude' or 'reim'")
        if not 0 <= self.t_bin < self.carrier.n_pilots:
            raise ConfigurationError("t_bin must lie inside the CIR")
        if self.feature_bins > self.carrier.n_pilots:
            raise ConfigurationError("feature_bins exceeds CIR length")
        if not 0 <= self.reference_trp < len(self.floor.trps):
            raise ConfigurationError("reference_trp out of range")
        if not 0 <= self.reference_antenna < self.antennas_per_trp:
            raise ConfigurationError("reference_antenna out of range")


def _build(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigurationError(f"{path}: unknown key '{key}'")
        ftype = fields[key].type
        if isinstance(value, dict) and ftype not in ("dict",):
            sub = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING else None
            if sub is not None and dataclasses.is_dataclass(sub):
                kwargs[key] = _build(type(sub), value, f"{path}.{key}")
                continue
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def scenario_from_dict(data: dict) -> ScenarioConfig:
    cfg = _build(ScenarioConfig, data, "scenario")
    cfg.validate()
    return cfg


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)
