"""Scan configuration: nested dataclasses loaded from JSON with strict keys.

Example::

    {
      "mode": "confocal",
      "seed": 7,
      "scene": "scene.json",
      "grid": {"origin": [0, 0], "spacing": 1.0, "extent": [20, 20], "depths": [0]},
      "sequence": {"tau1": 21e-6, "n_swaps": 2},
      "timing": {"dwell": 1.0, "rep_rate": 3800}
    }

Every section and key is optional except ``seed``; unknown keys raise
:class:`~nvstrain.errors.ConfigError`.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import constants as C
from ..errors import ConfigError

MODES = ("confocal", "gradiometry", "qdm", "odmr", "calibrate", "allan", "noise-budget", "stitch")


@dataclass
class GridConfig:
    origin: list = field(default_factory=lambda: [0.0, 0.0])  # um
    spacing: float = 1.0  # um
    extent: list = field(default_factory=lambda: [10.0, 10.0])  # um
    depths: list = field(default_factory=lambda: [0.0])  # stage z, um

    def axes(self):
        nx, ny = (int(np.floor(e / self.spacing + 1e-9)) + 1 for e in self.extent)
        x = self.origin[0] + self.spacing * np.arange(nx)
        y = self.origin[1] + self.spacing * np.arange(ny)
        return x, y, np.asarray(self.depths, float)


@dataclass
class SequenceConfig:
    tau1: float = C.TAU_1
    n_swaps: int = 2
    t_pi: float = C.T_PI
    delta_cm: float | None = None  # operating point; default 1/tau1
    delta_diff: float = 0.0
    phi0: float = 0.0
    contrast: float = 0.03
    readout: str = "xy"  # "xy" (four quadratures) or "x" (+X/-X only)

    @property
    def operating_point(self) -> float:
        return 1.0 / self.tau1 if self.delta_cm is None else self.delta_cm


@dataclass
class EnsembleConfig:
    TD: float = C.T_D
    T2star: float = C.T2_STAR
    strata: int = 64
    hyperfine: float = C.HYPERFINE_14N


@dataclass
class TimingConfig:
    dwell: float = 1.0  # s per point (confocal) or per visit cycle (gradiometry)
    rep_rate: float = C.REP_RATE  # +X/-X pairs per second
    init_time: float = 3e-6  # laser pulse per readout (bookkeeping only)


@dataclass
class DetectorConfig:
    noise: bool = True
    fi_volts: float = 5.2e-3  # APD output for the unpolarized ensemble
    responsivity: float = 0.45
    gain: float = 100.0
    excess_noise: float = 4.0
    transimpedance: float = 250e3
    bandwidth: float = 700e3
    temperature: float = 300.0


@dataclass
class PSFConfig:
    volume: float = C.CONFOCAL_VOLUME
    aspect: float = 2.9
    depth_scale: float = C.DEPTH_SCALE


@dataclass
class DriftConfig:
    rate: float = 0.0  # Hz/s, linear drift of D
    sine_amplitude: float = 0.0  # Hz
    sine_period: float = 3600.0  # s


@dataclass
class GradiometryConfig:
    reference: list = field(default_factory=lambda: [0.0, 0.0, 0.0])  # um
    point: list | None = None  # single scan point for time-series mode
    cycles: int = 1000
    process_noise: float = 0.0  # Hz^2/s^3 on the drift rate
    settle_cycles: int = 0


@dataclass
class QDMConfig:
    fov: float = 150.0  # um
    pixels: int = 32
    f_demod: float = 6.5e3
    n_demod: int = 24
    photons: float = 2e4  # photoelectrons per exposure at the laser peak
    offset_spread: float = 30.0  # e-, fixed pattern per exposure slot
    counts_per_electron: float = 0.5
    repeats: int = 8
    laser_inhomogeneity: float = 0.6
    fov_origins: list = field(default_factory=lambda: [[0.0, 0.0]])
    fov_interval: float = 60.0  # s between FOV acquisitions (drift bookkeeping)


@dataclass
class ODMRConfig:
    bias: float = 2.1e-3  # T along the aligned axis
    f_start: float = 2.78e9
    f_stop: float = 2.96e9
    f_step: float = 0.1e6
    fwhm: float = 1e6
    contrast: float = 0.02
    noise: float = 1e-4  # per-point sigma of normalized fluorescence


@dataclass
class CalibrationConfig:
    span: float = 2.0  # sweep width in fringe periods
    points: int = 81
    sweep: str = "cm"  # "cm" or "diff"


@dataclass
class AllanConfig:
    duration: float = 2000.0  # s of virtual acquisition
    bin: float = 0.5  # s per reading
    point: list = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class ScanConfig:
    mode: str = "confocal"
    seed: int | None = None
    scene: str | dict | None = None
    output: str = "out"
    grid: GridConfig = field(default_factory=GridConfig)
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    timing: TimingConfig = field(default_factory=TimingConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    psf: PSFConfig = field(default_factory=PSFConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    gradiometry: GradiometryConfig = field(default_factory=GradiometryConfig)
    qdm: QDMConfig = field(default_factory=QDMConfig)
    odmr: ODMRConfig = field(default_factory=ODMRConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    allan: AllanConfig = field(default_factory=AllanConfig)
    mask_fraction: float = 0.2

    def validate(self) -> "ScanConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.seed is None or not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("an explicit integer seed is required")
        if self.grid.spacing <= 0:
            raise ConfigError("grid.spacing must be positive")
        if len(self.grid.origin) != 2 or len(self.grid.extent) != 2 or min(self.grid.extent) < 0:
            raise ConfigError("grid.origin and grid.extent need two entries, extent >= 0")
        if self.timing.dwell <= 0 or self.timing.rep_rate <= 0:
            raise ConfigError("timing.dwell and timing.rep_rate must be positive")
        if self.sequence.tau1 <= 0 or self.sequence.n_swaps < 2 or self.sequence.n_swaps % 2:
            raise ConfigError("sequence.tau1 > 0 and an even n_swaps >= 2 are required")
        if self.sequence.readout not in ("xy", "x"):
            raise ConfigError("sequence.readout must be 'xy' or 'x'")
        if not 0 < self.sequence.contrast <= 1:
            raise ConfigError("sequence.contrast must lie in (0, 1]")
        if self.ensemble.T2star >= self.ensemble.TD or self.ensemble.strata < 8:
            raise ConfigError("ensemble needs T2star < TD and strata >= 8")
        if self.qdm.pixels < 2 or self.qdm.fov <= 0 or self.qdm.repeats < 2:
            raise ConfigError("qdm needs pixels >= 2, fov > 0 and repeats >= 2")
        if self.calibration.sweep not in ("cm", "diff"):
            raise ConfigError("calibration.sweep must be 'cm' or 'diff'")
        if self.allan.bin <= 0 or self.allan.duration < 2 * self.allan.bin:
            raise ConfigError("allan.duration must cover at least two bins")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _hints(cls):
    return typing.get_type_hints(cls)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    hints = _hints(cls)
    kwargs = {}
    for k, v in data.items():
        t = hints[k]
        if dataclasses.is_dataclass(t):
            kwargs[k] = _build(t, v, f"{where}.{k}" if where else k)
        else:
            kwargs[k] = _coerce(t, v, f"{where}.{k}" if where else k)
    return cls(**kwargs)


def _coerce(t, v, where):
    if v is None:
        return v
    args = typing.get_args(t)
    if args and type(None) in args and len(args) == 2:
        t = args[0] if args[1] is type(None) else args[1]
    if t is float:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(v)
    if t is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{where} must be an integer")
        return v
    if t is bool and not isinstance(v, bool):
        raise ConfigError(f"{where} must be true/false")
    return v


def config_from_dict(data: dict) -> ScanConfig:
    return _build(ScanConfig, data, "").validate()


def load_config(path) -> ScanConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = _build(ScanConfig, data, "")
    if isinstance(cfg.scene, str) and not Path(cfg.scene).is_absolute():
        cfg.scene = str(Path(path).parent / cfg.scene)
    return cfg


def apply_overrides(cfg: ScanConfig, overrides: dict) -> ScanConfig:
    """Set dotted keys (``"sequence.tau1"``) to JSON-parsed values."""
    data = cfg.to_dict()
    for key, value in overrides.items():
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return _build(ScanConfig, data, "")
