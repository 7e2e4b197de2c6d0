"""Pieces shared by the scan runners: scene, ensembles, detector and the
per-point interferometric sensor model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import constants as C
from ..analysis.io import config_hash
from ..errors import ConfigError
from ..noise import APDConfig, NoiseBudget, apd_noise
from ..sample import (
    EnsembleSpec,
    InstrumentProfiles,
    StrainField,
    _primitive_from_dict,
    load_scene,
    psf_for_volume,
    voxel_ensemble,
)
from ..sequences import PulseSequence, build_strain_cpmg, ideal_quadratures
from .config import ScanConfig


def load_field(cfg: ScanConfig) -> StrainField:
    """Scene from a file path, an inline ``{"primitives": [...]}`` or empty."""
    if cfg.scene is None:
        return StrainField(())
    if isinstance(cfg.scene, dict):
        unknown = set(cfg.scene) - {"primitives", "metadata"}
        if unknown:
            raise ConfigError(f"unknown scene keys {sorted(unknown)}")
        return StrainField(tuple(_primitive_from_dict(p) for p in cfg.scene.get("primitives", [])))
    if not Path(cfg.scene).exists():
        raise ConfigError(f"scene file {cfg.scene} not found")
    return load_scene(cfg.scene)


def ensemble_spec(cfg: ScanConfig) -> EnsembleSpec:
    e = cfg.ensemble
    return EnsembleSpec.from_t2star(e.TD, e.T2star, hyperfine=e.hyperfine, strata=e.strata)


def cpmg_sequence(cfg: ScanConfig, delta_cm: float | None = None) -> PulseSequence:
    s = cfg.sequence
    d = s.operating_point if delta_cm is None else delta_cm
    return build_strain_cpmg(s.n_swaps, s.tau1, d, s.delta_diff, s.t_pi, phi0=s.phi0)


def apd_config(cfg: ScanConfig) -> APDConfig:
    d = cfg.detector
    return APDConfig(d.responsivity, d.gain, d.excess_noise, d.transimpedance, d.bandwidth, temperature=d.temperature)


def detector_budget(cfg: ScanConfig) -> NoiseBudget:
    apd = apd_config(cfg)
    return apd_noise(apd, apd.power_for_voltage(cfg.detector.fi_volts))


def profiles(cfg: ScanConfig) -> InstrumentProfiles:
    return InstrumentProfiles(
        laser_inhomogeneity=cfg.qdm.laser_inhomogeneity,
        laser_halfwidth=cfg.qdm.fov / 2,
        laser_center=(cfg.qdm.fov / 2, cfg.qdm.fov / 2),
        temp_drift_rate=cfg.drift.rate / C.DD_DT,
        drift_sine_amplitude=cfg.drift.sine_amplitude,
        drift_sine_period=cfg.drift.sine_period,
    )


def shots_per_quadrature(cfg: ScanConfig, seconds: float) -> float:
    """Readings per quadrature sign accumulated in ``seconds``."""
    pairs = cfg.timing.rep_rate * seconds
    return pairs / 2 if cfg.sequence.readout == "xy" else pairs


def base_metadata(cfg: ScanConfig) -> dict:
    return {"config_hash": config_hash(cfg.to_dict()), "seed": cfg.seed, "mode": cfg.mode,
            "config": cfg.to_dict()}


def wrap(x):
    return (x + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class PointSensor:
    """Interferometric readout of one voxel.

    The ensemble coherence at drive detuning ``delta`` is
    ``chi * exp(i theta)`` with ``theta = 2 pi (delta - mz) tau1 + phi0``;
    ``chi`` captures dephasing and intra-voxel spread.  Fluorescence of the
    four readouts is ``fi (1 +- contrast Im/Re)`` of that coherence.
    """

    mz: float
    chi: complex
    contrast: float
    tau1: float
    phi0: float
    fi: float
    sigma_v: float  # per-reading voltage noise (always the budget value)
    noisy: bool = True

    @classmethod
    def at(cls, cfg: ScanConfig, position, field_: StrainField, budget: NoiseBudget | None = None,
           psf=None, spec: EnsembleSpec | None = None, mw_scale: float = 1.0) -> "PointSensor":
        psf = psf or psf_for_volume(cfg.psf.volume, cfg.psf.aspect)
        spec = spec or ensemble_spec(cfg)
        ens = voxel_ensemble(position, psf, field_, spec)
        mz = float(field_.mz(*np.asarray(position, float)))
        return cls.from_ensemble(cfg, ens, mz, budget, mw_scale)

    @classmethod
    def from_ensemble(cls, cfg: ScanConfig, ens, mz: float, budget: NoiseBudget | None = None,
                      mw_scale: float = 1.0) -> "PointSensor":
        s = cfg.sequence
        seq = cpmg_sequence(cfg)
        sin_avg, cos_avg = ideal_quadratures(seq, ens)
        theta_c = 2 * np.pi * (s.operating_point - mz) * s.tau1 + s.phi0
        chi = complex(cos_avg, sin_avg) * np.exp(-1j * theta_c)
        budget = budget or detector_budget(cfg)
        return cls(mz, chi, s.contrast * mw_scale, s.tau1, s.phi0, cfg.detector.fi_volts, budget.v_total,
                   cfg.detector.noise)

    @property
    def fringe_amplitude(self) -> float:
        """Visibility amplitude ``A |chi|``."""
        return self.contrast * abs(self.chi)

    def theta(self, delta, shift=0.0):
        return 2 * np.pi * (np.asarray(delta, float) - self.mz - shift) * self.tau1 + self.phi0

    def fluorescence(self, delta, shift=0.0):
        """``(fX+, fX-, fY+, fY-)`` expectations."""
        q = self.chi * np.exp(1j * self.theta(delta, shift))
        a = self.contrast * self.fi
        return (self.fi + a * q.imag, self.fi - a * q.imag, self.fi + a * q.real, self.fi - a * q.real)

    def read(self, delta, shift, shots: float, rng: np.random.Generator | None):
        """Noisy averaged readings for each element of ``delta``/``shift``."""
        f = np.broadcast_arrays(*self.fluorescence(delta, shift))
        if rng is None or not self.noisy or self.sigma_v == 0:
            return tuple(np.array(v, float) for v in f)
        s = self.sigma_v / np.sqrt(shots)
        return tuple(v + rng.normal(0.0, s, np.shape(v)) for v in f)

    def phase_sigma(self, shots: float) -> float:
        """Phase noise (rad) of one XY estimate from ``shots`` readings per sign."""
        sigma_nu = math.sqrt(2) * self.sigma_v / (2 * self.fi) / math.sqrt(shots)
        return sigma_nu / max(self.fringe_amplitude, 1e-300)

    def mz_sigma(self, shots: float) -> float:
        return self.phase_sigma(shots) / (2 * np.pi * self.tau1)

    def estimate_phase(self, readings):
        """``atan2`` phase and normalized amplitude from the four readings."""
        xp, xm, yp, ym = readings
        nx = (xp - xm) / (xp + xm)
        ny = (yp - ym) / (yp + ym)
        return np.arctan2(nx, ny), np.hypot(nx, ny)
