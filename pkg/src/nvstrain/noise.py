"""Detector noise: APD shot/Johnson budget and lock-in camera acquisition."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import constants as C


@dataclass(frozen=True)
class APDConfig:
    """Linear-mode APD with transimpedance amplifier.

    ``responsivity`` is R0 at unit gain (A/W).  Dark currents default to the
    upper limits implied by the detector NEP.
    """

    responsivity: float = 0.45
    gain: float = 100.0
    excess_noise: float = 4.0
    transimpedance: float = 250e3
    bandwidth: float = 700e3
    dark_surface: float = 200e-12
    dark_bulk: float = 2e-12
    temperature: float = 300.0

    def __post_init__(self):
        for name in ("responsivity", "gain", "transimpedance", "temperature"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.bandwidth < 0 or self.dark_surface < 0 or self.dark_bulk < 0:
            raise ValueError("bandwidth and dark currents must be non-negative")
        if self.excess_noise < 1:
            raise ValueError("excess noise factor must be >= 1")

    @property
    def volts_per_watt(self) -> float:
        return self.responsivity * self.gain * self.transimpedance

    def power_for_voltage(self, volts: float) -> float:
        return volts / self.volts_per_watt


@dataclass(frozen=True)
class NoiseBudget:
    i_n: float  # A rms
    v_sn: float  # V rms
    v_jn: float  # V rms
    signal: float = 0.0  # V, mean output for one readout
    sigma_nu: float = float("nan")

    @property
    def v_total(self) -> float:
        return float(np.hypot(self.v_sn, self.v_jn))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["v_total"] = self.v_total
        return d


def apd_noise(config: APDConfig, optical_power: float) -> NoiseBudget:
    """RMS noise of one APD reading at incident power ``optical_power`` (W).

    ``i_N = sqrt(2q [I_DS + (I_DB M^2 + R0 M^2 P) F] B)``, shot-noise voltage
    ``i_N * R_T`` and Johnson noise ``sqrt(4 k T R_T B)``.  ``sigma_nu`` is
    filled in for a balanced ``+X/-X`` pair at this power.
    """
    if optical_power < 0:
        raise ValueError("optical power must be non-negative")
    c = config
    m2 = c.gain**2
    current = c.dark_surface + (c.dark_bulk * m2 + c.responsivity * m2 * optical_power) * c.excess_noise
    i_n = np.sqrt(2 * C.ELECTRON_CHARGE * current * c.bandwidth)
    v_sn = i_n * c.transimpedance
    v_jn = np.sqrt(4 * C.BOLTZMANN * c.temperature * c.transimpedance * c.bandwidth)
    signal = optical_power * c.volts_per_watt
    budget = NoiseBudget(float(i_n), float(v_sn), float(v_jn), float(signal))
    if signal > 0:
        budget = NoiseBudget(budget.i_n, budget.v_sn, budget.v_jn, budget.signal,
                             visibility_uncertainty(budget, signal, signal))
    return budget


def visibility_uncertainty(budget: NoiseBudget, f_plus: float, f_minus: float, exact: bool = False) -> float:
    """Uncertainty of ``nu = (f+ - f-)/(f+ + f-)`` from per-reading voltage noise.

    The default is the small-visibility form ``sqrt(2) v / (f+ + f-)``;
    ``exact=True`` propagates both readings with their ``(1 -+ nu)`` weights.
    """
    total = f_plus + f_minus
    if total <= 0:
        raise ValueError("f+ + f- must be positive")
    v = budget.v_total
    if not exact:
        return float(np.sqrt(2) * v / total)
    nu = (f_plus - f_minus) / total
    return float(np.hypot((1 - nu) * v, (1 + nu) * v) / total)


def frequency_noise_per_shot(sigma_nu: float, tau1: float, fringe_amplitude: float) -> float:
    """Frequency uncertainty (Hz) of one ``+X/-X`` pair at the steepest fringe point."""
    if fringe_amplitude <= 0:
        raise ValueError("fringe amplitude must be positive")
    return sigma_nu / (2 * np.pi * tau1 * fringe_amplitude)


def strain_noise_floor(
    sigma_nu: float,
    tau1: float,
    fringe_amplitude: float,
    rep_rate: float = C.REP_RATE,
    coupling: float = C.COUPLING_AVERAGE,
) -> float:
    """Strain sensitivity in 1/sqrt(Hz) for ``rep_rate`` pairs per second."""
    if rep_rate <= 0:
        raise ValueError("rep_rate must be positive")
    return frequency_noise_per_shot(sigma_nu, tau1, fringe_amplitude) / (coupling * np.sqrt(rep_rate))


def rep_rate_for_floor(floor: float, sigma_nu: float, tau1: float, fringe_amplitude: float,
                       coupling: float = C.COUPLING_AVERAGE) -> float:
    """Pair repetition rate that yields ``floor`` (inverse of :func:`strain_noise_floor`)."""
    sf = frequency_noise_per_shot(sigma_nu, tau1, fringe_amplitude)
    return float((sf / (coupling * floor)) ** 2)


def volume_normalized(floor: float, volume: float) -> float:
    """Sensitivity per sqrt(Hz um^-3), assuming sqrt-volume scaling."""
    return float(floor * np.sqrt(volume))


def sample_reading(expected, budget, integration_shots: int, rng: np.random.Generator):
    """Gaussian reading(s) around ``expected`` with ``sigma = v_total/sqrt(shots)``.

    ``budget`` may be a :class:`NoiseBudget` or a per-shot sigma in volts.
    """
    if integration_shots < 1:
        raise ValueError("integration_shots must be >= 1")
    sigma = budget.v_total if isinstance(budget, NoiseBudget) else float(budget)
    expected = np.asarray(expected, float)
    if sigma == 0:
        return float(expected) if expected.ndim == 0 else expected.copy()
    out = expected + rng.normal(0.0, sigma / np.sqrt(integration_shots), expected.shape)
    return float(out) if out.ndim == 0 else out


def budget_report(config: APDConfig, budget: NoiseBudget, **extra) -> dict:
    """Structured noise-budget document; every term carries its unit."""
    terms = {
        "i_N": (budget.i_n, "A"),
        "v_SN": (budget.v_sn, "V"),
        "v_JN": (budget.v_jn, "V"),
        "v_total": (budget.v_total, "V"),
        "signal": (budget.signal, "V"),
        "sigma_nu": (budget.sigma_nu, "1"),
    }
    units = {"sigma_f_per_shot": "Hz", "floor": "1/sqrt(Hz)", "floor_volume_normalized": "1/sqrt(Hz um^-3)",
             "rep_rate": "Hz", "tau1": "s", "fringe_amplitude": "1", "volume": "um^3", "optical_power": "W"}
    for k, v in extra.items():
        terms[k] = (v, units.get(k, ""))
    return {
        "apd": asdict(config),
        "terms": {k: {"value": float(v), "unit": u} for k, (v, u) in terms.items()},
    }


def write_budget_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))


@dataclass(frozen=True)
class LockInCameraConfig:
    """Lock-in camera: four exposures per demodulation cycle, two differences.

    ``pixel_offsets`` has shape ``(4, ny, nx)`` (one fixed offset per exposure
    slot, in electrons) or is ``None``.  ``counts_per_electron`` maps the
    difference signal onto the signed 10-bit output.
    """

    f_demod: float = 6.5e3
    n_demod: int = 24
    pixel_offsets: np.ndarray | None = field(default=None, repr=False, compare=False)
    bits: int = 10
    counts_per_electron: float = 1.0

    def __post_init__(self):
        if self.f_demod <= 0 or self.n_demod < 1:
            raise ValueError("need f_demod > 0 and n_demod >= 1")

    @property
    def frame_rate(self) -> float:
        return self.f_demod / self.n_demod

    @property
    def full_scale(self) -> int:
        return 2**self.bits

    def frames_in(self, seconds: float) -> int:
        return int(round(seconds * self.frame_rate))


def lockin_acquire(flux_a, flux_b, config: LockInCameraConfig, rng: np.random.Generator | None = None,
                   channel: int = 0, frames: int = 1, digitize: bool = True):
    """Average of ``frames`` digitized difference frames ``A - B``.

    Fluxes are mean photoelectrons per exposure.  Each of the ``n_demod``
    cycles adds shot noise to both exposures plus the fixed per-slot offsets
    of ``channel`` (slots ``2*channel`` and ``2*channel+1``).  Output is in
    electrons (counts divided by ``counts_per_electron``).
    """
    a = np.asarray(flux_a, float)
    b = np.asarray(flux_b, float)
    if a.shape != b.shape:
        raise ValueError(f"flux shapes differ: {a.shape} vs {b.shape}")
    if frames < 1:
        raise ValueError("frames must be >= 1")
    diff = a - b
    if config.pixel_offsets is not None:
        off = np.asarray(config.pixel_offsets, float)
        diff = diff + off[2 * channel] - off[2 * channel + 1]
    if rng is not None:
        # mean of n_demod cycles; both exposures Poisson -> Gaussian
        sigma = np.sqrt((np.clip(a, 0, None) + np.clip(b, 0, None)) / config.n_demod)
        noise = rng.standard_normal((frames,) + a.shape) * sigma
    else:
        noise = np.zeros((frames,) + a.shape)
    per_frame = diff[None] + noise
    if digitize:
        half = config.full_scale // 2
        counts = np.clip(np.round(per_frame * config.counts_per_electron), -half, half - 1)
        per_frame = counts / config.counts_per_electron
    return per_frame.mean(axis=0)
