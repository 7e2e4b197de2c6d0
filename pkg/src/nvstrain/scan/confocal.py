"""Confocal point scans, calibration sweeps and single-point time series."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..analysis.allan import AllanResult, allan_deviation
from ..analysis.fitting import CalibrationCurve, fit_calibration, visibility_to_mz
from ..analysis.io import StrainMap
from ..analysis.visibility import visibility, xy_visibility
from ..errors import ConfigError
from ..sample import StrainField, psf_for_volume, strain_from_mz, voxel_ensemble
from ..sequences import Trace, ideal_quadratures
from .common import (
    PointSensor,
    base_metadata,
    cpmg_sequence,
    detector_budget,
    ensemble_spec,
    load_field,
    profiles,
    shots_per_quadrature,
)
from .config import ScanConfig


def calibrate_point(cfg: ScanConfig, position, field_: StrainField | None = None, sweep: str | None = None,
                    rng: np.random.Generator | None = None) -> tuple[Trace, CalibrationCurve]:
    """Sweep the drive detuning at ``position`` and fit the fringe.

    ``sweep='cm'`` moves both tones together; ``'diff'`` moves them apart
    around the operating point.  With ``rng`` each point carries detector
    noise for ``timing.dwell`` seconds.
    """
    field_ = load_field(cfg) if field_ is None else field_
    sweep = sweep or cfg.calibration.sweep
    s, c = cfg.sequence, cfg.calibration
    psf = psf_for_volume(cfg.psf.volume, cfg.psf.aspect)
    ens = voxel_ensemble(position, psf, field_, ensemble_spec(cfg))
    offsets = np.linspace(-c.span / 2, c.span / 2, c.points) / s.tau1
    budget = detector_budget(cfg)
    shots = cfg.timing.rep_rate * cfg.timing.dwell
    sig = np.sqrt(2) * budget.v_total / (2 * cfg.detector.fi_volts) / np.sqrt(shots)
    nu = np.empty(offsets.size)
    mw = profiles(cfg).mw_amplitude(position[2])
    for i, d in enumerate(offsets):
        seq = cpmg_sequence(cfg)
        seq = seq.with_detunings(delta_cm=seq.delta_cm + d) if sweep == "cm" else seq.with_detunings(delta_diff=d)
        sin_avg, _ = ideal_quadratures(seq, ens)
        a = s.contrast * mw * cfg.detector.fi_volts * sin_avg
        fp, fm = cfg.detector.fi_volts + a, cfg.detector.fi_volts - a
        if rng is not None and cfg.detector.noise:
            fp = fp + rng.normal(0, budget.v_total / np.sqrt(shots))
            fm = fm + rng.normal(0, budget.v_total / np.sqrt(shots))
        nu[i] = visibility(fp, fm)
    trace = Trace(s.operating_point + offsets if sweep == "cm" else offsets, nu, np.full(nu.size, sig))
    curve = fit_calibration(trace, s.tau1, require_signal=(sweep == "cm"))
    return trace, curve


def _run_points(cfg, field_, positions, mw, rng, curve):
    """Measure each position once; returns per-point arrays."""
    s = cfg.sequence
    budget = detector_budget(cfg)
    psf = psf_for_volume(cfg.psf.volume, cfg.psf.aspect)
    spec = ensemble_spec(cfg)
    shots = shots_per_quadrature(cfg, cfg.timing.dwell)
    unit = CalibrationCurve(1.0, s.tau1, s.phi0)
    n = len(positions)
    mz, sigma, amp, amb = np.empty(n), np.empty(n), np.empty(n), np.zeros(n, bool)
    for i, (pos, m) in enumerate(zip(positions, mw)):
        sensor = PointSensor.at(cfg, pos, field_, budget, psf, spec, mw_scale=m)
        r = sensor.read(s.operating_point, 0.0, shots, rng)
        if s.readout == "xy":
            nu_x, a = xy_visibility(*r)
            conv = visibility_to_mz(nu_x, unit, s.operating_point, nu_y=(r[2] - r[3]) / a, normalized=True)
            amp[i] = a / (2 * sensor.fi)
            sigma[i] = sensor.mz_sigma(shots)
        else:
            nu = visibility(r[0], r[1])
            try:
                conv = visibility_to_mz(nu, curve, s.operating_point)
            except ValueError:
                mz[i], sigma[i], amp[i], amb[i] = np.nan, np.inf, curve.amplitude, True
                continue
            amp[i] = curve.amplitude
            sigma_nu = np.sqrt(2) * sensor.sigma_v / (2 * sensor.fi) / np.sqrt(shots)
            sigma[i] = sigma_nu / max(abs(curve.slope(s.operating_point - conv.mz)), 1e-300)
        mz[i], amb[i] = conv.mz, conv.ambiguous
    return mz, sigma, amp, amb


def mask_cells(amplitude, ambiguous, fraction: float):
    """Cells with fringe amplitude below ``fraction`` of the median, or ambiguous."""
    amplitude = np.asarray(amplitude, float)
    return (amplitude < fraction * np.median(amplitude)) | np.asarray(ambiguous, bool)


def run_confocal_scan(cfg: ScanConfig, field_: StrainField | None = None) -> StrainMap:
    """Raster the grid (every depth, then y, then x) and return the ``Mz`` map.

    Stage depths are multiplied by ``psf.depth_scale`` to give focal depth;
    the map's ``z`` holds focal depth.  Multi-depth scans require the
    XY-normalized readout because the microwave amplitude, and with it the
    fringe amplitude, changes with depth.
    """
    field_ = load_field(cfg) if field_ is None else field_
    xs, ys, zs = cfg.grid.axes()
    if zs.size > 1 and cfg.sequence.readout != "xy":
        raise ConfigError("depth scans need sequence.readout = 'xy'")
    depth = zs * cfg.psf.depth_scale
    Z, Y, X = np.meshgrid(depth, ys, xs, indexing="ij")
    positions = np.stack([X.ravel(), Y.ravel(), Z.ravel()], -1)
    prof = profiles(cfg)
    mw = prof.mw_amplitude(positions[:, 2])
    rng = np.random.default_rng(cfg.seed) if cfg.detector.noise else None
    curve = None
    if cfg.sequence.readout == "x":
        _, fitted = calibrate_point(cfg, positions[0], field_, "cm")
        curve = CalibrationCurve(fitted.amplitude, fitted.tau1, cfg.sequence.phi0, fitted.covariance, fitted.offset)
    mz, sigma, amp, amb = _run_points(cfg, field_, positions, mw, rng, curve)
    mask = mask_cells(amp, amb, cfg.mask_fraction) | ~np.isfinite(mz)
    shape = Z.shape if zs.size > 1 else Z.shape[1:]
    seq = cpmg_sequence(cfg)
    meta = base_metadata(cfg)
    meta.update({
        "virtual_time_s": float(len(positions) * cfg.timing.dwell),
        "time_per_point_s": cfg.timing.dwell,
        "sequence_duration_s": seq.duration,
        "duty_cycle": 2 * cfg.timing.rep_rate * (seq.duration + cfg.timing.init_time),
        "shots_per_quadrature": shots_per_quadrature(cfg, cfg.timing.dwell),
        "depth_scale": cfg.psf.depth_scale,
        "readout": cfg.sequence.readout,
        "masked_cells": int(mask.sum()),
    })
    if curve is not None:
        meta["calibration"] = {"amplitude": curve.amplitude, "tau1_s": curve.tau1, "phi0_rad": curve.phi0}
    r = lambda a: np.reshape(a, shape)  # noqa: E731
    sigma = np.where(np.isfinite(sigma), sigma, 1.0)
    return StrainMap(r(X.ravel()), r(Y.ravel()), r(Z.ravel()), r(mz), r(sigma), r(amp), r(mask), meta)


@dataclass(frozen=True)
class PointSeries:
    t: np.ndarray  # s, bin centres
    mz: np.ndarray  # Hz, estimated
    truth: np.ndarray  # Hz, Mz + drift
    sigma_bin: float  # Hz, predicted per-bin noise

    @property
    def strain(self) -> np.ndarray:
        return strain_from_mz(self.mz)


def point_series(cfg: ScanConfig, position, duration: float, bin_s: float, rng, field_=None,
                 drift=None) -> PointSeries:
    """Repeated single-point readings with an optional ``drift(t)`` (Hz) on ``D``.

    The XY readout unwraps the ``atan2`` phase along time; the X-only
    readout inverts a calibration fitted at the same point.
    """
    field_ = load_field(cfg) if field_ is None else field_
    s = cfg.sequence
    sensor = PointSensor.at(cfg, position, field_, detector_budget(cfg),
                            mw_scale=profiles(cfg).mw_amplitude(position[2]))
    n = int(round(duration / bin_s))
    t = (np.arange(n) + 0.5) * bin_s
    d = np.zeros(n) if drift is None else np.asarray(drift(t), float)
    shots = shots_per_quadrature(cfg, bin_s)
    r = sensor.read(np.full(n, s.operating_point), d, shots, rng)
    if s.readout == "xy":
        phase, _ = sensor.estimate_phase(r)
        phase = np.unwrap(phase - np.angle(sensor.chi))
        theta_op = 2 * np.pi * s.operating_point * s.tau1 + s.phi0
        mz = (theta_op - phase) / (2 * np.pi * s.tau1)
        # fringe order from the known starting value
        mz += np.round((sensor.mz + d[0] - mz[0]) * s.tau1) / s.tau1
        sigma = sensor.mz_sigma(shots)
    else:
        _, fitted = calibrate_point(cfg, position, field_, "cm")
        curve = CalibrationCurve(fitted.amplitude, fitted.tau1, s.phi0, fitted.covariance, fitted.offset)
        conv = visibility_to_mz(visibility(r[0], r[1]), curve, s.operating_point)
        mz = conv.mz
        sigma = sensor.mz_sigma(shots)
    return PointSeries(t, mz, sensor.mz + d, float(sigma))


def run_allan(cfg: ScanConfig, field_=None) -> tuple[AllanResult, PointSeries, float]:
    """Allan deviation (strain) of a single-point series; also the analytic 1 s value."""
    a = cfg.allan
    rng = np.random.default_rng(cfg.seed)
    drift = None
    if cfg.drift.rate or cfg.drift.sine_amplitude:
        from ..sample import d_shift

        prof = profiles(cfg)
        drift = lambda t: d_shift(t, prof)  # noqa: E731
    series = point_series(cfg, a.point, a.duration, a.bin, rng, field_, drift)
    eps = series.strain
    n = eps.size
    taus = a.bin * 2 ** np.arange(int(np.log2(n // 2)) + 1)
    taus = np.union1d(taus, [1.0]) if 1.0 <= n * a.bin / 2 else taus
    res = allan_deviation(eps, a.bin, taus)
    predicted_1s = abs(strain_from_mz(series.sigma_bin)) * np.sqrt(a.bin)
    return res, series, float(predicted_1s)
