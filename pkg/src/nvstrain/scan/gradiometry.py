"""Gradiometry: alternate a scan point with a fixed reference and servo the
drive frequency on the reference to reject common drift of ``D``.

Each cycle spends half its time at the reference and half at the scan point.
A two-state Kalman filter (drift level and rate) tracks the reference; the
drive detuning follows the filter's prediction, and the scan reading is
reported relative to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..analysis.allan import AllanResult, allan_deviation
from ..analysis.io import StrainMap
from ..errors import NumericalFailure
from ..sample import StrainField, d_shift, psf_for_volume
from .common import (
    PointSensor,
    base_metadata,
    detector_budget,
    ensemble_spec,
    load_field,
    profiles,
    shots_per_quadrature,
)
from .config import ScanConfig

TWO_PI = 2 * math.pi


class ServoError(NumericalFailure):
    """The reference fringe was lost (servo divergence)."""


@dataclass
class GradiometryState:
    """Servo state: Kalman estimate of the reference shift (Hz) and its rate.

    ``correction`` is the drive offset applied at the last update.
    """

    reference: tuple
    level: float = 0.0
    rate: float = 0.0
    P: list = field(default_factory=lambda: [[1e12, 0.0], [0.0, 1e6]])
    t: float = 0.0
    schedule: tuple = ("reference", "scan")
    process_noise: float = 0.0

    @property
    def correction(self) -> float:
        return self.level

    def predict(self, t: float) -> float:
        return self.level + self.rate * (t - self.t)

    def update(self, t: float, z: float, R: float) -> None:
        dt = t - self.t
        (p00, p01), (p10, p11) = self.P
        # propagate
        q = self.process_noise
        lvl = self.level + self.rate * dt
        p00, p01, p11 = (p00 + dt * (p01 + p10) + dt * dt * p11 + q * dt**3 / 3,
                         p01 + dt * p11 + q * dt**2 / 2,
                         p11 + q * dt)
        s = p00 + R
        k0, k1 = p00 / s, p01 / s
        innov = z - lvl
        self.level = lvl + k0 * innov
        self.rate = self.rate + k1 * innov
        self.P = [[(1 - k0) * p00, (1 - k0) * p01], [p01 - k1 * p00, p11 - k1 * p01]]
        self.t = t
        if not (math.isfinite(self.level) and math.isfinite(self.rate)):
            raise ServoError("servo state became non-finite")


@dataclass(frozen=True)
class _SensorArrays:
    mz: np.ndarray
    chi_abs: np.ndarray
    chi_arg: np.ndarray
    a: np.ndarray  # contrast * fi

    @classmethod
    def of(cls, sensors):
        return cls(np.array([s.mz for s in sensors]), np.array([abs(s.chi) for s in sensors]),
                   np.array([np.angle(s.chi) for s in sensors]), np.array([s.contrast * s.fi for s in sensors]))


def _visit(fi, a, chi_abs, chi_arg, theta, noise):
    q = theta + chi_arg
    im, re = a * chi_abs * math.sin(q), a * chi_abs * math.cos(q)
    xp, xm = fi + im + noise[0], fi - im + noise[1]
    yp, ym = fi + re + noise[2], fi - re + noise[3]
    return math.atan2((xp - xm) / (xp + xm), (yp - ym) / (yp + ym)) - chi_arg


@dataclass(frozen=True)
class ServoRun:
    t_ref: np.ndarray
    t_scan: np.ndarray
    relative: np.ndarray  # Hz, scan minus reference estimate
    correction: np.ndarray  # Hz, servo level after each reference visit
    drift: np.ndarray  # Hz, injected drift at reference visits
    sigma_scan: float  # Hz, per-visit scan noise


def servo_loop(cfg: ScanConfig, ref: PointSensor, scans, drift, rng, state: GradiometryState | None = None,
               t0: float = 0.0) -> ServoRun:
    """Run one reference/scan cycle per entry of ``scans`` (sensors).

    ``drift(t)`` gives the common shift of ``D`` in Hz.
    """
    s = cfg.sequence
    cycle = cfg.timing.dwell
    shots = shots_per_quadrature(cfg, cycle / 2)
    n = len(scans)
    arr = _SensorArrays.of(scans)
    sig_v = ref.sigma_v / math.sqrt(shots) if ref.noisy else 0.0
    noise = rng.normal(0.0, 1.0, (n, 2, 4)) * sig_v if sig_v > 0 else np.zeros((n, 2, 4))
    t_ref = t0 + cycle * (np.arange(n) + 0.25)
    t_scan = t0 + cycle * (np.arange(n) + 0.75)
    d_ref = np.asarray(drift(t_ref), float) if drift else np.zeros(n)
    d_scan = np.asarray(drift(t_scan), float) if drift else np.zeros(n)
    R = ref.mz_sigma(shots) ** 2
    st = state or GradiometryState(tuple(cfg.gradiometry.reference), process_noise=cfg.gradiometry.process_noise)
    if state is None:
        st.t = t_ref[0]
    tau1, phi0, fi = s.tau1, s.phi0, ref.fi
    rabs, rarg, ra = abs(ref.chi), float(np.angle(ref.chi)), ref.contrast * ref.fi
    # wrapped offsets never exceed half a period; past a quarter the fringe order is unreliable
    limit = 0.25 / tau1
    rel = np.empty(n)
    corr = np.empty(n)
    base = s.operating_point
    # phase expected with zero residual shift; wrapping around it keeps |off| < 1/(2 tau1)
    theta_op = TWO_PI * base * tau1 + phi0
    for k in range(n):
        c = st.predict(t_ref[k])
        theta = TWO_PI * (base + c - ref.mz - d_ref[k]) * tau1 + phi0
        th = _visit(fi, ra, rabs, rarg, theta, noise[k, 0])
        off = (theta_op - th + math.pi) % TWO_PI - math.pi
        off /= TWO_PI * tau1
        if abs(off) > limit:
            raise ServoError(f"reference fringe lost at t={t_ref[k]:.1f} s (offset {off:.0f} Hz)")
        st.update(t_ref[k], c + off, R)
        corr[k] = st.level
        c = st.predict(t_scan[k])
        theta = TWO_PI * (base + c - arr.mz[k] - d_scan[k]) * tau1 + phi0
        th = _visit(fi, arr.a[k], arr.chi_abs[k], arr.chi_arg[k], theta, noise[k, 1])
        off = (theta_op - th + math.pi) % TWO_PI - math.pi
        rel[k] = off / (TWO_PI * tau1)
    sigma_scan = float(np.mean([sc.mz_sigma(shots) for sc in scans[:1]]))
    return ServoRun(t_ref, t_scan, rel, corr, d_ref, sigma_scan)


def drift_function(cfg: ScanConfig):
    prof = profiles(cfg)
    if not (cfg.drift.rate or cfg.drift.sine_amplitude):
        return None
    return lambda t: d_shift(t, prof)


@dataclass(frozen=True)
class DriftComparison:
    single: AllanResult  # Hz
    gradiometry: AllanResult  # Hz
    white_single: float  # Hz at 1 s, analytic
    run: ServoRun
    single_series: np.ndarray

    def penalty(self, tau: float = 1.0) -> float:
        return self.gradiometry.at(tau) / self.single.at(tau)


def compare_modes(cfg: ScanConfig, point, cycles: int, field_: StrainField | None = None,
                  taus=None) -> DriftComparison:
    """Single-position versus gradiometry Allan deviations under injected drift.

    Both modes get the same wall-clock time: ``cycles`` periods of
    ``timing.dwell``.  The single-position series unwraps its phase in time;
    the gradiometry series is servoed on ``gradiometry.reference``.
    """
    field_ = load_field(cfg) if field_ is None else field_
    budget = detector_budget(cfg)
    psf = psf_for_volume(cfg.psf.volume, cfg.psf.aspect)
    spec = ensemble_spec(cfg)
    prof = profiles(cfg)
    ref_pos = cfg.gradiometry.reference
    ref = PointSensor.at(cfg, ref_pos, field_, budget, psf, spec, prof.mw_amplitude(ref_pos[2]))
    pt = PointSensor.at(cfg, point, field_, budget, psf, spec, prof.mw_amplitude(point[2]))
    drift = drift_function(cfg)
    rng = np.random.default_rng(cfg.seed)
    s = cfg.sequence
    cycle = cfg.timing.dwell
    # single position: whole cycle at the point, fixed drive
    t = cycle * (np.arange(cycles) + 0.5)
    d = np.zeros(cycles) if drift is None else np.asarray(drift(t), float)
    shots = shots_per_quadrature(cfg, cycle)
    phase, _ = pt.estimate_phase(pt.read(np.full(cycles, s.operating_point), d, shots, rng))
    phase = np.unwrap(phase - np.angle(pt.chi))
    theta_op = TWO_PI * s.operating_point * s.tau1 + s.phi0
    single = (theta_op - phase) / (TWO_PI * s.tau1)
    single += np.round((pt.mz - single[0]) * s.tau1) / s.tau1
    run = servo_loop(cfg, ref, [pt] * cycles, drift, rng)
    n = cycles
    if taus is None:
        taus = cycle * 2 ** np.arange(int(np.log2(n // 2)) + 1)
    return DriftComparison(allan_deviation(single, cycle, taus), allan_deviation(run.relative, cycle, taus),
                           pt.mz_sigma(shots), run, single)


def run_gradiometry_scan(cfg: ScanConfig, field_: StrainField | None = None):
    """Raster the grid in gradiometry mode; one reference/scan cycle per point.

    Returns ``(StrainMap, log)`` where the map holds ``Mz`` relative to the
    reference and ``log`` has the servo correction and injected drift per
    reference visit.
    """
    field_ = load_field(cfg) if field_ is None else field_
    xs, ys, zs = cfg.grid.axes()
    depth = zs * cfg.psf.depth_scale
    Z, Y, X = np.meshgrid(depth, ys, xs, indexing="ij")
    positions = np.stack([X.ravel(), Y.ravel(), Z.ravel()], -1)
    budget = detector_budget(cfg)
    psf = psf_for_volume(cfg.psf.volume, cfg.psf.aspect)
    spec = ensemble_spec(cfg)
    prof = profiles(cfg)
    ref_pos = cfg.gradiometry.reference
    ref = PointSensor.at(cfg, ref_pos, field_, budget, psf, spec, prof.mw_amplitude(ref_pos[2]))
    scans = [PointSensor.at(cfg, p, field_, budget, psf, spec, prof.mw_amplitude(p[2])) for p in positions]
    rng = np.random.default_rng(cfg.seed)
    drift = drift_function(cfg)
    settle = cfg.gradiometry.settle_cycles
    state = GradiometryState(tuple(ref_pos), process_noise=cfg.gradiometry.process_noise)
    if settle:
        servo_loop(cfg, ref, [ref] * settle, drift, rng, state)
    run = servo_loop(cfg, ref, scans, drift, rng, state, t0=settle * cfg.timing.dwell)
    shots = shots_per_quadrature(cfg, cfg.timing.dwell / 2)
    sigma = np.array([sc.mz_sigma(shots) for sc in scans])
    amp = np.array([sc.fringe_amplitude for sc in scans])
    shape = Z.shape if zs.size > 1 else Z.shape[1:]
    r = lambda a: np.reshape(a, shape)  # noqa: E731
    meta = base_metadata(cfg)
    meta.update({
        "reference_position": list(map(float, ref_pos)),
        "reference_mz_true_Hz": ref.mz,
        "virtual_time_s": float((len(positions) + settle) * cfg.timing.dwell),
        "time_per_point_s": cfg.timing.dwell,
        "relative_to_reference": True,
    })
    smap = StrainMap(r(X.ravel()), r(Y.ravel()), r(Z.ravel()), r(run.relative), r(sigma), r(amp), None, meta)
    log = {"t_s": run.t_ref, "correction_Hz": run.correction, "drift_Hz": run.drift}
    return smap, log
