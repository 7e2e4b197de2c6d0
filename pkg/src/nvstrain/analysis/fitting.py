"""Fringe fitting and the visibility -> Mz inversion.

All fits are bounded weighted least squares (:func:`scipy.optimize.least_squares`)
restarted from several phase offsets; the best cost wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks, lombscargle

from ..errors import AmbiguityError, FitError
from ..sequences import Trace

N_STARTS = 8


def _weights(trace: Trace):
    s = trace.sigma
    if np.all(s > 0):
        return 1.0 / s, True
    return np.ones_like(trace.y), False


def _covariance(res, absolute: bool, dof: int):
    J = res.jac
    norm = np.linalg.norm(J, axis=0)
    norm[norm == 0] = 1.0
    Js = J / norm
    try:
        cov = np.linalg.pinv(Js.T @ Js) / np.outer(norm, norm)
    except np.linalg.LinAlgError:
        return np.full((J.shape[1],) * 2, np.inf)
    if not absolute:
        cov = cov * (2 * res.cost / max(dof, 1))
    return cov


def periodogram(x, y, freqs=None, oversample: int = 10):
    """Lomb-Scargle power of mean-subtracted ``y`` on a frequency grid (Hz)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float) - np.mean(y)
    span = x.max() - x.min()
    if freqs is None:
        nyq = 0.5 / np.min(np.diff(np.sort(x)))
        freqs = np.linspace(1 / (oversample * span), nyq, int(oversample * nyq * span))
    freqs = np.asarray(freqs, float)
    return freqs, lombscargle(x, y, 2 * np.pi * freqs)


def spectral_peaks(trace: Trace, rel_height: float = 0.25, freqs=None) -> np.ndarray:
    """Frequencies of periodogram peaks above ``rel_height`` of the largest.

    The periodogram of a decaying trace has sidelobes; peaks are separated by
    at least the Fourier resolution ``1/span``.
    """
    f, p = periodogram(trace.x, trace.y, freqs)
    df = f[1] - f[0]
    span = trace.x.max() - trace.x.min()
    idx, _ = find_peaks(p, height=rel_height * p.max(), distance=max(1, int(1 / (span * df))))
    return f[idx]


@dataclass(frozen=True)
class EnvelopeFit:
    """Result of ``y = exp(-x/T) * sum_k a_k sin(2 pi f_k x + phi_k)``.

    For a single tone, ``amplitude``, ``T``, ``frequency`` and ``phi0`` are the
    fringe parameters.  ``covariance`` is ordered
    ``(T, a_1, f_1, phi_1, a_2, ...)``.
    """

    T: float
    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    residuals: np.ndarray = field(repr=False)

    @property
    def amplitude(self) -> float:
        return float(self.amplitudes[0])

    @property
    def frequency(self) -> float:
        return float(self.frequencies[0])

    @property
    def phi0(self) -> float:
        return float(self.phases[0])

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    @property
    def T_err(self) -> float:
        return float(self.stderr[0])

    def __call__(self, x):
        return _multitone(np.asarray(x, float), self._vector())

    def _vector(self):
        p = [self.T]
        for a, f, ph in zip(self.amplitudes, self.frequencies, self.phases):
            p += [a, f, ph]
        return np.array(p)


def _multitone(x, p):
    T = p[0]
    tones = p[1:].reshape(-1, 3)
    s = np.zeros_like(x)
    for a, f, ph in tones:
        s = s + a * np.sin(2 * np.pi * f * x + ph)
    return np.exp(-x / T) * s


def fit_decaying_tones(trace: Trace, n_tones: int = 1, freq_guess=None, n_starts: int = N_STARTS,
                       T_max_factor: float = 1e4) -> EnvelopeFit:
    """Fit ``n_tones`` sinusoids sharing one exponential envelope.

    Frequencies start from periodogram peaks unless ``freq_guess`` is given.
    Each of ``n_starts`` restarts shifts every initial phase by ``2*pi*k/n``.

    Raises
    ------
    ValueError
        Fewer than 10 points, or the trace spans less than one fringe.
    FitError
        Constant data, or no restart converged.
    """
    x, y = trace.x, trace.y
    if x.size < 10:
        raise ValueError("need at least 10 points")
    if np.ptp(y) == 0:
        raise FitError("degenerate (constant) trace")
    w, absolute = _weights(trace)
    span = np.ptp(x)
    if freq_guess is None:
        peaks = spectral_peaks(trace)
        if peaks.size < n_tones:
            f, p = periodogram(x, y)
            peaks = f[np.argsort(p)[::-1][:n_tones]]
        f, p = periodogram(x, y, peaks)
        freq_guess = np.sort(peaks[np.argsort(p)[::-1][:n_tones]])
    freq_guess = np.atleast_1d(np.asarray(freq_guess, float))
    if freq_guess.size != n_tones:
        raise ValueError("freq_guess must have n_tones entries")
    if freq_guess.min() * span < 1:
        raise ValueError("trace spans less than one fringe period")
    a0 = np.max(np.abs(y)) * np.exp(min(x.min(), span) / span) / n_tones
    T_hi = T_max_factor * x.max()

    lo = [x.max() * 1e-3]
    hi = [T_hi]
    for f in freq_guess:
        lo += [0.0, 0.5 * f, -np.inf]
        hi += [np.inf, 1.5 * f, np.inf]
    lo, hi = np.array(lo), np.array(hi)

    def resid(p):
        return (_multitone(x, p) - y) * w

    best = None
    for k in range(n_starts):
        p0 = [np.clip(span, lo[0] * 1.01, T_hi * 0.99)]
        for j, f in enumerate(freq_guess):
            p0 += [a0, f, 2 * np.pi * k / n_starts + j]
        try:
            res = least_squares(resid, p0, bounds=(lo, hi), x_scale="jac", max_nfev=4000)
        except ValueError:
            continue
        if res.success and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise FitError("no restart converged")
    p = best.x.copy()
    tones = p[1:].reshape(-1, 3)
    tones[:, 2] = np.angle(np.exp(1j * tones[:, 2]))
    dof = x.size - p.size
    cov = _covariance(best, absolute, dof)
    r = best.fun
    return EnvelopeFit(float(p[0]), tones[:, 0].copy(), tones[:, 1].copy(), tones[:, 2].copy(),
                       cov, float(r @ r), dof, r / w)


def fit_envelope(trace: Trace, n_starts: int = N_STARTS) -> EnvelopeFit:
    """Fit ``A exp(-tau/T_D) sin(2 pi delta tau + phi0)`` to a visibility trace."""
    return fit_decaying_tones(trace, 1, n_starts=n_starts)


@dataclass(frozen=True)
class CalibrationCurve:
    """``nu(delta) = offset + amplitude * sin(2 pi delta tau1 + phi0)``.

    ``tau1`` is the effective evolution time (its inverse is the fitted
    period).  ``covariance`` is ordered ``(amplitude, phi0, tau1, offset)``.
    """

    amplitude: float
    tau1: float
    phi0: float
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)), repr=False)
    offset: float = 0.0

    def __post_init__(self):
        if self.amplitude <= 0 or self.tau1 <= 0:
            raise ValueError("calibration amplitude and tau1 must be positive")

    @property
    def period(self) -> float:
        return 1.0 / self.tau1

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def phase(self, delta):
        return 2 * np.pi * np.asarray(delta, float) * self.tau1 + self.phi0

    def __call__(self, delta):
        return self.offset + self.amplitude * np.sin(self.phase(delta))

    def slope(self, delta):
        """``d nu / d delta`` in 1/Hz."""
        return 2 * np.pi * self.tau1 * self.amplitude * np.cos(self.phase(delta))

    def operating_point(self, near: float = 0.0) -> float:
        """Drive detuning closest to ``near`` where the fringe is steepest and rising."""
        k = np.round((2 * np.pi * near * self.tau1 + self.phi0) / (2 * np.pi))
        return float((2 * np.pi * k - self.phi0) / (2 * np.pi * self.tau1))


def fit_calibration(trace: Trace, tau1: float, period_tolerance: float = 0.02,
                    require_signal: bool = True, n_starts: int = N_STARTS) -> CalibrationCurve:
    """Fit ``nu`` versus drive detuning at fixed ``tau1``.

    The period starts at ``1/tau1`` and may move by ``period_tolerance``.

    Raises
    ------
    ValueError
        The sweep covers less than one period.
    FitError
        No convergence, or (with ``require_signal``) amplitude consistent
        with zero.
    """
    x, y = trace.x, trace.y
    if np.ptp(x) * tau1 < 1 - 1e-9:
        raise ValueError("sweep narrower than one fringe period")
    w, absolute = _weights(trace)
    t_lo, t_hi = tau1 / (1 + period_tolerance), tau1 / (1 - period_tolerance)
    lo = [0.0, -np.inf, t_lo, -np.inf]
    hi = [np.inf, np.inf, t_hi, np.inf]
    amp0 = max(np.ptp(y) / 2, 1e-12)

    def model(p, d):
        return p[3] + p[0] * np.sin(2 * np.pi * d * p[2] + p[1])

    best = None
    for k in range(n_starts):
        p0 = [amp0, 2 * np.pi * k / n_starts, tau1, np.mean(y)]
        res = least_squares(lambda p: (model(p, x) - y) * w, p0, bounds=(lo, hi), x_scale="jac")
        if res.success and (best is None or res.cost < best.cost):
            best = res
    if best is None:
        raise FitError("calibration fit did not converge")
    amp, phi, t1, off = best.x
    cov = _covariance(best, absolute, x.size - 4)
    amp_err = np.sqrt(cov[0, 0]) if np.isfinite(cov[0, 0]) else np.inf
    if require_signal and (amp <= 1e-9 * max(1.0, abs(off)) or amp <= 2 * amp_err):
        raise FitError(f"amplitude {amp:.3g} consistent with zero (+-{amp_err:.3g})")
    if amp <= 0:
        amp = np.finfo(float).tiny
    phi = float(np.angle(np.exp(1j * phi)))
    return CalibrationCurve(float(amp), float(t1), phi, cov, float(off))


@dataclass(frozen=True)
class MzConversion:
    """Shift of ``Mz`` relative to the reference, with per-cell flags."""

    mz: np.ndarray
    ambiguous: np.ndarray

    def __iter__(self):
        return iter((self.mz, self.ambiguous))


def _wrap(phi):
    return np.angle(np.exp(1j * np.asarray(phi, float)))


def visibility_to_mz(
    nu,
    curve: CalibrationCurve,
    delta_op: float,
    reference: float = 0.0,
    nu_y=None,
    normalized: bool = False,
    tol: float = 1e-6,
    strict: bool = False,
) -> MzConversion:
    """Invert the calibration fringe into an ``Mz`` shift (Hz).

    A shift ``dMz`` of the resonance retards the phase:
    ``theta = theta_op - 2 pi tau1 dMz`` with ``theta_op`` the calibration
    phase at the drive detuning ``delta_op``.

    Parameters
    ----------
    nu : float or array
        Raw visibility (``normalized=False``, uses the curve's offset and
        amplitude) or an XY-normalized one (``sin theta``).
    nu_y : array, optional
        Normalized second quadrature (``cos theta``).  With it the phase comes
        from ``atan2`` and the range grows to one full fringe.
    strict : bool
        Raise :class:`AmbiguityError` instead of flagging.

    Notes
    -----
    Single-quadrature inversion uses the arcsine branch containing
    ``theta_op``; cells reaching the branch edge are flagged, since a larger
    shift folds back.  With both quadratures, shifts within 10% of the
    ``+-1/(2 tau1)`` wrap point are flagged.
    """
    nu = np.asarray(nu, float)
    theta_op = float(_wrap(curve.phase(delta_op)))
    if nu_y is not None:
        s = nu if normalized else (nu - curve.offset) / curve.amplitude
        c = np.asarray(nu_y, float)
        theta = np.arctan2(s, c)
        dtheta = _wrap(theta_op - theta)
        amb = np.abs(dtheta) >= 0.9 * np.pi
    else:
        s = nu if normalized else (nu - curve.offset) / curve.amplitude
        if np.any(np.abs(s) > 1 + tol):
            raise ValueError("visibility outside the calibration range")
        if abs(theta_op) > np.pi / 2:
            raise ValueError("operating point is not on a rising fringe branch")
        s = np.clip(s, -1, 1)
        theta = np.arcsin(s)
        dtheta = theta_op - theta
        amb = np.abs(s) >= 1 - tol
    mz = reference + dtheta / (2 * np.pi * curve.tau1)
    if strict and np.any(amb):
        raise AmbiguityError("shift beyond the single-fringe dynamic range")
    if mz.ndim == 0:
        return MzConversion(float(mz), bool(amb))
    return MzConversion(mz, amb)


def disambiguate(shift_long, tau_long: float, shift_short, tau_short: float):
    """Unwrap a long-``tau`` shift using a coarser short-``tau`` measurement.

    Adds the multiple of ``1/tau_long`` that brings ``shift_long`` closest to
    ``shift_short``.
    """
    if not 0 < tau_short < tau_long:
        raise ValueError("need 0 < tau_short < tau_long")
    shift_long = np.asarray(shift_long, float)
    k = np.round((np.asarray(shift_short, float) - shift_long) * tau_long)
    out = shift_long + k / tau_long
    return float(out) if out.ndim == 0 else out
