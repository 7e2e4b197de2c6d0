"""Overlapping Allan deviation with chi-squared confidence intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2


@dataclass(frozen=True)
class AllanResult:
    taus: np.ndarray  # s
    adev: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    edf: np.ndarray
    n_pairs: np.ndarray

    def at(self, tau: float) -> float:
        """Deviation at ``tau``, log-log interpolated between computed points."""
        if not self.taus[0] <= tau <= self.taus[-1]:
            raise ValueError(f"tau={tau:g} outside the computed range")
        return float(np.exp(np.interp(np.log(tau), np.log(self.taus), np.log(self.adev))))


def _edf_white(n: int, m: int) -> float:
    # Greenhall/Howe approximation for white-FM overlapping variance
    return (3 * (n - 1) / (2 * m) - 2 * (n - 2) / n) * 4 * m**2 / (4 * m**2 + 5)


def overlapping_avar(y: np.ndarray, m: int) -> tuple[float, int]:
    """Overlapping Allan variance of fractional samples ``y`` at ``m`` samples per window."""
    n = y.size
    if n < 2 * m:
        raise ValueError(f"series of {n} samples too short for m={m}")
    c = np.concatenate([[0.0], np.cumsum(y, dtype=float)])
    means = (c[m:] - c[:-m]) / m
    d = means[m:] - means[:-m]
    return float(0.5 * np.mean(d * d)), d.size


def allan_deviation(series, sample_interval: float, taus=None, confidence: float = 0.683) -> AllanResult:
    """Overlapping Allan deviation of ``series`` sampled every ``sample_interval``.

    Parameters
    ----------
    taus : array, optional
        Averaging times; rounded to integer multiples of ``sample_interval``.
        Defaults to octave spacing up to half the record.
    confidence : float
        Two-sided chi-squared interval with white-noise degrees of freedom.

    Raises
    ------
    ValueError
        If any ``tau`` needs more than half the record.
    """
    y = np.asarray(series, float).ravel()
    if sample_interval <= 0:
        raise ValueError("sample_interval must be positive")
    n = y.size
    if taus is None:
        ms = 2 ** np.arange(int(np.log2(max(n // 2, 1))) + 1)
    else:
        ms = np.unique(np.maximum(1, np.round(np.asarray(taus, float) / sample_interval).astype(int)))
    if n < 2 * ms.max():
        raise ValueError(f"need {2 * ms.max()} samples for tau={ms.max() * sample_interval:g} s, have {n}")
    adev, lo, hi, edf, npairs = [], [], [], [], []
    a = (1 - confidence) / 2
    for m in ms:
        var, k = overlapping_avar(y, int(m))
        e = max(_edf_white(n, int(m)), 1.0)
        adev.append(np.sqrt(var))
        lo.append(np.sqrt(var * e / chi2.ppf(1 - a, e)))
        hi.append(np.sqrt(var * e / chi2.ppf(a, e)))
        edf.append(e)
        npairs.append(k)
    return AllanResult(ms * sample_interval, np.array(adev), np.array(lo), np.array(hi),
                       np.array(edf), np.array(npairs))
