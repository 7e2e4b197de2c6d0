"""Continuous-wave ODMR of the four NV orientation classes.

Line positions come from exact diagonalization of each class's spin
Hamiltonian in its own frame; every electron transition is split into a 14N
hyperfine triplet.  Fitting uses one Lorentzian triplet per resolved group.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares

from .. import constants as C
from ..errors import FitError

NV_AXES = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float) / np.sqrt(3)

_SZ = np.diag([1.0, 0.0, -1.0])
_SX = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float) / np.sqrt(2)


def class_transitions(
    B,
    D: float = C.ZERO_FIELD_SPLITTING,
    mz=0.0,
    gamma: float = C.GYROMAGNETIC_RATIO,
    hyperfine_offset: float = 0.0,
) -> np.ndarray:
    """Transition frequencies ``(4, 2)`` as ``(f+, f-)`` per orientation class.

    ``B`` is the field vector (T) in crystal coordinates; class 0 lies along
    [111].  ``mz`` may be a scalar or one value per class.
    """
    B = np.asarray(B, float)
    mz = np.broadcast_to(np.asarray(mz, float), (4,))
    out = np.empty((4, 2))
    for k, n in enumerate(NV_AXES):
        bz = B @ n
        bperp = np.linalg.norm(B - bz * n)
        H = (D + mz[k]) * _SZ @ _SZ + (gamma * bz + hyperfine_offset) * _SZ + gamma * bperp * _SX
        w, v = np.linalg.eigh(H)
        i0 = int(np.argmax(np.abs(v[1]) ** 2))
        rest = [i for i in range(3) if i != i0]
        # label by |+1> overlap
        ip = max(rest, key=lambda i: abs(v[0, i]) ** 2)
        im = rest[0] if rest[1] == ip else rest[1]
        out[k] = w[ip] - w[i0], w[im] - w[i0]
    return out


def lorentzian(f, center, fwhm):
    """Unit-peak Lorentzian."""
    return 1.0 / (1.0 + ((np.asarray(f, float) - center) / (fwhm / 2)) ** 2)


def triplet(f, center, fwhm, depth, hyperfine: float = C.HYPERFINE_14N):
    return depth * sum(lorentzian(f, center + m * hyperfine, fwhm) for m in (-1, 0, 1))


def odmr_spectrum(freqs, centers, fwhm: float = 1e6, contrast: float = 0.02,
                  hyperfine: float = C.HYPERFINE_14N, weights=None) -> np.ndarray:
    """Normalized fluorescence ``1 - sum of hyperfine-triplet dips``.

    ``contrast`` is the summed depth of one transition's triplet.
    """
    freqs = np.asarray(freqs, float)
    centers = np.ravel(centers)
    w = np.ones(centers.size) if weights is None else np.ravel(weights)
    out = np.ones_like(freqs)
    for c, wk in zip(centers, w):
        out -= triplet(freqs, c, fwhm, wk * contrast / 3, hyperfine)
    return out


def synth_spectrum(freqs, B, D=C.ZERO_FIELD_SPLITTING, mz=0.0, fwhm=1e6, contrast=0.02,
                   hyperfine=C.HYPERFINE_14N, gamma=C.GYROMAGNETIC_RATIO) -> np.ndarray:
    """Four-class spectrum for field ``B``; ``mz`` may carry a voxel distribution.

    A 1-D ``mz`` array of values (equal weights) sums spectra, which is how
    unresolved intra-voxel strain broadens or splits the lines.
    """
    mzs = np.atleast_1d(np.asarray(mz, float))
    if mzs.ndim == 1 and mzs.size != 4:
        mzs = mzs[:, None]
    mzs = np.atleast_2d(mzs)
    total = np.zeros(np.size(freqs))
    for row in mzs:
        lines = class_transitions(B, D, row, gamma).ravel()
        total += odmr_spectrum(freqs, lines, fwhm, contrast, hyperfine)
    return total / len(mzs)


@dataclass(frozen=True)
class ODMRSpectrum:
    """A spectrum and, once fitted, its triplet groups."""

    freqs: np.ndarray
    signal: np.ndarray
    sigma: np.ndarray | None = None
    centers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    widths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    depths: np.ndarray = field(default_factory=lambda: np.zeros(0))
    baseline: float = 1.0
    chi2: float = float("nan")
    dof: int = 0
    covariance: np.ndarray | None = field(default=None, repr=False)
    overlap: bool = False
    hyperfine: float = C.HYPERFINE_14N

    def __post_init__(self):
        f = np.asarray(self.freqs, float)
        if f.ndim != 1 or np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly ascending")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "signal", np.asarray(self.signal, float))

    @property
    def chi2_red(self) -> float:
        return self.chi2 / max(self.dof, 1)

    @property
    def center_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance)[1::3])

    def aligned_pair(self) -> tuple[float, float]:
        """``(f+, f-)`` of the class with the largest splitting (outermost groups)."""
        if self.centers.size < 2:
            raise ValueError("spectrum has not been fitted with >= 2 groups")
        return float(self.centers.max()), float(self.centers.min())

    def model(self, f=None):
        f = self.freqs if f is None else np.asarray(f, float)
        return self.baseline - sum(
            triplet(f, c, w, d, self.hyperfine) for c, w, d in zip(self.centers, self.widths, self.depths)
        )


def _seed_groups(freqs, signal, n_groups, hyperfine, fwhm):
    dip = np.median(signal) - signal
    step = freqs[1] - freqs[0]
    shift = int(round(hyperfine / step))
    mf = dip.copy()
    mf[shift:] += dip[:-shift]
    mf[:-shift] += dip[shift:]
    order = np.argsort(mf)[::-1]
    chosen: list[float] = []
    for i in order:
        f = freqs[i]
        if all(abs(f - c) > 2.5 * hyperfine + fwhm for c in chosen):
            chosen.append(f)
            if len(chosen) == n_groups:
                break
    return np.sort(chosen)


def fit_odmr(spectrum: ODMRSpectrum, n_groups: int = 4, hyperfine: float = C.HYPERFINE_14N,
             fwhm: float = 1e6, centers=None) -> ODMRSpectrum:
    """Fit ``n_groups`` Lorentzian hyperfine triplets plus a flat baseline.

    Group seeds come from a triplet matched filter unless ``centers`` is
    given.  Groups that end up closer than their linewidth are flagged as
    ``overlap`` (degenerate).

    Raises
    ------
    FitError
        If the optimizer does not converge.
    """
    f, y = spectrum.freqs, spectrum.signal
    if centers is None:
        centers = _seed_groups(f, y, n_groups, hyperfine, fwhm)
    centers = np.asarray(centers, float)
    if centers.size != n_groups:
        raise FitError(f"found {centers.size} groups, expected {n_groups}")
    if centers.min() < f[0] or centers.max() > f[-1]:
        raise ValueError("spectrum does not span all resonances")
    sig = spectrum.sigma
    w = 1.0 / np.asarray(sig, float) if sig is not None else np.ones_like(y)
    base0 = float(np.median(y))
    depth0 = max((base0 - y.min()) / 2, 1e-6)
    p0, lo, hi = [base0], [-np.inf], [np.inf]
    for c in centers:
        p0 += [c, fwhm, depth0]
        lo += [c - 2 * fwhm, fwhm / 20, 0.0]
        hi += [c + 2 * fwhm, 20 * fwhm, np.inf]

    def model(p):
        g = p[1:].reshape(-1, 3)
        return p[0] - sum(triplet(f, c, wd, d, hyperfine) for c, wd, d in g)

    res = least_squares(lambda p: (model(p) - y) * w, p0, bounds=(lo, hi), x_scale="jac", max_nfev=5000)
    if not res.success:
        raise FitError(f"ODMR fit failed: {res.message}")
    g = res.x[1:].reshape(-1, 3)
    order = np.argsort(g[:, 0])
    g = g[order]
    dof = y.size - res.x.size
    J = res.jac
    # column scaling keeps pinv from truncating the Hz-scale centre directions
    norm = np.linalg.norm(J, axis=0)
    norm[norm == 0] = 1.0
    Js = J / norm
    cov = np.linalg.pinv(Js.T @ Js) / np.outer(norm, norm)
    if sig is None:
        cov *= 2 * res.cost / max(dof, 1)
    idx = np.concatenate([[0], (1 + 3 * order[:, None] + np.arange(3)).ravel()])
    cov = cov[np.ix_(idx, idx)]
    gaps = np.diff(g[:, 0])
    overlap = bool(np.any(gaps < g[1:, 1])) if gaps.size else False
    out = replace(spectrum, centers=g[:, 0].copy(), widths=g[:, 1].copy(), depths=g[:, 2].copy(),
                  baseline=float(res.x[0]), chi2=float(2 * res.cost), dof=dof, covariance=cov, overlap=overlap, hyperfine=hyperfine)
    return out


def odmr_to_maps(f_plus, f_minus, D: float = C.ZERO_FIELD_SPLITTING, gamma: float = C.GYROMAGNETIC_RATIO):
    """``Mz = (f+ + f-)/2 - D`` and ``Bz = (f+ - f-)/(2 gamma)``."""
    fp = np.asarray(f_plus, float)
    fm = np.asarray(f_minus, float)
    if np.any(fp < fm):
        raise ValueError("need f+ >= f-")
    mz = (fp + fm) / 2 - D
    bz = (fp - fm) / (2 * gamma)
    if mz.ndim == 0:
        return float(mz), float(bz)
    return mz, bz
