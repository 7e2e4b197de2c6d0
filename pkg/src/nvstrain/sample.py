"""Synthetic diamond: strain field, spin baths, interrogation volume, drifts.

Strain tensors are arrays ``(..., 6)`` in Voigt order
``(xx, yy, zz, yz, xz, xy)`` in the NV frame (z along the aligned NV axis).
Shear components are carried but do not enter ``Mz``: only the normal-strain
coupling is modelled.

Spin-bath inhomogeneity is represented deterministically: offsets sit on a
uniform frequency grid and carry Lorentzian weights, which reproduces the
exponential free-induction envelope ``exp(-tau/T)`` far better than quantile
midpoints of the heavy-tailed distribution.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import constants as C
from .errors import ConfigError
from .sequences import Ensemble
from .spin import NVParams

STRAIN_LIMIT = 1e-2
VOIGT = ("xx", "yy", "zz", "yz", "xz", "xy")


def mz_from_strain(tensor) -> np.ndarray | float:
    """Axial stress shift ``Mz = A1*eps_zz + A2*(eps_xx + eps_yy)`` in Hz."""
    t = np.asarray(tensor, float)
    mz = C.COUPLING_AXIAL * t[..., 2] + C.COUPLING_TRANSVERSE * (t[..., 0] + t[..., 1])
    return float(mz) if mz.ndim == 0 else mz


def strain_from_mz(mz):
    """Weighted-average strain ``-Mz / 10.9 GHz``."""
    eps = -np.asarray(mz, float) / C.COUPLING_AVERAGE
    return float(eps) if eps.ndim == 0 else eps


def _tensor(value) -> np.ndarray:
    t = np.zeros(6)
    if isinstance(value, dict):
        for k, v in value.items():
            if k not in VOIGT:
                raise ConfigError(f"unknown strain component {k!r}")
            t[VOIGT.index(k)] = v
    else:
        v = np.asarray(value, float).ravel()
        if v.size == 1:  # isotropic normal strain
            t[:3] = v[0]
        elif v.size == 6:
            t[:] = v
        else:
            raise ConfigError("strain amplitude must be a scalar, 6-vector or component mapping")
    if np.any(np.abs(t) >= STRAIN_LIMIT):
        raise ConfigError("strain components must stay below 1e-2")
    return t


def _positions(x, y, z):
    x, y, z = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), np.asarray(z, float))
    return x, y, z


@dataclass(frozen=True)
class Uniform:
    strain: tuple

    def __call__(self, x, y, z):
        x, _, _ = _positions(x, y, z)
        return np.broadcast_to(_tensor(self.strain), x.shape + (6,)).copy()


@dataclass(frozen=True)
class GaussianBump:
    center: tuple
    sigma: tuple
    strain: tuple

    def __call__(self, x, y, z):
        x, y, z = _positions(x, y, z)
        cx, cy, cz = self.center
        sx, sy, sz = np.broadcast_to(np.asarray(self.sigma, float), (3,))
        r2 = ((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2 + ((z - cz) / sz) ** 2
        return np.exp(-r2 / 2)[..., None] * _tensor(self.strain)


@dataclass(frozen=True)
class Scratch:
    """Line feature through ``point`` along in-plane ``angle`` (rad).

    Strength grows and width shrinks with depth ``z``:
    ``s(z) = 1 + z/depth_scale``, amplitude ``strain*s``, width ``width/s``.
    """

    point: tuple
    angle: float
    width: float
    strain: tuple
    depth_scale: float = np.inf

    def __call__(self, x, y, z):
        x, y, z = _positions(x, y, z)
        px, py = self.point[:2]
        d = -(x - px) * np.sin(self.angle) + (y - py) * np.cos(self.angle)
        s = 1 + np.maximum(z, 0) / self.depth_scale
        prof = s * np.exp(-0.5 * (d * s / self.width) ** 2)
        return prof[..., None] * _tensor(self.strain)


@dataclass(frozen=True)
class LinearGradient:
    """``strain * ((r - origin) . direction) / length`` (strain per ``length`` um)."""

    origin: tuple
    direction: tuple
    length: float
    strain: tuple

    def __call__(self, x, y, z):
        x, y, z = _positions(x, y, z)
        u = np.asarray(self.direction, float)
        u = u / np.linalg.norm(u)
        ox, oy, oz = self.origin
        s = ((x - ox) * u[0] + (y - oy) * u[1] + (z - oz) * u[2]) / self.length
        return s[..., None] * _tensor(self.strain)


PRIMITIVES = {"uniform": Uniform, "bump": GaussianBump, "scratch": Scratch, "gradient": LinearGradient}


@dataclass(frozen=True)
class StrainField:
    """Sum of strain primitives, evaluated at positions in um."""

    primitives: tuple = ()

    def __call__(self, x, y, z) -> np.ndarray:
        x, y, z = _positions(x, y, z)
        out = np.zeros(x.shape + (6,))
        for p in self.primitives:
            out += p(x, y, z)
        if np.any(np.abs(out) >= STRAIN_LIMIT):
            raise ValueError("strain field exceeds 1e-2")
        return out

    def mz(self, x, y, z):
        return mz_from_strain(self(x, y, z))


def _primitive_to_dict(p) -> dict:
    name = next(k for k, v in PRIMITIVES.items() if isinstance(p, v))
    d = {"type": name}
    for k, v in asdict(p).items():
        if isinstance(v, float) and np.isinf(v):
            v = "inf"
        d[k] = list(v) if isinstance(v, tuple) else v
    return d


def _primitive_from_dict(d: dict):
    d = dict(d)
    try:
        cls = PRIMITIVES[d.pop("type")]
    except KeyError as exc:
        raise ConfigError(f"unknown or missing primitive type in {d}") from exc
    fields = cls.__dataclass_fields__
    unknown = set(d) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        if v == "inf":
            v = float("inf")
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        prim = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _tensor(prim.strain)
    return prim


def save_scene(field_: StrainField, path, metadata: dict | None = None) -> None:
    """Write a scene as JSON: ``{"primitives": [...], "metadata": {...}}``."""
    doc = {"primitives": [_primitive_to_dict(p) for p in field_.primitives], "metadata": metadata or {}}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def load_scene(path) -> StrainField:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scene {path}: {exc}") from exc
    unknown = set(doc) - {"primitives", "metadata"}
    if unknown:
        raise ConfigError(f"unknown scene keys {sorted(unknown)}")
    return StrainField(tuple(_primitive_from_dict(p) for p in doc.get("primitives", [])))


@dataclass(frozen=True)
class EnsembleSpec:
    """Spin-bath widths.

    ``TD`` sets the common-mode (strain-like) Lorentzian FWHM ``1/(pi*TD)``,
    ``Tmag`` the differential (magnetic) one.  ``strata`` grid points cover
    ``+-span`` half-widths of each Lorentzian.
    """

    TD: float = C.T_D
    Tmag: float = 1 / (1 / C.T2_STAR - 1 / C.T_D)
    hyperfine: float = C.HYPERFINE_14N
    strata: int = 128
    span: float = 40.0

    def __post_init__(self):
        if self.TD <= 0 or self.Tmag <= 0:
            raise ValueError("TD and Tmag must be positive")
        if self.strata < 8:
            raise ValueError("need at least 8 strata")

    @classmethod
    def from_t2star(cls, TD: float, T2star: float, **kw) -> "EnsembleSpec":
        if T2star >= TD:
            raise ValueError("T2* must be shorter than TD")
        return cls(TD=TD, Tmag=1 / (1 / T2star - 1 / TD), **kw)

    @property
    def gamma_cm(self) -> float:
        return 1 / (np.pi * self.TD)

    @property
    def gamma_diff(self) -> float:
        return 1 / (np.pi * self.Tmag)


def lorentzian_grid(fwhm: float, strata: int, span: float = 40.0, centers=(0.0,), center_weights=None):
    """Uniform frequency grid with Lorentzian-mixture weights.

    The grid covers ``[min(centers) - span*fwhm/2, max(centers) + span*fwhm/2]``
    with spacing ``span*fwhm/strata``.  Returns ``(offsets, weights)`` with
    weights summing to one.
    """
    centers = np.atleast_1d(np.asarray(centers, float))
    cw = np.ones(centers.size) if center_weights is None else np.asarray(center_weights, float)
    cw = cw / cw.sum()
    h = span * fwhm / strata
    lo = centers.min() - span * fwhm / 2
    hi = centers.max() + span * fwhm / 2
    n = max(strata, int(np.ceil((hi - lo) / h)))
    mid = 0.5 * (lo + hi)
    offsets = mid + (np.arange(n) - (n - 1) / 2) * h
    half = fwhm / 2
    dens = (cw[:, None] * (half / np.pi) / ((offsets[None, :] - centers[:, None]) ** 2 + half**2)).sum(0)
    return offsets, dens / dens.sum()


def bath_ensemble(spec: EnsembleSpec, params: NVParams | None = None, cm_centers=(0.0,), cm_weights=None,
                  hyperfine: bool = True) -> Ensemble:
    """Product ensemble of common-mode grid x (hyperfine lines x differential grid)."""
    c, wc = lorentzian_grid(spec.gamma_cm, spec.strata, spec.span, cm_centers, cm_weights)
    d, wd = lorentzian_grid(spec.gamma_diff, spec.strata, spec.span)
    lines = np.array([-spec.hyperfine, 0.0, spec.hyperfine]) if hyperfine else np.zeros(1)
    d = (lines[:, None] + d[None, :]).ravel()
    wd = np.tile(wd, lines.size) / lines.size
    cm = np.repeat(c, d.size)
    diff = np.tile(d, c.size)
    w = np.repeat(wc, d.size) * np.tile(wd, c.size)
    return Ensemble.from_offsets(cm, diff, w / w.sum(), params)


@dataclass(frozen=True)
class ConfocalPSF:
    """3D Gaussian interrogation volume (standard deviations in um)."""

    sigma_x: float
    sigma_y: float
    sigma_z: float

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_y, self.sigma_z) <= 0:
            raise ValueError("PSF widths must be positive")

    def samples(self, n: int = 5, rng: np.random.Generator | None = None):
        """Offsets ``(K, 3)`` and weights: Gauss-Hermite nodes, or random draws."""
        sig = np.array([self.sigma_x, self.sigma_y, self.sigma_z])
        if rng is not None:
            pts = rng.standard_normal((n**3, 3)) * sig
            return pts, np.full(n**3, 1.0 / n**3)
        x, w = np.polynomial.hermite_e.hermegauss(n)
        w = w / w.sum()
        g = np.stack(np.meshgrid(x, x, x, indexing="ij"), -1).reshape(-1, 3) * sig
        ww = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
        return g, ww


@dataclass(frozen=True)
class PixelFootprint:
    """Lateral collection profile of a widefield pixel.

    ``profile='lorentzian'`` (default) models the heavy tails of out-of-focus
    light collected by a widefield pixel; ``width`` is the FWHM in um.  Depth
    is averaged uniformly over ``depth``.
    """

    width: float
    depth: float = 0.0
    profile: str = "lorentzian"
    span: float = 6.0  # lateral extent, in units of width
    n: int = 25

    def __post_init__(self):
        if self.width <= 0 or self.depth < 0:
            raise ValueError("degenerate pixel footprint")
        if self.profile not in ("lorentzian", "gaussian", "tophat"):
            raise ValueError(f"unknown profile {self.profile!r}")

    def _axis(self, rng=None):
        if self.profile == "tophat":
            x = (np.arange(self.n) + 0.5) / self.n - 0.5
            return x * self.width, np.full(self.n, 1.0 / self.n)
        half_range = self.span * self.width
        x = np.linspace(-half_range, half_range, self.n)
        if self.profile == "lorentzian":
            w = 1 / (1 + (2 * x / self.width) ** 2)
        else:
            s = self.width / np.sqrt(8 * np.log(2))
            w = np.exp(-0.5 * (x / s) ** 2)
        return x, w / w.sum()

    def samples(self, rng: np.random.Generator | None = None):
        x, wx = self._axis()
        if rng is not None:
            x = x + rng.uniform(-0.5, 0.5, x.size) * (x[1] - x[0] if x.size > 1 else 0)
        nz = 3 if self.depth > 0 else 1
        z = (np.arange(nz) + 0.5) / nz * self.depth if self.depth > 0 else np.zeros(1)
        X, Y, Z = np.meshgrid(x, x, z, indexing="ij")
        W = (wx[:, None, None] * wx[None, :, None]) * np.full(nz, 1.0 / nz)[None, None, :]
        return np.stack([X, Y, Z], -1).reshape(-1, 3), W.ravel()


def psf_volume(psf: ConfocalPSF) -> float:
    """Integral of the unit-peak 3D Gaussian, ``(2*pi)^(3/2) sx sy sz`` um^3."""
    if min(psf.sigma_x, psf.sigma_y, psf.sigma_z) <= 0:
        raise ValueError("PSF widths must be positive")
    return float((2 * np.pi) ** 1.5 * psf.sigma_x * psf.sigma_y * psf.sigma_z)


def psf_for_volume(volume: float = C.CONFOCAL_VOLUME, aspect: float = 2.9) -> ConfocalPSF:
    """Gaussian PSF with ``sigma_z = aspect * sigma_xy`` and the given volume."""
    s = (volume / ((2 * np.pi) ** 1.5 * aspect)) ** (1 / 3)
    return ConfocalPSF(s, s, aspect * s)


def voxel_mz(position, psf, field_: StrainField, rng: np.random.Generator | None = None):
    """``Mz`` samples (Hz) and weights across the interrogation volume at ``position``."""
    offsets, w = psf.samples(rng=rng)
    pts = np.asarray(position, float)[None, :] + offsets
    return field_.mz(pts[:, 0], pts[:, 1], pts[:, 2]), w


def voxel_ensemble(
    position,
    psf,
    field_: StrainField,
    spec: EnsembleSpec,
    rng: np.random.Generator | None = None,
    params: NVParams | None = None,
    extra_cm: float = 0.0,
) -> Ensemble:
    """Ensemble of one voxel: PSF-weighted ``Mz`` convolved with the spin baths.

    The common-mode offset distribution is the bath Lorentzian centred on every
    ``Mz`` sample, laid on one uniform grid.  ``extra_cm`` adds a uniform shift
    (e.g. temperature drift of ``D``).  Without ``rng`` the result is fully
    deterministic; with it, PSF samples are jittered reproducibly.
    """
    if isinstance(psf, ConfocalPSF) and min(psf.sigma_x, psf.sigma_y, psf.sigma_z) <= 0:
        raise ValueError("degenerate PSF")
    mz, w = voxel_mz(position, psf, field_, rng)
    return bath_ensemble(spec, params, mz + extra_cm, w)


@dataclass(frozen=True)
class InstrumentProfiles:
    """Spatial MW/laser profiles and temperature drift.

    ``laser_inhomogeneity`` is the fractional drop of laser power from the
    field-of-view centre to its corners.
    """

    mw_z0: float = 50.0  # um, MW amplitude ~ 1/(1 + z/z0)
    laser_inhomogeneity: float = 0.6
    laser_halfwidth: float = 75.0  # um, centre-to-corner reference distance / sqrt(2)
    laser_center: tuple = (0.0, 0.0)
    temp_drift_rate: float = 0.1 / 3600  # K/s
    dD_dT: float = C.DD_DT  # Hz/K
    drift_sine_amplitude: float = 0.0  # Hz
    drift_sine_period: float = 3600.0  # s

    def mw_amplitude(self, depth):
        return 1.0 / (1.0 + np.maximum(np.asarray(depth, float), 0) / self.mw_z0)

    def laser_power(self, x, y):
        """Relative power: Gaussian falling to ``1 - inhomogeneity`` at the corners."""
        r2 = (np.asarray(x, float) - self.laser_center[0]) ** 2 + (np.asarray(y, float) - self.laser_center[1]) ** 2
        corner2 = 2 * self.laser_halfwidth**2
        return (1 - self.laser_inhomogeneity) ** (r2 / corner2)

    @property
    def drift_rate_hz(self) -> float:
        """Linear drift of ``D`` in Hz/s."""
        return self.dD_dT * self.temp_drift_rate


def d_shift(t, profiles: InstrumentProfiles):
    """Zero-field-splitting drift ``dD/dT * rate * t`` (+ optional sine), in Hz."""
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be non-negative")
    out = profiles.drift_rate_hz * t
    if profiles.drift_sine_amplitude:
        out = out + profiles.drift_sine_amplitude * np.sin(2 * np.pi * t / profiles.drift_sine_period)
    return float(out) if out.ndim == 0 else out
