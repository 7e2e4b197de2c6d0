"""Widefield (QDM) strain imaging with a lock-in camera.

Each field of view is acquired at two drive detunings half a fringe apart,
``op`` and ``op + 1/(2 tau1)``.  The camera's fixed per-slot offsets are the
same in both frames, so their difference is offset free and carries twice the
fringe signal.  Channel 0 holds the +X/-X difference and channel 1 the +Y/-Y
difference, which together give the XY-normalized visibility per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..analysis.fitting import CalibrationCurve, visibility_to_mz
from ..analysis.io import StrainMap
from ..analysis.visibility import xy_visibility
from ..noise import LockInCameraConfig, lockin_acquire
from ..sample import PixelFootprint, StrainField, d_shift, strain_from_mz, voxel_ensemble
from .common import PointSensor, base_metadata, ensemble_spec, load_field, profiles
from .confocal import mask_cells
from .config import ScanConfig

BENCHMARK_SURVEY_RATE = 125.0 * 125.0  # um^2/s
SECONDS_PER_FREQUENCY = 0.5


def camera_config(cfg: ScanConfig, offsets=None) -> LockInCameraConfig:
    q = cfg.qdm
    return LockInCameraConfig(q.f_demod, q.n_demod, offsets, counts_per_electron=q.counts_per_electron)


def fixed_offsets(cfg: ScanConfig) -> np.ndarray:
    """Camera fixed-pattern offsets (electrons), ``(4, pixels, pixels)``.

    They belong to the camera, so they are drawn from their own stream and
    repeat for every field of view.
    """
    n = cfg.qdm.pixels
    rng = np.random.default_rng([cfg.seed, 0x0FF5E7])
    return rng.normal(0.0, cfg.qdm.offset_spread, (4, n, n))


@dataclass(frozen=True)
class PixelModel:
    """Noise-free per-pixel quantities for one field of view."""

    x: np.ndarray  # um, pixel centres
    y: np.ndarray
    mz: np.ndarray  # Hz, footprint-centre truth
    chi: np.ndarray  # complex ensemble coherence
    photons: np.ndarray  # photoelectrons per exposure
    contrast: float
    tau1: float
    phi0: float

    @property
    def fringe_amplitude(self) -> np.ndarray:
        return self.contrast * np.abs(self.chi)


def pixel_model(cfg: ScanConfig, field_: StrainField, origin=(0.0, 0.0)) -> PixelModel:
    q = cfg.qdm
    w = q.fov / q.pixels
    centres = (np.arange(q.pixels) + 0.5) * w
    X, Y = np.meshgrid(origin[0] + centres, origin[1] + centres)
    fp = PixelFootprint(w)
    spec = ensemble_spec(cfg)
    chi = np.empty(X.shape, complex)
    mz = np.empty(X.shape)
    for idx in np.ndindex(X.shape):
        pos = (X[idx], Y[idx], 0.0)
        mz[idx] = float(field_.mz(*pos))
        chi[idx] = PointSensor.from_ensemble(cfg, voxel_ensemble(pos, fp, field_, spec), mz[idx]).chi
    laser = profiles(cfg).laser_power(X - origin[0], Y - origin[1])
    s = cfg.sequence
    return PixelModel(X, Y, mz, chi, q.photons * laser, s.contrast, s.tau1, s.phi0)


@dataclass(frozen=True)
class Acquisition:
    dx: np.ndarray  # electrons, offset-free X difference (two frames)
    dy: np.ndarray
    clipped: float  # fraction of digitized values at full scale


def acquire(cfg: ScanConfig, pm: PixelModel, camera: LockInCameraConfig, rng, shift: float = 0.0) -> Acquisition:
    """One field of view: 0.5 s at each of the two drive detunings."""
    s = cfg.sequence
    frames = camera.frames_in(SECONDS_PER_FREQUENCY)
    out = {}
    clipped = 0.0
    for k, delta in enumerate((s.operating_point, s.operating_point + 0.5 / s.tau1)):
        theta = 2 * np.pi * (delta - pm.mz - shift) * s.tau1 + s.phi0
        q = pm.chi * np.exp(1j * theta)
        n = pm.photons
        for ch, part in ((0, q.imag), (1, q.real)):
            a, b = n * (1 + pm.contrast * part), n * (1 - pm.contrast * part)
            half = camera.full_scale // 2
            clipped += np.mean(np.abs((a - b) * camera.counts_per_electron) >= half - 1) / 4
            out[k, ch] = lockin_acquire(a, b, camera, rng, channel=ch, frames=frames)
    return Acquisition(out[0, 0] - out[1, 0], out[0, 1] - out[1, 1], float(clipped))


def mz_sigma(pm: PixelModel, camera: LockInCameraConfig) -> np.ndarray:
    """Analytic ``Mz`` noise (Hz) of one acquisition from photon shot noise."""
    frames = camera.frames_in(SECONDS_PER_FREQUENCY)
    # each difference: two frames, each the mean of frames*n_demod exposure pairs
    sd = np.sqrt(2 * 2 * pm.photons / (camera.n_demod * frames))
    phase = sd / (4 * pm.photons * pm.fringe_amplitude)
    return phase / (2 * np.pi * pm.tau1)


def invert(cfg: ScanConfig, acq: Acquisition, pm: PixelModel):
    """``(mz, amplitude, ambiguous)`` from the difference frames."""
    s = cfg.sequence
    zeros = np.zeros_like(acq.dx)
    nu, amp = xy_visibility(acq.dx, zeros, acq.dy, zeros)
    bad = np.ma.getmaskarray(nu)
    nu_y = np.divide(acq.dy, amp, out=np.zeros_like(amp), where=~bad)
    conv = visibility_to_mz(np.ma.filled(nu, 0.0), CalibrationCurve(1.0, s.tau1, s.phi0), s.operating_point,
                            nu_y=nu_y, normalized=True)
    return conv.mz, amp / (4 * pm.photons), conv.ambiguous | bad


@dataclass(frozen=True)
class QDMResult:
    map: StrainMap
    adev_1s: np.ndarray  # strain, per pixel, from repeated 1 s acquisitions
    histogram: tuple  # (counts, edges) of adev_1s over unmasked pixels
    frame_rate: float  # Hz
    frames_per_frequency: int
    fov_time_s: float
    survey_rate: float  # um^2/s

    @property
    def meets_benchmark(self) -> bool:
        return self.survey_rate >= BENCHMARK_SURVEY_RATE


def run_qdm_fov(cfg: ScanConfig, field_: StrainField | None = None, index: int = 0, rng=None,
                pm: PixelModel | None = None) -> QDMResult:
    """Image field of view ``index`` of ``qdm.fov_origins``.

    The first acquisition gives the map; ``qdm.repeats`` back-to-back 1 s
    acquisitions give each pixel's 1 s Allan deviation.  The field of view is
    acquired at ``index * qdm.fov_interval`` seconds, so drift of ``D`` shows
    up as a uniform offset.
    """
    field_ = load_field(cfg) if field_ is None else field_
    q = cfg.qdm
    origin = q.fov_origins[index]
    pm = pm or pixel_model(cfg, field_, origin)
    camera = camera_config(cfg, fixed_offsets(cfg))
    rng = rng if rng is not None else np.random.default_rng([cfg.seed, index])
    prof = profiles(cfg)
    fov_time = 2 * SECONDS_PER_FREQUENCY
    t0 = index * q.fov_interval
    series, clipped = [], 0.0
    for r in range(q.repeats):
        acq = acquire(cfg, pm, camera, rng, float(d_shift(t0 + (r + 0.5) * fov_time, prof)))
        mz, amp, amb = invert(cfg, acq, pm)
        if r == 0:
            first = (mz, amp, amb)
        series.append(mz)
        clipped = max(clipped, acq.clipped)
    mz, amp, amb = first
    series = np.array(series)
    # overlapping Allan deviation at one sample (m = 1)
    adev = np.abs(strain_from_mz(np.sqrt(0.5 * np.mean(np.diff(series, axis=0) ** 2, axis=0))))
    mask = mask_cells(amp, amb, cfg.mask_fraction)
    sigma = mz_sigma(pm, camera)
    counts, edges = np.histogram(adev[~mask], bins=20)
    area = q.fov**2
    meta = base_metadata(cfg)
    meta.update({
        "fov_index": index,
        "fov_origin_um": list(map(float, origin)),
        "acquired_at_s": t0,
        "virtual_time_s": fov_time,
        "time_per_frequency_s": SECONDS_PER_FREQUENCY,
        "frame_rate_Hz": camera.frame_rate,
        "frames_per_frequency": camera.frames_in(SECONDS_PER_FREQUENCY),
        "survey_rate_um2_per_s": area / fov_time,
        "pixel_um": q.fov / q.pixels,
        "clipped_fraction": clipped,
        "masked_cells": int(mask.sum()),
        "median_adev_1s_strain": float(np.median(adev[~mask])) if (~mask).any() else None,
    })
    smap = StrainMap(pm.x, pm.y, np.zeros_like(pm.x), mz, np.where(mask, 1.0, sigma), amp, mask, meta)
    return QDMResult(smap, adev, (counts, edges), camera.frame_rate, camera.frames_in(SECONDS_PER_FREQUENCY),
                     fov_time, area / fov_time)


def run_qdm_imaging(cfg: ScanConfig, field_: StrainField | None = None) -> list[QDMResult]:
    """Every field of view in ``qdm.fov_origins``, in acquisition order."""
    field_ = load_field(cfg) if field_ is None else field_
    return [run_qdm_fov(cfg, field_, i) for i in range(len(cfg.qdm.fov_origins))]
