"""CW-ODMR strain mapping: per-cell synthetic spectra, multi-triplet fits and
the aligned-class ``Mz``/``Bz`` maps with a goodness-of-fit map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import constants as C
from ..analysis.io import StrainMap
from ..analysis.odmr import NV_AXES, ODMRSpectrum, fit_odmr, odmr_to_maps, synth_spectrum
from ..errors import FitError
from ..sample import PixelFootprint, StrainField, voxel_mz
from .common import base_metadata, load_field
from .config import ScanConfig


@dataclass(frozen=True)
class ODMRMap:
    map: StrainMap  # relative Mz (field-of-view mean removed)
    bz: np.ndarray  # T
    chi2_red: np.ndarray
    absolute_mz: np.ndarray  # Hz, before removing the mean


def bias_field(cfg: ScanConfig) -> np.ndarray:
    return cfg.odmr.bias * NV_AXES[0]


def cell_spectrum(cfg: ScanConfig, mz_samples, rng=None) -> ODMRSpectrum:
    o = cfg.odmr
    freqs = np.arange(o.f_start, o.f_stop + o.f_step / 2, o.f_step)
    y = synth_spectrum(freqs, bias_field(cfg), C.ZERO_FIELD_SPLITTING, np.asarray(mz_samples, float), o.fwhm,
                       o.contrast, cfg.ensemble.hyperfine)
    if rng is not None and o.noise > 0:
        y = y + rng.normal(0.0, o.noise, y.size)
    return ODMRSpectrum(freqs, y, np.full(y.size, max(o.noise, 1e-12)), hyperfine=cfg.ensemble.hyperfine)


def run_odmr_map(cfg: ScanConfig, field_: StrainField | None = None) -> ODMRMap:
    """Fit every grid cell; cells whose fit fails are masked."""
    field_ = load_field(cfg) if field_ is None else field_
    xs, ys, _ = cfg.grid.axes()
    X, Y = np.meshgrid(xs, ys)
    fp = PixelFootprint(cfg.grid.spacing, span=2.0, n=9)
    rng = np.random.default_rng(cfg.seed)
    mz = np.zeros(X.shape)
    sig = np.ones(X.shape)
    bz = np.zeros(X.shape)
    chi2 = np.full(X.shape, np.nan)
    mask = np.zeros(X.shape, bool)
    for idx in np.ndindex(X.shape):
        samples, _ = voxel_mz((X[idx], Y[idx], 0.0), fp, field_)
        spec = cell_spectrum(cfg, samples, rng)
        try:
            fit = fit_odmr(spec, 4, cfg.ensemble.hyperfine, cfg.odmr.fwhm)
        except (FitError, ValueError):
            mask[idx] = True
            continue
        fpl, fmi = fit.aligned_pair()
        mz[idx], bz[idx] = odmr_to_maps(fpl, fmi)
        err = fit.center_errors
        sig[idx] = 0.5 * np.hypot(err[-1], err[0])
        chi2[idx] = fit.chi2_red
    rel = mz - (mz[~mask].mean() if (~mask).any() else 0.0)
    meta = base_metadata(cfg)
    meta.update({"relative": True, "bias_T": cfg.odmr.bias, "median_chi2_red": float(np.nanmedian(chi2)),
                 "masked_cells": int(mask.sum())})
    # no interferometric fringe here; the amplitude column is not applicable
    smap = StrainMap(X, Y, np.zeros_like(X), rel, sig, np.full(X.shape, np.nan), mask, meta)
    return ODMRMap(smap, bz, chi2, mz)
