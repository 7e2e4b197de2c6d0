"""Stitch overlapping field-of-view maps into one composite.

Each field of view carries an unknown constant ``Mz`` offset (drift of ``D``
between acquisitions).  Offsets are estimated by weighted least squares on the
cells the views share, with the first view as the gauge, and removed before
the views are averaged with inverse-variance weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..analysis.io import StrainMap
from ..errors import ConfigError

MIN_OVERLAP = 0.10


def _pitch(m: StrainMap) -> float:
    xs, ys = np.unique(m.x), np.unique(m.y)
    steps = np.concatenate([np.diff(xs), np.diff(ys)])
    if steps.size == 0:
        raise ConfigError("a field of view needs at least two pixels along one axis")
    return float(steps.min())


def _cells(m: StrainMap, pitch: float, ref) -> dict:
    """Lattice index ``(i, j)`` relative to pixel centre ``ref`` to flat index of measured cells."""
    ix = np.rint((m.x.ravel() - ref[0]) / pitch).astype(int)
    iy = np.rint((m.y.ravel() - ref[1]) / pitch).astype(int)
    return {(int(a), int(b)): k for k, (a, b, bad) in enumerate(zip(ix, iy, m.mask.ravel())) if not bad}


def _bbox(m: StrainMap, pitch: float):
    return m.x.min() - pitch / 2, m.x.max() + pitch / 2, m.y.min() - pitch / 2, m.y.max() + pitch / 2


def overlap_fraction(a: StrainMap, b: StrainMap, pitch: float | None = None) -> float:
    """Shared area as a fraction of the smaller field of view."""
    pitch = pitch or _pitch(a)
    ax0, ax1, ay0, ay1 = _bbox(a, pitch)
    bx0, bx1, by0, by1 = _bbox(b, pitch)
    w = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    h = max(0.0, min(ay1, by1) - max(ay0, by0))
    return w * h / min((ax1 - ax0) * (ay1 - ay0), (bx1 - bx0) * (by1 - by0))


@dataclass(frozen=True)
class StitchResult:
    composite: StrainMap
    offsets: np.ndarray  # Hz, per field of view (first is zero)
    offset_sigma: np.ndarray  # Hz
    pairs: list  # (i, j, n_shared, mean difference Hz)
    seam_residual: float  # Hz, RMS of per-overlap mean mismatch after correction
    overlap_rms: float  # Hz, RMS of per-cell mismatch after correction


def stitch(maps: list[StrainMap], overlaps=None, min_overlap: float = MIN_OVERLAP) -> StitchResult:
    """Estimate per-view offsets on overlaps and merge the views.

    Parameters
    ----------
    maps : list of StrainMap
        2-D maps on a common pixel lattice.
    overlaps : list of (i, j), optional
        Declared overlapping pairs.  By default every pair whose shared area
        reaches ``min_overlap`` is used.

    Raises
    ------
    ConfigError
        If a declared pair overlaps by less than ``min_overlap``, no overlap
        exists, or the overlap graph is disconnected.
    """
    n = len(maps)
    if n == 0:
        raise ConfigError("nothing to stitch")
    if any(m.mz.ndim != 2 for m in maps):
        raise ConfigError("stitching needs 2-D maps")
    pitch = _pitch(maps[0])
    if any(not np.isclose(_pitch(m), pitch) for m in maps):
        raise ConfigError("maps have different pixel pitch")
    if overlaps is None:
        overlaps = [(i, j) for i, j in combinations(range(n), 2) if overlap_fraction(maps[i], maps[j], pitch) >= min_overlap]
    else:
        overlaps = [tuple(p) for p in overlaps]
        for i, j in overlaps:
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ConfigError(f"bad overlap pair {(i, j)}")
            f = overlap_fraction(maps[i], maps[j], pitch)
            if f < min_overlap:
                raise ConfigError(f"views {i} and {j} overlap by {f:.1%}, need at least {min_overlap:.0%}")
    if n > 1 and not overlaps:
        raise ConfigError("no overlapping views declared")
    graph = coo_matrix((np.ones(len(overlaps)), ([p[0] for p in overlaps], [p[1] for p in overlaps])), shape=(n, n))
    if connected_components(graph, directed=False)[0] != 1:
        raise ConfigError("overlap graph is disconnected")

    ref = (float(maps[0].x.flat[0]), float(maps[0].y.flat[0]))
    cells = [_cells(m, pitch, ref) for m in maps]
    rows, rhs, wts, pairs, shared = [], [], [], [], []
    for i, j in overlaps:
        common = sorted(set(cells[i]) & set(cells[j]))
        if not common:
            raise ConfigError(f"views {i} and {j} share no measured cells")
        ki = np.array([cells[i][c] for c in common])
        kj = np.array([cells[j][c] for c in common])
        d = maps[i].mz.ravel()[ki] - maps[j].mz.ravel()[kj]
        v = maps[i].sigma.ravel()[ki] ** 2 + maps[j].sigma.ravel()[kj] ** 2
        w = 1 / v
        mean = float(np.sum(w * d) / np.sum(w))
        row = np.zeros(n)
        row[i], row[j] = 1.0, -1.0
        rows.append(row)
        rhs.append(mean)
        wts.append(np.sum(w))
        pairs.append((i, j, len(common), mean))
        shared.append((i, j, ki, kj, d, w))
    # gauge: o_0 = 0
    A = np.array(rows)[:, 1:]
    sw = np.sqrt(np.array(wts))
    offsets = np.zeros(n)
    sig = np.zeros(n)
    if n > 1:
        sol, *_ = np.linalg.lstsq(A * sw[:, None], np.array(rhs) * sw, rcond=None)
        offsets[1:] = sol
        cov = np.linalg.pinv((A * sw[:, None]).T @ (A * sw[:, None]))
        sig[1:] = np.sqrt(np.diag(cov))

    seam, per_cell = [], []
    for i, j, ki, kj, d, w in shared:
        r = d - (offsets[i] - offsets[j])
        seam.append(np.sum(w * r) / np.sum(w))
        per_cell.append(r)
    seam_rms = float(np.sqrt(np.mean(np.square(seam)))) if seam else 0.0
    cell_rms = float(np.sqrt(np.mean(np.concatenate(per_cell) ** 2))) if per_cell else 0.0

    keys = sorted(set().union(*cells))
    ii = np.array([k[0] for k in keys])
    jj = np.array([k[1] for k in keys])
    i0, j0 = ii.min(), jj.min()
    shape = (jj.max() - j0 + 1, ii.max() - i0 + 1)
    num = np.zeros(shape)
    den = np.zeros(shape)
    amp = np.zeros(shape)
    for m, c, o in zip(maps, cells, offsets):
        for (a, b), k in c.items():
            w = 1 / m.sigma.ravel()[k] ** 2
            num[b - j0, a - i0] += w * (m.mz.ravel()[k] - o)
            den[b - j0, a - i0] += w
            amp[b - j0, a - i0] += w * m.amplitude.ravel()[k]
    mask = den == 0
    safe = np.where(mask, 1.0, den)
    X, Y = np.meshgrid(ref[0] + (i0 + np.arange(shape[1])) * pitch, ref[1] + (j0 + np.arange(shape[0])) * pitch)
    meta = {"stitched_views": n, "offsets_Hz": offsets.tolist(), "seam_residual_Hz": seam_rms,
            "overlap_rms_Hz": cell_rms, "pairs": [list(p) for p in pairs]}
    comp = StrainMap(X, Y, np.zeros(shape), np.where(mask, 0.0, num / safe), np.where(mask, 1.0, 1 / np.sqrt(safe)),
                     np.where(mask, 0.0, amp / safe), mask, meta)
    return StitchResult(comp, offsets, sig, pairs, seam_rms, cell_rms)
