"""Strain maps and their CSV + JSON-sidecar serialization."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..sample import strain_from_mz

CSV_COLUMNS = ("x", "y", "z", "Mz_Hz", "strain", "sigma", "amplitude", "mask")
UNITS = {"x": "um", "y": "um", "z": "um", "Mz_Hz": "Hz", "strain": "1", "sigma": "Hz", "amplitude": "1", "mask": "bool"}


@dataclass
class StrainMap:
    """Per-cell ``Mz`` with uncertainty and fringe amplitude on a grid.

    Arrays share one shape (2-D ``(ny, nx)`` or 3-D ``(nz, ny, nx)``).
    ``mask`` is True for unmeasurable cells.  ``sigma`` is the ``Mz``
    uncertainty in Hz.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    mz: np.ndarray
    sigma: np.ndarray
    amplitude: np.ndarray
    mask: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), float) for k in ("x", "y", "z", "mz", "sigma", "amplitude")]
        shape = arrs[3].shape
        for name, a in zip(("x", "y", "z", "mz", "sigma", "amplitude"), arrs):
            if a.shape != shape:
                raise ValueError(f"{name} has shape {a.shape}, expected {shape}")
            setattr(self, name, a)
        self.mask = np.zeros(shape, bool) if self.mask is None else np.asarray(self.mask, bool)
        if self.mask.shape != shape:
            raise ValueError("mask shape mismatch")
        good = ~self.mask
        if not np.all(np.isfinite(self.mz[good])):
            raise ValueError("unmasked Mz values must be finite")
        if np.any(self.sigma[good] <= 0):
            raise ValueError("unmasked uncertainties must be positive")

    @property
    def shape(self):
        return self.mz.shape

    @property
    def strain(self) -> np.ndarray:
        return strain_from_mz(self.mz)

    @property
    def strain_sigma(self) -> np.ndarray:
        return np.abs(strain_from_mz(self.sigma))

    def relative(self) -> "StrainMap":
        """Copy with the mean over measured cells removed."""
        mz = self.mz - np.mean(self.mz[~self.mask])
        return StrainMap(self.x, self.y, self.z, mz, self.sigma, self.amplitude, self.mask.copy(), dict(self.metadata))

    def rows(self):
        for idx in np.ndindex(self.shape):
            yield (self.x[idx], self.y[idx], self.z[idx], self.mz[idx], self.strain[idx],
                   self.sigma[idx], self.amplitude[idx], int(self.mask[idx]))


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _fmt(v) -> str:
    return repr(float(v))


def write_map(smap: StrainMap, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (one row per cell) and ``<path>.json`` metadata."""
    path = Path(path)
    csv_path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in smap.rows():
            w.writerow([_fmt(v) for v in r[:-1]] + [r[-1]])
    meta = {"shape": list(smap.shape), "units": UNITS, "columns": list(CSV_COLUMNS)}
    meta.update(smap.metadata)
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def read_map(path) -> StrainMap:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    shape = tuple(meta["shape"])
    with open(path.with_suffix(".csv"), newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected columns {header}")
        data = np.array([[float(v) for v in row] for row in r])
    cols = {k: data[:, i].reshape(shape) for i, k in enumerate(CSV_COLUMNS)}
    extra = {k: v for k, v in meta.items() if k not in ("shape", "units", "columns")}
    return StrainMap(cols["x"], cols["y"], cols["z"], cols["Mz_Hz"], cols["sigma"], cols["amplitude"],
                     cols["mask"].astype(bool), extra)


def write_trace(x, y, sigma, path, x_unit: str = "s", y_unit: str = "1", metadata: dict | None = None):
    """Trace as CSV ``x,y,sigma`` with a JSON sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if sigma is None:
        sigma = np.zeros(np.size(y))
    with open(path.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("x", "y", "sigma"))
        for row in zip(np.ravel(x), np.ravel(y), np.ravel(sigma)):
            w.writerow([_fmt(v) for v in row])
    meta = {"units": {"x": x_unit, "y": y_unit, "sigma": y_unit}}
    meta.update(metadata or {})
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path.with_suffix(".csv"), path.with_suffix(".json")


def export_png16(values, path, mask=None) -> Path:
    """Quick-look 16-bit grayscale PNG of a 2-D array, min..max scaled."""
    from PIL import Image

    v = np.asarray(values, float)
    good = np.isfinite(v) if mask is None else (~np.asarray(mask, bool) & np.isfinite(v))
    lo, hi = (v[good].min(), v[good].max()) if good.any() else (0.0, 1.0)
    scale = 65535 / (hi - lo) if hi > lo else 0.0
    img = np.where(good, (v - lo) * scale, 0).astype(np.uint16)
    path = Path(path).with_suffix(".png")
    Image.fromarray(img).save(path)
    return path
