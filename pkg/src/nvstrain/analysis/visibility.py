"""Interferometric visibility and its XY-normalized form."""

from __future__ import annotations

import numpy as np


def visibility(f_plus, f_minus):
    """``(f+ - f-)/(f+ + f-)``; works elementwise on arrays."""
    f_plus = np.asarray(f_plus, float)
    f_minus = np.asarray(f_minus, float)
    den = f_plus + f_minus
    if np.any(den <= 0):
        raise ValueError("f+ + f- must be positive")
    nu = (f_plus - f_minus) / den
    return float(nu) if nu.ndim == 0 else nu


def xy_visibility(f_x_plus, f_x_minus, f_y_plus, f_y_minus):
    """XY-normalized visibility and fringe amplitude.

    Returns ``(nu_xy, amplitude)`` with ``amplitude = hypot(dfX, dfY)``.  For
    array input, cells with zero amplitude come back as masked entries of a
    :class:`numpy.ma.MaskedArray` rather than NaN.
    """
    dx = np.asarray(f_x_plus, float) - np.asarray(f_x_minus, float)
    dy = np.asarray(f_y_plus, float) - np.asarray(f_y_minus, float)
    amp = np.hypot(dx, dy)
    if amp.ndim == 0:
        if amp == 0:
            raise ValueError("zero fringe amplitude: cell is unmeasurable")
        return float(dx / amp), float(amp)
    bad = amp == 0
    nu = np.divide(dx, amp, out=np.zeros_like(dx), where=~bad)
    return np.ma.array(nu, mask=bad), amp
