"""NV ground-state spin (S=1) under two-tone microwave drive.

States are ordered ``(|+1>, |0>, |-1>)``.  Propagators live in the frame
rotating with the two drive tones, with counter-rotating terms dropped, so a
drive with constant amplitudes and detunings has a time-independent generator.
Generators are expressed in Hz; ``U = exp(-2j*pi*H*t)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from . import constants as C
from .errors import ConvergenceError

PLUS, ZERO, MINUS = 0, 1, 2
SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class NVParams:
    """Aligned-field Hamiltonian parameters of one NV.

    ``hyperfine_offset`` is the effective-field shift of the addressed 14N
    hyperfine line (one of -A, 0, +A); it enters like ``gamma * Bz``.
    """

    D: float = C.ZERO_FIELD_SPLITTING
    Mz: float = 0.0
    gamma: float = C.GYROMAGNETIC_RATIO
    Bz: float = 0.0
    hyperfine_offset: float = 0.0

    def __post_init__(self):
        if self.D <= 0 or self.gamma <= 0:
            raise ValueError("D and gamma must be positive")
        f_plus, f_minus = _transitions(self)
        if f_plus <= 0 or f_minus <= 0:
            raise ValueError(f"non-positive transition frequency ({f_plus}, {f_minus})")

    @property
    def splitting(self) -> float:
        """Half the f+ - f- splitting, ``gamma*Bz + hyperfine_offset``."""
        return self.gamma * self.Bz + self.hyperfine_offset


@dataclass(frozen=True)
class DriveTones:
    """Two-tone drive.

    Amplitudes are Hz-equivalent fields (``gamma * B``), so the effective Rabi
    rate is ``2*pi*sqrt(a+^2 + a-^2) / (2*sqrt(2))`` rad/s.  Detunings are
    drive minus resonance: ``w+- = f+- + delta_cm +- delta_diff``.
    """

    amp_plus: float = 0.0
    amp_minus: float = 0.0
    phase_plus: float = 0.0
    phase_minus: float = 0.0
    delta_cm: float = 0.0
    delta_diff: float = 0.0

    def __post_init__(self):
        if self.amp_plus < 0 or self.amp_minus < 0:
            raise ValueError("drive amplitudes must be non-negative")

    @property
    def resonant(self) -> bool:
        return self.delta_cm == 0 and self.delta_diff == 0


@dataclass(frozen=True)
class SpinState:
    amplitudes: np.ndarray = field(repr=True)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(3).copy()
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def basis(cls, level: int) -> "SpinState":
        """Pure state ``|m_s = level>``."""
        amps = np.zeros(3, complex)
        amps[{1: PLUS, 0: ZERO, -1: MINUS}[level]] = 1.0
        return cls(amps)

    @property
    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def is_normalized(self, tol: float = 1e-10) -> bool:
        return abs(self.norm - 1.0) <= tol

    def evolve(self, U: np.ndarray) -> "SpinState":
        return SpinState(U @ self.amplitudes)


def _transitions(params):
    s = params.gamma * params.Bz + params.hyperfine_offset
    return params.D + params.Mz + s, params.D + params.Mz - s


def transition_frequencies(params: NVParams) -> tuple[float, float]:
    """Return ``(f+, f-)`` for the ``|0> -> |+-1>`` transitions in Hz."""
    return _transitions(params)


def lab_hamiltonian(params: NVParams) -> np.ndarray:
    """Diagonal undriven Hamiltonian in Hz, energies relative to ``|0>``."""
    f_plus, f_minus = _transitions(params)
    return np.diag([f_plus, 0.0, f_minus]).astype(complex)


def rabi_rate(tones: DriveTones) -> float:
    """Effective Rabi angular rate ``omega_e`` in rad/s."""
    return 2 * np.pi * np.hypot(tones.amp_plus, tones.amp_minus) / (2 * SQRT2)


def rotating_generator(tones: DriveTones) -> np.ndarray:
    """Rotating-frame RWA generator in Hz (Hermitian 3x3)."""
    H = np.zeros((3, 3), complex)
    H[PLUS, PLUS] = -(tones.delta_cm + tones.delta_diff)
    H[MINUS, MINUS] = -(tones.delta_cm - tones.delta_diff)
    cp = tones.amp_plus / (2 * SQRT2) * np.exp(-1j * tones.phase_plus)
    cm = tones.amp_minus / (2 * SQRT2) * np.exp(-1j * tones.phase_minus)
    H[PLUS, ZERO], H[ZERO, PLUS] = cp, np.conj(cp)
    H[MINUS, ZERO], H[ZERO, MINUS] = cm, np.conj(cm)
    return H


def resonant_propagator(tones: DriveTones, t: float) -> np.ndarray:
    """Closed-form propagator for a resonant two-tone drive.

    Raises
    ------
    ValueError
        If either detuning is non-zero; use :func:`numeric_propagator`.
    """
    if not tones.resonant:
        raise ValueError("resonant_propagator requires zero detunings")
    norm = np.hypot(tones.amp_plus, tones.amp_minus)
    if norm == 0 or t == 0:
        return np.eye(3, dtype=complex)
    bp, bm = tones.amp_plus / norm, tones.amp_minus / norm
    ep, em = np.exp(-1j * tones.phase_plus), np.exp(-1j * tones.phase_minus)
    theta = rabi_rate(tones) * t
    c, s = np.cos(theta), np.sin(theta)
    U = np.empty((3, 3), complex)
    U[PLUS, PLUS] = bm**2 + bp**2 * c
    U[MINUS, MINUS] = bp**2 + bm**2 * c
    U[ZERO, ZERO] = c
    U[PLUS, ZERO] = -1j * bp * ep * s
    U[ZERO, PLUS] = -1j * bp * np.conj(ep) * s
    U[MINUS, ZERO] = -1j * bm * em * s
    U[ZERO, MINUS] = -1j * bm * np.conj(em) * s
    U[PLUS, MINUS] = (c - 1) * bp * bm * ep * np.conj(em)
    U[MINUS, PLUS] = (c - 1) * bp * bm * em * np.conj(ep)
    return U


def _frequency_scale(tones):
    return max(
        abs(tones.delta_cm + tones.delta_diff),
        abs(tones.delta_cm - tones.delta_diff),
        rabi_rate(tones) / (2 * np.pi),
    )


def numeric_propagator(
    params: NVParams,
    tones: DriveTones,
    t: float,
    dt: float | None = None,
    tol: float = 1e-8,
) -> np.ndarray:
    """Propagate the rotating-frame generator by fixed unitary steps.

    Each step is the exact exponential of the (piecewise constant) generator,
    so the result is unitary by construction.  The step is halved once and
    the two results compared; a difference above ``tol`` raises
    :class:`ConvergenceError`.

    Parameters
    ----------
    params : NVParams
        Resonance the tones are referenced to; validated for positive
        transition and drive frequencies.
    tones : DriveTones
    t : float
        Duration in seconds.
    dt : float, optional
        Step size.  Must satisfy ``dt <= t/100`` and ``dt <= 1/(50*scale)``
        where ``scale`` is the largest rotating-frame frequency.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    f_plus, f_minus = transition_frequencies(params)
    if f_plus + tones.delta_cm + tones.delta_diff <= 0 or f_minus + tones.delta_cm - tones.delta_diff <= 0:
        raise ValueError("drive frequency would be non-positive")
    if t == 0:
        return np.eye(3, dtype=complex)
    scale = _frequency_scale(tones)
    limit = t / 100 if 50 * scale * t <= 100 else 1 / (50 * scale)
    if dt is None:
        dt = limit
    elif dt > limit * (1 + 1e-12):
        raise ValueError(f"step {dt:g} s exceeds the allowed {limit:g} s")
    H = rotating_generator(tones)
    n = int(np.ceil(t / dt - 1e-9))
    U = _stepped(H, t, n)
    U_half = _stepped(H, t, 2 * n)
    err = np.max(np.abs(U - U_half))
    if err > tol:
        raise ConvergenceError(f"halving dt changed the propagator by {err:.3g}")
    return U_half


def _stepped(H, t, n):
    step = expm(-2j * np.pi * H * (t / n))
    return np.linalg.matrix_power(step, n)


def batch_propagators(H: np.ndarray, t: float) -> np.ndarray:
    """``exp(-2j*pi*H*t)`` for a stack of Hermitian generators ``(..., 3, 3)``."""
    w, V = np.linalg.eigh(H)
    phase = np.exp(-2j * np.pi * w * t)
    return (V * phase[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


def pi_pulse_amplitude(t_pi: float) -> float:
    """Single-tone Hz-equivalent amplitude whose pi pulse lasts ``t_pi``."""
    # omega_e * t_pi = pi/2 with omega_e = 2*pi*a/(2*sqrt(2))
    return 1.0 / (SQRT2 * t_pi)


def single_tone(tone: str, amplitude: float, phase: float = 0.0) -> DriveTones:
    if tone == "plus":
        return DriveTones(amp_plus=amplitude, phase_plus=phase)
    if tone == "minus":
        return DriveTones(amp_minus=amplitude, phase_minus=phase)
    raise ValueError(f"tone must be 'plus' or 'minus', got {tone!r}")


def swap_order(start: str) -> tuple[str, str, str]:
    """Tone order of a swap triplet beginning in the ``start`` manifold."""
    if start == "minus":
        return ("minus", "plus", "minus")
    if start == "plus":
        return ("plus", "minus", "plus")
    raise ValueError(f"start must be 'minus' or 'plus', got {start!r}")


def apply_swap(
    state: SpinState,
    start: str = "minus",
    phase_sign: int = 1,
    t_pi: float = C.T_PI,
    phase: float = 0.0,
) -> SpinState:
    """Apply a resonant pi-pulse triplet exchanging ``|-1>`` and ``|+1>``.

    ``phase`` is the drive phase of the middle pulse; ``phase_sign=-1`` adds
    pi to it, which inverts the coherence carried through the swap.
    """
    if not state.is_normalized():
        raise ValueError(f"state is not normalized (norm {state.norm:.12g})")
    if phase_sign not in (1, -1):
        raise ValueError("phase_sign must be +1 or -1")
    amp = pi_pulse_amplitude(t_pi)
    middle = phase + (0.0 if phase_sign > 0 else np.pi)
    out = state
    for k, tone in enumerate(swap_order(start)):
        tones = single_tone(tone, amp, middle if k == 1 else 0.0)
        out = out.evolve(resonant_propagator(tones, t_pi))
    return out


def populations(state: SpinState) -> tuple[float, float, float]:
    """``(p+1, p0, p-1)``."""
    p = np.abs(state.amplitudes) ** 2
    return float(p[PLUS]), float(p[ZERO]), float(p[MINUS])
