"""Pulse sequences (strain-CPMG, single-quantum Ramsey) and ensemble simulation.

A sequence is an ordered tuple of :class:`Pulse` and :class:`FreeEvolution`
segments.  Drive detunings are referenced to a nominal :class:`NVParams`;
ensemble members carry their own resonance shifts, so each member sees tone
detunings ``Delta+- = (delta_cm +- delta_diff) - shift+-``.

Readout quadrature of a strain-CPMG sequence is selected by the drive phase of
the middle pulse of the last swap; for Ramsey it is the phase of the final
pi/2 pulse.  With these conventions, for the ideal sequence::

    p0(+X) = (1 + sin(phase)) / 2,    p0(+Y) = (1 + cos(phase)) / 2

where ``phase`` is the coherence phase returned by :func:`ideal_phase`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np

from . import constants as C
from .spin import (
    MINUS,
    PLUS,
    ZERO,
    DriveTones,
    NVParams,
    batch_propagators,
    pi_pulse_amplitude,
    resonant_propagator,
    single_tone,
    swap_order,
    transition_frequencies,
)

READOUTS = ("+X", "-X", "+Y", "-Y")
# extra phase on the readout-defining pulse for each quadrature
_SWAP_READOUT_PHASE = {"+X": -np.pi / 2, "-X": np.pi / 2, "+Y": np.pi, "-Y": 0.0}
_RAMSEY_READOUT_PHASE = {"+X": np.pi / 2, "-X": -np.pi / 2, "+Y": np.pi, "-Y": 0.0}


@dataclass(frozen=True)
class Pulse:
    tone: str
    duration: float
    phase: float = 0.0
    amplitude: float = 0.0
    readout: bool = False  # phase carries the readout quadrature

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("pulse duration must be positive")
        if self.tone not in ("plus", "minus"):
            raise ValueError(f"unknown tone {self.tone!r}")


@dataclass(frozen=True)
class FreeEvolution:
    duration: float
    manifold: str  # which of |+1>/|-1> carries the coherence

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("free evolution duration must be positive")


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple
    readout: str = "+X"
    n_swaps: int = 0
    delta_cm: float = 0.0
    delta_diff: float = 0.0
    kind: str = "strain-cpmg"
    phi0: float = 0.0  # configured phase offset for the ideal fast path

    def __post_init__(self):
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")
        if self.kind == "strain-cpmg" and (self.n_swaps < 2 or self.n_swaps % 2):
            raise ValueError("strain-CPMG needs an even number of swaps >= 2")
        if self.kind == "ramsey" and self.n_swaps != 0:
            raise ValueError("Ramsey sequences have no swaps")

    @property
    def tau(self) -> float:
        """Total free evolution time."""
        return sum(s.duration for s in self.segments if isinstance(s, FreeEvolution))

    def free_time(self, manifold: str) -> float:
        return sum(
            s.duration for s in self.segments if isinstance(s, FreeEvolution) and s.manifold == manifold
        )

    @property
    def pulses(self) -> list[Pulse]:
        return [s for s in self.segments if isinstance(s, Pulse)]

    @property
    def duration(self) -> float:
        return sum(s.duration for s in self.segments)

    def with_readout(self, readout: str) -> "PulseSequence":
        if readout == self.readout:
            return self
        table = _SWAP_READOUT_PHASE if self.kind == "strain-cpmg" else _RAMSEY_READOUT_PHASE
        shift = table[readout] - table[self.readout]
        segs = tuple(
            replace(s, phase=s.phase + shift) if isinstance(s, Pulse) and s.readout else s
            for s in self.segments
        )
        return replace(self, segments=segs, readout=readout)

    def with_detunings(self, delta_cm: float | None = None, delta_diff: float | None = None) -> "PulseSequence":
        return replace(
            self,
            delta_cm=self.delta_cm if delta_cm is None else delta_cm,
            delta_diff=self.delta_diff if delta_diff is None else delta_diff,
        )


def build_strain_cpmg(
    n_swaps: int,
    tau: float,
    delta_cm: float = 0.0,
    delta_diff: float = 0.0,
    t_pi: float = C.T_PI,
    readout: str = "+X",
    pulse_error: float = 0.0,
    min_delay: float = 0.0,
    phi0: float = 0.0,
) -> PulseSequence:
    """Strain-CPMG: pi/2(-), free evolution split over alternating manifolds
    by ``n_swaps`` pi-pulse triplets, closing pi/2(-).

    Free segments follow the CPMG spacing ``tau/2N, tau/N, ..., tau/N, tau/2N``
    so each manifold collects exactly ``tau/2`` for even ``N``.

    Parameters
    ----------
    pulse_error : float
        Fractional Rabi amplitude error applied to every pulse.
    min_delay : float
        Shortest allowed free segment (the first and last are ``tau/2N``).
    """
    if n_swaps < 2 or n_swaps % 2:
        raise ValueError(f"n_swaps must be an even integer >= 2, got {n_swaps}")
    if t_pi <= 0:
        raise ValueError("t_pi must be positive")
    if tau <= 3 * n_swaps * t_pi:
        raise ValueError("tau too short for the swap pulse budget")
    if tau / (2 * n_swaps) < min_delay:
        raise ValueError("first free segment shorter than min_delay")
    amp = pi_pulse_amplitude(t_pi) * (1 + pulse_error)
    half = Pulse("minus", t_pi / 2, 0.0, amp)
    segs: list = [half]
    manifold = "minus"
    for k in range(n_swaps):
        segs.append(FreeEvolution(tau / (2 * n_swaps) if k == 0 else tau / n_swaps, manifold))
        last = k == n_swaps - 1
        for j, tone in enumerate(swap_order(manifold)):
            segs.append(Pulse(tone, t_pi, 0.0, amp, readout=last and j == 1))
        manifold = "plus" if manifold == "minus" else "minus"
    segs.append(FreeEvolution(tau / (2 * n_swaps), manifold))
    segs.append(Pulse("minus", t_pi / 2, 0.0, amp))
    seq = PulseSequence(tuple(segs), "-Y", n_swaps, delta_cm, delta_diff, "strain-cpmg", phi0)
    return seq.with_readout(readout)


def build_ramsey(
    tau: float,
    detuning: float,
    t_pi: float = C.T_PI,
    readout: str = "+X",
    pulse_error: float = 0.0,
    phi0: float = 0.0,
) -> PulseSequence:
    """Single-quantum Ramsey on ``|0> <-> |+1>``: pi/2 - free(tau) - pi/2."""
    if t_pi <= 0 or tau <= t_pi:
        raise ValueError("Ramsey needs tau > t_pi > 0")
    amp = pi_pulse_amplitude(t_pi) * (1 + pulse_error)
    segs = (
        Pulse("plus", t_pi / 2, 0.0, amp),
        FreeEvolution(tau, "plus"),
        Pulse("plus", t_pi / 2, 0.0, amp, readout=True),
    )
    seq = PulseSequence(segs, "-Y", 0, detuning, 0.0, "ramsey", phi0)
    return seq.with_readout(readout)


@dataclass(frozen=True)
class EnsembleMember:
    params: NVParams
    weight: float
    cm_offset: float = 0.0
    diff_offset: float = 0.0


@dataclass
class Ensemble:
    """Weighted NV ensemble held as arrays.

    ``shift_plus``/``shift_minus`` are each member's transition frequencies
    minus those of ``reference``.
    """

    reference: NVParams
    weights: np.ndarray
    shift_plus: np.ndarray
    shift_minus: np.ndarray
    members_params: list | None = field(default=None, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, float)
        self.shift_plus = np.broadcast_to(np.asarray(self.shift_plus, float), self.weights.shape).copy()
        self.shift_minus = np.broadcast_to(np.asarray(self.shift_minus, float), self.weights.shape).copy()
        if self.weights.size == 0:
            raise ValueError("ensemble is empty")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1) > 1e-9:
            raise ValueError(f"weights must be non-negative and sum to 1 (sum={self.weights.sum():.12g})")

    @classmethod
    def from_offsets(cls, cm, diff=0.0, weights=None, reference: NVParams | None = None) -> "Ensemble":
        cm, diff = np.broadcast_arrays(np.asarray(cm, float), np.asarray(diff, float))
        cm, diff = cm.ravel(), diff.ravel()
        if weights is None:
            weights = np.full(cm.size, 1.0 / cm.size)
        return cls(reference or NVParams(), np.ravel(weights), cm + diff, cm - diff)

    @classmethod
    def from_members(cls, members: Sequence[EnsembleMember], reference: NVParams | None = None) -> "Ensemble":
        members = list(members)
        if not members:
            raise ValueError("ensemble is empty")
        ref = reference or members[0].params
        rp, rm = transition_frequencies(ref)
        sp, sm = [], []
        for m in members:
            fp, fm = transition_frequencies(m.params)
            sp.append(fp - rp + m.cm_offset + m.diff_offset)
            sm.append(fm - rm + m.cm_offset - m.diff_offset)
        return cls(ref, [m.weight for m in members], sp, sm, [m.params for m in members])

    @classmethod
    def single(cls, params: NVParams | None = None, cm_offset=0.0, diff_offset=0.0) -> "Ensemble":
        return cls.from_members([EnsembleMember(params or NVParams(), 1.0, cm_offset, diff_offset)], params)

    @property
    def cm_offsets(self) -> np.ndarray:
        return (self.shift_plus + self.shift_minus) / 2

    @property
    def diff_offsets(self) -> np.ndarray:
        return (self.shift_plus - self.shift_minus) / 2

    def __len__(self) -> int:
        return self.weights.size

    def __getitem__(self, i: int) -> EnsembleMember:
        params = self.members_params[i] if self.members_params else self.reference
        if self.members_params:
            rp, rm = transition_frequencies(self.reference)
            fp, fm = transition_frequencies(params)
            cm = self.cm_offsets[i] - ((fp - rp) + (fm - rm)) / 2
            diff = self.diff_offsets[i] - ((fp - rp) - (fm - rm)) / 2
        else:
            cm, diff = self.cm_offsets[i], self.diff_offsets[i]
        return EnsembleMember(params, float(self.weights[i]), float(cm), float(diff))

    def __iter__(self) -> Iterator[EnsembleMember]:
        return (self[i] for i in range(len(self)))

    def with_shift(self, cm: float = 0.0, diff: float = 0.0) -> "Ensemble":
        """Copy with every member's resonances moved by common/differential shifts."""
        return Ensemble(self.reference, self.weights, self.shift_plus + cm + diff, self.shift_minus + cm - diff)


def _as_ensemble(ensemble) -> Ensemble:
    if isinstance(ensemble, Ensemble):
        return ensemble
    return Ensemble.from_members(ensemble)


@dataclass(frozen=True)
class FluorescenceResult:
    f_x_plus: float
    f_x_minus: float
    f_y_plus: float
    f_y_minus: float
    fi: float


class EnsembleSimulator:
    """Propagates every member of an ensemble through pulse sequences.

    Pulse propagators depend only on the pulse and the member detunings, so
    they are cached across sequences sharing the same drive detunings (e.g. a
    sweep over ``tau``).

    Parameters
    ----------
    instantaneous : bool
        Replace each pulse by its ideal resonant rotation taking zero time.
    """

    def __init__(self, ensemble, instantaneous: bool = False):
        self.ensemble = _as_ensemble(ensemble)
        self.instantaneous = instantaneous
        self._cache: dict = {}

    def _detunings(self, seq):
        e = self.ensemble
        return (seq.delta_cm + seq.delta_diff) - e.shift_plus, (seq.delta_cm - seq.delta_diff) - e.shift_minus

    def _pulse(self, pulse: Pulse, det_plus, det_minus, key):
        key = (pulse.tone, pulse.duration, pulse.phase, pulse.amplitude, key)
        if key in self._cache:
            return self._cache[key]
        tones = single_tone(pulse.tone, pulse.amplitude, pulse.phase)
        if self.instantaneous:
            U = resonant_propagator(tones, pulse.duration)
        else:
            H = np.zeros((det_plus.size, 3, 3), complex)
            H[:, PLUS, PLUS] = -det_plus
            H[:, MINUS, MINUS] = -det_minus
            drive = resonant_generator(tones)
            H += drive
            U = batch_propagators(H, pulse.duration)
        self._cache[key] = U
        return U

    def final_states(self, seq: PulseSequence) -> np.ndarray:
        """Final amplitudes ``(M, 3)`` starting from ``|0>``."""
        det_plus, det_minus = self._detunings(seq)
        key = (seq.delta_cm, seq.delta_diff)
        psi = np.zeros((len(self.ensemble), 3), complex)
        psi[:, ZERO] = 1.0
        for seg in seq.segments:
            if isinstance(seg, FreeEvolution):
                psi[:, PLUS] *= np.exp(2j * np.pi * det_plus * seg.duration)
                psi[:, MINUS] *= np.exp(2j * np.pi * det_minus * seg.duration)
            else:
                U = self._pulse(seg, det_plus, det_minus, key)
                psi = psi @ U.T if U.ndim == 2 else np.einsum("mij,mj->mi", U, psi)
        return psi

    def p0(self, seq: PulseSequence) -> float:
        """Ensemble-averaged ``|0>`` population after ``seq``."""
        psi = self.final_states(seq)
        return float(np.dot(self.ensemble.weights, np.abs(psi[:, ZERO]) ** 2))

    def fluorescence(self, seq: PulseSequence, contrast: float, fi: float) -> FluorescenceResult:
        f = {r: fi * (1 + contrast * (2 * self.p0(seq.with_readout(r)) - 1)) for r in READOUTS}
        return FluorescenceResult(f["+X"], f["-X"], f["+Y"], f["-Y"], fi)


def resonant_generator(tones: DriveTones) -> np.ndarray:
    from .spin import rotating_generator

    return rotating_generator(replace(tones, delta_cm=0.0, delta_diff=0.0))


def simulate(
    sequence: PulseSequence,
    ensemble,
    contrast: float = 0.03,
    fi: float = 1.0,
    instantaneous: bool = False,
) -> FluorescenceResult:
    """Fluorescence for all four readout quadratures of ``sequence``.

    Each member's final ``|0>`` population maps to ``fi*(1 + A*(2*p0 - 1))``;
    members are combined with their weights.
    """
    if not 0 <= contrast <= 1:
        raise ValueError("contrast must lie in [0, 1]")
    return EnsembleSimulator(ensemble, instantaneous).fluorescence(sequence, contrast, fi)


@dataclass(frozen=True)
class Trace:
    """Samples ``y(x)`` with per-point uncertainty."""

    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, float)
        y = np.asarray(self.y, float)
        if x.shape != y.shape:
            raise ValueError("x and y must have equal lengths")
        sigma = np.zeros_like(y) if self.sigma is None else np.broadcast_to(np.asarray(self.sigma, float), y.shape)
        if np.any(sigma < 0):
            raise ValueError("sigma must be non-negative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "sigma", np.array(sigma))


def visibility_trace(
    builder: Callable[[float], PulseSequence],
    tau_grid,
    ensemble,
    contrast: float = 0.03,
    instantaneous: bool = False,
    readouts: tuple[str, str] = ("+X", "-X"),
) -> Trace:
    """Visibility versus free evolution time from interlaced readout pairs.

    ``builder(tau)`` returns the sequence at each ``tau``; both readouts of a
    pair are propagated through the identical ensemble.
    """
    from .analysis.visibility import visibility

    tau_grid = np.asarray(tau_grid, float)
    if np.any(np.diff(tau_grid) <= 0):
        raise ValueError("tau grid must be strictly ascending")
    sim = EnsembleSimulator(ensemble, instantaneous)
    nu = np.empty(tau_grid.size)
    for i, tau in enumerate(tau_grid):
        seq = builder(float(tau))
        fp = 1 + contrast * (2 * sim.p0(seq.with_readout(readouts[0])) - 1)
        fm = 1 + contrast * (2 * sim.p0(seq.with_readout(readouts[1])) - 1)
        nu[i] = visibility(fp, fm)
    return Trace(tau_grid, nu)


def _member_detunings(sequence, member_shift_plus, member_shift_minus):
    return (
        sequence.delta_cm + sequence.delta_diff - member_shift_plus,
        sequence.delta_cm - sequence.delta_diff - member_shift_minus,
    )


def ideal_phase(sequence: PulseSequence, member: EnsembleMember | None = None, reference: NVParams | None = None):
    """Coherence phase accumulated with instantaneous pulses.

    For strain-CPMG this is ``2*pi*(delta_cm - cm_shift)*tau + phi0``; the
    differential (magnetic) part cancels between the two manifolds.
    """
    if member is None:
        sp = sm = 0.0
    else:
        ref = reference or member.params
        rp, rm = transition_frequencies(ref)
        fp, fm = transition_frequencies(member.params)
        sp = fp - rp + member.cm_offset + member.diff_offset
        sm = fm - rm + member.cm_offset - member.diff_offset
    det_plus, det_minus = _member_detunings(sequence, sp, sm)
    phase = sequence.phi0
    for seg in sequence.segments:
        if isinstance(seg, FreeEvolution):
            phase += 2 * np.pi * (det_plus if seg.manifold == "plus" else det_minus) * seg.duration
    return phase


def ideal_quadratures(sequence: PulseSequence, ensemble) -> tuple[float, float]:
    """Ensemble averages ``(<sin phase>, <cos phase>)`` for instantaneous pulses."""
    e = _as_ensemble(ensemble)
    det_plus, det_minus = _member_detunings(sequence, e.shift_plus, e.shift_minus)
    t_plus, t_minus = sequence.free_time("plus"), sequence.free_time("minus")
    phase = sequence.phi0 + 2 * np.pi * (det_plus * t_plus + det_minus * t_minus)
    return float(np.dot(e.weights, np.sin(phase))), float(np.dot(e.weights, np.cos(phase)))
