import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nvstrain.analysis.fitting import fit_decaying_tones, fit_envelope, spectral_peaks
from nvstrain.analysis.visibility import visibility
from nvstrain.sample import EnsembleSpec, bath_ensemble
from nvstrain.sequences import (
    Ensemble,
    EnsembleMember,
    EnsembleSimulator,
    FreeEvolution,
    build_ramsey,
    build_strain_cpmg,
    ideal_phase,
    ideal_quadratures,
    simulate,
    visibility_trace,
)
from nvstrain.spin import NVParams

TAU1 = 21e-6


def _nu(seq, ens, contrast=0.03, instantaneous=True):
    sim = EnsembleSimulator(ens, instantaneous)
    fp = 1 + contrast * (2 * sim.p0(seq.with_readout("+X")) - 1)
    fm = 1 + contrast * (2 * sim.p0(seq.with_readout("-X")) - 1)
    return visibility(fp, fm)


@pytest.mark.parametrize("n", [2, 4, 6])
def test_cpmg_structure(n):
    seq = build_strain_cpmg(n, TAU1)
    assert len(seq.pulses) == 3 * n + 2
    assert seq.tau == pytest.approx(TAU1)
    assert seq.free_time("plus") == pytest.approx(TAU1 / 2)
    assert seq.free_time("minus") == pytest.approx(TAU1 / 2)
    assert all(s.duration > 0 for s in seq.segments)


def test_cpmg_rejects_bad_input():
    with pytest.raises(ValueError):
        build_strain_cpmg(3, TAU1)
    with pytest.raises(ValueError):
        build_strain_cpmg(2, 200e-9, t_pi=50e-9)
    with pytest.raises(ValueError):
        build_strain_cpmg(2, TAU1, min_delay=10e-6)


def test_ramsey_structure_and_errors():
    seq = build_ramsey(1e-6, 3e6)
    assert [type(s) for s in seq.segments].count(FreeEvolution) == 1
    assert all(p.tone == "plus" for p in seq.pulses)
    with pytest.raises(ValueError):
        build_ramsey(10e-9, 0.0, t_pi=50e-9)


def test_ramsey_short_tau_is_pi_pulse():
    # two pi/2 pulses with the same phase act as one pi pulse
    sim = EnsembleSimulator(Ensemble.single())
    assert sim.p0(build_ramsey(51e-9, 0.0, readout="-Y")) == pytest.approx(0.0, abs=1e-4)


def test_ramsey_no_detuning_no_fringe():
    ens = Ensemble.single()
    taus = np.linspace(1e-6, 10e-6, 20)
    tr = visibility_trace(lambda t: build_ramsey(t, 0.0), taus, ens, instantaneous=True)
    assert np.ptp(tr.y) < 1e-12


def test_x_readout_at_zero_phase_equals_fi():
    r = simulate(build_strain_cpmg(2, TAU1), Ensemble.single(), contrast=0.03, fi=2.0)
    assert r.f_x_plus == pytest.approx(2.0, abs=1e-12)
    assert r.f_x_minus == pytest.approx(2.0, abs=1e-12)
    assert r.f_y_plus == pytest.approx(2.0 * 1.03, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2e5, 2e5), st.floats(0, 1))
def test_fluorescence_bounds(dcm, contrast):
    r = simulate(build_strain_cpmg(2, 5e-6, delta_cm=dcm), Ensemble.single(), contrast=contrast, fi=1.0)
    for f in (r.f_x_plus, r.f_x_minus, r.f_y_plus, r.f_y_minus):
        assert 0.0 - 1e-12 <= f <= 2.0 + 1e-12


def test_finite_pulses_follow_ideal_quadratures():
    seq = build_strain_cpmg(2, TAU1, delta_cm=3e3)
    sim = EnsembleSimulator(Ensemble.single())
    phase = ideal_phase(seq)
    assert sim.p0(seq.with_readout("+X")) == pytest.approx((1 + np.sin(phase)) / 2, abs=2e-3)
    assert sim.p0(seq.with_readout("+Y")) == pytest.approx((1 + np.cos(phase)) / 2, abs=2e-3)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        Ensemble.from_offsets([0.0, 1.0], weights=[0.3, 0.3])
    with pytest.raises(ValueError):
        Ensemble.from_members([])


def test_members_round_trip():
    members = [EnsembleMember(NVParams(), 0.25, 1e3, -2e3), EnsembleMember(NVParams(Bz=1e-4), 0.75, 0.0, 5e2)]
    ens = Ensemble.from_members(members, NVParams())
    back = list(ens)
    assert [m.cm_offset for m in back] == pytest.approx([1e3, 0.0])
    assert [m.diff_offset for m in back] == pytest.approx([-2e3, 5e2])


def test_fringe_frequency_single_member():
    taus = np.linspace(0.5e-6, 40e-6, 160)
    tr = visibility_trace(lambda t: build_strain_cpmg(2, t, delta_cm=1e5), taus, Ensemble.single())
    fit = fit_envelope(tr)
    assert fit.frequency == pytest.approx(1e5, rel=0.01)
    assert fit.T > 10 * taus.max()


def test_lorentzian_envelope():
    ens = bath_ensemble(EnsembleSpec(TD=TAU1, strata=128), hyperfine=False)
    taus = np.linspace(0.5e-6, 40e-6, 120)
    tr = visibility_trace(lambda t: build_strain_cpmg(2, t, delta_cm=1e5), taus, ens, instantaneous=True)
    expected = 0.03 * np.exp(-taus / TAU1) * np.sin(2 * np.pi * 1e5 * taus)
    # grid truncation of the Lorentzian tails rounds the cusp at tau -> 0
    assert np.max(np.abs(tr.y - expected)) < 0.02 * 0.03


def test_ideal_phase_examples():
    assert ideal_phase(build_strain_cpmg(2, TAU1, phi0=0.4)) == pytest.approx(0.4)
    assert ideal_phase(build_strain_cpmg(2, TAU1, delta_cm=1e5)) == pytest.approx(2 * np.pi * 2.1)


@given(st.floats(-5e5, 5e5))
def test_ideal_phase_ignores_differential(dd):
    base = ideal_phase(build_strain_cpmg(2, TAU1, delta_cm=2e4))
    assert ideal_phase(build_strain_cpmg(2, TAU1, delta_cm=2e4, delta_diff=dd)) == pytest.approx(base, abs=1e-9)


def test_ideal_phase_ignores_member_field():
    seq = build_strain_cpmg(4, TAU1, delta_cm=2e4)
    m = EnsembleMember(NVParams(Bz=1e-4), 1.0)
    assert ideal_phase(seq, m, NVParams()) == pytest.approx(ideal_phase(seq), abs=1e-9)


@pytest.mark.parametrize("n", [2, 4])
def test_b_insensitivity(n):
    ens = bath_ensemble(EnsembleSpec(TD=TAU1, strata=64))
    seq = build_strain_cpmg(n, TAU1, delta_cm=1e4)
    nu0 = _nu(seq, ens)
    for dd in (-5e5, 5e5):
        assert abs(_nu(seq.with_detunings(delta_diff=dd), ens) - nu0) < 1e-6
    for bz in (-1e-4, 1e-4):
        member = [EnsembleMember(NVParams(Bz=bz), 1.0)]
        shifted = Ensemble.from_members(member, NVParams())
        assert abs(_nu(seq, shifted) - _nu(seq, Ensemble.single())) < 1e-6


def test_hyperfine_cancellation_peak_counts():
    ens = bath_ensemble(EnsembleSpec.from_t2star(TAU1, 7.5e-6, strata=64))
    cpmg = visibility_trace(lambda t: build_strain_cpmg(2, t, delta_cm=1e5),
                            np.linspace(0.5e-6, 40e-6, 200), ens, instantaneous=True)
    ramsey = visibility_trace(lambda t: build_ramsey(t, 3e6), np.linspace(0.1e-6, 20e-6, 400), ens,
                              instantaneous=True)
    assert spectral_peaks(cpmg).size == 1
    peaks = spectral_peaks(ramsey)
    assert peaks.size == 3
    assert np.diff(peaks) == pytest.approx([2.16e6, 2.16e6], rel=0.02)


def test_dephasing_composition():
    spec = EnsembleSpec.from_t2star(TAU1, 7.5e-6, strata=128)
    ens = bath_ensemble(spec, hyperfine=False)
    cpmg = fit_envelope(visibility_trace(lambda t: build_strain_cpmg(2, t, delta_cm=1e5),
                                         np.linspace(0.5e-6, 40e-6, 120), ens, instantaneous=True))
    ramsey = fit_decaying_tones(visibility_trace(lambda t: build_ramsey(t, 1e6),
                                                 np.linspace(0.1e-6, 20e-6, 200), ens, instantaneous=True))
    assert 1 / ramsey.T == pytest.approx(1 / spec.Tmag + 1 / cpmg.T, rel=0.1)


def test_contrast_drops_with_swaps_under_pulse_error():
    ens = Ensemble.single()
    amps = []
    for n in (2, 4, 6):
        seq = build_strain_cpmg(n, TAU1, pulse_error=0.05)
        sim = EnsembleSimulator(ens)
        x = 2 * sim.p0(seq.with_readout("+X")) - 1
        y = 2 * sim.p0(seq.with_readout("+Y")) - 1
        amps.append(np.hypot(x, y))
    assert amps[0] > amps[1] > amps[2]


def test_quadratures_match_simulation():
    ens = bath_ensemble(EnsembleSpec(TD=TAU1, strata=32))
    seq = build_strain_cpmg(2, TAU1, delta_cm=1.3e4)
    s, c = ideal_quadratures(seq, ens)
    sim = EnsembleSimulator(ens, instantaneous=True)
    assert 2 * sim.p0(seq.with_readout("+X")) - 1 == pytest.approx(s, abs=1e-10)
    assert 2 * sim.p0(seq.with_readout("+Y")) - 1 == pytest.approx(c, abs=1e-10)
