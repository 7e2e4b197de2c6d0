"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``PASS``/``FAIL`` line; the collected lines are repeated
in the terminal summary by ``conftest.py``.  Run alone with::

    pytest tests/test_acceptance.py -v
"""

import time

import numpy as np
import pytest
from scipy import constants

from nvstrain.analysis.allan import allan_deviation, overlapping_avar
from nvstrain.analysis.fitting import fit_decaying_tones, fit_envelope, spectral_peaks
from nvstrain.analysis.odmr import NV_AXES, ODMRSpectrum, class_transitions, fit_odmr, odmr_spectrum, synth_spectrum
from nvstrain.noise import (
    APDConfig,
    NoiseBudget,
    apd_noise,
    strain_noise_floor,
    visibility_uncertainty,
    volume_normalized,
)
from nvstrain.sample import (
    EnsembleSpec,
    LinearGradient,
    PixelFootprint,
    StrainField,
    bath_ensemble,
    voxel_ensemble,
    voxel_mz,
)
from nvstrain.scan.common import load_field
from nvstrain.scan.config import config_from_dict
from nvstrain.scan.confocal import calibrate_point, run_allan
from nvstrain.scan.gradiometry import compare_modes
from nvstrain.scan.odmr import run_odmr_map
from nvstrain.scan.qdm import run_qdm_fov
from nvstrain.sequences import (
    Ensemble,
    EnsembleMember,
    EnsembleSimulator,
    build_ramsey,
    build_strain_cpmg,
    ideal_quadratures,
    visibility_trace,
)
from nvstrain.spin import NVParams, DriveTones, numeric_propagator, resonant_propagator

RESULTS: list[str] = []

TAU1 = 21e-6
TD = 21e-6
T2STAR = 7.5e-6
HF = 2.16e6


def verdict(n: int, title: str, checks: dict, elapsed: float):
    """Print one line for criterion ``n`` and fail the test if any check is False."""
    ok = all(v for v, _ in checks.values())
    detail = "; ".join(f"{k}={d}" for k, (_, d) in checks.items())
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} [{detail}] ({elapsed:.1f} s)"
    RESULTS.append(line)
    print(line)
    failed = [k for k, (v, _) in checks.items() if not v]
    assert ok, f"criterion {n} failed checks: {failed}"


def within(value, target, rel):
    return abs(value - target) <= rel * abs(target)


def test_criterion_01_noise_budget():
    t = time.perf_counter()
    b = apd_noise(APDConfig(), 0.46e-9)
    sigma_nu = visibility_uncertainty(NoiseBudget(0.0, 0.34e-3, 0.0), 5.2e-3, 5.2e-3)
    vol = volume_normalized(5.2e-8, 0.54)
    checks = {
        "iN": (within(b.i_n, 1.4e-9, 0.03), f"{b.i_n:.4g} A"),
        "vSN": (within(b.v_sn, 0.34e-3, 0.03), f"{b.v_sn:.4g} V"),
        "vJN": (within(b.v_jn, 0.05e-3, 0.03), f"{b.v_jn:.4g} V"),
        "sigma_nu": (within(sigma_nu, 0.046, 0.03), f"{sigma_nu:.4g}"),
        "volume": (within(vol, 3.8e-8, 0.02), f"{vol:.4g}"),
    }
    # Johnson noise from its closed form, independent of the package
    ref = np.sqrt(4 * constants.k * 300 * 250e3 * 700e3)
    checks["vJN_formula"] = (np.isclose(b.v_jn, ref, rtol=1e-12), f"{ref:.4g} V")
    elapsed = time.perf_counter() - t
    checks["runtime"] = (elapsed < 1.0, f"{elapsed:.2f} s")
    verdict(1, "noise-budget regression", checks, elapsed)


def _nu(seq, ens):
    sim = EnsembleSimulator(ens, instantaneous=True)
    return 0.03 * (2 * sim.p0(seq.with_readout("+X")) - 1)


def test_criterion_02_b_field_insensitivity():
    t = time.perf_counter()
    ens = bath_ensemble(EnsembleSpec(TD=TD, strata=128))
    seq = build_strain_cpmg(2, TAU1, delta_cm=1e4)
    nu0 = _nu(seq, ens)
    dd = max(abs(_nu(seq.with_detunings(delta_diff=d), ens) - nu0) for d in (-5e5, 5e5))
    single = _nu(seq, Ensemble.single())
    db = max(abs(_nu(seq, Ensemble.from_members([EnsembleMember(NVParams(Bz=bz), 1.0)], NVParams())) - single)
             for bz in (-1e-4, 1e-4))
    h = 1.0
    slope = (_nu(seq.with_detunings(delta_cm=h), ens) - _nu(seq.with_detunings(delta_cm=-h), ens)) / (2 * h)
    expected = 2 * np.pi * TAU1 * 0.03 * np.exp(-TAU1 / TD)
    elapsed = time.perf_counter() - t
    checks = {
        "d_nu(delta_diff)": (dd < 1e-6, f"{dd:.2g}"),
        "d_nu(Bz)": (db < 1e-6, f"{db:.2g}"),
        "slope": (within(slope, expected, 0.02), f"{slope / expected:.4f} of expected"),
        "runtime": (elapsed < 10, f"{elapsed:.1f} s"),
    }
    verdict(2, "B-field insensitivity", checks, elapsed)


def test_criterion_03_dephasing_times():
    t = time.perf_counter()
    spec = EnsembleSpec.from_t2star(TD, T2STAR, strata=128)
    plain = bath_ensemble(spec, hyperfine=False)
    cpmg = fit_envelope(visibility_trace(lambda x: build_strain_cpmg(2, x, delta_cm=1e5),
                                         np.linspace(0.5e-6, 40e-6, 120), plain, instantaneous=True))
    hf = bath_ensemble(spec)
    ramsey_tr = visibility_trace(lambda x: build_ramsey(x, 3e6), np.linspace(0.1e-6, 20e-6, 400), hf,
                                 instantaneous=True)
    ramsey = fit_decaying_tones(ramsey_tr, 3)
    peaks = spectral_peaks(ramsey_tr)
    cpmg_hf = visibility_trace(lambda x: build_strain_cpmg(2, x, delta_cm=1e5), np.linspace(0.5e-6, 40e-6, 200),
                               hf, instantaneous=True)
    n_cpmg = spectral_peaks(cpmg_hf).size
    spacing = np.diff(peaks)
    elapsed = time.perf_counter() - t
    checks = {
        "TD": (within(cpmg.T, TD, 0.05), f"{cpmg.T * 1e6:.3f} us"),
        "T2*": (within(ramsey.T, T2STAR, 0.05), f"{ramsey.T * 1e6:.3f} us"),
        "ramsey_peaks": (peaks.size == 3, f"{peaks.size}"),
        "spacing": (peaks.size == 3 and np.allclose(spacing, HF, rtol=0.02), f"{np.round(spacing / 1e6, 3)} MHz"),
        "cpmg_peaks": (n_cpmg == 1, f"{n_cpmg}"),
        "runtime": (elapsed < 60, f"{elapsed:.1f} s"),
    }
    verdict(3, "dephasing-time contrast", checks, elapsed)


def test_criterion_04_calibration_periodicity():
    t = time.perf_counter()
    cfg = config_from_dict({"seed": 4, "detector": {"noise": False},
                            "scene": {"primitives": []}, "calibration": {"span": 4.0, "points": 161}})
    _, cm = calibrate_point(cfg, [0, 0, 0], sweep="cm")
    diff_trace, _ = calibrate_point(cfg, [0, 0, 0], sweep="diff")
    diff_amp = float(np.max(np.abs(diff_trace.y)))
    elapsed = time.perf_counter() - t
    checks = {
        "period": (within(cm.period, 1 / TAU1, 0.005), f"{cm.period * TAU1:.5f}/tau1"),
        "diff/cm": (diff_amp < 0.05 * cm.amplitude, f"{diff_amp / cm.amplitude:.2g}"),
        "runtime": (elapsed < 30, f"{elapsed:.1f} s"),
    }
    verdict(4, "calibration periodicity", checks, elapsed)


def _footprint(field_, width):
    spec = EnsembleSpec.from_t2star(20e-6, T2STAR, strata=128)
    ens = voxel_ensemble((0, 0, 0), PixelFootprint(width), field_, spec)
    fit = fit_envelope(visibility_trace(lambda x: build_strain_cpmg(2, x, delta_cm=1e5),
                                        np.linspace(0.5e-6, 40e-6, 120), ens, instantaneous=True))
    s, c = ideal_quadratures(build_strain_cpmg(2, TAU1, delta_cm=1e5), ens)
    return fit.T, np.hypot(s, c)


def test_criterion_05_gradient_law():
    t = time.perf_counter()
    width = 150 / 32
    # zz component whose Mz equals that of a 1.4e-6 average strain
    eps_zz = 1.4e-6 * 10.9 / 8.0
    T0, a0 = _footprint(StrainField(()), width)
    T1, a1 = _footprint(StrainField((LinearGradient((0, 0, 0), (1, 0, 0), width, {"zz": eps_zz}),)), width)
    elapsed = time.perf_counter() - t
    checks = {
        "TD_uniform": (within(T0, 20e-6, 0.15), f"{T0 * 1e6:.2f} us"),
        "TD_gradient": (within(T1, 10e-6, 0.15), f"{T1 * 1e6:.2f} us"),
        "amplitude": (within(a1 / a0, np.exp(-1), 0.15), f"{a1 / a0:.3f}"),
        "runtime": (elapsed < 60, f"{elapsed:.1f} s"),
    }
    verdict(5, "intra-pixel gradient law", checks, elapsed)


def test_criterion_06_sensitivity():
    t = time.perf_counter()
    res, _, predicted = run_allan(config_from_dict({"seed": 6, "scene": {"primitives": []}}))
    ratio = res.at(1.0) / predicted
    floor = strain_noise_floor(0.046, TAU1, 0.01, 3.8e3)
    elapsed = time.perf_counter() - t
    checks = {
        "adev/predicted": (within(ratio, 1.0, 0.05), f"{ratio:.4f}"),
        "floor": (within(floor, 5.2e-8, 0.05), f"{floor:.4g}/sqrt(Hz)"),
    }
    verdict(6, "sensitivity self-consistency", checks, elapsed)


def test_criterion_07_gradiometry_drift():
    t = time.perf_counter()
    cfg = config_from_dict({"seed": 7, "scene": {"primitives": []}, "drift": {"rate": 30.0},
                            "gradiometry": {"reference": [5, 0, 0]}})
    taus = np.unique(np.concatenate([2.0 ** np.arange(0, 14), [20, 25, 30, 1e4]]))
    cmp = compare_modes(cfg, [0, 0, 0], 2**20, taus=taus)
    s1, g1 = cmp.single.at(1.0), cmp.gradiometry.at(1.0)
    depart = min(cmp.single.at(x) / (s1 / np.sqrt(x)) for x in (20, 25, 30))
    trend = [cmp.gradiometry.at(x) / (g1 / np.sqrt(x)) for x in taus if x <= 1e4]
    worst = max(abs(r - 1) for r in trend)
    penalty = g1 / s1
    elapsed = time.perf_counter() - t
    checks = {
        "single_departure_20-30s": (depart > 2.0, f"{depart:.2f}x"),
        "gradiometry_trend_to_1e4s": (worst <= 0.2, f"max dev {worst:.3f}"),
        "penalty": (within(penalty, np.sqrt(2), 0.1), f"{penalty:.3f}"),
    }
    verdict(7, "gradiometry drift rejection", checks, elapsed)


def _brute_avar(y, m):
    d = [(np.mean(y[j + m:j + 2 * m]) - np.mean(y[j:j + m])) ** 2 for j in range(len(y) - 2 * m + 1)]
    return float(np.sum(d) / (2 * len(d)))


def test_criterion_08_allan_oracle():
    t = time.perf_counter()
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 65))
        y = rng.normal(0, rng.uniform(0.1, 100), n)
        m = int(rng.integers(1, n // 2 + 1))
        ref = _brute_avar(y, m)
        worst = max(worst, abs(overlapping_avar(y, m)[0] - ref) / max(ref, 1e-300))
    alt = allan_deviation(np.array([1.0, -1.0] * 32), 1.0, [1.0]).adev[0]
    y = rng.normal(0, 1.0, 100_000)
    k = allan_deviation(y, 1.0).taus.size
    # family-wise 99% over all averaging times (Bonferroni)
    white = allan_deviation(y, 1.0, confidence=1 - 0.01 / k)
    inside = all(lo <= 1 / np.sqrt(x) <= hi for x, lo, hi in zip(white.taus, white.lo, white.hi))
    slope = np.polyfit(np.log(white.taus[:10]), np.log(white.adev[:10]), 1)[0]
    elapsed = time.perf_counter() - t
    checks = {
        "brute_force": (worst < 1e-12, f"max rel {worst:.1g}"),
        "alternating": (alt == np.sqrt(2), f"{float(alt)!r}"),
        "white_in_ci": (inside, f"family-wise 99% over {k} taus"),
        "slope": (abs(slope + 0.5) < 0.03, f"{slope:.3f}"),
    }
    verdict(8, "Allan estimator oracle", checks, elapsed)


def test_criterion_09_odmr_pipeline():
    t = time.perf_counter()
    fwhm = 1e6
    B = 2.1e-3 * NV_AXES[0]
    freqs = np.arange(2.78e9, 2.96e9, 0.1e6)
    fit = fit_odmr(ODMRSpectrum(freqs, synth_spectrum(freqs, B, fwhm=fwhm, contrast=0.02)), 4)
    truth = np.sort(np.unique(np.round(class_transitions(B).ravel(), 1)))
    center_err = float(np.max(np.abs(fit.centers - truth)))

    scene = {"primitives": [{"type": "bump", "center": [3, 3, 0], "sigma": [3, 3, 1e3], "strain": {"zz": -3e-6}}]}
    cfg = config_from_dict({"seed": 9, "scene": scene, "grid": {"extent": [6, 6]}})
    res = run_odmr_map(cfg)
    field_ = load_field(cfg)
    xs, ys, _ = cfg.grid.axes()
    fp = PixelFootprint(cfg.grid.spacing, span=2.0, n=9)
    injected = np.array([[np.dot(*voxel_mz((x, y, 0), fp, field_)[::-1]) for x in xs] for y in ys])
    pull = (res.map.mz - (injected - injected.mean())) / res.map.sigma
    rms_pull = float(np.sqrt(np.mean(pull**2)))

    rng = np.random.default_rng(9)
    noise = 1e-4
    lf = np.arange(2.85e9, 2.89e9, 0.05e6)
    sig = np.full(lf.size, noise)
    single = odmr_spectrum(lf, [2.87e9]) + rng.normal(0, noise, lf.size)
    double = odmr_spectrum(lf, [2.8695e9, 2.8705e9], contrast=0.01) + rng.normal(0, noise, lf.size)
    base = fit_odmr(ODMRSpectrum(lf, single, sig), 1, fwhm=fwhm).chi2_red
    flagged = fit_odmr(ODMRSpectrum(lf, double, sig), 1, fwhm=fwhm, centers=[2.87e9]).chi2_red
    elapsed = time.perf_counter() - t
    checks = {
        "centers": (center_err <= fwhm / 20, f"max err {center_err:.3g} Hz"),
        "map_pulls": (np.max(np.abs(pull)) < 4 and rms_pull < 1.5, f"max {np.max(np.abs(pull)):.2f}, rms {rms_pull:.2f}"),
        "chi2_flag": (flagged >= 3 * base, f"{flagged / base:.1f}x baseline"),
    }
    verdict(9, "CW-ODMR pipeline", checks, elapsed)


def test_criterion_10_propagator_equivalence():
    t = time.perf_counter()
    rng = np.random.default_rng(10)
    err, unit = 0.0, 0.0
    for _ in range(100):
        tones = DriveTones(rng.uniform(0, 2e7), rng.uniform(0, 2e7), rng.uniform(-np.pi, np.pi),
                           rng.uniform(-np.pi, np.pi))
        dur = rng.uniform(1e-9, 2e-7)
        Ua = resonant_propagator(tones, dur)
        Un = numeric_propagator(NVParams(), tones, dur)
        err = max(err, float(np.max(np.abs(Ua - Un))))
        for U in (Ua, Un):
            unit = max(unit, float(np.max(np.abs(U.conj().T @ U - np.eye(3)))))
    elapsed = time.perf_counter() - t
    checks = {
        "max_element_error": (err < 1e-8, f"{err:.2g}"),
        "unitarity": (unit < 1e-10, f"{unit:.2g}"),
    }
    verdict(10, "propagator equivalence", checks, elapsed)


def test_criterion_11_throughput():
    t = time.perf_counter()
    cfg = config_from_dict({"seed": 11, "scene": {"primitives": []},
                            "qdm": {"pixels": 16, "repeats": 2, "f_demod": 6500.0, "n_demod": 24}})
    r = run_qdm_fov(cfg)
    meta = r.map.metadata
    elapsed = time.perf_counter() - t
    checks = {
        "fov_time": (r.fov_time_s == 1.0, f"{r.fov_time_s} s"),
        "per_frequency": (meta["time_per_frequency_s"] == 0.5, f"{meta['time_per_frequency_s']} s"),
        "frame_rate": (abs(r.frame_rate - 270.8) <= 0.05, f"{r.frame_rate:.2f} Hz"),
        "survey_rate": (r.survey_rate >= 150**2 > 125**2, f"{r.survey_rate:.0f} um^2/s"),
    }
    verdict(11, "throughput bookkeeping", checks, elapsed)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
