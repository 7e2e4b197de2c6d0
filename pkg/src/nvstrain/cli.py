"""Command-line entry point: ``nvstrain <verb> [config.json] --seed N``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis.io import export_png16, read_map, write_map, write_trace
from .errors import ConfigError, NumericalFailure
from .noise import (
    budget_report,
    frequency_noise_per_shot,
    strain_noise_floor,
    volume_normalized,
    write_budget_report,
)
from .sample import strain_from_mz
from .scan.common import apd_config, base_metadata, detector_budget
from .scan.config import ScanConfig, apply_overrides, load_config

log = logging.getLogger("nvstrain")

VERBS = {
    "simulate-confocal": "confocal",
    "simulate-gradiometry": "gradiometry",
    "simulate-qdm": "qdm",
    "simulate-odmr": "odmr",
    "calibrate": "calibrate",
    "allan": "allan",
    "noise-budget": "noise-budget",
    "stitch": "stitch",
}


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            out[key.strip()] = raw
    return out


def build_config(args) -> ScanConfig:
    cfg = load_config(args.config) if args.config else ScanConfig()
    overrides = _parse_set(args.set)
    overrides["mode"] = VERBS[args.verb]
    overrides["seed"] = args.seed
    if args.output:
        overrides["output"] = args.output
    return apply_overrides(cfg, overrides).validate()


def _write_rows(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    return path


def _write_json(path: Path, doc: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=lambda o: o.tolist()
                               if isinstance(o, np.ndarray) else o.item() if isinstance(o, np.generic) else str(o)) + "\n")
    return path


def _maybe_png(args, smap, out: Path):
    if args.png:
        export_png16(smap.mz if smap.mz.ndim == 2 else smap.mz[0], out, smap.mask if smap.mask.ndim == 2 else smap.mask[0])


def cmd_confocal(cfg, args, out):
    from .scan.confocal import run_confocal_scan

    smap = run_confocal_scan(cfg)
    write_map(smap, out / "confocal_map")
    _maybe_png(args, smap, out / "confocal_map")
    return {"cells": int(smap.mz.size), "masked": int(smap.mask.sum())}


def cmd_gradiometry(cfg, args, out):
    from .scan.gradiometry import compare_modes, run_gradiometry_scan

    g = cfg.gradiometry
    if g.point is not None:
        cmp = compare_modes(cfg, g.point, g.cycles)
        _write_rows(out / "gradiometry_allan.csv", ("tau_s", "single_Hz", "gradiometry_Hz"),
                    zip(cmp.single.taus, cmp.single.adev, cmp.gradiometry.adev))
        r = cmp.run
        _write_rows(out / "servo_log.csv", ("t_s", "correction_Hz", "drift_Hz", "relative_Hz"),
                    zip(r.t_ref, r.correction, r.drift, r.relative))
        meta = base_metadata(cfg)
        meta.update({"penalty_1s": cmp.penalty(1.0), "single_white_1s_Hz": cmp.white_single,
                     "virtual_time_s": g.cycles * cfg.timing.dwell})
        _write_json(out / "gradiometry.json", meta)
        return {"penalty_1s": round(cmp.penalty(1.0), 4)}
    smap, drift_log = run_gradiometry_scan(cfg)
    write_map(smap, out / "gradiometry_map")
    _maybe_png(args, smap, out / "gradiometry_map")
    _write_rows(out / "servo_log.csv", ("t_s", "correction_Hz", "drift_Hz"),
                zip(drift_log["t_s"], drift_log["correction_Hz"], drift_log["drift_Hz"]))
    return {"cells": int(smap.mz.size)}


def cmd_qdm(cfg, args, out):
    from .scan.qdm import run_qdm_imaging
    from .scan.stitch import stitch

    results = run_qdm_imaging(cfg)
    for i, r in enumerate(results):
        write_map(r.map, out / f"qdm_fov{i}")
        _maybe_png(args, r.map, out / f"qdm_fov{i}")
        counts, edges = r.histogram
        _write_rows(out / f"qdm_fov{i}_adev_hist.csv", ("strain_lo", "strain_hi", "count"),
                    zip(edges[:-1], edges[1:], counts))
    summary = {"fovs": len(results), "frame_rate_Hz": results[0].frame_rate,
               "fov_time_s": results[0].fov_time_s, "survey_rate_um2_per_s": results[0].survey_rate}
    if len(results) > 1:
        st = stitch([r.map for r in results])
        comp = st.composite
        comp.metadata.update(base_metadata(cfg))
        write_map(comp, out / "qdm_composite")
        _maybe_png(args, comp, out / "qdm_composite")
        summary["seam_residual_Hz"] = st.seam_residual
    return summary


def cmd_odmr(cfg, args, out):
    from .scan.odmr import run_odmr_map

    res = run_odmr_map(cfg)
    write_map(res.map, out / "odmr_map")
    _maybe_png(args, res.map, out / "odmr_map")
    m = res.map
    _write_rows(out / "odmr_fit.csv", ("x", "y", "Bz_T", "chi2_red"),
                zip(m.x.ravel(), m.y.ravel(), res.bz.ravel(), res.chi2_red.ravel()))
    return {"median_chi2_red": m.metadata["median_chi2_red"]}


def cmd_calibrate(cfg, args, out):
    from .scan.confocal import calibrate_point

    rng = np.random.default_rng(cfg.seed) if cfg.detector.noise else None
    pos = cfg.allan.point
    summary = {}
    for sweep in ("cm", "diff"):
        trace, curve = calibrate_point(cfg, pos, sweep=sweep, rng=rng)
        fit = {"amplitude": curve.amplitude, "tau1_s": curve.tau1, "phi0_rad": curve.phi0,
               "period_Hz": curve.period, "offset": curve.offset, "stderr": curve.stderr}
        meta = base_metadata(cfg)
        meta.update({"sweep": sweep, "fit": fit})
        write_trace(trace.x, trace.y, trace.sigma, out / f"calibration_{sweep}", x_unit="Hz", metadata=meta)
        summary[sweep] = {"amplitude": curve.amplitude, "period_Hz": curve.period}
    return summary


def cmd_allan(cfg, args, out):
    from .scan.confocal import run_allan

    res, series, predicted = run_allan(cfg)
    _write_rows(out / "allan.csv", ("tau_s", "adev_strain", "lo", "hi", "edf"),
                zip(res.taus, res.adev, res.lo, res.hi, res.edf))
    _write_rows(out / "series.csv", ("t_s", "Mz_Hz", "strain"), zip(series.t, series.mz, series.strain))
    meta = base_metadata(cfg)
    meta.update({"adev_1s": res.at(1.0), "predicted_1s": predicted, "ratio": res.at(1.0) / predicted})
    _write_json(out / "allan.json", meta)
    return {"adev_1s": res.at(1.0), "predicted_1s": predicted}


def cmd_noise_budget(cfg, args, out):
    apd = apd_config(cfg)
    budget = detector_budget(cfg)
    s = cfg.sequence
    amp = args.fringe_amplitude
    if amp is None:
        amp = s.contrast * np.exp(-s.tau1 / cfg.ensemble.TD)
    floor = strain_noise_floor(budget.sigma_nu, s.tau1, amp, cfg.timing.rep_rate)
    report = budget_report(
        apd, budget,
        optical_power=apd.power_for_voltage(cfg.detector.fi_volts),
        tau1=s.tau1, fringe_amplitude=amp, rep_rate=cfg.timing.rep_rate,
        sigma_f_per_shot=frequency_noise_per_shot(budget.sigma_nu, s.tau1, amp),
        floor=floor, volume=cfg.psf.volume,
        floor_volume_normalized=volume_normalized(floor, cfg.psf.volume),
    )
    report["seed"] = cfg.seed
    out.mkdir(parents=True, exist_ok=True)
    write_budget_report(out / "noise_budget.json", report)
    return {k: v["value"] for k, v in report["terms"].items() if k in ("i_N", "v_SN", "v_JN", "sigma_nu", "floor")}


def cmd_stitch(cfg, args, out):
    from .scan.stitch import stitch

    if not args.maps:
        raise ConfigError("stitch needs --maps")
    maps = []
    for p in args.maps:
        try:
            maps.append(read_map(p))
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read map {p}: {exc}") from exc
    overlaps = None
    if args.overlap:
        try:
            overlaps = [tuple(int(v) for v in o.split(",")) for o in args.overlap]
        except ValueError as exc:
            raise ConfigError("--overlap expects i,j") from exc
    res = stitch(maps, overlaps)
    res.composite.metadata.update(base_metadata(cfg))
    write_map(res.composite, out / "composite")
    _maybe_png(args, res.composite, out / "composite")
    return {"offsets_Hz": res.offsets.tolist(), "seam_residual_Hz": res.seam_residual,
            "median_strain": float(np.median(strain_from_mz(res.composite.mz[~res.composite.mask])))}


COMMANDS = {
    "simulate-confocal": cmd_confocal,
    "simulate-gradiometry": cmd_gradiometry,
    "simulate-qdm": cmd_qdm,
    "simulate-odmr": cmd_odmr,
    "calibrate": cmd_calibrate,
    "allan": cmd_allan,
    "noise-budget": cmd_noise_budget,
    "stitch": cmd_stitch,
}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nvstrain", description="NV-diamond strain interferometry simulator")
    sub = p.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sp = sub.add_parser(verb)
        sp.add_argument("config", nargs="?", help="JSON config file")
        sp.add_argument("--seed", type=int, required=True, help="random seed (required)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. sequence.tau1=2.1e-5 (repeatable)")
        sp.add_argument("-o", "--output", help="output directory (overrides config 'output')")
        sp.add_argument("--png", action="store_true", help="also write 16-bit PNG quick looks")
        sp.add_argument("-v", "--verbose", action="store_true")
        if verb == "noise-budget":
            sp.add_argument("--fringe-amplitude", type=float, default=None,
                            help="visibility fringe amplitude (default contrast*exp(-tau1/TD))")
        if verb == "stitch":
            sp.add_argument("--maps", nargs="+", help="map files (CSV with JSON sidecar)")
            sp.add_argument("--overlap", action="append", metavar="I,J", help="declared overlapping pair")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        out = Path(cfg.output)
        summary = COMMANDS[args.verb](cfg, args, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
