import json

import numpy as np
import pytest

from nvstrain.analysis.io import StrainMap, read_map, write_map
from nvstrain.cli import main
from nvstrain.errors import ConfigError
from nvstrain.scan.config import apply_overrides, config_from_dict, load_config
from nvstrain.scan.confocal import run_confocal_scan
from nvstrain.scan.gradiometry import ServoError, run_gradiometry_scan
from nvstrain.scan.qdm import run_qdm_fov
from nvstrain.scan.stitch import stitch

FLAT = {"primitives": [{"type": "uniform", "strain": {"zz": 1e-6}}]}


def _cfg(**kw):
    return config_from_dict({"seed": 1, "scene": FLAT, **kw})


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "colour": "red"})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "grid": {"spacing": 1.0, "pitch": 2.0}})
    with pytest.raises(ConfigError):
        apply_overrides(_cfg(), {"sequence.tau": 1e-5})


def test_config_requires_seed_and_valid_values():
    with pytest.raises(ConfigError):
        config_from_dict({})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "grid": {"spacing": 0.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "timing": {"dwell": -1.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": 1, "sequence": {"n_swaps": 3}})
    with pytest.raises(ConfigError):
        config_from_dict({"seed": "7"})


def test_load_config_resolves_scene_path(tmp_path):
    (tmp_path / "scene.json").write_text(json.dumps(FLAT))
    (tmp_path / "cfg.json").write_text(json.dumps({"seed": 3, "scene": "scene.json"}))
    cfg = load_config(tmp_path / "cfg.json")
    assert cfg.scene == str(tmp_path / "scene.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")


def test_flat_scene_without_noise_is_uniform():
    m = run_confocal_scan(_cfg(grid={"extent": [3, 3]}, detector={"noise": False}))
    assert np.allclose(m.mz, -8e3, atol=1e-6)
    assert not m.mask.any()
    assert m.metadata["virtual_time_s"] == pytest.approx(16.0)


def test_scratch_grows_with_depth():
    scene = {"primitives": [{"type": "scratch", "point": [0, 0], "angle": 0.0, "width": 1.0,
                             "strain": {"zz": 1e-6}, "depth_scale": 2.4}]}
    cfg = config_from_dict({"seed": 1, "scene": scene, "detector": {"noise": False},
                            "grid": {"extent": [0, 0], "depths": [0, 1, 2]}})
    mz = run_confocal_scan(cfg).mz[:, 0, 0]
    assert np.all(np.diff(np.abs(mz)) > 0)


def test_depth_scan_requires_xy_readout():
    with pytest.raises(ConfigError):
        run_confocal_scan(_cfg(grid={"depths": [0, 1]}, sequence={"readout": "x"}))


def test_gradiometry_zero_drift_matches_flat_scene():
    smap, log = run_gradiometry_scan(_cfg(grid={"extent": [2, 2]}))
    # reference and scan see the same Mz, so the relative map is pure noise
    assert np.all(np.abs(smap.mz) < 5 * smap.sigma)
    assert np.all(log["drift_Hz"] == 0)


def test_gradiometry_servo_loses_fringe_under_huge_drift():
    with pytest.raises(ServoError):
        run_gradiometry_scan(_cfg(grid={"extent": [2, 2]}, drift={"rate": 1e5}))


def test_qdm_bookkeeping():
    r = run_qdm_fov(_cfg(qdm={"pixels": 8, "repeats": 2}))
    assert r.fov_time_s == 1.0
    assert r.map.metadata["time_per_frequency_s"] == 0.5
    assert r.frame_rate == pytest.approx(270.8, abs=0.05)
    assert r.frames_per_frequency == 135
    assert r.meets_benchmark


def _tile(x0, y0, n, offset, fn, rng=None, noise=0.0):
    X, Y = np.meshgrid(x0 + np.arange(n) + 0.5, y0 + np.arange(n) + 0.5)
    mz = fn(X, Y) + offset
    if rng is not None:
        mz = mz + rng.normal(0, noise, X.shape)
    return StrainMap(X, Y, 0 * X, mz, np.full(X.shape, max(noise, 1.0)), np.full(X.shape, 0.01))


def _truth(x, y):
    return 1000 * np.sin(x / 20) + 500 * np.cos(y / 15)


def test_stitch_removes_offset_exactly():
    a = _tile(0, 0, 20, 0.0, _truth)
    b = _tile(10, 0, 20, 1234.5, _truth)
    r = stitch([a, b])
    assert r.offsets[1] == pytest.approx(1234.5, abs=1e-9)
    assert r.seam_residual == pytest.approx(0.0, abs=1e-9)
    comp = r.composite
    assert np.allclose(comp.mz[~comp.mask], _truth(comp.x, comp.y)[~comp.mask], atol=1e-9)


def test_stitch_grid_seam_below_pixel_noise():
    rng = np.random.default_rng(0)
    noise = 50.0
    maps, offs = [], []
    for a in range(3):
        for b in range(3):
            offs.append(rng.normal(0, 3000))
            maps.append(_tile(40.0 * a, 40.0 * b, 50, offs[-1], _truth, rng, noise))
    r = stitch(maps)
    assert r.seam_residual < noise
    assert np.max(np.abs(r.offsets - (np.array(offs) - offs[0]))) < noise


def test_stitch_needs_overlap():
    a = _tile(0, 0, 10, 0.0, _truth)
    far = _tile(100, 0, 10, 0.0, _truth)
    with pytest.raises(ConfigError):
        stitch([a, far])
    with pytest.raises(ConfigError):
        stitch([_tile(0, 0, 20, 0.0, _truth), _tile(19, 0, 20, 0.0, _truth)], overlaps=[(0, 1)])


def test_stitch_disconnected_graph():
    maps = [_tile(0, 0, 10, 0, _truth), _tile(5, 0, 10, 0, _truth),
            _tile(100, 0, 10, 0, _truth), _tile(105, 0, 10, 0, _truth)]
    with pytest.raises(ConfigError):
        stitch(maps)


def test_determinism(tmp_path):
    cfg = _cfg(grid={"extent": [2, 2]})
    for d in ("a", "b"):
        write_map(run_confocal_scan(cfg), tmp_path / d / "map")
    for ext in (".csv", ".json"):
        assert (tmp_path / "a" / f"map{ext}").read_bytes() == (tmp_path / "b" / f"map{ext}").read_bytes()
    other = run_confocal_scan(apply_overrides(cfg, {"seed": 2}))
    assert not np.array_equal(other.mz, read_map(tmp_path / "a" / "map").mz)


def test_cli_exit_codes(tmp_path, capsys):
    scene = tmp_path / "scene.json"
    scene.write_text(json.dumps(FLAT))
    out = tmp_path / "out"
    base = ["--seed", "1", "-o", str(out), "--set", f"scene={json.dumps(str(scene))}"]
    assert main(["simulate-confocal", *base, "--set", "grid.extent=[1,1]"]) == 0
    assert (out / "confocal_map.csv").exists()
    assert main(["simulate-confocal", *base, "--set", "grid.pitch=2"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": 1, "unknown": 0}')
    assert main(["simulate-confocal", str(bad), "--seed", "1"]) == 2
    assert main(["simulate-gradiometry", *base, "--set", "grid.extent=[1,1]", "--set", "drift.rate=1e5"]) == 3
    capsys.readouterr()


def test_cli_requires_seed():
    with pytest.raises(SystemExit):
        main(["noise-budget"])


def test_cli_noise_budget(tmp_path, capsys):
    assert main(["noise-budget", "--seed", "0", "-o", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "noise_budget.json").read_text())
    assert doc["terms"]["i_N"]["value"] == pytest.approx(1.4e-9, rel=0.03)
    assert doc["seed"] == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary) >= {"i_N", "v_SN", "v_JN", "sigma_nu", "floor"}


def test_cli_stitch_round_trip(tmp_path, capsys):
    write_map(_tile(0, 0, 20, 0.0, _truth), tmp_path / "a")
    write_map(_tile(10, 0, 20, 500.0, _truth), tmp_path / "b")
    code = main(["stitch", "--seed", "0", "-o", str(tmp_path / "out"),
                 "--maps", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["offsets_Hz"][1] == pytest.approx(500.0, abs=1e-6)
    assert main(["stitch", "--seed", "0", "-o", str(tmp_path / "out")]) == 2
