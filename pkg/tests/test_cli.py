import hashlib

import numpy as np
import pytest
import yaml

from quadfail.cli import (
    EXIT_CONFIG,
    EXIT_NO_CONVERGENCE,
    EXIT_OK,
    EXIT_PATH_NOT_FOUND,
    main,
)
from quadfail.params import airframe_to_dict, load_airframe
from quadfail.scenario import DEFAULT_SEED


def read_rows(path):
    lines = path.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")]
    return header, body


def test_hover_solve_reports_published_power(tmp_path, capsys):
    out = tmp_path / "hover.yaml"
    assert main(["hover-solve", "--out", str(out)]) == EXIT_OK
    data = yaml.safe_load(out.read_text())
    assert data["header"][1] == f"seed {DEFAULT_SEED}"
    assert data["hover"]["total_power"] == pytest.approx(44.9, rel=0.02)
    assert "44.9" in capsys.readouterr().out


def test_hover_solve_untilted(tmp_path):
    out = tmp_path / "hover.yaml"
    assert main(["hover-solve", "--rho", "0", "--alpha", "0", "--out", str(out)]) == EXIT_OK
    assert yaml.safe_load(out.read_text())["hover"]["total_power"] == pytest.approx(54.0, rel=0.05)


def test_malformed_config_names_the_key(tmp_path, capsys):
    data = airframe_to_dict(load_airframe())
    data["vehicle"]["wheelbase"] = 0.3
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump(data))
    assert main(["hover-solve", "--config", str(cfg)]) == EXIT_CONFIG
    assert "vehicle.wheelbase" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["hover-solve", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


def test_unsolvable_hover_exit_status(tmp_path, capsys):
    data = airframe_to_dict(load_airframe())
    data["vehicle"]["mass"] = 50.0
    cfg = tmp_path / "heavy.yaml"
    cfg.write_text(yaml.safe_dump(data))
    assert main(["hover-solve", "--config", str(cfg)]) == EXIT_NO_CONVERGENCE
    assert "residual" in capsys.readouterr().err


def sweep(tmp_path, name, *extra):
    out = tmp_path / name
    args = ["power-sweep", "--rho-min", "0", "--rho-max", "0.5", "--rho-step", "0.5"]
    args += ["--alpha-min", "0.3", "--alpha-max", "0.4", "--alpha-step", "0.1", "--out", str(out), *extra]
    assert main(args) == EXIT_OK
    return out


def test_single_point_sweep(tmp_path):
    out = tmp_path / "one.csv"
    args = ["power-sweep", "--rho-max", "0", "--alpha-min", "0.4", "--alpha-max", "0.4", "--out", str(out)]
    assert main(args) == EXIT_OK
    header, body = read_rows(out)
    assert body[0].split(",")[:4] == ["rho", "alpha", "converged", "total_power_W"]
    assert len(body) == 2
    assert body[1].endswith(",1")  # argmin flag
    assert any("argmin" in h for h in header)


def test_sweep_is_byte_identical(tmp_path):
    a = sweep(tmp_path, "a.csv").read_bytes()
    b = sweep(tmp_path, "b.csv").read_bytes()
    assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest()


def test_sweep_header_carries_version_seed_and_digest(tmp_path):
    header, _ = read_rows(sweep(tmp_path, "h.csv"))
    text = "\n".join(header)
    assert "quadfail" in text
    assert f"seed {DEFAULT_SEED}" in text
    assert "digest vehicle" in text


def test_plan_on_bundled_map(tmp_path, capsys):
    out = tmp_path / "plan"
    assert main(["plan", "--out-dir", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert "landing spot: (500, 101, 0)" in printed
    for name in ("path.csv", "path_raw.csv", "tree.csv", "gvd.csv"):
        header, body = read_rows(out / name)
        assert any(h.startswith("# seed") for h in header)
        assert any("digest map" in h for h in header)
        assert len(body) > 1
    _, body = read_rows(out / "path.csv")
    last = [float(v) for v in body[-1].split(",")[1:]]
    assert last == [500.0, 101.0, 0.0]


def test_plan_fixed_mode_failure_is_distinct(tmp_path, capsys):
    code = main(["plan", "--mode", "fixed", "--samples", "10", "--out-dir", str(tmp_path)])
    assert code == EXIT_PATH_NOT_FOUND
    assert "fixed mode" in capsys.readouterr().err


def test_plan_free_space_is_straight(tmp_path, capsys):
    world = {"bounds": {"min": [0, 0, 0], "max": [200, 200, 50]}, "grid_step": 1.0, "inflation": 2.0, "obstacles": []}
    mpath = tmp_path / "free.yaml"
    mpath.write_text(yaml.safe_dump(world))
    out = tmp_path / "plan"
    assert main(["plan", "--map", str(mpath), "--start", "20", "30", "40", "--out-dir", str(out)]) == EXIT_OK
    _, body = read_rows(out / "path.csv")
    pts = np.array([[float(v) for v in row.split(",")[1:]] for row in body[1:]])
    length = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
    assert length == pytest.approx(np.linalg.norm(pts[-1] - pts[0]), rel=0.005)


def test_plan_start_outside_map(tmp_path, capsys):
    code = main(["plan", "--start", "-5", "0", "10", "--out-dir", str(tmp_path)])
    assert code == EXIT_PATH_NOT_FOUND
    assert "outside" in capsys.readouterr().err


def test_simulate_setpoint(tmp_path, capsys):
    out = tmp_path / "log.csv"
    code = main(["simulate", "--setpoint", "-5", "2", "16", "--dt", "1e-3", "--out", str(out)])
    assert code == EXIT_OK
    printed = capsys.readouterr().out
    assert "final position: (-5.0" in printed and "status: ok" in printed
    header, body = read_rows(out)
    assert any("digest scenario" in h for h in header)
    assert len(body) == 1 + 3001


def test_simulate_zero_duration(tmp_path):
    out = tmp_path / "log.csv"
    assert main(["simulate", "--setpoint", "0", "0", "10", "--duration", "0", "--out", str(out)]) == EXIT_OK
    _, body = read_rows(out)
    assert len(body) == 2
    assert float(body[1].split(",")[0]) == 0.0


def test_bad_integrator_step_is_config_error(capsys):
    assert main(["simulate", "--setpoint", "0", "0", "10", "--dt", "3e-4", "--duration", "0"]) == EXIT_CONFIG


def test_unknown_scenario_key(tmp_path, capsys):
    s = tmp_path / "s.yaml"
    s.write_text("setpoint: [0, 0, 10]\nwind: 3\n")
    assert main(["simulate", "--scenario", str(s)]) == EXIT_CONFIG
    assert "wind" in capsys.readouterr().err
