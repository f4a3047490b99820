import json

import numpy as np
import pytest

from polyci.cli import main
from polyci.problems import ProblemSpec
from polyci.qp import NonNegative
from conftest import TOY_H, TOY_K


@pytest.fixture
def toy_files(tmp_path):
    spec = ProblemSpec(forward=TOY_K.copy(), functionals=TOY_H.copy(),
                       constraints=NonNegative(3))
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec.to_json()))
    y_path = tmp_path / "y.json"
    y_path.write_text(json.dumps([20.0, 10.0]))
    return {"spec": str(spec_path), "y": str(y_path), "dir": tmp_path}


def test_chibar_quantile(capsys):
    rc = main(["chibar", "quantile", "--weights", "0,0.5,0.5", "--level", "0.68"])
    out = capsys.readouterr().out.strip()
    assert rc == 0
    assert abs(float(out) - 1.6421197) < 1e-5


def test_calibrate_json(toy_files, capsys):
    rc = main(["calibrate", "--spec", toy_files["spec"], "--stat", "l1",
               "--alpha", "0.32", "--method", "origin", "--samples", "4000",
               "--seed", "2"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["provenance"] == "origin"
    assert abs(payload["delta"] - 1.64) < 0.15
    assert payload["stderr"] > 0


def test_calibrate_preset(toy_files, capsys):
    rc = main(["calibrate", "--spec", toy_files["spec"], "--stat", "l2c",
               "--alpha", "0.05", "--method", "chisq-n"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert abs(payload["delta"] - 5.991) < 1e-3


def test_region_box_and_contains(toy_files, capsys):
    rc = main(["region", "box", "--spec", toy_files["spec"], "--y", toy_files["y"],
               "--stat", "l1", "--delta", "1.644"])
    assert rc == 0
    box = json.loads(capsys.readouterr().out)
    assert box["lo"][0] < 0 < box["hi"][0]

    rc_in = main(["region", "contains", "--spec", toy_files["spec"],
                  "--y", toy_files["y"], "--stat", "l1", "--delta", "1.644",
                  "--mu", "0,0"])
    assert rc_in == 0
    assert json.loads(capsys.readouterr().out)["contains"] is True

    rc_out = main(["region", "contains", "--spec", toy_files["spec"],
                   "--y", toy_files["y"], "--stat", "l1", "--delta", "1.644",
                   "--mu", "50,0"])
    assert rc_out == 1


def test_region_area_and_boundary(toy_files, capsys, tmp_path):
    rc = main(["region", "area", "--spec", toy_files["spec"], "--y", toy_files["y"],
               "--stat", "l1", "--delta", "1.644", "--n-angles", "64",
               "--r-tol", "1e-3"])
    assert rc == 0
    assert float(capsys.readouterr().out) > 0
    out_csv = tmp_path / "b.csv"
    rc2 = main(["region", "boundary", "--spec", toy_files["spec"],
                "--y", toy_files["y"], "--stat", "l1", "--delta", "1.644",
                "--n-angles", "16", "--r-tol", "1e-3", "--out", str(out_csv)])
    assert rc2 == 0
    lines = out_csv.read_text().strip().splitlines()
    assert lines[0] == "theta,r,mu1,mu2" and len(lines) == 17


def test_region_boundary_empty_exit_code(toy_files, tmp_path):
    y_path = tmp_path / "y2.json"
    y_path.write_text(json.dumps([-5.0, 5.0]))
    out_csv = tmp_path / "empty.csv"
    rc = main(["region", "boundary", "--spec", toy_files["spec"], "--y", str(y_path),
               "--stat", "l1", "--delta", "0.05", "--out", str(out_csv)])
    assert rc == 4
    assert out_csv.read_text() == "theta,r,mu1,mu2\n"


def test_reduce_tfm_round_trip(tmp_path, capsys):
    rng = np.random.default_rng(0)
    K = rng.standard_normal((4, 2))
    spec = ProblemSpec(forward=K, functionals=np.array([[1.0, -1.0]]),
                       constraints=NonNegative(2))
    spec_path = tmp_path / "s.json"
    spec_path.write_text(json.dumps(spec.to_json()))
    y_path = tmp_path / "y.json"
    y_path.write_text(json.dumps(list(K @ np.array([1.0, 0.5]))))
    rc = main(["reduce", "tfm", "--spec", str(spec_path), "--y", str(y_path)])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    reduced_spec = ProblemSpec.from_json(payload["spec"])
    assert reduced_spec.n_param == 2  # one sign-split pair
    assert "y" in payload
    # round-trip: the emitted reduced spec feeds the calibrate subcommand
    red_path = tmp_path / "red.json"
    red_path.write_text(json.dumps(payload["spec"]))
    rc2 = main(["calibrate", "--spec", str(red_path), "--stat", "l1",
                "--alpha", "0.32", "--method", "origin", "--samples", "1000",
                "--seed", "0"])
    assert rc2 == 0

def test_reduce_tfm_rejects_toy(toy_files):
    rc = main(["reduce", "tfm", "--spec", toy_files["spec"]])
    assert rc == 2


def test_reduce_box(tmp_path, capsys):
    rng = np.random.default_rng(1)
    K = rng.standard_normal((3, 2))
    spec = ProblemSpec(forward=K, functionals=np.array([[1.0, -1.0]]),
                       constraints=NonNegative(2))
    spec_path = tmp_path / "s.json"
    spec_path.write_text(json.dumps(spec.to_json()))
    rc = main(["reduce", "box", "--spec", str(spec_path), "--lo", "0,0",
               "--up", "1,inf"])
    assert rc == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["m_plus"] >= 0
    assert len(payload["candidates"]) == 4
    reduced_spec = ProblemSpec.from_json(payload["spec"])
    assert reduced_spec.n_param == 6


def test_coverage_run_and_exit_codes(toy_files, tmp_path, capsys):
    cfg = {
        "schema_version": 1,
        "spec": json.loads(open(toy_files["spec"]).read()),
        "x_star": [0, 0, 0],
        "alpha": 0.32,
        "n_trials": 40,
        "methods": ["qzero_mu"],
        "seed": 3,
        "calibration_samples": 1000,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out_path = tmp_path / "report.json"
    rc = main(["coverage", "run", "--config", str(cfg_path), "--out", str(out_path)])
    assert rc == 0
    report = json.loads(out_path.read_text())
    assert report["results"]["n_trials"] == 40

    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"spec": cfg["spec"], "methods": ["nope"]}))
    assert main(["coverage", "run", "--config", str(bad)]) == 2


def test_coverage_rerun_identical_results(toy_files, tmp_path):
    cfg = {
        "schema_version": 1,
        "spec": json.loads(open(toy_files["spec"]).read()),
        "x_star": [1, 1, 1],
        "alpha": 0.32,
        "n_trials": 60,
        "methods": ["ssb_mu", "ssb_x"],
        "seed": 12,
        "calibration_samples": 500,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    outs = []
    for name in ("r1.json", "r2.json"):
        out_path = tmp_path / name
        assert main(["coverage", "run", "--config", str(cfg_path),
                     "--out", str(out_path)]) == 0
        outs.append(json.loads(out_path.read_text())["results"])
    assert json.dumps(outs[0], sort_keys=True) == json.dumps(outs[1], sort_keys=True)
