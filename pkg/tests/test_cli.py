import json

import numpy as np
import pytest

from nrtheat.cli import duality_check, main, render_report

SMALL = {"grid": {"nt": 16, "n_omega": 32, "n_cavity": 16, "n_G": 16, "pixels": 64}}


@pytest.fixture
def small_config(tmp_path, cache_dir):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture(scope="module")
def scan_dir(tmp_path_factory, cache_dir):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "small.json"
    cfg.write_text(json.dumps(SMALL))
    out = d / "scan"
    assert main(["scan", "--config", str(cfg), "--output", str(out)]) == 0
    return out


def test_forward_writes_cauchy_files(small_config, tmp_path):
    out = tmp_path / "fwd"
    assert main(["forward", "--config", str(small_config), "--output", str(out)]) == 0
    for name in ("dirichlet.csv", "neumann.csv", "meta.json", "w_neumann.csv"):
        assert (out / name).exists()
    meta = json.loads((out / "meta.json").read_text())
    flux = np.loadtxt(out / "neumann.csv", delimiter=",")
    assert flux.shape == (32, 16) == (len(meta["nodes"]), meta["nt"])
    # full precision: 17 significant digits survive the round trip
    first = (out / "neumann.csv").read_text().split(",")[0]
    assert len(first.lstrip("-").replace(".", "").split("e")[0].lstrip("0")) >= 15


def test_missing_config_exits_2_without_outputs(tmp_path, capsys):
    out = tmp_path / "never"
    assert main(["forward", "--config", str(tmp_path / "nope.json"), "--output", str(out)]) == 2
    assert not out.exists()
    assert "not found" in capsys.readouterr().err


def test_invalid_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"grid": {"nt": -3}}))
    assert main(["forward", "--config", str(bad), "--output", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("argv", [["scan", "--bogus"], ["frobnicate"], []])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_duality_check(tmp_path):
    res = duality_check(size=20)
    assert res["max_gap_tikhonov"] <= 1e-6 and res["max_gap_oracle"] <= 1e-6
    out = tmp_path / "dual"
    assert main(["duality-check", "--output", str(out)]) == 0
    saved = json.loads((out / "duality.json").read_text())
    assert saved["size"] == 20 and len(saved["cases"]) == 5


def test_report_matches_metrics(scan_dir):
    text = render_report(scan_dir)
    metrics = json.loads((scan_dir / "metrics.json").read_text())
    for key in ("separation_ratio", "jaccard"):
        assert f"| {key} | {json.dumps(metrics[key])} |" in text
    assert len(list((scan_dir / "report_data").glob("*.dat"))) == metrics["n_domains"]


def test_report_is_idempotent(scan_dir):
    assert main(["report", str(scan_dir)]) == 0
    first = (scan_dir / "report.md").read_bytes()
    assert main(["report", str(scan_dir)]) == 0
    assert (scan_dir / "report.md").read_bytes() == first


def test_report_on_degenerate_scan(tmp_path, cache_dir):
    cfg = tmp_path / "ring.json"
    ring = {"kind": "custom",
            "shapes": [{"center": [-0.55, 0.0], "radius0": 0.2, "terms": []}]}
    cfg.write_text(json.dumps(dict(SMALL, geometry={"family": [ring]})))
    out = tmp_path / "scan"
    assert main(["scan", "--config", str(cfg), "--output", str(out)]) == 0
    assert "Degenerate scan" in render_report(out)


def test_report_on_malformed_directory_exits_3(tmp_path):
    assert main(["report", str(tmp_path)]) == 3


def test_probe_ray(small_config, tmp_path):
    out = tmp_path / "probe"
    argv = ["probe", "--config", str(small_config), "--output", str(out),
            "--ray", "-0.6", "0.0", "-0.3", "0.0", "--n", "3", "--time", "0.6"]
    assert main(argv) == 0
    rows = np.genfromtxt(out / "blowup.csv", delimiter=",", names=True)
    assert len(rows) == 3 and np.all(np.isfinite(rows["P_log"]))


def test_probe_rejects_ray_in_cavity(small_config, tmp_path):
    argv = ["probe", "--config", str(small_config), "--output", str(tmp_path / "p"),
            "--ray", "0.2", "0.0", "0.4", "0.0", "--n", "3"]
    assert main(argv) == 2
