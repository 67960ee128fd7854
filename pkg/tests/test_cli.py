import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from photogeom.cli import ExperimentManifest, main, parse_grid
from photogeom.clickdet import ArrayDetector, array_contr_matrix, array_metric_matrix, observable_mismatch


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_parse_grid():
    assert parse_grid("0:1:0.25") == [0, 0.25, 0.5, 0.75, 1.0]
    assert parse_grid("-3:3:0.25")[0] == -3 and len(parse_grid("-3:3:0.25")) == 25
    assert parse_grid("1,2.5") == [1, 2.5]


@pytest.mark.parametrize("eta", (1.0, 0.7))
def test_metric_output_matches_library(tmp_path, eta):
    assert main(["metric", "--detectors", "10", "--eta", str(eta), "--out", str(tmp_path)]) == 0
    header, rows = _read_csv(tmp_path / "metric.csv")
    assert header == ["n", "m", "g_cov", "g_contr"]
    det = ArrayDetector(10, eta)
    g, gc = array_metric_matrix(det), array_contr_matrix(det)
    for n, m, a, b in rows:
        assert float(a) == pytest.approx(g[int(n), int(m)], rel=1e-11)
        assert float(b) == pytest.approx(gc[int(n), int(m)], rel=1e-11, abs=1e-11)
    manifest = json.loads((tmp_path / "metric.manifest.json").read_text())
    assert manifest["detector"] == {"n_detectors": 10, "eta": eta, "nu": 0.0}
    assert manifest["results"]["condition_number"] > 1


def test_photocounting_metric(tmp_path):
    assert main(["metric", "--family", "photocounting", "--eta", "0.5", "--out", str(tmp_path)]) == 0
    _, rows = _read_csv(tmp_path / "metric.csv")
    assert float(rows[0][2]) == pytest.approx(4 / 3)


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["metric", "--detectors", "0", "--out", str(tmp_path)]) == 1
    assert main(["bogus"]) == 1
    assert main(["mismatch", "--observable", "moment", "--grid", "2", "--out", str(tmp_path)]) == 1
    assert main(["reconstruct-qp", "--s", "0.2", "--grid", "0", "--imag", "0", "--out", str(tmp_path)]) == 1
    assert main(["replay", str(tmp_path / "missing.json")]) == 1
    assert main(["mismatch", "--grid", "1:0:1", "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_mismatch_command(tmp_path):
    assert main(["mismatch", "--detectors", "10", "--grid", "0:10:1", "--out", str(tmp_path)]) == 0
    header, rows = _read_csv(tmp_path / "mismatch.csv")
    assert header == ["observable", "parameter", "truncation", "hs_norm", "hs_mismatch", "relative_mismatch"]
    got = [float(r[4]) for r in rows]
    want = [observable_mismatch(ArrayDetector(10), "fock_projector", m)[1] for m in range(11)]
    assert np.allclose(got, want, rtol=1e-11, atol=1e-15)


def test_uhd_mismatch_with_truncations(tmp_path):
    args = ["mismatch", "--observable", "uhd", "--grid=-0.5,-0.1", "--truncation", "none,7,2", "--out", str(tmp_path)]
    assert main(args) == 0
    _, rows = _read_csv(tmp_path / "mismatch.csv")
    assert len(rows) == 6
    assert [r[2] for r in rows] == ["none", "none", "7", "7", "2", "2"]
    # the full operator at s = 0 is not HS-class
    assert main(["mismatch", "--observable", "uhd", "--grid", "0", "--out", str(tmp_path)]) == 1
    assert main(["mismatch", "--observable", "uhd", "--grid", "0", "--truncation", "2", "--out", str(tmp_path)]) == 0


def test_reconstruct_pn_and_pseudoinverse(tmp_path):
    assert main(["reconstruct-pn", "--detectors", "10", "--fock", "0", "--out", str(tmp_path)]) == 0
    _, rows = _read_csv(tmp_path / "pn.csv")
    assert float(rows[0][1]) == pytest.approx(1.0, abs=1e-8)
    assert main(["pseudoinverse", "--detectors", "10", "--fock-window", "40", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "matrices.txt").read_text()
    assert text.startswith("# T 10 40\n")
    _, rows = _read_csv(tmp_path / "penrose.csv")
    assert len(rows) >= 4


def test_other_commands_run(tmp_path):
    for args in (
        ["covm", "--detectors", "4"],
        ["coords", "--detectors", "8", "--observable", "exp", "--param", "0.5"],
        ["simulate-uhd", "--samples", "100", "--grid", "0,1", "--imag", "0"],
    ):
        assert main(args + ["--out", str(tmp_path)]) == 0
    _, rows = _read_csv(tmp_path / "histograms.csv")
    assert len(rows) == 2


def test_reconstruct_qp_is_byte_identical_on_replay(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    args = ["reconstruct-qp", "--eta", "0.7", "--s", "0", "--truncation", "7", "--samples", "2000", "--seed", "3", "--grid=-1:1:0.5"]
    assert main(args + ["--out", str(first)]) == 0
    assert main(["replay", str(first / "reconstruct-qp.manifest.json"), "--out", str(second)]) == 0
    for name in ("reconstruction.csv", "reconstruct-qp.manifest.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    header, rows = _read_csv(first / "reconstruction.csv")
    assert header == ["re_alpha", "im_alpha", "s", "estimate", "statistical_error", "hs_mismatch", "theory_value"]
    assert len(rows) == 10
    manifest = json.loads((first / "reconstruct-qp.manifest.json").read_text())
    assert manifest["seed"] == 3 and manifest["samples"] == 2000 and manifest["truncation"] == [7]


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("PHOTOGEOM_OUT", str(tmp_path))
    assert main(["covm", "--detectors", "3"]) == 0
    assert (tmp_path / "covm.csv").exists()


def test_validate_exit_codes(tmp_path):
    assert main(["validate", "--out", str(tmp_path)]) == 0
    _, rows = _read_csv(tmp_path / "validate.csv")
    assert rows and all(r[-1] == "true" for r in rows)
    assert main(["validate", "--inject-fault", "--out", str(tmp_path)]) == 2
    assert main(["validate", "--only-eta", "0.3", "--out", str(tmp_path)]) == 0


def test_manifest_serialization_is_stable():
    m = ExperimentManifest("metric", ["metric"], {"n_detectors": 2, "eta": 1.0, "nu": 0.0})
    assert m.to_json() == ExperimentManifest("metric", ["metric"], {"nu": 0.0, "eta": 1.0, "n_detectors": 2}).to_json()


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "photogeom.cli", "metric", "--detectors", "2", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    proc = subprocess.run([sys.executable, "-m", "photogeom.cli", "metric", "--detectors", "-1"], capture_output=True)
    assert proc.returncode == 1
