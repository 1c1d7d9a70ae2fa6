import json

import numpy as np
import pytest

from pegm.cli import main
from pegm.io import read_data_csv, write_data_csv, write_theta_csv

THETA = np.array([[0.2, -0.5, 0.0], [-0.5, 0.1, 0.3], [0.0, 0.3, -0.2]])


@pytest.fixture
def files(tmp_path):
    theta = tmp_path / "theta.csv"
    write_theta_csv(theta, THETA)
    data = tmp_path / "data.csv"
    assert main(["sample", "--family", "ising", "--theta", str(theta), "--n", "150",
                 "--burn-in", "100", "--thin", "2", "--out", str(data)]) == 0
    return tmp_path, theta, data


def _json(path):
    return json.loads(path.read_text())


def test_sample_methods(files):
    d, theta, data = files
    assert read_data_csv(data).shape == (150, 3)
    for method in ("independence", "accept-reject"):
        out = d / f"{method}.csv"
        assert main(["sample", "--family", "ising", "--theta", str(theta), "--n", "20",
                     "--method", method, "--out", str(out)]) == 0
        assert read_data_csv(out).shape == (20, 3)


def test_estimate_and_fits(files):
    d, theta, data = files
    out = d / "e.json"
    assert main(["estimate", "--family", "ising", "--theta", str(theta), "--n", "500",
                 "--json-out", str(out)]) == 0
    assert np.array(_json(out)["estimate"]).shape == (3, 3)
    common = ["--family", "ising", "--data", str(data), "--max-iters", "30", "--mc-n", "200"]
    for cmd in (["fit"], ["fit-l1", "--lambda", "5"], ["cv", "--lambda-grid", "1,5", "--k", "3"],
                ["stability", "--lambda-grid", "1,5,20"], ["bootstrap", "--b", "3"]):
        out = d / f"{cmd[0]}.json"
        assert main(cmd + common + ["--json-out", str(out)]) == 0, cmd
        assert out.exists()
    theta_out = d / "hat.csv"
    assert main(["fit"] + common + ["--theta-out", str(theta_out)]) == 0
    assert np.loadtxt(theta_out, delimiter=",").shape == (3, 3)


def test_mple_and_bayes(files):
    d, _, data = files
    assert main(["mple", "--family", "ising", "--data", str(data),
                 "--json-out", str(d / "m.json")]) == 0
    assert main(["mple", "--family", "ising", "--data", str(data), "--stability",
                 "--json-out", str(d / "ms.json")]) == 0
    assert main(["bayes", "--family", "ising", "--data", str(data), "--draws", "20",
                 "--burn-in", "10", "--z-mode", "exact", "--draws-out", str(d / "draws.csv"),
                 "--json-out", str(d / "b.json")]) == 0
    assert (d / "draws.csv").exists()


def test_boltzmann_commands(tmp_path):
    v = (np.random.default_rng(0).random((50, 3)) < 0.5).astype(float)
    data = tmp_path / "v.csv"
    write_data_csv(data, v)
    model = tmp_path / "rbm.json"
    assert main(["rbm-train", "--data", str(data), "--m", "2", "--epochs", "5",
                 "--out", str(model)]) == 0
    bm = tmp_path / "bm.json"
    assert main(["bm-train", "--data", str(data), "--m", "2", "--epochs", "5",
                 "--out", str(bm)]) == 0
    out = tmp_path / "eval.json"
    assert main(["bm-eval", "--model", str(bm), "--test", str(data), "--reference", str(model),
                 "--z-mode", "exact", "--probes", "2", "--json-out", str(out)]) == 0
    assert "brier" in json.dumps(_json(out))


def test_bench_commands(tmp_path):
    assert main(["bench-ggm", "--p", "4", "--r", "2", "--n-list", "200",
                 "--json-out", str(tmp_path / "g.json")]) == 0
    assert main(["bench-sim", "--family", "ising", "--setting", "ld", "--methods", "pmple",
                 "--r", "1", "--p", "3", "--out-dir", str(tmp_path),
                 "--json-out", str(tmp_path / "s.json")]) == 0
    assert main(["bench-bm", "--p", "2", "--m0", "1", "--m", "2", "--n", "100", "--r", "1",
                 "--json-out", str(tmp_path / "b.json")]) == 0


def test_errors_exit_with_code_two(tmp_path, capsys):
    assert main(["bench-sim", "--family", "ising", "--setting", "uhd"]) == 2
    assert "allow-long" in capsys.readouterr().err
    bad = tmp_path / "bad.csv"
    bad.write_text("0,2\n1,1\n")
    assert main(["mple", "--family", "ising", "--data", str(bad)]) == 2
    with pytest.raises(SystemExit):
        main(["fit"])
