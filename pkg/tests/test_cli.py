import json
import subprocess
import sys

import pytest

from causal_bench.cli import main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "dgp.json"
    cfg.write_text(json.dumps({"dgp": {"n": 500, "seed": 2}}))
    assert main(["generate", "--config", str(cfg), "--out", str(d / "data")]) == 0
    return d


def test_generate_writes_csv_and_sidecar(data_dir):
    assert (data_dir / "data" / "data.csv").exists()
    meta = json.loads((data_dir / "data" / "meta.json").read_text())
    assert meta["config"]["n"] == 500 and meta["config"]["seed"] == 2


@pytest.mark.parametrize("method", ["logistic", "cbps"])
def test_fit_and_adjust(data_dir, method):
    fit = data_dir / f"{method}.json"
    assert main(["fit", "--method", method, "--data", str(data_dir / "data"), "--combo", "C,Z",
                 "--out", str(fit)]) == 0
    f = json.loads(fit.read_text())
    assert f["method"] == method and len(f["coef"]) == 3 and f["combo"] == "C,Z"
    methods = ["pss", "psm", "ipw"] + (["cbps"] if method == "cbps" else [])
    for m in methods:
        out, dump = data_dir / f"adj_{method}_{m}.json", data_dir / f"model_{method}_{m}.json"
        assert main(["adjust", "--method", m, "--fit", str(fit), "--data", str(data_dir / "data"),
                     "--out", str(out), "--dump-model", str(dump)]) == 0
        a = json.loads(out.read_text())
        assert {"ate_hat", "eps_ate", "pehe", "diagnostics"} <= set(a)
        assert isinstance(json.loads(dump.read_text()), list)
    diag = json.loads((data_dir / f"adj_{method}_pss.json").read_text())["diagnostics"]
    assert "strata" in diag
    diag = json.loads((data_dir / f"adj_{method}_ipw.json").read_text())["diagnostics"]
    assert "histogram" in diag["weights"]


def test_cbps_adjust_needs_cbps_fit(data_dir, capsys):
    fit = data_dir / "lg.json"
    main(["fit", "--method", "logistic", "--data", str(data_dir / "data"), "--combo", "C", "--out", str(fit)])
    code = main(["adjust", "--method", "cbps", "--fit", str(fit), "--data", str(data_dir / "data"),
                 "--out", str(data_dir / "x.json")])
    assert code == 2 and "cbps" in capsys.readouterr().err


def test_fit_cfr_with_trace(data_dir):
    out, trace = data_dir / "cfr.json", data_dir / "trace.csv"
    assert main(["fit", "--method", "cfr", "--data", str(data_dir / "data"), "--combo", "C,A",
                 "--out", str(out), "--epochs", "3", "--trace-csv", str(trace)]) == 0
    f = json.loads(out.read_text())
    assert len(f["trace"]) == 4 and "net" in f and f["pehe"] >= 0
    assert trace.read_text().startswith("epoch,factual,imbalance,total")


def test_sweep_report_round_trip(tmp_path, capsys):
    cfg = tmp_path / "sweep.toml"
    cfg.write_text('combos = ["C", "C,Z"]\nestimators = ["IPW", "PSS"]\nseeds = [0, 1]\n'
                   "[dgp]\nn = 400\n[gbm]\nmax_trees = 20\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "res")]) == 0
    capsys.readouterr()
    assert main(["report", "--in", str(tmp_path / "res"), "--format", "md"]) == 0
    md = capsys.readouterr().out
    assert md == (tmp_path / "res" / "table.md").read_text()
    assert main(["report", "--in", str(tmp_path / "res"), "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("combo,estimator")
    # the tiny grid has no {C,A} row, so the best-cell assertion must fail
    assert main(["report", "--in", str(tmp_path / "res"), "--assert"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"combos": ["Z"]}))
    assert main(["sweep", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["report", "--in", str(tmp_path / "missing")]) == 2
    assert main(["generate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2


def test_verify_theory_small_grid(tmp_path):
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"n": 2000, "reps": 3, "J": 4,
                                "closed_form": {"gammas": [0], "taus": [1], "betas": [1]},
                                "lower_bound": {"n_configs": 2}, "equivalence": ["adjustment"]}))
    out = tmp_path / "theory.json"
    assert main(["verify-theory", "--grid", str(grid), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert set(rep["checks"]) >= {"j1_collapse", "lower_bound", "equivalence"} and "pass" in rep


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "causal_bench.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("generate", "fit", "adjust", "sweep", "report", "verify-theory"):
        assert cmd in res.stdout
