import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from lrfqr import io as lio
from lrfqr.cli import main
from lrfqr.estimators import SolverConfig, fit_lowrank, fit_ols
from lrfqr.prox import ProxConfig
from lrfqr.quantile import QuantileGrid, QuantileMatrix, read_quantile_csv, wasserstein2_rows, write_quantile_csv
from lrfqr.simulation import FactorConfig, WarpingConfig, gen_factor_dataset, gen_warping_dataset

from oracles import normal_equations_fit


def run(*argv):
    return main([str(a) for a in argv])


def read_long_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for r in rows:
        out.setdefault(r["series"], []).append((float(r["u"]), float(r["value"])))
    return out


class TestRoundTrips:
    def test_design_and_coefficients(self, tmp_path):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(7, 3)) / 3
        lio.write_design_csv(tmp_path / "X.csv", X)
        np.testing.assert_array_equal(lio.read_design_csv(tmp_path / "X.csv").X, X)
        g = QuantileGrid.midpoint(5)
        B = rng.normal(size=(3, 5)) * 1e-7
        lio.write_coefficients_csv(tmp_path / "B.csv", B, g)
        np.testing.assert_array_equal(lio.read_coefficients_csv(tmp_path / "B.csv", g).B, B)

    def test_fit_json(self, tmp_path):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(20, 3))
        Q = QuantileMatrix(QuantileGrid.midpoint(6), np.sort(rng.normal(size=(20, 6)), axis=1))
        fit = fit_lowrank(X, Q, SolverConfig(prox=ProxConfig(0.01, 0.01, 2)))
        fit.objective_trace = np.append(fit.objective_trace, [np.inf])
        lio.write_fit_json(tmp_path / "fit.json", fit)
        back = lio.read_fit_json(tmp_path / "fit.json")
        np.testing.assert_array_equal(back.B, fit.B)
        np.testing.assert_array_equal(back.intercept, fit.intercept)
        np.testing.assert_array_equal(back.x_mean, fit.x_mean)
        np.testing.assert_array_equal(back.objective_trace, fit.objective_trace)
        assert back.grid == fit.grid
        assert (back.iterations, back.converged, back.df, back.rss) == (fit.iterations, fit.converged, fit.df, fit.rss)
        assert SolverConfig.from_dict(back.config) == SolverConfig.from_dict(fit.config)

    def test_dataset(self, tmp_path):
        data = gen_warping_dataset(WarpingConfig(n=8, p=4, r_true=2, M=10, seed=3))
        lio.write_dataset(tmp_path, data)
        X, Q, B, meta = lio.read_dataset(tmp_path)
        np.testing.assert_array_equal(X.X, data.X.X)
        np.testing.assert_array_equal(Q.values, data.Q.values)
        np.testing.assert_array_equal(B.B, data.true_B.B)
        np.testing.assert_array_equal(meta["true_intercept"], data.true_intercept)

    def test_malformed(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(lio.InvalidInput):
            lio.read_fit_json(tmp_path / "bad.json")
        (tmp_path / "X.csv").write_text("x_1,x_2\n1,abc\n")
        with pytest.raises(lio.InvalidInput):
            lio.read_design_csv(tmp_path / "X.csv")


class TestSimulate:
    def test_figure_config(self, tmp_path):
        assert run("simulate", "--n", 50, "--p", 25, "--rank", 10, "--out", tmp_path) == 0
        for f in ("X.csv", "Q.csv", "trueB.csv", "meta.json", "manifest.json"):
            assert (tmp_path / f).exists()
        assert read_quantile_csv(tmp_path / "Q.csv").n == 50
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["version"] and man["config"]["rank"] == 10 and man["config"]["threads"] == 1

    def test_null_config(self, tmp_path):
        assert run("simulate", "--rank", 0, "--n", 30, "--out", tmp_path) == 0
        _, Q, B, meta = lio.read_dataset(tmp_path)
        np.testing.assert_array_equal(B.B, 0)
        np.testing.assert_array_equal(meta["true_intercept"], Q.grid.points)
        assert np.all(Q.monotone_rows()) and Q.values.min() >= 0 and Q.values.max() <= 1
        # every row is a warp of the identity: recompute with the generator's in-memory latent
        data = gen_warping_dataset(WarpingConfig(n=30, r_true=0, seed=0))
        np.testing.assert_array_equal(data.latent, np.broadcast_to(Q.grid.points, (30, 100)))

    def test_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert run("simulate", "--seed", 7, "--n", 12, "--out", tmp_path / d) == 0
        for f in ("X.csv", "Q.csv", "trueB.csv", "meta.json", "manifest.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_config_and_override(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"n": 9, "p": 4, "rank": 2, "M": 7}))
        assert run("simulate", "--config", tmp_path / "c.json", "--p", 3, "--out", tmp_path / "o") == 0
        X, Q, _, _ = lio.read_dataset(tmp_path / "o")
        assert X.X.shape == (9, 3) and Q.grid.M == 7

    def test_factor(self, tmp_path):
        assert run("simulate", "--design", "factor", "--n", 20, "--p", 10, "--rank", 2, "--out", tmp_path) == 0
        meta = json.loads((tmp_path / "meta.json").read_text())
        assert meta["design"] == "factor" and "noise" in meta

    def test_output_root_env(self, tmp_path):
        env = {**os.environ, "LRFQR_OUTPUT_ROOT": str(tmp_path)}
        proc = subprocess.run([sys.executable, "-m", "lrfqr.cli", "simulate", "--n", "5", "--seed", "3"],
                              env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "simulate-seed3" / "Q.csv").exists()


class TestFit:
    @pytest.fixture
    def linear_dir(self, tmp_path):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(40, 3))
        B = rng.normal(size=(3, 8)) * 0.1
        Q = np.linspace(0, 1, 8) + X @ B
        _, B_oracle = normal_equations_fit(X, Q)
        lio.write_design_csv(tmp_path / "X.csv", X)
        write_quantile_csv(QuantileMatrix(QuantileGrid.midpoint(8), Q), tmp_path / "Q.csv")
        return tmp_path, B_oracle

    def test_noiseless_ols_and_lowrank(self, linear_dir):
        d, B_oracle = linear_dir
        assert run("fit", "--data", d, "--method", "ols", "--out", d / "ols") == 0
        assert np.max(np.abs(lio.read_coefficients_csv(d / "ols" / "Bhat.csv").B - B_oracle)) < 1e-6
        assert run("fit", "--data", d, "--lambda", 0, "--lambda-fused", 0, "--rank", "full",
                   "--tol", 1e-12, "--max-iters", 5000, "--out", d / "lrk") == 0
        Bl = lio.read_coefficients_csv(d / "lrk" / "Bhat.csv").B
        assert np.max(np.abs(Bl - B_oracle)) < 1e-6
        for f in ("fit.json", "Bhat.csv", "trace.csv", "manifest.json"):
            assert (d / "lrk" / f).exists()

    def test_lowrank_reproduces_ols(self, tmp_path):
        data = gen_factor_dataset(FactorConfig(n=200, p=10, m_quantiles=50, seed=1))
        lio.write_dataset(tmp_path, data)
        assert run("fit", "--data", tmp_path, "--method", "ols", "--out", tmp_path / "o") == 0
        assert run("fit", "--data", tmp_path, "--lambda", 0, "--lambda-fused", 0, "--rank", "full",
                   "--out", tmp_path / "l") == 0
        a = lio.read_fit_json(tmp_path / "o" / "fit.json")
        b = lio.read_fit_json(tmp_path / "l" / "fit.json")
        assert np.linalg.norm(a.B - b.B) < 1e-4

    def test_duplicate_columns_flag(self, tmp_path):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(15, 2))
        lio.write_design_csv(tmp_path / "X.csv", np.column_stack([x, x[:, 1]]))
        write_quantile_csv(QuantileMatrix(QuantileGrid.midpoint(4), np.sort(rng.normal(size=(15, 4)), 1)),
                           tmp_path / "Q.csv")
        assert run("fit", "--data", tmp_path, "--method", "ols") == 0
        assert json.loads((tmp_path / "fit.json").read_text())["pseudoinverse_used"] is True

    def test_data_errors(self, tmp_path, capsys):
        lio.write_design_csv(tmp_path / "X.csv", np.ones((5, 2)))
        write_quantile_csv(QuantileMatrix(QuantileGrid.midpoint(3), np.zeros((4, 3))), tmp_path / "Q.csv")
        assert run("fit", "--data", tmp_path) == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["exit_code"] == 2 and "rows" in err["message"]
        (tmp_path / "Q.csv").write_text("0.5\nfoo\n")
        assert run("fit", "--data", tmp_path) == 2
        assert run("fit", "--data", tmp_path / "missing") == 2

    def test_usage_errors(self, tmp_path):
        assert run("fit", "--bogus") == 1
        assert run("fit", "--rank", "abc") == 1
        assert run("nosuchcommand") == 1
        assert run("fit", "--config", tmp_path / "none.json", "--data", tmp_path) == 1

    def test_numerical_failure(self, tmp_path, capsys):
        data = gen_factor_dataset(FactorConfig(n=20, p=5, m_quantiles=6, seed=2))
        lio.write_dataset(tmp_path, data)
        (tmp_path / "c.json").write_text(json.dumps({"step_init": 1e8, "max_backtracks": 0}))
        assert run("fit", "--data", tmp_path, "--config", tmp_path / "c.json", "--rank", 2) == 3
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "SolverDiverged"


class TestOtherCommands:
    @pytest.fixture
    def run_dir(self, tmp_path):
        assert run("simulate", "--n", 30, "--p", 6, "--rank", 3, "--M", 20, "--out", tmp_path) == 0
        return tmp_path

    def test_tune_predict_evaluate(self, run_dir):
        assert run("tune", "--data", run_dir, "--rank", 3, "--grid-size", 2, "--criterion", "sbic") == 0
        rep = json.loads((run_dir / "tuning.json").read_text())
        assert len(rep["cells"]) == 4 and rep["criterion_used"] == "sbic"
        assert run("predict", "--fit", run_dir / "fit.json", "--x", run_dir / "X.csv", "--out", run_dir / "p") == 0
        P = read_quantile_csv(run_dir / "p" / "predictions.csv")
        fit = lio.read_fit_json(run_dir / "fit.json")
        X, Q, _, _ = lio.read_dataset(run_dir)
        np.testing.assert_array_equal(P.values, np.sort(fit.fitted(X.X), axis=1))
        assert run("evaluate", "--fit", run_dir / "fit.json", "--data", run_dir, "--out", run_dir / "e") == 0
        ev = json.loads((run_dir / "e" / "evaluation.json").read_text())
        assert ev["pe_mean_w2"] == pytest.approx(wasserstein2_rows(Q.values, P.values).mean(), rel=1e-12)

    def test_threads_recorded(self, run_dir):
        assert run("fit", "--data", run_dir, "--threads", 2, "--rank", 2) == 0
        man = json.loads((run_dir / "manifest.json").read_text())
        assert man["config"]["threads"] == 2 and man["command"] == "fit"
        assert man["history"][0]["command"] == "simulate"
        assert run("fit", "--data", run_dir, "--threads", 0) == 1

    def test_plotdata(self, run_dir):
        assert run("fit", "--data", run_dir, "--rank", 3, "--lambda", 1e-4) == 0
        assert run("plotdata", "--run", run_dir) == 0
        series = read_long_csv(run_dir / "plotdata.csv")
        X, Q, B, meta = lio.read_dataset(run_dir)
        coef = [k for k in series if k.startswith("coefficient_")]
        assert len(coef) == 6 and all(len(series[k]) == 20 for k in coef)
        # pseudo-errors against the generator's own latent functions
        data = gen_warping_dataset(WarpingConfig(n=30, p=6, r_true=3, M=20, seed=0))
        pe = np.array([[v for _, v in series[f"pseudo_error_{i + 1}"]] for i in range(30)])
        np.testing.assert_allclose(pe, data.pseudo_errors(), atol=1e-14)
        fit = lio.read_fit_json(run_dir / "fit.json")
        d_lrk = wasserstein2_rows(Q.values, np.sort(fit.fitted(X.X), axis=1))
        d_ols = wasserstein2_rows(Q.values, np.sort(fit_ols(X, Q).fitted(X.X), axis=1))
        np.testing.assert_allclose([v for _, v in series["residual_w2_lrk"]], d_lrk, rtol=1e-12)
        np.testing.assert_allclose([v for _, v in series["residual_w2_ols"]], d_ols, rtol=1e-12)

    def test_plotdata_missing(self, tmp_path):
        assert run("plotdata", "--run", tmp_path) == 2
        assert run("simulate", "--n", 5, "--out", tmp_path) == 0
        assert run("plotdata", "--run", tmp_path, "--fit", tmp_path / "nofit.json") == 2

    def test_factor_benchmark(self, tmp_path):
        assert run("benchmark", "--design", "factor", "--ns", "30", "--B-reps", 2, "--out", tmp_path) == 0
        with open(tmp_path / "table2.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1 and rows[0]["n"] == "30" and rows[0]["p"] == "15"


@pytest.mark.slow
def test_warping_benchmark_table_shape(tmp_path):
    assert run("benchmark", "--ranks", "5", "--ns", "50,100", "--B-reps", 20, "--grid-size", 2,
               "--out", tmp_path) == 0
    with open(tmp_path / "table1.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    metric = [c for c in reader.fieldnames if c.startswith(("lrk_", "ols_")) and not c.endswith("Bias_sq")]
    assert len(rows) == 2 and len(metric) == 10
    assert reader.fieldnames[:3] == ["rank", "n", "p"]
    assert [r["n"] for r in rows] == ["50", "100"] and all(r["B_reps"] == "20" for r in rows)
