"""End-to-end runs of the command line through click's test runner."""
import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from splinecos import create_cli

SMALL_1D = {"n_basis": 12, "n_units": 10, "n_truth": 40}
SHORT_SAMPLER = {"n_iter": 40, "burn_in": 10, "thin": 2, "chains": 2}


@pytest.fixture
def cli():
    return create_cli()


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, cli, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


def simulate_small(runner, cli, out, scenario="regular-grid", overrides=SMALL_1D):
    overrides_path = out.parent / f"{out.name}_overrides.json"
    overrides_path.write_text(json.dumps(overrides))
    result = invoke(runner, cli, "simulate", scenario, "--dims", 1, "--seed", 3, "--out", out,
                    "--config", overrides_path)
    assert result.exit_code == 0, result.stderr
    return json.loads(result.stdout)


def shorten_sampler(config_path):
    config = json.loads(config_path.read_text())
    config["sampler"].update(SHORT_SAMPLER)
    config_path.write_text(json.dumps(config))


@pytest.fixture
def fitted(runner, cli, tmp_path):
    out = tmp_path / "sim"
    simulate_small(runner, cli, out)
    shorten_sampler(out / "fit_support.json")
    result = invoke(runner, cli, "fit", "--config", out / "fit_support.json", "--no-progress")
    assert result.exit_code == 0, result.stderr
    return out, json.loads(result.stdout)


class TestSimulate:
    def test_writes_data_configs_and_manifest(self, runner, cli, tmp_path):
        out = tmp_path / "sim"
        manifest = simulate_small(runner, cli, out)
        assert manifest["scenario"] == "regular-grid"
        assert set(manifest["configs"]) == {"naive", "support"}
        for name in list(manifest["files"].values()) + list(manifest["configs"].values()):
            assert (out / name).is_file()
        assert len(np.load(out / "true_delta_w.npy")) == 12
        assert len(pd.read_csv(out / "y.csv")) == 10
        assert len(pd.read_csv(out / "truth.csv")) == 40
        config = json.loads((out / "fit_naive.json").read_text())
        assert config["data"]["responses"][0]["as_centroids"] is True
        assert config["data"]["responses"][0]["weight"] == "total"
        assert json.loads((out / "manifest.json").read_text()) == manifest

    def test_same_seed_same_files(self, runner, cli, tmp_path):
        first = tmp_path / "a"
        second = tmp_path / "b"
        simulate_small(runner, cli, first)
        simulate_small(runner, cli, second)
        names = sorted(p.name for p in first.iterdir())
        assert names == sorted(p.name for p in second.iterdir())
        for name in names:
            if name != "manifest.json":
                assert (first / name).read_bytes() == (second / name).read_bytes(), name

    def test_full_binary(self, runner, cli, tmp_path):
        out = tmp_path / "fb"
        manifest = simulate_small(runner, cli, out, "full-binary", {"n_basis": 10})
        assert set(manifest["files"]) >= {"y1", "y2", "x1", "x2", "truth", "true_delta_w"}
        assert set(manifest["configs"]) == {"support"}
        values = pd.read_csv(out / "y1.csv")["value"]
        assert set(values.unique()) <= {0.0, 1.0}
        config = json.loads((out / "fit_support.json").read_text())
        assert [r["family"] for r in config["data"]["responses"]] == ["bernoulli", "bernoulli"]
        assert [r["reliable"] for r in config["data"]["responses"]] == [True, False]

    def test_unknown_scenario(self, runner, cli, tmp_path):
        result = invoke(runner, cli, "simulate", "hexagons", "--out", tmp_path / "x")
        assert result.exit_code == 1
        assert "regular-grid, irregular-grid, sparse, overlapping, full-binary" in result.stderr

    def test_bad_override(self, runner, cli, tmp_path):
        path = tmp_path / "o.json"
        path.write_text(json.dumps({"colour": "red"}))
        result = invoke(runner, cli, "simulate", "sparse", "--config", path, "--out", tmp_path / "x")
        assert result.exit_code == 1
        assert result.stderr.startswith("error: invalid scenario override")


class TestFit:
    def test_writes_chain_store(self, fitted):
        out, report = fitted
        store = out / "fit_support"
        assert report["chains"] == 2
        assert report["draws"] == 30
        for name in ("metadata.json", "chain_0.npy", "chain_1.npy", "summary.csv"):
            assert (store / name).is_file()
        assert np.load(store / "chain_0.npy").shape[0] == 15
        summary = pd.read_csv(store / "summary.csv", index_col=0)
        assert summary.index[0] == "beta0"
        metadata = json.loads((store / "metadata.json").read_text())
        assert metadata["model_hash"] == report["model_hash"]
        assert metadata["config"]["sampler"]["chains"] == 2

    def test_rerun_is_bit_identical(self, runner, cli, fitted, tmp_path):
        out, _ = fitted
        rerun = tmp_path / "rerun"
        result = invoke(runner, cli, "fit", "--config", out / "fit_support.json", "--out", rerun,
                        "--threads", 1)
        assert result.exit_code == 0, result.stderr
        for c in range(2):
            np.testing.assert_array_equal(np.load(rerun / f"chain_{c}.npy"),
                                          np.load(out / "fit_support" / f"chain_{c}.npy"))

    def test_seed_override_changes_draws(self, runner, cli, fitted, tmp_path):
        out, _ = fitted
        result = invoke(runner, cli, "fit", "--config", out / "fit_support.json",
                        "--out", tmp_path / "other", "--seed", 99)
        assert result.exit_code == 0, result.stderr
        assert not np.array_equal(np.load(tmp_path / "other" / "chain_0.npy"),
                                  np.load(out / "fit_support" / "chain_0.npy"))

    def test_missing_source_file(self, runner, cli, tmp_path):
        out = tmp_path / "fb"
        simulate_small(runner, cli, out, "full-binary", {"n_basis": 10})
        (out / "x2.csv").unlink()
        result = invoke(runner, cli, "fit", "--config", out / "fit_support.json")
        assert result.exit_code == 1
        assert "data.predictors[1].path" in result.stderr
        assert "file not found" in result.stderr

    def test_invalid_config(self, runner, cli, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"model": {"domain": [[0, 1], [0, 1]]},\n "sampler": }')
        result = invoke(runner, cli, "fit", "--config", path)
        assert result.exit_code == 1
        assert "line 2" in result.stderr


class TestPredict:
    def test_nested_grids_are_consistent(self, runner, cli, fitted):
        out, _ = fitted
        store = out / "fit_support"
        grids = ["0,0,25,1,4,1", "0,0,12.5,1,8,1", "0,0,6.25,1,16,1"]
        args = ["predict", store]
        for grid in grids:
            args += ["--grid", grid]
        result = invoke(runner, cli, *args)
        assert result.exit_code == 0, result.stderr
        means = [pd.read_csv(store / f"grid{i}_summary.csv", index_col=0)["mean"].to_numpy()
                 for i in range(3)]
        np.testing.assert_allclose(means[0], means[1].reshape(4, 2).mean(axis=1), atol=1e-9)
        np.testing.assert_allclose(means[1], means[2].reshape(8, 2).mean(axis=1), atol=1e-9)
        raster = (store / "grid0_mean.asc").read_text().splitlines()
        assert raster[0] == "ncols 4" and raster[1] == "nrows 1"

    def test_truth_scoring(self, runner, cli, fitted):
        out, _ = fitted
        store = out / "fit_support"
        result = invoke(runner, cli, "predict", store, "--truth", out / "truth.csv", "--field", "W",
                        "--out", out / "pred")
        assert result.exit_code == 0, result.stderr
        report = json.loads(result.stdout)
        assert report["field"] == "W"
        assert report["mean_absolute_error"] >= 0
        assert 0 <= report["central_fraction"] <= 1
        table = pd.read_csv(out / "pred" / "truth_summary.csv", index_col=0)
        assert len(table) == 40
        assert table["p_over"].between(0, 1).all()
        np.testing.assert_array_equal(table["truth"], pd.read_csv(out / "truth.csv")["value"])

    def test_out_of_domain_grid(self, runner, cli, fitted):
        out, _ = fitted
        result = invoke(runner, cli, "predict", out / "fit_support", "--grid", "90,0,5,1,4,1")
        assert result.exit_code == 1
        assert "outside the basis domain" in result.stderr
        assert "row 2 with extent (100.0, 105.0, 0.0, 1.0)" in result.stderr

    def test_nothing_to_predict(self, runner, cli, fitted):
        out, _ = fitted
        result = invoke(runner, cli, "predict", out / "fit_support")
        assert result.exit_code == 1

    def test_malformed_grid(self, runner, cli, fitted):
        out, _ = fitted
        result = invoke(runner, cli, "predict", out / "fit_support", "--grid", "0,0,1")
        assert result.exit_code == 1
        assert "x0,y0,dx,dy,nx,ny" in result.stderr


class TestDiagnose:
    def test_table(self, runner, cli, fitted):
        out, _ = fitted
        store = out / "fit_support"
        result = invoke(runner, cli, "diagnose", store)
        assert result.exit_code == 0, result.stderr
        table = pd.read_csv(store / "diagnostics.csv")
        assert list(table.columns) == ["parameter", "mean", "sd", "ess", "rhat"]
        assert {"beta0", "kappa_w", "sigma2_y[y]"} <= set(table["parameter"])
        assert "delta_w[0]" not in set(table["parameter"])

    def test_missing_store(self, runner, cli, tmp_path):
        result = invoke(runner, cli, "diagnose", tmp_path / "none")
        assert result.exit_code == 2
        assert result.stderr.startswith("error:")
