"""End-to-end command-line runs: simulate, fit, predict, effects, curves, benchmark."""

import json

import numpy as np
import pytest

from treecause.cli import build_parser, main
from treecause.models import FitResult
from treecause.simbench import BenchmarkReport, BenchmarkScale, CellResult, gen_hahn

FIT_FLAGS = [
    "--trees", "10", "--burn", "40", "--draws", "30", "--thin", "3", "--seed", "3",
]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def sim_csv(workdir):
    path = str(workdir / "sim.csv")
    rc = main([
        "simulate", "--dgp", "hahn", "--n", "60", "--p", "5",
        "--seed", "11", "--out", path,
    ])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def bart_model(workdir, sim_csv):
    path = str(workdir / "bart.json")
    rc = main([
        "fit", "--data", sim_csv, "--response", "y", "--treatment", "z",
        "--model", "bart", "--out", path, *FIT_FLAGS,
    ])
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def bcf_model(workdir, sim_csv):
    path = str(workdir / "bcf.json")
    rc = main([
        "fit", "--data", sim_csv, "--response", "y", "--treatment", "z",
        "--model", "bcf", "--propensity", "glm", "--out", path, *FIT_FLAGS,
    ])
    assert rc == 0
    return path


def _data_rows(path, skip=3):
    return np.loadtxt(path, delimiter=",", skiprows=skip)


class TestSimulate:
    def test_matches_library_generator(self, sim_csv):
        s = gen_hahn(60, 5, np.random.default_rng(11))
        mat = _data_rows(sim_csv)
        assert mat.shape == (60, 7)
        assert np.array_equal(mat[:, :5], s.X)
        assert np.array_equal(mat[:, 5], s.z)
        assert np.array_equal(mat[:, 6], s.y)

    def test_header_and_meta(self, sim_csv):
        lines = open(sim_csv).read().splitlines()
        assert lines[0].startswith("# treecause ")
        assert "seed=11" in lines[1] and "dgp=hahn" in lines[1]
        assert lines[2] == "x1,x2,x3,x4,x5,z,y"

    def test_truth_columns_and_reruns_identical(self, workdir):
        a = str(workdir / "truth_a.csv")
        b = str(workdir / "truth_b.csv")
        for path in (a, b):
            rc = main([
                "simulate", "--dgp", "friedman", "--n", "30", "--p", "6",
                "--seed", "2", "--truth", "--out", path,
            ])
            assert rc == 0
        assert open(a, "rb").read() == open(b, "rb").read()
        header = open(a).read().splitlines()[2].split(",")
        assert header[-3:] == ["pi_true", "mu_true", "alpha_true"]
        mat = _data_rows(a)
        assert mat.shape == (30, 11)
        assert np.all((mat[:, 8] > 0) & (mat[:, 8] < 1))


class TestFit:
    def test_model_and_summary_files(self, bart_model, sim_csv):
        doc = json.load(open(bart_model))
        assert doc["kind"] == "bart"
        assert doc["seed"] == 3
        assert doc["propensity_mode"] == "none"
        assert "train_pi" not in doc
        summary = json.load(open(bart_model + ".summary.json"))
        assert summary["columns"] == ["x1", "x2", "x3", "x4", "x5", "z"]
        assert len(summary["pip"]) == 6
        assert summary["draws"] == 10
        assert summary["sigma_mean"] > 0

    def test_dart_summary_reports_split_weights(self, workdir, sim_csv):
        out = str(workdir / "dart.json")
        rc = main([
            "fit", "--data", sim_csv, "--response", "y", "--treatment", "z",
            "--model", "dart", "--out", out, *FIT_FLAGS,
        ])
        assert rc == 0
        summary = json.load(open(out + ".summary.json"))
        assert len(summary["s_mean"]) == 6
        assert sum(summary["s_mean"]) == pytest.approx(1.0)

    def test_probit_predictions_are_probabilities(self, workdir, sim_csv):
        out = str(workdir / "probit.json")
        rc = main([
            "fit", "--data", sim_csv, "--response", "y", "--treatment", "z",
            "--model", "probit", "--out", out, *FIT_FLAGS,
        ])
        assert rc == 0
        pred = str(workdir / "probit_pred.csv")
        assert main(["predict", "--model", out, "--data", sim_csv, "--out", pred]) == 0
        vals = _data_rows(pred)
        assert np.all((vals > 0) & (vals < 1))

    def test_propensity_column_mode(self, workdir):
        src = str(workdir / "truth_a.csv")
        out = str(workdir / "pscol.json")
        rc = main([
            "fit", "--data", src, "--response", "y", "--treatment", "z",
            "--propensity", "column:pi_true", "--out", out, *FIT_FLAGS,
        ])
        assert rc == 0
        doc = json.load(open(out))
        assert len(doc["train_pi"]) == 30
        summary = json.load(open(out + ".summary.json"))
        assert summary["columns"][-2:] == ["pi", "z"]

    def test_propensity_column_outside_unit_interval(self, workdir):
        src = str(workdir / "truth_a.csv")
        rc = main([
            "fit", "--data", src, "--response", "y", "--treatment", "z",
            "--propensity", "column:mu_true", "--out", str(workdir / "no.json"),
            *FIT_FLAGS,
        ])
        assert rc == 2

    def test_estimated_propensity_is_stored_and_reused(self, workdir, sim_csv, capsys):
        out = str(workdir / "psprobit.json")
        rc = main([
            "fit", "--data", sim_csv, "--response", "y", "--treatment", "z",
            "--propensity", "probit", "--out", out, *FIT_FLAGS,
        ])
        assert rc == 0
        doc = json.load(open(out))
        pi = np.asarray(doc["train_pi"])
        assert pi.shape == (60,) and np.all((pi > 0) & (pi < 1))
        # the sim table has no "pi" column, so prediction falls back to train_pi
        pred = str(workdir / "psprobit_pred.csv")
        assert main(["predict", "--model", out, "--data", sim_csv, "--out", pred]) == 0
        assert _data_rows(pred).shape == (60,)


class TestPredictEffects:
    def test_predictions_match_library(self, bart_model, sim_csv, workdir):
        out = str(workdir / "pred.csv")
        rc = main(["predict", "--model", bart_model, "--data", sim_csv, "--out", out])
        assert rc == 0
        fit = FitResult.from_dict(json.load(open(bart_model)))
        design = _data_rows(sim_csv)[:, :6]
        assert np.array_equal(_data_rows(out), fit.predict(design))

    def test_effects_json_and_draw_matrix(self, bart_model, sim_csv, workdir):
        oj = str(workdir / "eff.json")
        oc = str(workdir / "eff.csv")
        rc = main([
            "effects", "--model", bart_model, "--data", sim_csv,
            "--level", "0.9", "--out-json", oj, "--out-csv", oc,
        ])
        assert rc == 0
        doc = json.load(open(oj))
        assert doc["level"] == 0.9
        assert doc["cate"]["lo"] <= doc["cate"]["mean"] <= doc["cate"]["hi"]
        assert len(doc["ite"]) == 60
        assert all(r["lo"] <= r["mean"] <= r["hi"] for r in doc["ite"])
        draw_rows = open(oc).read().splitlines()
        assert len(draw_rows) == 2 + 1 + 10  # meta, header, one line per kept draw
        assert len(draw_rows[-1].split(",")) == 60

    def test_effects_need_a_treatment_input(self, workdir, sim_csv):
        out = str(workdir / "plain.json")
        rc = main([
            "fit", "--data", sim_csv, "--response", "y",
            "--model", "bart", "--out", out, *FIT_FLAGS,
        ])
        assert rc == 0
        rc = main([
            "effects", "--model", out, "--data", sim_csv,
            "--out-json", str(workdir / "x.json"),
        ])
        assert rc == 2


class TestCurves:
    def test_ice_effect_rows(self, bart_model, sim_csv, workdir):
        out = str(workdir / "ice.csv")
        rc = main([
            "ice", "--model", bart_model, "--data", sim_csv, "--var", "x3",
            "--effect", "--grid", "7", "--individuals", "5", "--out", out,
        ])
        assert rc == 0
        lines = open(out).read().splitlines()
        assert lines[2] == "grid_value,series,value"
        body = lines[3:]
        assert len(body) == 7 * (1 + 5)
        assert sum(1 for r in body if r.split(",")[1] == "pdp") == 7

    def test_pdp_effect_and_raw(self, bart_model, sim_csv, workdir):
        for flags, name in ((["--effect"], "pdp_eff.csv"), ([], "pdp_raw.csv")):
            out = str(workdir / name)
            rc = main([
                "pdp", "--model", bart_model, "--data", sim_csv,
                "--var", "x1", "--grid", "9", "--out", out, *flags,
            ])
            assert rc == 0
            mat = _data_rows(out, skip=3)
            assert mat.shape == (9, 2)
            assert np.all(np.diff(mat[:, 0]) > 0)
            assert np.all(np.isfinite(mat[:, 1]))

    def test_var_by_index_matches_var_by_name(self, bart_model, sim_csv, workdir):
        by_name = str(workdir / "byname.csv")
        by_idx = str(workdir / "byidx.csv")
        for var, out in (("x2", by_name), ("1", by_idx)):
            rc = main([
                "pdp", "--model", bart_model, "--data", sim_csv,
                "--var", var, "--grid", "5", "--effect", "--out", out,
            ])
            assert rc == 0
        assert _data_rows(by_name, skip=3).tolist() == _data_rows(by_idx, skip=3).tolist()

    def test_unknown_variable(self, bart_model, sim_csv, workdir):
        rc = main([
            "pdp", "--model", bart_model, "--data", sim_csv,
            "--var", "x99", "--out", str(workdir / "no.csv"),
        ])
        assert rc == 2


class TestSelect:
    def test_report_contents(self, bart_model, workdir, capsys):
        out = str(workdir / "select.json")
        rc = main(["select", "--model", bart_model, "--out", out])
        assert rc == 0
        doc = json.load(open(out))
        assert doc["columns"] == ["x1", "x2", "x3", "x4", "x5", "z"]
        assert len(doc["pip"]) == 6
        assert len(doc["selected"]) == 6
        assert "selected:" in capsys.readouterr().out

    def test_rejects_two_forest_models(self, bcf_model, workdir):
        rc = main(["select", "--model", bcf_model, "--out", str(workdir / "no.json")])
        assert rc == 2


class TestBcfPipeline:
    def test_fit_artifacts(self, bcf_model):
        doc = json.load(open(bcf_model))
        assert doc["kind"] == "bcf"
        assert len(doc["train_pi"]) == 60
        summary = json.load(open(bcf_model + ".summary.json"))
        assert summary["nu_alpha_mean"] > 0

    def test_predict_and_effects_reuse_stored_pihat(self, bcf_model, sim_csv, workdir):
        pred = str(workdir / "bcf_pred.csv")
        rc = main(["predict", "--model", bcf_model, "--data", sim_csv, "--out", pred])
        assert rc == 0
        assert _data_rows(pred).shape == (60,)
        oj = str(workdir / "bcf_eff.json")
        rc = main(["effects", "--model", bcf_model, "--data", sim_csv, "--out-json", oj])
        assert rc == 0
        doc = json.load(open(oj))
        assert np.isfinite(doc["cate"]["mean"])

    def test_effect_curves_work_but_raw_curves_refuse(self, bcf_model, sim_csv, workdir):
        out = str(workdir / "bcf_pdp.csv")
        rc = main([
            "pdp", "--model", bcf_model, "--data", sim_csv,
            "--var", "x3", "--grid", "5", "--effect", "--out", out,
        ])
        assert rc == 0
        assert _data_rows(out, skip=3).shape == (5, 2)
        rc = main([
            "pdp", "--model", bcf_model, "--data", sim_csv,
            "--var", "x3", "--grid", "5", "--out", str(workdir / "no.csv"),
        ])
        assert rc == 2

    def test_bcf_requires_a_propensity(self, sim_csv, workdir):
        rc = main([
            "fit", "--data", sim_csv, "--response", "y", "--treatment", "z",
            "--model", "bcf", "--out", str(workdir / "no.json"), *FIT_FLAGS,
        ])
        assert rc == 2


class TestConfigFile:
    def test_file_fills_defaults_and_flags_win(self, workdir, sim_csv):
        cfg = str(workdir / "cfg.json")
        json.dump({"trees": 7, "burn": 20, "draws": 12, "thin": 2}, open(cfg, "w"))
        out = str(workdir / "cfgfit.json")
        rc = main([
            "fit", "--data", sim_csv, "--response", "y", "--treatment", "z",
            "--config", cfg, "--draws", "16", "--out", out,
        ])
        assert rc == 0
        conf = json.load(open(out))["config"]
        assert conf["m"] == 7
        assert conf["burn_in"] == 20
        assert conf["n_draws"] == 16  # explicit flag beats the file value
        assert conf["thinning"] == 2

    def test_unknown_key_rejected(self, workdir, sim_csv, capsys):
        cfg = str(workdir / "bad.json")
        json.dump({"tree": 7}, open(cfg, "w"))
        rc = main([
            "fit", "--data", sim_csv, "--response", "y", "--config", cfg,
            "--out", str(workdir / "no.json"), *FIT_FLAGS,
        ])
        assert rc == 2
        assert "unknown config key" in capsys.readouterr().err


class TestBenchmarkCommand:
    def test_tiny_run_and_identical_rerun(self, workdir, capsys):
        a = str(workdir / "bench_a.csv")
        b = str(workdir / "bench_b.csv")
        j = str(workdir / "bench.json")
        argv = [
            "benchmark", "--dgp", "hahn", "--cells", "bart:vanilla,dart:rand",
            "--reps", "1", "--n", "60", "--p", "6", "--trees", "8",
            "--burn", "20", "--kept", "10", "--thin", "1", "--chains", "2",
            "--seed", "5",
        ]
        assert main(argv + ["--out-csv", a, "--out-json", j]) == 0
        assert main(argv + ["--out-csv", b]) == 0
        assert open(a, "rb").read() == open(b, "rb").read()
        doc = json.load(open(j))
        assert doc["dgp"] == "hahn"
        assert doc["configs"]["Vanilla-BART"]["replications"] == 1
        out = capsys.readouterr().out
        assert "Vanilla-BART: CATE RMSE" in out
        assert "Rand-DART: CATE RMSE" in out

    def test_malformed_cells(self, workdir):
        rc = main([
            "benchmark", "--dgp", "hahn", "--cells", "bart-vanilla",
            "--seed", "1", "--out-csv", str(workdir / "no.csv"),
        ])
        assert rc == 2

    def test_failed_cells_exit_nonzero(self, workdir, monkeypatch, capsys):
        def stub(dgp, cells=None, scale=None, seed=0, jobs=1):
            rep = BenchmarkReport(
                dgp=dgp, seed=seed, scale=scale, cells=[("bart", "vanilla")]
            )
            rep.rows = [
                CellResult(
                    config="Vanilla-BART", estimator="bart", mode="vanilla",
                    rep=0, status="error", error="boom",
                )
            ]
            return rep

        monkeypatch.setattr("treecause.cli.run_benchmark", stub)
        rc = main([
            "benchmark", "--dgp", "hahn", "--seed", "1",
            "--out-csv", str(workdir / "err.csv"),
        ])
        assert rc == 1
        assert "1 cell(s) failed" in capsys.readouterr().out

    def test_jobs_default_comes_from_environment(self, monkeypatch):
        monkeypatch.setenv("TREECAUSE_JOBS", "3")
        args = build_parser().parse_args(
            ["benchmark", "--dgp", "hahn", "--seed", "1", "--out-csv", "x"]
        )
        assert args.jobs == 3
        monkeypatch.setenv("TREECAUSE_JOBS", "not-a-number")
        args = build_parser().parse_args(
            ["benchmark", "--dgp", "hahn", "--seed", "1", "--out-csv", "x"]
        )
        assert args.jobs == 1


class TestExitCodes:
    def test_missing_data_file(self, workdir):
        rc = main([
            "fit", "--data", str(workdir / "nope.csv"), "--response", "y",
            "--out", str(workdir / "no.json"),
        ])
        assert rc == 2

    def test_missing_design_column(self, bart_model, workdir):
        short = str(workdir / "short.csv")
        with open(short, "w") as fh:
            fh.write("a,b,c\n1.0,2.0,3.0\n")
        rc = main([
            "predict", "--model", bart_model, "--data", short,
            "--out", str(workdir / "no.csv"),
        ])
        assert rc == 2

    def test_argparse_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "treecause" in capsys.readouterr().out
