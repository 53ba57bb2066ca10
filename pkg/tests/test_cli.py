import csv
import json

import numpy as np
import pytest

from dpmstream import cli
from dpmstream.dpm import MixtureState
from dpmstream.stream import load_ground_truth, load_stream_csv

TINY = [
    "--stream.n_batches", "2",
    "--stream.train_per_batch", "120",
    "--stream.test_per_batch", "40",
    "--stream.k_true", "3",
    "--model.trunc", "5",
    "--model.max_iters", "15",
    "--repetitions", "1",
]


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def metric_columns(rows):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in rows]


class TestSimulate:
    def test_default_files(self, tmp_path, capsys):
        assert cli.main(["simulate", "--output-dir", str(tmp_path)]) == 0
        batches = load_stream_csv(tmp_path / "stream.csv")
        assert len(batches) == 20
        truth = load_ground_truth(tmp_path / "stream.truth.json")
        assert list(np.flatnonzero(truth.drift_flags)) == [4, 8, 12, 16]

    def test_seed_repeat_identical(self, tmp_path):
        for name in ("a", "b"):
            assert cli.main(["simulate", "--out", str(tmp_path / f"{name}.csv"), "--stream.n_batches", "3"]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.truth.json").read_bytes() == (tmp_path / "b.truth.json").read_bytes()

    def test_period_one(self, tmp_path):
        assert cli.main(["simulate", "--output-dir", str(tmp_path), "--stream.drift_period", "1",
                         "--stream.train_per_batch", "10", "--stream.test_per_batch", "5"]) == 0
        assert load_ground_truth(tmp_path / "stream.truth.json").drift_flags.sum() == 19

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
        assert cli.main(["simulate", "--stream.n_batches", "1", "--stream.train_per_batch", "5"]) == 0
        assert (tmp_path / "env" / "stream.csv").exists()

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli.main(["simulate", "--out", str(blocker / "sub" / "s.csv")]) == 2


class TestConfig:
    def test_bad_field_named(self, tmp_path, capsys):
        code = cli.main(["run", "--output-dir", str(tmp_path), "--model.alpha", "-1"])
        assert code == 2
        assert "model.alpha" in capsys.readouterr().err

    def test_unknown_field(self, tmp_path, capsys):
        assert cli.main(["run", "--output-dir", str(tmp_path), "--model.alpah", "2"]) == 2
        assert "model.alpah" in capsys.readouterr().err

    def test_bad_algorithm(self, tmp_path, capsys):
        assert cli.main(["run", "--output-dir", str(tmp_path), "--algorithms", '["MHPP", "XYZ"]']) == 2
        assert "algorithms[1]" in capsys.readouterr().err

    @pytest.mark.parametrize("args", [["--repetitions", "0"], ["--algorithms", "[]"], ["--stream.drift_period", "0"]])
    def test_invalid_values(self, tmp_path, args):
        assert cli.main(["run", "--output-dir", str(tmp_path)] + args) == 2

    def test_config_file_and_override(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"model": {"alpha": 3.0}, "algorithms": ["SVB"], "repetitions": 2}))
        assert cli.main(["run", "--config", str(path), "--model.trunc", "7", "--print-config"]) == 0
        record = json.loads(capsys.readouterr().out)
        assert record["model"]["alpha"] == 3.0 and record["model"]["trunc"] == 7
        assert record["algorithms"] == ["SVB"] and record["repetitions"] == 2
        assert record["stream"]["n_batches"] == 20

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text("{not json")
        assert cli.main(["run", "--config", str(path)]) == 2

    def test_defaults_match_study_config(self):
        config = cli.build_config(cli.load_raw_config())
        assert [a.label for a in config.algorithms] == ["MHPP", "HPP", "SVB", "PP(0.9)", "SVI", "Privileged"]
        assert (config.model.alpha, config.model.trunc, config.model.max_iters) == (2.0, 10, 100)
        assert config.repetitions == 10
        s = config.stream
        assert (s.n_batches, s.train_per_batch, s.test_per_batch, s.k_true, s.dim) == (20, 1000, 500, 4, 2)


class TestRun:
    def test_one_rep_two_batches(self, tmp_path):
        assert cli.main(["run", "--output-dir", str(tmp_path), "--algorithms", '["MHPP"]'] + TINY) == 0
        rows = read_rows(tmp_path / "batches.csv")
        assert len(rows) == 2
        assert list(rows[0]) == cli.CSV_COLUMNS
        assert rows[0]["omega_min"] != "" and float(rows[0]["e_rho_mean"]) > 0
        state = MixtureState.load(tmp_path / "checkpoints" / "MHPP_rep0.json")
        assert state.trunc == 5
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary["algorithms"]) == {"MHPP"}
        assert len(summary["algorithms"]["MHPP"]["nmi"]["values"]) == 1

    def test_svb_matches_pp_one(self, tmp_path):
        assert cli.main(["run", "--output-dir", str(tmp_path), "--algorithms", '["SVB", "PP(1.0)"]'] + TINY) == 0
        rows = read_rows(tmp_path / "batches.csv")
        svb = [r for r in rows if r["algo"] == "SVB"]
        pp = [r for r in rows if r["algo"] == "PP(1)"]
        assert len(svb) == len(pp) == 2
        for a, b in zip(svb, pp):
            for col in ("loglik", "silhouette", "nmi", "ari", "purity", "n_active", "e_rho_mean"):
                assert a[col] == b[col]

    def test_deterministic_and_row_count(self, tmp_path):
        args = ["--algorithms", '["HPP", "SVI"]', "--repetitions", "2"] + TINY[:-2]
        for name in ("a", "b"):
            assert cli.main(["run", "--output-dir", str(tmp_path / name)] + args) == 0
        ra, rb = read_rows(tmp_path / "a" / "batches.csv"), read_rows(tmp_path / "b" / "batches.csv")
        assert len(ra) == 2 * 2 * 2
        assert metric_columns(ra) == metric_columns(rb)
        assert {r["rep"] for r in ra} == {"0", "1"}

    def test_parallel_matches_sequential(self, tmp_path):
        args = ["--algorithms", '["SVB", "MHPP"]', "--repetitions", "2"] + TINY[:-2]
        assert cli.main(["run", "--output-dir", str(tmp_path / "seq")] + args) == 0
        assert cli.main(["run", "--output-dir", str(tmp_path / "par"), "--jobs", "2"] + args) == 0
        assert metric_columns(read_rows(tmp_path / "seq" / "batches.csv")) == metric_columns(
            read_rows(tmp_path / "par" / "batches.csv")
        )

    def test_default_roster_smoke(self, tmp_path):
        assert cli.main(["run", "--output-dir", str(tmp_path)] + TINY) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert len(summary["algorithms"]) == 6
        assert len(read_rows(tmp_path / "batches.csv")) == 6 * 2

    def test_csv_stream_input(self, tmp_path):
        assert cli.main(["simulate", "--out", str(tmp_path / "s.csv"), "--stream.n_batches", "2",
                         "--stream.train_per_batch", "100", "--stream.test_per_batch", "30"]) == 0
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"stream": {"csv": str(tmp_path / "s.csv")}, "algorithms": ["Privileged", "SVB"],
                                   "repetitions": 1, "model": {"trunc": 5, "max_iters": 10}}))
        assert cli.main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "out")]) == 0
        assert len(read_rows(tmp_path / "out" / "batches.csv")) == 4

    def test_csv_stream_without_truth_rejects_privileged(self, tmp_path):
        (tmp_path / "s.csv").write_text("t,split,label,x0,x1\n0,train,0,0.0,0.0\n0,train,0,1.0,0.0\n0,test,0,0.5,0.0\n")
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"stream": {"csv": str(tmp_path / "s.csv")}, "algorithms": ["Privileged"],
                                   "repetitions": 1}))
        assert cli.main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "out")]) == 2


def summary_with(values: dict, metrics=("nmi", "ari")):
    return {
        "metrics": list(metrics),
        "algorithms": {
            algo: {m: {"mean": float(np.mean(v)), "std": float(np.std(v)), "values": list(v)} for m in metrics}
            for algo, v in values.items()
        },
    }


class TestCompare:
    def test_single_passthrough(self, tmp_path, capsys):
        s = summary_with({"MHPP": [0.9, 1.0], "SVB": [0.5, 0.7]})
        (tmp_path / "s.json").write_text(json.dumps(s))
        assert cli.main(["compare", str(tmp_path / "s.json")]) == 0
        out = capsys.readouterr().out
        assert "| nmi | **0.95 ± 0.05** | 0.60 ± 0.10 |" in out

    def test_two_identical_inputs(self):
        s = summary_with({"MHPP": [0.9, 1.0, 0.8], "SVB": [0.5, 0.7, 0.2]})
        _, one = cli.aggregate([s])
        _, two = cli.aggregate([s, s])
        for algo in one:
            for m in one[algo]:
                assert one[algo][m]["mean"] == pytest.approx(two[algo][m]["mean"])
                assert one[algo][m]["std"] == pytest.approx(two[algo][m]["std"])

    def test_best_excludes_privileged(self):
        s = summary_with({"Privileged": [1.0], "MHPP": [0.8], "SVB": [0.9]})
        metrics, table = cli.aggregate([s])
        assert cli.best_algorithms(metrics, table) == {"nmi": "SVB", "ari": "SVB"}
        md = cli.format_markdown(metrics, table)
        assert "| nmi | 1.00 ± 0.00 | 0.80 ± 0.00 | **0.90 ± 0.00** |" in md

    def test_unranked_metrics_not_bolded(self):
        s = summary_with({"MHPP": [5.0], "SVB": [4.0]}, metrics=("n_active",))
        metrics, table = cli.aggregate([s])
        assert "**" not in cli.format_markdown(metrics, table)

    def test_incompatible_metrics(self, tmp_path, capsys):
        (tmp_path / "a.json").write_text(json.dumps(summary_with({"MHPP": [1.0]}, ("nmi",))))
        (tmp_path / "b.json").write_text(json.dumps(summary_with({"MHPP": [1.0]}, ("ari",))))
        assert cli.main(["compare", str(tmp_path / "a.json"), str(tmp_path / "b.json")]) == 2
        assert "incompatible" in capsys.readouterr().err

    def test_csv_format(self, tmp_path, capsys):
        (tmp_path / "s.json").write_text(json.dumps(summary_with({"MHPP": [0.5, 1.0]}, ("nmi",))))
        out_file = tmp_path / "t.csv"
        assert cli.main(["compare", str(tmp_path / "s.json"), "--format", "csv", "--out", str(out_file)]) == 0
        rows = list(csv.DictReader(out_file.open()))
        assert rows == [{"metric": "nmi", "algo": "MHPP", "mean": "0.75", "std": "0.25", "n": "2"}]

    def test_run_directory_input(self, tmp_path, capsys):
        assert cli.main(["run", "--output-dir", str(tmp_path), "--algorithms", '["SVB"]'] + TINY) == 0
        capsys.readouterr()
        assert cli.main(["compare", str(tmp_path)]) == 0
        assert "SVB" in capsys.readouterr().out

    def test_missing_file(self, tmp_path):
        assert cli.main(["compare", str(tmp_path / "nope.json")]) == 2


def test_module_entry_point():
    import subprocess
    import sys

    out = subprocess.run([sys.executable, "-m", "dpmstream", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "simulate" in out.stdout
