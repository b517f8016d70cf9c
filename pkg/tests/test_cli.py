import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import sha, write_config
from walkbo import bo, cli, nnet
from walkbo.aggregate import Z95

BO_ARGS = ["--kernel", "SE", "--budget", "4"]


def digest_line(out: str) -> str:
    return [ln for ln in out.splitlines() if ln.startswith("sha256 ")][-1]


class TestGenerate:
    def test_repeat_prints_same_digest(self, pipeline, capsys):
        d, cfg = pipeline
        assert cli.main(["-q", "generate", "--config", str(cfg), "--out", str(d / "again.csv")]) == 0
        out = capsys.readouterr().out
        assert "walk fraction" in out
        assert digest_line(out) == f"sha256 {sha(d / 'again.csv')}" == f"sha256 {sha(d / 'out' / 'data.csv')}"

    def test_empty_bounds_file_is_config_error(self, tmp_path, capsys):
        (tmp_path / "b.txt").write_text("\n")
        cfg = write_config(tmp_path, "[experiment]\nbounds = b.txt\n")
        assert cli.main(["generate", "--config", str(cfg)]) == 2
        assert "b.txt, line 1: bounds file is empty" in capsys.readouterr().err


class TestTrain:
    def test_output_dimensions(self, pipeline):
        d, _ = pipeline
        assert nnet.MLP.load(d / "out" / "score.txt").n_out == 1
        assert nnet.MLP.load(d / "out" / "traj.txt").n_out == 8

    def test_same_seed_same_digest(self, pipeline, capsys):
        d, cfg = pipeline
        assert cli.main(["-q", "train", "--config", str(cfg), "--target", "score", "--out", str(d / "s2.txt")]) == 0
        assert digest_line(capsys.readouterr().out) == f"sha256 {sha(d / 'out' / 'score.txt')}"
        assert cli.main(["-q", "train", "--config", str(cfg), "--target", "score", "--seed", "5",
                         "--out", str(d / "s3.txt")]) == 0
        assert sha(d / "s3.txt") != sha(d / "s2.txt")

    def test_score_target_without_walking_rows(self, tmp_path, capsys):
        (tmp_path / "b.txt").write_text("-1 -0.95\n1.95 2\n0.75 0.8\n0 1\n0 1\n")
        cfg = write_config(tmp_path, "[experiment]\nbounds = b.txt\n[data]\npoints = 16\n")
        assert cli.main(["-q", "generate", "--config", str(cfg)]) == 0
        assert "undefined" in capsys.readouterr().out
        assert cli.main(["-q", "train", "--config", str(cfg), "--target", "score"]) == 3
        assert "no score column" in capsys.readouterr().err
        # the summaries are still usable
        assert cli.main(["-q", "train", "--config", str(cfg), "--target", "traj"]) == 0

    def test_missing_dataset(self, tmp_path):
        assert cli.main(["-q", "train", "--config", str(write_config(tmp_path, "[data]\npoints=5\n")),
                         "--target", "traj"]) == 3


class TestBO:
    def test_matrix_size_and_rerun_identical(self, pipeline, tmp_path, capsys):
        _, cfg = pipeline
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        # two kernels x three seeds x budget 10
        for out in (a, b):
            assert cli.main(["-q", "bo", "--config", str(cfg), "--kernel", "SE", "--out", str(out)]) == 0
            assert cli.main(["-q", "bo", "--config", str(cfg), "--kernel", "asymNN",
                             "--out", str(out.with_suffix(".2.csv"))]) == 0
        rows = bo.read_results(a) + bo.read_results(a.with_suffix(".2.csv"))
        assert len(rows) == 60
        assert {(r["kernel"], r["run_seed"]) for r in rows} == {(k, s) for k in ("SE", "asymNN") for s in (0, 1, 2)}
        assert sha(a) == sha(b)
        assert "below 20" in capsys.readouterr().out

    def test_workers_do_not_change_results(self, pipeline, tmp_path, monkeypatch):
        _, cfg = pipeline
        serial, par = tmp_path / "s.csv", tmp_path / "p.csv"
        assert cli.main(["-q", "bo", "--config", str(cfg), *BO_ARGS, "--out", str(serial)]) == 0
        monkeypatch.setenv("WALKBO_WORKERS", "3")
        assert cli.main(["-q", "bo", "--config", str(cfg), *BO_ARGS, "--out", str(par)]) == 0
        assert sha(serial) == sha(par)

    def test_single_seed(self, pipeline, tmp_path):
        _, cfg = pipeline
        out = tmp_path / "one.csv"
        assert cli.main(["-q", "bo", "--config", str(cfg), "--seed", "7", "--kernel", "trajNN",
                         "--budget", "3", "--out", str(out)]) == 0
        rows = bo.read_results(out)
        assert [(r["run_seed"], r["kernel"]) for r in rows] == [(7, "trajNN")] * 3

    def test_missing_model_is_config_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, "[experiment]\nkernels = asymNN\n")
        assert cli.main(["-q", "bo", "--config", str(cfg)]) == 2
        assert "walkbo train" in capsys.readouterr().err

    def test_failed_cell_is_reported_and_matrix_continues(self, pipeline, tmp_path, monkeypatch, capsys):
        _, cfg = pipeline
        real = cli.run_cell

        def flaky(c, kind, seed, env):
            if seed == 1:
                raise RuntimeError("simulator exploded")
            return real(c, kind, seed, env)

        monkeypatch.setattr(cli, "run_cell", flaky)
        out = tmp_path / "r.csv"
        assert cli.main(["-q", "bo", "--config", str(cfg), *BO_ARGS, "--out", str(out)]) == 3
        assert {r["run_seed"] for r in bo.read_results(out)} == {0, 2}
        assert "seed=1" in capsys.readouterr().err

    @pytest.mark.parametrize("value", ["zero", "0"])
    def test_bad_worker_count(self, pipeline, monkeypatch, value):
        _, cfg = pipeline
        monkeypatch.setenv("WALKBO_WORKERS", value)
        assert cli.main(["-q", "bo", "--config", str(cfg), *BO_ARGS]) == 2


def write_fixture(path, runs):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run_seed", "env", "kernel", "trial", "param_0", "cost", "best_so_far"])
        for seed, kernel, costs_ in runs:
            best = np.minimum.accumulate(costs_)
            for t, (c, b) in enumerate(zip(costs_, best), start=1):
                w.writerow([seed, "nominal", kernel, t, 0.0, c, b])


class TestAggregate:
    RUNS = [(0, "SE", [90.0, 40.0, 15.0]), (1, "SE", [99.5, 25.0, 30.0]), (2, "SE", [60.0, 60.0, 12.5])]

    def read(self, path):
        with open(path) as f:
            return list(csv.DictReader(f))

    def test_three_run_fixture(self, tmp_path, capsys):
        src = tmp_path / "res.csv"
        write_fixture(src, self.RUNS)
        assert cli.main(["aggregate", str(src)]) == 0
        rows = self.read(tmp_path / "res_summary.csv")
        # best-so-far columns: [90, 99.5, 60], [40, 25, 60], [15, 25, 12.5]
        means = [(90 + 99.5 + 60) / 3, (40 + 25 + 60) / 3, (15 + 25 + 12.5) / 3]
        sds = [np.sqrt(sum((v - m) ** 2 for v in col) / 2) for col, m in
               zip(([90, 99.5, 60], [40, 25, 60], [15, 25, 12.5]), means)]
        for r, m, s in zip(rows, means, sds):
            assert float(r["mean_best"]) == pytest.approx(m, abs=1e-12)
            assert float(r["ci95_half"]) == pytest.approx(Z95 * s / np.sqrt(3), abs=1e-12)
        assert [float(r["frac_below"]) for r in rows] == [0.0, 0.0, pytest.approx(2 / 3)]
        assert "mean best" in capsys.readouterr().out

    def test_means_non_increasing(self, pipeline, tmp_path):
        _, cfg = pipeline
        res = tmp_path / "r.csv"
        assert cli.main(["-q", "bo", "--config", str(cfg), *BO_ARGS, "--out", str(res)]) == 0
        assert cli.main(["aggregate", str(res), "--config", str(cfg), "--out", str(tmp_path / "s.csv")]) == 0
        means = [float(r["mean_best"]) for r in self.read(tmp_path / "s.csv")]
        assert np.all(np.diff(means) <= 0)

    def test_single_run_flagged(self, tmp_path):
        src = tmp_path / "one.csv"
        write_fixture(src, self.RUNS[:1])
        assert cli.main(["aggregate", str(src)]) == 0
        rows = self.read(tmp_path / "one_summary.csv")
        assert all(r["ci_flag"] == "n=1" and float(r["ci95_half"]) == 0.0 for r in rows)

    def test_mixed_budgets_rejected(self, tmp_path, capsys):
        src = tmp_path / "mixed.csv"
        write_fixture(src, self.RUNS[:2] + [(5, "SE", [50.0, 20.0])])
        assert cli.main(["aggregate", str(src)]) == 3
        assert "mixed budgets" in capsys.readouterr().err

    def test_threshold_override(self, tmp_path):
        src = tmp_path / "res.csv"
        write_fixture(src, self.RUNS)
        assert cli.main(["aggregate", str(src), "--threshold", "50", "--out", str(tmp_path / "o.csv")]) == 0
        assert [float(r["frac_below"]) for r in self.read(tmp_path / "o.csv")] == [0.0, pytest.approx(2 / 3), 1.0]

    def test_missing_results(self, tmp_path):
        assert cli.main(["aggregate", str(tmp_path / "nope.csv")]) == 3


class TestEntryPoint:
    def test_usage_errors_exit_2(self, capsys):
        assert cli.main([]) == 2
        assert cli.main(["bo"]) == 2
        assert cli.main(["frobnicate"]) == 2
        assert cli.main(["bo", "--config", "x.ini", "--budget", "0"]) == 2

    def test_console_script(self, tmp_path):
        env = dict(os.environ, WALKBO_WORKERS="1")
        proc = subprocess.run([sys.executable, "-m", "walkbo.cli", "aggregate", str(tmp_path / "x.csv")],
                              capture_output=True, text=True, env=env)
        assert proc.returncode == 3
        proc = subprocess.run([sys.executable, "-m", "walkbo.cli", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "generate" in proc.stdout
