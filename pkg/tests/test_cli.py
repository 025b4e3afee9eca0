import json

import numpy as np
import pytest

from graphsync.cli import (
    ConfigError,
    ExperimentConfig,
    RunReport,
    RunRow,
    main,
    parse_config,
    run,
    write_report,
)


SMALL_SWEEP = """
mode=sweep
m=3
n=4
h=4
classes=1
d=8
noise_sigma=0
seeds=0,1
fit_steps=40
miter=20
"""

SMALL_ORACLE = """
mode=oracle-compare
m=3
n=3
h=4
classes=1
d=5
noise_sigma=0
seeds=0,1,2
fit_steps=0
miter=30
"""


class TestParseConfig:
    def test_empty_text_gives_defaults(self):
        cfg = parse_config("")
        assert cfg.tau == 0.05
        assert cfg.sinkhorn_iters == 20
        assert cfg.theta == 1e-5
        assert cfg.lr == 1e-3
        assert cfg.h == 256
        assert cfg.d == 120
        assert cfg.m == 4
        assert cfg.edge_scale == 1.0
        assert cfg.focal_gamma == 2.0
        assert cfg.alpha == 1e-3
        assert cfg.drop_rate == 0.1

    def test_auto_universe_size(self):
        cfg = parse_config("d=auto\nclasses=2\nstep=10\n")
        assert cfg.d == 30

    def test_negative_tau_rejected_with_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config("m=4\ntau=-1\n")
        assert "line 2" in str(err.value)

    def test_unknown_key_rejected_with_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config("m=4\nbogus=3\n")
        assert "line 2" in str(err.value)
        assert "bogus" in str(err.value)

    def test_comments_and_blanks_skipped(self):
        cfg = parse_config("# comment\n\nm=6  # trailing\n")
        assert cfg.m == 6

    def test_universe_smaller_than_nodes_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("n=10\nd=8\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError) as err:
            parse_config("m=four\n")
        assert "line 1" in str(err.value)

    def test_lambda_gamma_keys(self):
        cfg = parse_config("lambda=0.5\ngamma=3\n")
        assert cfg.edge_scale == 0.5
        assert cfg.focal_gamma == 3.0


class TestRun:
    def test_sweep_noiseless_accuracy(self, tmp_path):
        cfg = parse_config(SMALL_SWEEP)
        cfg.out_dir = str(tmp_path)
        report = run(cfg)
        assert len(report.rows) == 2
        for row in report.rows:
            assert row.accuracy == 1.0
            assert row.cycle_violations == 0

    def test_oracle_compare_ratio_bounded(self, tmp_path):
        cfg = parse_config(SMALL_ORACLE)
        cfg.out_dir = str(tmp_path)
        report = run(cfg)
        assert len(report.rows) == 3
        for row in report.rows:
            assert row.objective_ratio <= 1.0 + 1e-9

    def test_oracle_compare_size_guard(self):
        cfg = parse_config(SMALL_ORACLE)
        cfg.n = 6
        cfg.d = 8
        with pytest.raises(ValueError):
            run(cfg)

    def test_unknown_mode(self):
        cfg = parse_config("")
        cfg.mode = "mystery"
        with pytest.raises(ValueError):
            run(cfg)

    def test_fit_then_tta_roundtrip(self, tmp_path):
        fit_cfg = parse_config(
            "mode=fit-universe\nm=3\nn=4\nh=4\nclasses=1\nd=8\nseeds=0\nfit_steps=40\n"
        )
        fit_cfg.out_dir = str(tmp_path / "fit")
        run(fit_cfg)
        assert (tmp_path / "fit" / "universe_seed0.mat").exists()
        assert (tmp_path / "fit" / "loss_seed0.csv").exists()
        tta_cfg = parse_config(
            "mode=tta\nm=3\nn=4\nh=4\nclasses=1\nd=8\nseeds=0\nmiter=10\nadapt_steps=0\n"
            f"embedding={tmp_path / 'fit' / 'universe_seed0.mat'}\n"
        )
        tta_cfg.out_dir = str(tmp_path / "tta")
        report = run(tta_cfg)
        assert len(report.rows) == 1
        solve_report = json.loads((tmp_path / "tta" / "solve_seed0.json").read_text())
        assert set(solve_report) == {
            "seed", "iterations", "converged", "objective_init",
            "objective_final", "accuracy", "loss_trace",
        }
        assert solve_report["seed"] == 0
        assert solve_report["accuracy"] == report.rows[0].accuracy

    def test_tta_missing_embedding(self, tmp_path):
        cfg = parse_config("mode=tta\nembedding=/nonexistent/u.mat\n")
        cfg.out_dir = str(tmp_path)
        with pytest.raises(ValueError):
            run(cfg)

    def test_byte_identical_reruns(self, tmp_path):
        cfg = parse_config(SMALL_SWEEP)
        cfg.reproducible = True
        outputs = []
        for name in ("a", "b"):
            out = tmp_path / name
            cfg.out_dir = str(out)
            report = run(cfg)
            write_report(report, out, cfg)
            outputs.append((out / "results.csv").read_bytes())
        assert outputs[0] == outputs[1]

    def test_worker_pool_matches_sequential(self, tmp_path, monkeypatch):
        cfg = parse_config(SMALL_SWEEP)
        cfg.reproducible = True
        outputs = []
        for name, workers in (("seq", "1"), ("pool", "2")):
            monkeypatch.setenv("GRAPHSYNC_WORKERS", workers)
            out = tmp_path / name
            cfg.out_dir = str(out)
            report = run(cfg)
            write_report(report, out, cfg)
            outputs.append((out / "results.csv").read_bytes())
        assert outputs[0] == outputs[1]


class TestWriteReport:
    def test_empty_report_header_only(self, tmp_path):
        write_report(RunReport.from_rows([]), tmp_path)
        lines = (tmp_path / "results.csv").read_text().splitlines()
        assert lines == [
            "seed,noise_sigma,accuracy,objective_ratio,cycle_violations,iterations,wall_time_s"
        ]

    def test_two_rows_three_lines(self, tmp_path):
        rows = [
            RunRow(1, 0.0, 1.0, 1.0, 0, 5, 0.0),
            RunRow(0, 0.1, 0.5, 0.9, 0, 7, 0.0),
        ]
        write_report(RunReport.from_rows(rows), tmp_path)
        lines = (tmp_path / "results.csv").read_text().splitlines()
        assert len(lines) == 3
        # rows come back sorted by (seed, noise)
        assert lines[1].startswith("0,")
        assert lines[2].startswith("1,")

    def test_aggregates_match_recomputation(self):
        rng = np.random.default_rng(0)
        rows = [
            RunRow(i, 0.0, float(rng.random()), float(rng.random()), 0, int(rng.integers(1, 9)), 0.0)
            for i in range(7)
        ]
        report = RunReport.from_rows(rows)
        accuracies = np.array([r.accuracy for r in report.rows])
        mean, std = report.aggregate["accuracy"]
        assert abs(mean - accuracies.mean()) < 1e-12
        assert abs(std - accuracies.std()) < 1e-12

    def test_config_echo(self, tmp_path):
        cfg = ExperimentConfig(mode="sweep")
        write_report(RunReport.from_rows([]), tmp_path, cfg)
        text = (tmp_path / "config.resolved").read_text()
        assert "lambda=1" in text
        assert "tau=0.05" in text
        assert "reproducible" not in text


class TestMainExitCodes:
    def test_success(self, tmp_path, capsys):
        config = tmp_path / "cfg"
        config.write_text(SMALL_SWEEP)
        code = main(["sweep", "--config", str(config), "--out", str(tmp_path / "out"), "--reproducible"])
        assert code == 0
        assert (tmp_path / "out" / "results.csv").exists()
        assert (tmp_path / "out" / "summary.txt").exists()
        assert (tmp_path / "out" / "config.resolved").exists()

    def test_config_error_is_exit_1(self, tmp_path, capsys):
        config = tmp_path / "cfg"
        config.write_text("tau=-2\n")
        assert main(["sweep", "--config", str(config)]) == 1

    def test_missing_config_file_is_exit_1(self, tmp_path):
        assert main(["sweep", "--config", str(tmp_path / "missing")]) == 1

    def test_runtime_error_is_exit_2(self, tmp_path, capsys):
        config = tmp_path / "cfg"
        config.write_text("mode=tta\nembedding=/nonexistent/u.mat\n")
        assert main(["tta", "--config", str(config), "--out", str(tmp_path / "out")]) == 2

    def test_seed_override(self, tmp_path):
        config = tmp_path / "cfg"
        config.write_text(SMALL_SWEEP)
        out = tmp_path / "out"
        code = main([
            "sweep", "--config", str(config), "--seed", "7", "--out", str(out), "--reproducible",
        ])
        assert code == 0
        lines = (out / "results.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("7,")
