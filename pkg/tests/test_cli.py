import json

import numpy as np
import pytest

from stocond import cli
from stocond.errors import ConfigError
from stocond.reporting import fit_slope, report_convergence


class TestConfigParsing:
    def test_flat_key_value(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("benchmark = lq_unconstrained\n"
                       "suite = cones\n"
                       "paths = 500   # comment\n"
                       "seed = 3\n")
        parsed = cli.parse_config_file(str(cfg))
        assert parsed == {"benchmark": "lq_unconstrained", "suite": "cones",
                          "paths": "500", "seed": "3"}

    def test_malformed_line_raises(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("paths 500\n")
        with pytest.raises(ConfigError):
            cli.parse_config_file(str(cfg))

    def test_unknown_benchmark_rejected(self):
        sc = cli.Scenario(benchmark="not_a_benchmark")
        with pytest.raises(ConfigError):
            sc.validate()

    def test_unknown_suite_rejected(self):
        sc = cli.Scenario(suite="nope")
        with pytest.raises(ConfigError):
            sc.validate()


class TestExitCodes:
    def test_unknown_benchmark_exit_1(self, tmp_path, capsys):
        code = cli.main(["run", "no_such_benchmark", "--suite", "cones",
                         "--out", str(tmp_path)])
        assert code == 1
        assert "configuration error" in capsys.readouterr().err

    def test_cones_suite_exit_0(self, tmp_path, capsys):
        code = cli.main(["run", "lq_unconstrained", "--suite", "cones",
                         "--seed", "5", "--out", str(tmp_path / "a")])
        assert code == 0
        report = json.loads((tmp_path / "a" / "report.json").read_text())
        assert report["schema_version"] == 1
        assert report["failures"] == 0
        assert all(c["verdict"] == "pass" for c in report["checks"])

    def test_perturbed_first_order_exit_2(self, tmp_path):
        code = cli.main(["run", "lq_unconstrained", "--suite", "first-order",
                         "--paths", "3000", "--steps", "48", "--seed", "0",
                         "--perturb", "0.2", "--out", str(tmp_path / "b")])
        assert code == 2
        report = json.loads((tmp_path / "b" / "report.json").read_text())
        assert report["failures"] >= 1

    def test_reports_reproducible(self, tmp_path):
        for sub in ("r1", "r2"):
            code = cli.main(["run", "lq_unconstrained", "--suite", "cones",
                             "--seed", "11", "--out", str(tmp_path / sub)])
            assert code == 0
        b1 = (tmp_path / "r1" / "report.json").read_bytes()
        b2 = (tmp_path / "r2" / "report.json").read_bytes()
        assert b1 == b2


class TestConvergenceReport:
    def test_exact_slope_one(self, tmp_path):
        xs = np.array([0.1, 0.05, 0.025, 0.0125])
        ys = 3.0 * xs
        out = report_convergence(xs, ys, csv_path=str(tmp_path / "c.csv"))
        assert out["slope"] == pytest.approx(1.0, abs=1e-12)
        assert out["half_width"] <= 1e-10
        lines = (tmp_path / "c.csv").read_text().strip().splitlines()
        assert lines[0] == "dt,error"
        assert len(lines) == 5

    def test_degenerate_all_zero_flagged(self):
        out = report_convergence([0.1, 0.05, 0.025], [0.0, 0.0, 0.0])
        assert out["degenerate"] is True
        assert out["slope"] is None

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            fit_slope([0.1, 0.05], [1.0, 0.5])


class TestToleranceOverrides:
    def test_config_tolerance_keys_parsed(self, tmp_path):
        cfg = tmp_path / "t.cfg"
        cfg.write_text("suite = cones\ntol.cone_decomposition = 1e-6\n")
        import argparse
        args = argparse.Namespace(config=str(cfg), benchmark=None, suite=None,
                                  paths=None, steps=None, seed=None, out=None,
                                  perturb=None)
        sc = cli.scenario_from(args)
        assert sc.tolerances == {"cone_decomposition": 1e-6}
