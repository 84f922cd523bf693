"""Config parsing, sweep CSV contract, manifests, trace dumps, CLI."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from diffcv import ConfigError, RunConfig, parse_config, run_sweep, trace_csv
from diffcv.cli import main as cli_main
from diffcv.harness import CSV_HEADER, fmt_float

TINY = """
model.kind = linear_timedep
dt = 1e-3
T = 1.0
n_samples = 300
eps_grid = 0.5, 0.25
seed = 11
control.method = moment_ode
"""


class TestParseConfig:
    def test_empty_document_gives_defaults(self):
        cfg = parse_config("")
        assert cfg.noise_kind == "ou"
        assert cfg.noise_a == 1.0 and cfg.noise_k == 1.0
        assert cfg.dt == 1e-4
        assert cfg.n_samples == 100_000
        assert cfg.horizon == 1.0
        assert cfg.eps_grid == (1.0, 0.75, 0.5, 0.25, 0.1, 0.05, 0.025, 0.01)

    def test_comments_and_quotes(self):
        cfg = parse_config("""
        # a comment
        model.kind = "van_der_pol"   # trailing comment
        model.functional = terminal_indicator_band
        noise.kind = langevin
        noise.mu = 2.0
        """)
        assert cfg.model_kind == "van_der_pol"
        assert cfg.functional == "terminal_indicator_band"
        assert cfg.noise_mu == 2.0

    def test_zero_dt_names_the_key(self):
        with pytest.raises(ConfigError) as err:
            parse_config("dt = 0.0")
        assert any("dt" in v for v in err.value.violations)

    def test_all_violations_reported(self):
        with pytest.raises(ConfigError) as err:
            parse_config("dt = -1\nn_samples = 1\nseed = -3\neps_grid = 0.1, 0.2")
        joined = "\n".join(err.value.violations)
        for key in ("dt", "n_samples", "seed", "eps_grid"):
            assert key in joined
        assert len(err.value.violations) >= 4

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as err:
            parse_config("modle.kind = friction")
        assert "unknown key" in err.value.violations[0]

    def test_parse_error_carries_line(self):
        with pytest.raises(ConfigError) as err:
            parse_config("dt 1e-4")
        assert "line 1" in err.value.violations[0]

    def test_functional_compatibility(self):
        with pytest.raises(ConfigError):
            parse_config("model.kind = friction\nmodel.functional = terminal_value")

    def test_psd_components(self):
        cfg = parse_config("noise.kind = psd\nnoise.components = 1:1:0, 2:3:0.5")
        assert cfg.components == ((1.0, 1.0, 0.0), (2.0, 3.0, 0.5))
        model = cfg.build_noise()
        assert model.d == 3 and model.d_prime == 3

    def test_vdp_indicator_selects_figure_experiment(self):
        cfg = parse_config("model.kind = van_der_pol\n"
                           "model.functional = terminal_indicator_band")
        system = cfg.build_system()
        assert system.kind == "van_der_pol"
        assert system.functional.kind == "terminal_indicator_band"
        assert system.functional.band == 1.0

    def test_horizon_multiple_of_dt(self):
        with pytest.raises(ConfigError):
            parse_config("dt = 3e-4\nT = 1.0")


class TestFloatFormat:
    def test_round_trip(self):
        for x in (0.5, 0.7978845608028654, 1e-12, 123456.789, 3.0):
            assert float(fmt_float(x)) == x
        rng = np.random.default_rng(0)
        for x in rng.standard_normal(200) * 10.0 ** rng.integers(-8, 8, 200):
            assert float(fmt_float(float(x))) == float(x)


class TestRunSweep:
    def test_csv_shape_and_reproducibility(self):
        cfg = parse_config(TINY)
        csv1, man1 = run_sweep(cfg)
        csv2, man2 = run_sweep(cfg)
        assert csv1 == csv2
        lines = [l for l in csv1.strip().splitlines() if not l.startswith("#")]
        assert lines[0] == CSV_HEADER
        assert len(lines) == 3
        first = lines[1].split(",")
        assert len(first) == 6
        assert float(first[0]) == 0.5
        # column consistency: nvar_over_eps2 = nvar_over_eps / eps
        eps, noe, noe2 = (float(first[i]) for i in range(3))
        assert noe2 == pytest.approx(noe / eps, rel=1e-12)
        assert man1.row_stream_roots == [11, 11 + 2**32]
        assert man1.version

    def test_worker_counts_byte_identical(self):
        cfg = parse_config(TINY)
        csv1, _ = run_sweep(cfg, workers=1)
        csv2, _ = run_sweep(cfg, workers=2)
        assert csv1 == csv2

    def test_reflected_efu_column_constant(self):
        cfg = parse_config("""
        model.kind = reflected_integral
        dt = 1e-3
        n_samples = 200
        eps_grid = 0.5, 0.25
        """)
        csv_text, _ = run_sweep(cfg)
        rows = [l for l in csv_text.strip().splitlines()
                if not l.startswith("#") and l != CSV_HEADER]
        efus = {row.split(",")[5] for row in rows}
        assert len(efus) == 1
        assert float(efus.pop()) == pytest.approx(math.sqrt(2 / math.pi), abs=1e-12)

    def test_caution_comment_for_large_dt_ratio(self):
        cfg = parse_config("""
        dt = 1e-3
        n_samples = 120
        eps_grid = 0.5, 0.02
        control.method = moment_ode
        """)
        import warnings as _w
        with _w.catch_warnings():
            _w.simplefilter("ignore")
            csv_text, manifest = run_sweep(cfg)
        lines = csv_text.strip().splitlines()
        warn_idx = [i for i, l in enumerate(lines) if l.startswith("# warning:")]
        assert len(warn_idx) == 1
        assert lines[warn_idx[0] + 1].startswith("2.e-02")
        assert manifest.warnings


class TestTrace:
    def test_trace_columns_and_meta(self):
        cfg = parse_config("model.kind = elasto_plastic\ndt = 1e-2\nn_samples = 10")
        text = trace_csv(cfg, eps=0.5)
        lines = text.strip().splitlines()
        assert lines[0].startswith("# model = elasto_plastic")
        header = lines[2].split(",")
        assert header == ["t_x", "eta_0", "x_0", "z_0", "u_0", "u_1"]
        assert len(lines) == 3 + 101
        z = np.array([float(l.split(",")[3]) for l in lines[3:]])
        assert np.max(np.abs(z)) <= 0.25

    def test_impact_trace_has_both_clocks(self):
        cfg = parse_config("model.kind = impact\ndt = 1e-2\nn_samples = 10")
        text = trace_csv(cfg, eps=0.3)
        header = text.strip().splitlines()[2].split(",")
        assert header[:2] == ["t_x", "t_u"]


class TestCli:
    def test_sweep_and_exit_codes(self, tmp_path: Path, capsys):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(TINY + f"output = {tmp_path / 'out.csv'}\n")
        assert cli_main(["sweep", str(cfg_path)]) == 0
        out_csv = (tmp_path / "out.csv").read_text()
        assert out_csv.startswith(CSV_HEADER)
        manifest = json.loads((tmp_path / "out.csv.manifest.json").read_text())
        assert manifest["config"]["n_samples"] == 300

    def test_config_error_exit_code(self, tmp_path: Path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("dt = 0\n")
        with pytest.raises(SystemExit) as exc:
            cli_main(["sweep", str(bad)])
        assert exc.value.code == 2

    def test_missing_config_file(self):
        with pytest.raises(SystemExit) as exc:
            cli_main(["pde", "/nonexistent/path.cfg"])
        assert exc.value.code == 2

    def test_simulate_writes_trace(self, tmp_path: Path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("model.kind = friction\ndt = 1e-2\nn_samples = 10\n")
        trace_path = tmp_path / "trace.csv"
        assert cli_main(["simulate", str(cfg_path), "--eps", "0.5",
                         "--trace", str(trace_path)]) == 0
        assert trace_path.read_text().startswith("# model = friction")

    def test_pde_prints_value(self, tmp_path: Path, capsys):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text("model.kind = reflected_integral\ndt = 1e-2\n"
                            "n_samples = 10\n")
        assert cli_main(["pde", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "closed_form" in out
        assert "0.7978845608028654" in out
