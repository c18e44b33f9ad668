import json

import numpy as np
import pytest

from fairtensor.cli import main
from fairtensor.errors import ConfigurationError
from fairtensor.experiment import (
    ExperimentConfig,
    Setting,
    build_grid,
    default_config_text,
    load_config,
)
from fairtensor.sparse import load_sensitive, load_tensor

FAST_CONFIG = """\
[synthetic]
dims = 10 6 4
rank = 2
majority_entities = 5
minority_entities = 5
majority_density = 0.6
minority_density = 0.3
noise_std = 0.0

[model]
rank = 3
init_scale = 0.3

[train]
batch_size = 128
learning_rate = 0.05
max_epochs = 3
patience = 3
pretrain_epochs = 2

[experiment]
objectives = plain staff
seeds = 0 1
lambda_f = 0.001 0.1
gammas = 0.5
ks = 2
n_own = 3
n_borrowed = 3
workers = 1
output_dir = {out}
"""


def write_config(tmp_path, name="exp.ini", **fmt):
    fmt.setdefault("out", str(tmp_path / "results"))
    path = tmp_path / name
    path.write_text(FAST_CONFIG.format(**fmt))
    return path


class TestConfigParsing:
    def test_print_defaults_round_trips(self, tmp_path, capsys):
        assert main(["--print-defaults"]) == 0
        text = capsys.readouterr().out
        path = tmp_path / "defaults.ini"
        path.write_text(text)
        assert load_config(path) == ExperimentConfig()

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[tuning]\nalpha = 1\n")
        with pytest.raises(ConfigurationError, match="tuning"):
            load_config(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\nlambdas = 1\n")
        with pytest.raises(ConfigurationError, match="lambdas"):
            load_config(path)

    def test_bad_value_names_the_key(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[model]\nrank = three\n")
        with pytest.raises(ConfigurationError, match="model.rank"):
            load_config(path)

    def test_bad_objective_rejected(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\nobjectives = fancy\n")
        with pytest.raises(ConfigurationError, match="fancy"):
            load_config(path)

    def test_keep_rate_bounds(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\nkeep_rates = 0.5 1.5\n")
        with pytest.raises(ConfigurationError, match="keep_rate"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="cannot read"):
            load_config(tmp_path / "absent.ini")

    def test_files_source_needs_paths(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[data]\nsource = files\n")
        with pytest.raises(ConfigurationError, match="entries"):
            load_config(path)


class TestGrid:
    def test_order_and_counts(self):
        cfg = ExperimentConfig(
            objectives=("plain", "made_penalty", "staff"),
            keep_rates=(1.0, 0.5),
            lambda_f=(0.1, 1.0),
            gammas=(0.5,),
            ks=(3, 5),
        )
        grid = build_grid(cfg)
        # plain: 2 keep rates; penalty: 2 x 2 lambdas; staff: 2 x 2 x 1 x 2
        assert len(grid) == 2 + 4 + 8
        assert grid[0] == Setting("plain", 1.0, None, None, None)
        assert grid[1] == Setting("plain", 0.5, None, None, None)
        assert grid[2] == Setting("made_penalty", 1.0, 0.1, None, None)
        assert grid[6] == Setting("staff", 1.0, 0.1, 0.5, 3)
        assert grid[7] == Setting("staff", 1.0, 0.1, 0.5, 5)


class TestRunCommand:
    def test_run_writes_expected_rows(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "results"
        assert main(["run", str(config)]) == 0
        lines = (out / "results.csv").read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header[:10] == ["model", "objective", "keep_rate",
                               "lambda_f", "gamma", "k", "seed", "mse",
                               "made", "madr"]
        assert header[10:] == ["mae_group0", "mae_group1"]
        # (1 plain + 2 staff settings) x 2 seeds
        assert len(lines) == 1 + 6
        plain = [l for l in lines[1:] if l.split(",")[1] == "plain"]
        staff = [l for l in lines[1:] if l.split(",")[1] == "staff"]
        assert (len(plain), len(staff)) == (2, 4)
        for line in lines[1:]:
            cells = line.split(",")
            assert cells[0] == "cp"
            assert cells[6] in ("0", "1")
            assert np.isfinite(float(cells[7]))

        summary = json.loads((out / "summary.json").read_text())
        assert len(summary) == 3
        assert all(entry["n_seeds"] == 2 for entry in summary)
        assert {"mse_mean", "mse_std", "made_mean"} <= set(summary[0])

    def test_rerun_is_byte_identical(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "results"
        assert main(["run", str(config)]) == 0
        first = (out / "results.csv").read_bytes()
        assert main(["run", str(config)]) == 0
        assert (out / "results.csv").read_bytes() == first

    def test_parallel_matches_serial(self, tmp_path):
        config = write_config(tmp_path)
        serial = tmp_path / "serial"
        parallel = tmp_path / "parallel"
        assert main(["run", str(config), "--out", str(serial)]) == 0
        assert main(["run", str(config), "--out", str(parallel),
                     "--workers", "3"]) == 0
        assert (serial / "results.csv").read_bytes() == \
            (parallel / "results.csv").read_bytes()

    def test_seed_override(self, tmp_path):
        config = write_config(tmp_path)
        out = tmp_path / "results"
        assert main(["run", str(config), "--seed", "7"]) == 0
        lines = (out / "results.csv").read_text().strip().split("\n")
        assert len(lines) == 1 + 3
        assert all(l.split(",")[6] == "7" for l in lines[1:])

    def test_invalid_config_exits_nonzero(self, tmp_path, capsys):
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\nobjectives = fancy\n")
        assert main(["run", str(path)]) == 1
        assert "error:" in capsys.readouterr().err


class TestReportCommand:
    def test_report_after_run(self, tmp_path, capsys):
        config = write_config(tmp_path)
        out = tmp_path / "results"
        assert main(["run", str(config)]) == 0
        capsys.readouterr()
        assert main(["report", str(out)]) == 0
        shown = capsys.readouterr().out
        assert "plain" in shown and "staff" in shown

        lines = (out / "tradeoff.csv").read_text().strip().split("\n")
        header = lines[0].split(",")
        assert header == ["model", "keep_rate", "objective", "lambda_f",
                          "gamma", "k", "mse", "made", "mse_x100",
                          "made_x100", "pareto"]
        body = [l.split(",") for l in lines[1:]]
        assert {row[2] for row in body} == {"plain", "staff"}
        assert all(row[-1] in ("optimal", "dominated") for row in body)
        for row in body:
            assert float(row[8]) == pytest.approx(float(row[6]) * 100)

    def test_report_missing_dir(self, tmp_path, capsys):
        assert main(["report", str(tmp_path / "nothing")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_report_empty_results(self, tmp_path, capsys):
        out = tmp_path / "empty"
        out.mkdir()
        (out / "results.csv").write_text("model,objective\n")
        assert main(["report", str(out)]) == 1
        assert "no result rows" in capsys.readouterr().err


class TestGenSynthCommand:
    def test_writes_loadable_dataset(self, tmp_path, capsys):
        config = write_config(tmp_path)
        out = tmp_path / "data"
        assert main(["gen-synth", str(config), str(out)]) == 0
        assert "wrote" in capsys.readouterr().out
        tensor = load_tensor(out / "entries.txt", dims=(10, 6, 4))
        # ceil(0.6 * 5 * 24) + ceil(0.3 * 5 * 24)
        assert tensor.nnz == 72 + 36
        ctx = load_sensitive(out / "groups.txt", 10)
        assert ctx.num_groups == 2
        assert int((ctx.group_of == 0).sum()) == 5


class TestMainEntry:
    def test_no_command_shows_help(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().out

    def test_missing_config_is_an_error(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "none.ini")]) == 1
        assert "error:" in capsys.readouterr().err
