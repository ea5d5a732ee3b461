import orjson
import pytest
from click.testing import CliRunner

from blackbox_comm.cli.main import cli
from blackbox_comm.cli.results import COLUMNS, read_results
from blackbox_comm.services.prob_core import binary_entropy

RD = {"kind": "rd", "source": "bern03", "distortion": "hamming", "D_grid": [0.0, 0.1, 0.2, 0.3]}
SOURCE = {"kind": "source", "source": "uniform", "distortion": "hamming", "D": 0.2, "rate_margin": 0.1,
          "n_list": [20], "trials": 100}


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def write_config(tmp_path, make_config):
    def _write(experiment, name="config.json", **overrides):
        path = tmp_path / name
        path.write_bytes(orjson.dumps(make_config(experiment, **overrides)))
        return str(path)

    return _write


def run(runner, tmp_path, *args, out="out"):
    return runner.invoke(cli, ["--out-dir", str(tmp_path / out), "--quiet", "--no-plot", *args])


def test_validate_is_silent_on_success(runner, write_config):
    result = runner.invoke(cli, ["validate", write_config(RD)])
    assert result.exit_code == 0
    assert result.output == ""


def test_validate_reports_schema_errors(runner, write_config):
    result = runner.invoke(cli, ["validate", write_config({**RD, "source": "nope"})])
    assert result.exit_code == 2
    assert "undeclared distribution 'nope'" in result.output


def test_rd_run_writes_the_fixed_columns(runner, tmp_path, write_config):
    result = run(runner, tmp_path, "rd", write_config(RD))
    assert result.exit_code == 0, result.output

    csv_path = tmp_path / "out" / "rd.csv"
    assert csv_path.read_text().splitlines()[0] == ",".join(COLUMNS)
    frame = read_results(csv_path)
    assert frame["cell"].tolist() == ["D=0", "D=0.1", "D=0.2", "D=0.3"]
    expected = [binary_entropy(0.3) - binary_entropy(D) for D in (0.0, 0.1, 0.2)] + [0.0]
    assert frame["estimate"].tolist() == pytest.approx(expected, abs=2e-3)
    assert (frame["wall_time"].isna()).all()
    assert "slope" in frame["extra"][1]


def test_config_output_name_is_relative_to_out_dir(runner, tmp_path, write_config):
    result = run(runner, tmp_path, "run", write_config(RD, output="curves/bern.csv"))
    assert result.exit_code == 0, result.output
    assert (tmp_path / "out" / "curves" / "bern.csv").exists()


def test_runs_are_byte_identical(runner, tmp_path, write_config):
    path = write_config(SOURCE)
    assert run(runner, tmp_path, "source", path, out="a").exit_code == 0
    assert run(runner, tmp_path, "source", path, out="b").exit_code == 0
    assert run(runner, tmp_path, "--seed", "99", "source", path, out="c").exit_code == 0
    first = (tmp_path / "a" / "source.csv").read_bytes()
    assert first == (tmp_path / "b" / "source.csv").read_bytes()
    assert first != (tmp_path / "c" / "source.csv").read_bytes()


def test_workers_do_not_change_results(runner, tmp_path, write_config):
    path = write_config(SOURCE)
    assert run(runner, tmp_path, "--workers", "1", "source", path, out="serial").exit_code == 0
    assert run(runner, tmp_path, "--workers", "2", "source", path, out="parallel").exit_code == 0
    assert (tmp_path / "serial" / "source.csv").read_bytes() == (tmp_path / "parallel" / "source.csv").read_bytes()


def test_timing_fills_wall_time(runner, tmp_path, write_config):
    assert run(runner, tmp_path, "--timing", "rd", write_config(RD)).exit_code == 0
    frame = read_results(tmp_path / "out" / "rd.csv")
    assert frame["wall_time"].notna().all()


def test_subcommand_must_match_the_config_kind(runner, tmp_path, write_config):
    result = run(runner, tmp_path, "exponent", write_config(RD))
    assert result.exit_code == 2
    assert "experiment.kind" in result.output


def test_infeasible_distortion_exits_with_3(runner, tmp_path, write_config, make_config):
    config = make_config({**RD, "distortion": "offset", "D_grid": [0.1]})
    config["distortions"]["offset"] = {"input": "bit", "output": "bit", "matrix": [[0.5, 1.0], [1.0, 0.5]]}
    path = tmp_path / "offset.json"
    path.write_bytes(orjson.dumps(config))
    result = run(runner, tmp_path, "rd", str(path))
    assert result.exit_code == 3
    assert "InfeasibleDistortionError" in result.output


def test_oversized_explicit_codebook_exits_with_4(runner, tmp_path, write_config):
    path = write_config({**SOURCE, "n_list": [200], "realization": "explicit"})
    result = run(runner, tmp_path, "source", path)
    assert result.exit_code == 4


def test_missing_config_exits_with_2(runner, tmp_path):
    assert run(runner, tmp_path, "run", str(tmp_path / "absent.json")).exit_code == 2


def test_capacity_and_exponent_rows(runner, tmp_path, write_config):
    assert run(runner, tmp_path, "capacity", write_config({"kind": "capacity", "channels": ["bsc02", "bsc3"]})).exit_code == 0
    capacity = read_results(tmp_path / "out" / "capacity.csv")
    assert capacity["member"].tolist() == ["bsc02", "bsc3"]
    assert capacity["estimate"].tolist() == pytest.approx([1 - binary_entropy(0.02), 1 - binary_entropy(0.3)],
                                                          abs=1e-4)

    exponent = {"kind": "exponent", "source": "uniform", "distortion": "hamming", "D": 0.1, "eps_grid": [0.0, 0.1]}
    assert run(runner, tmp_path, "exponent", write_config(exponent)).exit_code == 0
    frame = read_results(tmp_path / "out" / "exponent.csv")
    assert frame["cell"].tolist() == ["eps=0", "eps=0.1"]
    assert frame["estimate"][0] >= frame["estimate"][1] - 1e-4
    assert frame["extra"][0]["mutual_information_bound"] <= frame["estimate"][0] + 1e-4


def test_capacity_of_a_channel_with_memory_is_rejected(runner, tmp_path, write_config, make_config):
    config = make_config({"kind": "capacity", "channels": ["switch"]})
    config["channels"]["switch"] = {"type": "adversarial_switch", "input": "bit", "output": "bit",
                                    "kernels": [[[0.9, 0.1], [0.1, 0.9]]], "period": 4}
    path = tmp_path / "switch.json"
    path.write_bytes(orjson.dumps(config))
    assert run(runner, tmp_path, "capacity", str(path)).exit_code == 3


def test_plots_are_written_next_to_the_csv(runner, tmp_path, write_config):
    result = runner.invoke(cli, ["--out-dir", str(tmp_path / "out"), "--quiet", "--plot-format", "svg", "rd",
                                 write_config(RD)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "out" / "rd_curve.svg").exists()


def test_plot_command_redraws_from_a_csv(runner, tmp_path, write_config):
    assert run(runner, tmp_path, "source", write_config(SOURCE)).exit_code == 0
    result = runner.invoke(cli, ["--out-dir", str(tmp_path / "plots"), "plot", str(tmp_path / "out" / "source.csv")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "plots" / "error_vs_n.png").exists()


def test_too_few_estimator_trials_exit_with_2(runner, tmp_path, write_config):
    result = run(runner, tmp_path, "source", write_config({**SOURCE, "trials": 50}))
    assert result.exit_code == 2
    assert "at least 100 trials" in result.output
