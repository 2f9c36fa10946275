import csv

import numpy as np
import pytest
import yaml

from hinfplatoon.core.artifacts import ControllerArtifact, save_artifact
from hinfplatoon.core.config import RunConfig
from hinfplatoon.core.errors import (
    ArtifactError,
    ConfigError,
    GainError,
    PlatoonError,
    SimulationBlowUpError,
    SolverError,
    StructurallyInfeasibleError,
)
from hinfplatoon.core.learner import AttenuationLevel, Controller, ValueFunction, value_basis
from hinfplatoon.hinfplatoon import (
    EXIT_BLOW_UP,
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_OK,
    EXIT_SOLVER,
    artifact_filename,
    exit_code_for,
    main,
)


SHORT_RUN = {"sim": {"horizon": 2.0}}


def write_config(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data), encoding="utf-8")
    return path


def hand_built_artifact(config_path, directory, gains, name="controller_iter_01.json"):
    model = RunConfig.from_file(config_path).model()
    basis = value_basis(6, 2, 2)
    V = ValueFunction(tuple(basis), np.ones(len(basis)))
    level = AttenuationLevel.from_gamma(2.0)
    artifact = ControllerArtifact(1, level, V, Controller.linear(gains), model.fingerprint())
    return save_artifact(artifact, directory / name)


def read_rows(path):
    with path.open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class TestExitCodes:
    @pytest.mark.parametrize(
        "error, code",
        [
            (ConfigError("fleet.n", "bad"), EXIT_CONFIG),
            (ArtifactError("missing"), EXIT_CONFIG),
            (GainError("no energy"), EXIT_CONFIG),
            (SolverError("policy-evaluation"), EXIT_SOLVER),
            (StructurallyInfeasibleError((1, 0), 1.0), EXIT_SOLVER),
            (SimulationBlowUpError(1.0, 1e4), EXIT_BLOW_UP),
            (PlatoonError("other"), EXIT_FAILURE),
        ],
    )
    def test_mapping(self, error, code):
        assert exit_code_for(error) == code

    def test_artifact_filename(self):
        assert artifact_filename(3) == "controller_iter_03.json"

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        assert "hinfplatoon" in capsys.readouterr().out


class TestConfigErrors:
    def test_unknown_key(self, tmp_path):
        path = write_config(tmp_path, {"fleet": {"bogus": 1}})
        assert main(["learn", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG
        assert not (tmp_path / "out").exists()

    def test_missing_config(self, tmp_path):
        assert main(["learn", "--config", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("sim: [1, 2\n", encoding="utf-8")
        assert main(["simulate", "--all-hdv", "--config", str(path)]) == EXIT_CONFIG

    def test_missing_artifact(self, tmp_path):
        path = write_config(tmp_path, SHORT_RUN)
        argv = ["simulate", "--config", str(path), "--out", str(tmp_path / "out")]
        assert main(argv + ["--artifact", str(tmp_path / "missing.json")]) == EXIT_CONFIG

    def test_nothing_to_simulate(self, tmp_path):
        path = write_config(tmp_path, SHORT_RUN)
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG

    def test_foreign_artifact(self, tmp_path):
        path = write_config(tmp_path, SHORT_RUN)
        other = write_config(tmp_path, {"fleet": {"fit_degree": 3}}, name="other.yaml")
        artifact = hand_built_artifact(other, tmp_path, [[0.5, -1.0, 0, 0, 0, 0]])
        argv = ["evaluate", "--config", str(path), "--out", str(tmp_path / "out")]
        assert main(argv + ["--artifact", str(artifact)]) == EXIT_CONFIG

    def test_report_without_outputs(self, tmp_path):
        assert main(["report", "--out", str(tmp_path / "empty")]) == EXIT_CONFIG


class TestSimulate:
    def test_all_hdv(self, tmp_path):
        path = write_config(tmp_path, SHORT_RUN)
        out = tmp_path / "out"
        assert main(["simulate", "--all-hdv", "--config", str(path), "--out", str(out)]) == EXIT_OK
        assert (out / "config.resolved.yaml").is_file()
        assert (out / "trace_all_hdv.csv").is_file()
        assert (out / "trace_all_hdv.svg").is_file()
        summary = yaml.safe_load((out / "simulate_summary.yaml").read_text(encoding="utf-8"))
        assert summary["all_hdv"]["certified_gamma"] is None
        assert summary["all_hdv"]["empirical_gamma"] > 0

    def test_echo_reloads_to_same_config(self, tmp_path):
        path = write_config(tmp_path, SHORT_RUN)
        out = tmp_path / "out"
        main(["simulate", "--all-hdv", "--config", str(path), "--out", str(out)])
        echo = RunConfig.from_file(out / "config.resolved.yaml")
        expected = RunConfig.from_file(path)
        expected.override("output.directory", str(out))
        assert echo == expected

    def test_without_plots(self, tmp_path):
        path = write_config(tmp_path, {"sim": {"horizon": 2.0}, "output": {"plots": False}})
        out = tmp_path / "out"
        assert main(["simulate", "--all-hdv", "--config", str(path), "--out", str(out)]) == EXIT_OK
        assert (out / "trace_all_hdv.csv").is_file()
        assert not (out / "trace_all_hdv.svg").exists()

    def test_svg_is_reproducible(self, tmp_path):
        path = write_config(tmp_path, SHORT_RUN)
        for name in ("a", "b"):
            main(["simulate", "--all-hdv", "--config", str(path), "--out", str(tmp_path / name)])
        first = (tmp_path / "a" / "trace_all_hdv.svg").read_bytes()
        assert first == (tmp_path / "b" / "trace_all_hdv.svg").read_bytes()

    def test_blow_up(self, tmp_path):
        path = write_config(
            tmp_path, {"sim": {"horizon": 30.0, "initial_state": [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]}}
        )
        artifact = hand_built_artifact(path, tmp_path, [[0.0, 10.0, 0, 0, 0, 0]])
        out = tmp_path / "out"
        argv = ["simulate", "--config", str(path), "--out", str(out), "--artifact", str(artifact)]
        assert main(argv) == EXIT_BLOW_UP
        # the partial trace is kept for inspection
        assert (out / "trace_controller_iter_01.csv").is_file()

    def test_report_redraws_figures(self, tmp_path):
        path = write_config(tmp_path, SHORT_RUN)
        out = tmp_path / "out"
        main(["simulate", "--all-hdv", "--config", str(path), "--out", str(out)])
        (out / "trace_all_hdv.svg").unlink()
        assert main(["report", "--config", str(path), "--out", str(out)]) == EXIT_OK
        assert (out / "trace_all_hdv.svg").is_file()


class TestEvaluate:
    def test_duplicate_artifacts_give_identical_rows(self, tmp_path):
        path = write_config(tmp_path, SHORT_RUN)
        artifact = hand_built_artifact(path, tmp_path, [[0.5, -1.0, 0, 0, 0, 0]])
        out = tmp_path / "out"
        argv = ["evaluate", "--config", str(path), "--out", str(out)]
        assert main(argv + ["--artifact", str(artifact), "--artifact", str(artifact)]) == EXIT_OK
        first, second = read_rows(out / "gains.csv")
        assert first == second
        assert first["artifact"] == "controller_iter_01.json"
        assert float(first["certified_gamma"]) == pytest.approx(2.0)
        assert float(first["empirical_gamma_exact"]) > 0
        gains = yaml.safe_load((out / "gains.yaml").read_text(encoding="utf-8"))["gains"]
        assert len(gains) == 2


class TestLearn:
    def test_learn_then_evaluate(self, tmp_path):
        data = {
            "fleet": {"fit_degree": 1},
            "learner": {
                "basis": {"deg_min": 2, "deg_max": 2},
                "schedule": {"outer_max": 2, "inner_max": 2, "tol_outer": 0.0},
            },
            "sim": {"horizon": 5.0},
        }
        path = write_config(tmp_path, data)
        out = tmp_path / "out"
        assert main(["learn", "--config", str(path), "--out", str(out)]) == EXIT_OK
        for name in ("controller_iter_01.json", "controller_iter_02.json", "iteration_log.csv"):
            assert (out / name).is_file()
        series = read_rows(out / "gamma_series.csv")
        assert len(series) == 2
        assert float(series[1]["gamma"]) <= float(series[0]["gamma"]) * (1 + 1e-6)
        assert (out / "gamma_series.svg").is_file()

        log = read_rows(out / "iteration_log.csv")
        assert {row["status"] for row in log} == {"optimal"}
        assert [row["inner"] for row in log if row["outer"] == "1"][0] == "0"
        assert all(row["inaccurate"] in ("true", "false") for row in log)
        assert all(float(row["sdp_gap"]) >= 0.0 for row in log)

        argv = ["evaluate", "--config", str(path), "--out", str(out)]
        assert main(argv + ["--artifact", str(out / "controller_iter_02.json")]) == EXIT_OK
        (row,) = read_rows(out / "gains.csv")
        assert float(row["empirical_gamma_approximated"]) <= float(row["certified_gamma"]) * 1.02
