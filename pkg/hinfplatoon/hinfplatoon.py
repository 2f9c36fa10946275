from __future__ import annotations

import argparse
import json
import time

from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import yaml

from .core.artifacts import ControllerArtifact, load_artifact, save_artifact
from .core.config import RunConfig
from .core.enums import DynamicsMode
from .core.errors import (
    ArtifactError,
    ConfigError,
    FitError,
    GainError,
    PlatoonError,
    ScheduleError,
    SimulationBlowUpError,
    SolverError,
    StructurallyInfeasibleError,
)
from .core.learner import OuterRound, run
from .core.models import configure_logging, getLogger
from .core.report import plot_gamma_series, plot_velocity_profiles, render_directory, write_gain_table
from .core.report import write_gamma_series
from .core.sim import Scenario, SimulationTrace, empirical_gain, peak_deviation, simulate, simulate_many
from .core.types import GainRowPayload
from .core.utils import human_join, plural


info_json = Path(__file__).parent.resolve() / "info.json"
with open(info_json, encoding="utf-8") as f:
    __plugin_info__ = json.loads(f.read())

__plugin_name__ = __plugin_info__["name"]
__version__ = __plugin_info__["version"]
__description__ = "\n".join(__plugin_info__["description"]).format(__version__)


logger = getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_BLOW_UP = 4

CONFIG_ECHO = "config.resolved.yaml"
ITERATION_LOG = "iteration_log.csv"
GAMMA_SERIES = "gamma_series.csv"
ALL_HDV = "all_hdv"


def artifact_filename(outer: int) -> str:
    return f"controller_iter_{outer:02d}.json"


class HinfPlatoon:
    """
    Command surface of the package: learning, simulation, evaluation and reporting.

    Every command resolves the configuration first, writes the resolved echo into the
    output directory, and only then starts its work.
    """

    def __init__(self, config: RunConfig, *, seed: Optional[int] = None):
        self.config: RunConfig = config
        self.seed: Optional[int] = seed
        self.config.validate()
        self.model = config.model()
        self.weights = config.weights()
        self.out: Path = config.output_directory()

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} out='{self.out}' model={self.model.fingerprint()[:12]}>"

    @property
    def plots(self) -> bool:
        return bool(self.config.lookup("output.plots"))

    def prepare(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.config.dump(self.out / CONFIG_ECHO)

    # <!-- learn -->

    def _write_log(self, log) -> None:
        log.to_csv(self.out / ITERATION_LOG)
        if not log.rounds:
            return
        write_gamma_series(log.rounds, log.gammas(), self.out / GAMMA_SERIES)
        if self.plots:
            plot_gamma_series(log.rounds, log.gammas(), (self.out / GAMMA_SERIES).with_suffix(".svg"))

    def cmd_learn(self) -> List[Path]:
        """
        Runs policy iteration and saves one artifact per finished outer round.
        """
        self.prepare()
        saved: List[Path] = []

        def on_round(result: OuterRound) -> None:
            artifact = ControllerArtifact.from_round(self.model, result)
            saved.append(save_artifact(artifact, self.out / artifact_filename(result.index)))

        fleet = self.model.fleet
        logger.info(
            "Learning a controller for %s over %d vehicles (%s).",
            f"{plural(fleet.m):CAV}",
            fleet.n,
            human_join([str(i) for i in fleet.cav_indices]),
        )
        started = time.perf_counter()
        try:
            result = run(
                self.model,
                self.weights,
                self.config.box(),
                self.config.value_basis(),
                self.config.initial_controller(),
                self.config.schedule(),
                on_round=on_round,
            )
        except SolverError as exc:
            if exc.log is not None:
                self._write_log(exc.log)
            raise
        self._write_log(result.log)
        logger.line()
        logger.info(
            "Saved %s in %.1f s. Final gamma %.6g, max gap residual %.1e.",
            f"{plural(len(saved)):artifact}",
            time.perf_counter() - started,
            result.attenuation.gamma,
            result.log.max_gap_residual(),
        )
        return saved

    # <!-- simulate -->

    def _write_trace(self, trace: SimulationTrace, name: str) -> Path:
        path = self.out / f"trace_{name}.csv"
        trace.to_csv(path)
        if self.plots:
            velocities = trace.states[:, 1::2]
            plot_velocity_profiles(
                trace.time,
                velocities,
                trace.disturbance,
                self.model.equilibrium.v_star,
                trace.cav_indices,
                path.with_suffix(".svg"),
                name,
            )
        return path

    def _load(self, path: Path) -> ControllerArtifact:
        return load_artifact(path, self.model)

    def cmd_simulate(self, artifacts: Sequence[Path], *, all_hdv: bool = False) -> List[Path]:
        """
        Simulates each artifact, or the all-HDV baseline, with the configured scenario.
        """
        if not artifacts and not all_hdv:
            raise ArtifactError("Nothing to simulate. Pass `--artifact PATH` or `--all-hdv`.")
        self.prepare()
        runs = [(ALL_HDV, None)] if all_hdv else []
        runs += [(Path(p).stem, self._load(Path(p))) for p in artifacts]

        disturbance = self.config.disturbance()
        cfg = self.config.simulation_config(self.seed)
        dynamics = self.config.dynamics()
        window = float(self.config.lookup("sim.peak_window"))
        written: List[Path] = []
        summary: Dict[str, Dict] = {}
        for name, artifact in runs:
            controller = None if artifact is None else artifact.controller
            try:
                trace = simulate(self.model, controller, disturbance, cfg, dynamics, self.weights)
            except SimulationBlowUpError as exc:
                if exc.trace is not None:
                    self._write_trace(exc.trace, name)
                raise
            written.append(self._write_trace(trace, name))
            try:
                gamma: Optional[float] = empirical_gain(trace).gamma
            except GainError:
                logger.warning("No disturbance energy in `%s`; skipping the empirical gain.", name)
                gamma = None
            summary[name] = {
                "dynamics": dynamics.value,
                "certified_gamma": None if artifact is None else artifact.attenuation.gamma,
                "empirical_gamma": gamma,
                "peak_deviation_last": peak_deviation(trace, trace.n, window),
            }
            shown = "n/a" if gamma is None else f"{gamma:.6g}"
            logger.info("Simulated `%s`: empirical gamma %s.", name, shown)

        with (self.out / "simulate_summary.yaml").open("w", encoding="utf-8") as f:
            yaml.safe_dump(summary, f, sort_keys=False)
        return written

    # <!-- evaluate -->

    def cmd_evaluate(self, artifacts: Sequence[Path]) -> List[GainRowPayload]:
        """
        Tabulates certified against empirical gains on the approximated and exact dynamics.
        """
        if not artifacts:
            raise ArtifactError("Evaluation needs at least one `--artifact PATH`.")
        self.prepare()
        loaded = [(Path(p), self._load(Path(p))) for p in artifacts]
        disturbance = self.config.disturbance()
        cfg = self.config.simulation_config(self.seed)
        window = float(self.config.lookup("sim.peak_window"))

        scenarios = []
        for _, artifact in loaded:
            for mode in (DynamicsMode.APPROXIMATED, DynamicsMode.EXACT):
                scenarios.append(Scenario(artifact.controller, disturbance, cfg, mode))
        traces = simulate_many(self.model, scenarios, self.weights)

        rows: List[GainRowPayload] = []
        for k, (path, artifact) in enumerate(loaded):
            approx, exact = traces[2 * k], traces[2 * k + 1]
            rows.append(
                {
                    "artifact": path.name,
                    "outer": artifact.outer,
                    "certified_gamma": artifact.attenuation.gamma,
                    "empirical_gamma_approximated": empirical_gain(approx).gamma,
                    "empirical_gamma_exact": empirical_gain(exact).gamma,
                    "peak_deviation_last": peak_deviation(exact, exact.n, window),
                }
            )
        write_gain_table(rows, self.out)
        for row in rows:
            logger.info(
                "%s: certified %.6g, approximated %.6g, exact %.6g.",
                row["artifact"],
                row["certified_gamma"],
                row["empirical_gamma_approximated"],
                row["empirical_gamma_exact"],
            )
        return rows

    # <!-- report -->

    def cmd_report(self) -> List[Path]:
        """
        Re-draws the figures from the CSVs already in the output directory.
        """
        if not self.out.is_dir():
            raise ArtifactError(f"Output directory `{self.out}` not found.")
        written = render_directory(self.out, self.model.equilibrium.v_star, self.model.fleet.cav_indices)
        logger.info("Rendered %s.", f"{plural(len(written)):figure}")
        return written


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, (ConfigError, ArtifactError, FitError, ScheduleError, GainError)):
        return EXIT_CONFIG
    if isinstance(error, (SolverError, StructurallyInfeasibleError)):
        return EXIT_SOLVER
    if isinstance(error, SimulationBlowUpError):
        return EXIT_BLOW_UP
    return EXIT_FAILURE


def _error_handler(error: PlatoonError, verbose: bool = False) -> int:
    code = exit_code_for(error)
    logger.error("%s: %s", type(error).__name__, error, exc_info=error if verbose else None)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hinfplatoon",
        description=__plugin_info__["description"][0],
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration. Defaults apply when omitted.")
    common.add_argument("--out", type=Path, help="Output directory, overrides `output.directory`.")
    common.add_argument("--seed", type=int, help="Seed for random initial states.")
    common.add_argument("--verbose", action="store_true", help="Log solver progress.")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("learn", parents=[common], help="Learn controllers by policy iteration.")
    simulate_parser = sub.add_parser("simulate", parents=[common], help="Simulate a controller.")
    simulate_parser.add_argument("--artifact", type=Path, action="append", default=[])
    simulate_parser.add_argument("--all-hdv", action="store_true", help="Simulate the all-HDV baseline.")
    evaluate_parser = sub.add_parser(
        "evaluate", parents=[common], help="Compare certified and empirical gains."
    )
    evaluate_parser.add_argument("--artifact", type=Path, action="append", default=[])
    sub.add_parser("report", parents=[common], help="Re-render figures from emitted CSVs.")
    return parser


def load_config(path: Optional[Path], out: Optional[Path]) -> RunConfig:
    config = RunConfig.from_file(path) if path is not None else RunConfig()
    if out is not None:
        config.override("output.directory", str(out))
    return config


COMMANDS: Dict[str, Callable[[HinfPlatoon, argparse.Namespace], object]] = {
    "learn": lambda app, args: app.cmd_learn(),
    "simulate": lambda app, args: app.cmd_simulate(args.artifact, all_hdv=args.all_hdv),
    "evaluate": lambda app, args: app.cmd_evaluate(args.artifact),
    "report": lambda app, args: app.cmd_report(),
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        app = HinfPlatoon(load_config(args.config, args.out), seed=args.seed)
        COMMANDS[args.command](app, args)
    except PlatoonError as exc:
        return _error_handler(exc, args.verbose)
    return EXIT_OK
