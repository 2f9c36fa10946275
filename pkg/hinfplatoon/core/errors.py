from __future__ import annotations

from typing import Any, Optional, TYPE_CHECKING


if TYPE_CHECKING:
    from .enums import SolveStatus
    from .learner import IterationLog
    from .sim import SimulationTrace


__all__ = (
    "PlatoonError",
    "ConfigError",
    "FitError",
    "StructurallyInfeasibleError",
    "SolverError",
    "ScheduleError",
    "SimulationBlowUpError",
    "GainError",
    "ArtifactError",
    "FingerprintMismatchError",
)


class PlatoonError(Exception):
    """Base exception for this package."""

    pass


class ConfigError(PlatoonError, ValueError):
    """
    A configuration value is missing, unknown, or out of range.

    Parameters
    -----------
    key : str
        Dotted path of the offending key, e.g. `fleet.cav_indices`.
    message : str
        What is wrong with it.
    """

    def __init__(self, key: str, message: str):
        self.key: str = key
        super().__init__(f"Invalid config key `{key}`: {message}")


class FitError(PlatoonError, ValueError):
    """A polynomial fit could not be computed or was rejected."""

    pass


class StructurallyInfeasibleError(PlatoonError):
    """
    An SOS expression contains a term that no product of the Gram basis can produce.
    """

    def __init__(self, monomial: Any, coefficient: float):
        self.monomial = monomial
        self.coefficient: float = coefficient
        super().__init__(
            f"Term {monomial} with coefficient {coefficient:.3g} is not reachable by the Gram basis."
        )


class SolverError(PlatoonError):
    """
    An SDP or SOS program did not finish with an optimal certificate.

    Parameters
    -----------
    stage : str
        Which step failed, e.g. `policy-evaluation`.
    status : SolveStatus
        The status reported by the solver.
    log : Optional[IterationLog]
        Learning progress up to the failure, when raised from the learner.
    """

    def __init__(
        self,
        stage: str,
        status: Optional[SolveStatus] = None,
        *,
        detail: str = "",
        log: Optional[IterationLog] = None,
    ):
        self.stage: str = stage
        self.status: Optional[SolveStatus] = status
        self.log: Optional[IterationLog] = log
        msg = f"{stage} failed"
        if status is not None:
            msg += f" with status {status.value}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg + ".")


class ScheduleError(PlatoonError, ValueError):
    """An iteration schedule is invalid."""

    pass


class SimulationBlowUpError(PlatoonError):
    """
    The simulated state left the blow-up bound or became non-finite.
    """

    def __init__(self, time: float, norm: float, trace: Optional[SimulationTrace] = None):
        self.time: float = time
        self.norm: float = norm
        self.trace: Optional[SimulationTrace] = trace
        super().__init__(f"Simulation blew up at t={time:.2f} s (state norm {norm:.3g}).")


class GainError(PlatoonError, ValueError):
    """The empirical gain is undefined for the given trace."""

    pass


class ArtifactError(PlatoonError):
    """A controller artifact is missing or malformed."""

    pass


class FingerprintMismatchError(ArtifactError):
    """
    A controller artifact was learned for a different model than the one configured.
    """

    def __init__(self, path: str, expected: str, found: str):
        self.path: str = path
        self.expected: str = expected
        self.found: str = found
        super().__init__(
            f"Artifact `{path}` was learned for model {found[:12]}, "
            f"but the configured model is {expected[:12]}."
        )
