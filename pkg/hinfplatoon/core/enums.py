from enum import Enum


__all__ = (
    "SdpStatus",
    "SolveStatus",
    "VehicleType",
    "DisturbanceKind",
    "DynamicsMode",
)


class SdpStatus(Enum):

    OPTIMAL = "optimal"
    PRIMAL_INFEASIBLE = "primal-infeasible"
    DUAL_INFEASIBLE = "dual-infeasible"  # primal objective unbounded below
    STALLED = "stalled"


class SolveStatus(Enum):

    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical-failure"

    @classmethod
    def from_sdp(cls, status: SdpStatus) -> "SolveStatus":
        if status is SdpStatus.OPTIMAL:
            return cls.OPTIMAL
        if status is SdpStatus.PRIMAL_INFEASIBLE:
            return cls.INFEASIBLE
        return cls.NUMERICAL_FAILURE


class VehicleType(Enum):
    CAV = "CAV"
    HDV = "HDV"


class DisturbanceKind(Enum):

    SINUSOID = "sinusoid"
    CONSTANT = "constant"
    BRAKING_PULSE = "braking-pulse"
    CUSTOM = "custom"
    INVALID = "invalid"

    @classmethod
    def from_value(cls, value: str) -> "DisturbanceKind":
        try:
            return cls(value)
        except ValueError:
            return cls.INVALID


class DynamicsMode(Enum):

    EXACT = "exact"
    APPROXIMATED = "approximated"
    INVALID = "invalid"

    @classmethod
    def from_value(cls, value: str) -> "DynamicsMode":
        try:
            return cls(value)
        except ValueError:
            return cls.INVALID
