from __future__ import annotations

from typing import (
    Any,
    List,
    Optional,
    TypedDict,
)


PolynomialPayload = List[List[Any]]  # [[exponents], coefficient] pairs


class ValuePayload(TypedDict):
    basis: List[List[int]]
    coeffs: List[float]


class ArtifactPayload(TypedDict):
    format: str
    version: int
    fingerprint: str
    outer: int
    gamma: float
    gamma_sq: float
    state_dim: int
    inputs: int
    value: ValuePayload
    controller: List[PolynomialPayload]


class DisturbancePayload(TypedDict, total=False):
    kind: str
    amplitude: float
    rate: float
    start: float
    duration: float
    times: List[float]
    values: List[float]


class GainRowPayload(TypedDict):
    artifact: str
    outer: Optional[int]
    certified_gamma: Optional[float]
    empirical_gamma_approximated: float
    empirical_gamma_exact: float
    peak_deviation_last: float
