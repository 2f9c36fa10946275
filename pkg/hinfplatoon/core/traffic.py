from __future__ import annotations

import hashlib
import json
import math

from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from .enums import VehicleType
from .errors import FitError
from .models import getLogger
from .polyalg import Polynomial, fit_polynomial


__all__ = (
    "OvmParams",
    "FleetConfig",
    "Equilibrium",
    "DesiredVelocityFit",
    "MixedTrafficModel",
    "PerformanceWeights",
    "desired_velocity",
    "equilibrium_spacing",
    "hdv_acceleration",
    "fit_desired_velocity",
    "assemble_model",
    "performance_output",
    "spacing_index",
    "velocity_index",
)


logger = getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def spacing_index(vehicle: int) -> int:
    """Position of `s_i` (1-based vehicle) in the lumped state."""
    return 2 * (vehicle - 1)


def velocity_index(vehicle: int) -> int:
    """Position of `v_i` (1-based vehicle) in the lumped state."""
    return 2 * (vehicle - 1) + 1


@dataclass(frozen=True)
class OvmParams:
    """
    Optimal-velocity-model parameters of one driver.

    alpha and beta are in 1/s, the spacings in m and `v_max` in m/s.
    """

    alpha: float = 0.6
    beta: float = 0.9
    s_st: float = 5.0
    s_go: float = 35.0
    v_max: float = 30.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"Invalid alpha. Expected a positive value, got {self.alpha}.")
        if not self.beta >= 0:
            raise ValueError(f"Invalid beta. Expected a non-negative value, got {self.beta}.")
        if not 0 < self.s_st < self.s_go:
            raise ValueError(f"Invalid spacings. Expected 0 < s_st < s_go, got {self.s_st} and {self.s_go}.")
        if not self.v_max > 0:
            raise ValueError(f"Invalid v_max. Expected a positive value, got {self.v_max}.")

    def same_desired_velocity(self, other: "OvmParams") -> bool:
        return (self.s_st, self.s_go, self.v_max) == (other.s_st, other.s_go, other.v_max)


@dataclass(frozen=True)
class FleetConfig:
    """
    Vehicles 1..n behind the head vehicle. `cav_indices` lists the CAVs in increasing
    order and always starts at 1; every other index needs its OVM parameters.

    `baseline_params` drive the CAV positions when the platoon is simulated all-HDV.
    """

    n: int
    cav_indices: Tuple[int, ...]
    hdv_params: Mapping[int, OvmParams] = field(compare=True)
    baseline_params: OvmParams = OvmParams()

    def __post_init__(self):
        object.__setattr__(self, "cav_indices", tuple(int(i) for i in self.cav_indices))
        object.__setattr__(self, "hdv_params", {int(k): v for k, v in dict(self.hdv_params).items()})
        if self.n < 1:
            raise ValueError(f"Invalid fleet size. Expected at least 1 vehicle, got {self.n}.")
        cav = self.cav_indices
        if not cav or cav[0] != 1:
            raise ValueError("Invalid CAV indices. The first vehicle behind the head must be a CAV.")
        if any(b <= a for a, b in zip(cav, cav[1:])):
            raise ValueError(f"Invalid CAV indices {list(cav)}. Expected strictly increasing indices.")
        if cav[-1] > self.n:
            raise ValueError(f"Invalid CAV index {cav[-1]} for a fleet of {self.n} vehicles.")
        expected = set(range(1, self.n + 1)) - set(cav)
        if set(self.hdv_params) != expected:
            missing = sorted(expected - set(self.hdv_params))
            extra = sorted(set(self.hdv_params) - expected)
            raise ValueError(
                f"Invalid HDV parameters. Missing indices {missing}, unexpected indices {extra}."
            )
        reference = self.baseline_params
        for index, params in self.hdv_params.items():
            if not params.same_desired_velocity(reference):
                raise ValueError(
                    f"HDV {index} uses a different desired-velocity curve; the equilibrium spacing must be "
                    "homogeneous across the platoon."
                )

    @classmethod
    def uniform(
        cls, n: int, cav_indices: Sequence[int], params: Optional[OvmParams] = None
    ) -> "FleetConfig":
        params = params or OvmParams()
        hdv = {i: params for i in range(1, n + 1) if i not in set(cav_indices)}
        return cls(n, tuple(cav_indices), hdv, params)

    @property
    def m(self) -> int:
        return len(self.cav_indices)

    @property
    def hdv_indices(self) -> Tuple[int, ...]:
        return tuple(sorted(self.hdv_params))

    def vehicle_type(self, index: int) -> VehicleType:
        return VehicleType.CAV if index in self.cav_indices else VehicleType.HDV

    def params_for(self, index: int) -> OvmParams:
        """
        OVM parameters of a vehicle; CAVs get the baseline parameters.
        """
        return self.hdv_params.get(index, self.baseline_params)

    def to_payload(self) -> Dict:
        return {
            "n": self.n,
            "cav_indices": list(self.cav_indices),
            "hdv_params": {str(k): asdict(v) for k, v in sorted(self.hdv_params.items())},
            "baseline_params": asdict(self.baseline_params),
        }


def desired_velocity(s: ArrayLike, p: OvmParams) -> ArrayLike:
    """
    Spacing-dependent desired velocity: 0 below `s_st`, `v_max` above `s_go`, a raised
    cosine in between.
    """
    s_arr = np.asarray(s, dtype=float)
    ratio = np.clip((s_arr - p.s_st) / (p.s_go - p.s_st), 0.0, 1.0)
    out = 0.5 * p.v_max * (1.0 - np.cos(math.pi * ratio))
    out = np.where(s_arr <= p.s_st, 0.0, np.where(s_arr >= p.s_go, p.v_max, out))
    return float(out) if out.ndim == 0 else out


def equilibrium_spacing(v_star: float, p: OvmParams) -> float:
    """
    Inverts the middle branch of :func:`desired_velocity`.

    Raises
    ------
    ValueError
        `v_star` outside `(0, v_max)`.
    """
    if not 0.0 < v_star < p.v_max:
        raise ValueError(f"Invalid equilibrium velocity {v_star}. Expected a value in (0, {p.v_max}).")
    return p.s_st + (p.s_go - p.s_st) / math.pi * math.acos(1.0 - 2.0 * v_star / p.v_max)


@dataclass(frozen=True)
class Equilibrium:
    v_star: float
    s_star: float

    def __post_init__(self):
        if not (self.v_star > 0 and self.s_star > 0):
            raise ValueError(f"Invalid equilibrium ({self.v_star}, {self.s_star}).")

    @classmethod
    def from_velocity(cls, v_star: float, p: OvmParams) -> "Equilibrium":
        return cls(float(v_star), equilibrium_spacing(v_star, p))

    def check(self, p: OvmParams, tol: float = 1e-9) -> None:
        if not p.s_st < self.s_star < p.s_go:
            raise ValueError(f"Equilibrium spacing {self.s_star} outside ({p.s_st}, {p.s_go}).")
        if abs(desired_velocity(self.s_star, p) - self.v_star) > tol:
            raise ValueError("Equilibrium does not lie on the desired-velocity curve.")


@dataclass(frozen=True, eq=False)
class DesiredVelocityFit:
    """
    Polynomial `q` in the spacing deviation with `v^d(s* + s) - v* ~ q(s)` on the
    learning range; `q(0) = 0` exactly.
    """

    polynomial: Polynomial
    degree: int
    residual: float
    max_error: float
    spacing_range: Tuple[float, float]


@lru_cache(maxsize=32)
def fit_desired_velocity(
    p: OvmParams,
    eq: Equilibrium,
    spacing_bound: float = 4.0,
    degree: int = 5,
    samples: int = 201,
) -> DesiredVelocityFit:
    """
    Constrained least-squares fit of the desired velocity around the equilibrium, over
    `[s* - b, s* + b]` clipped to `[s_st, s_go]`, passing exactly through `(s*, v*)`.
    """
    lo = max(eq.s_star - spacing_bound, p.s_st)
    hi = min(eq.s_star + spacing_bound, p.s_go)
    spacing = np.linspace(lo, hi, samples)
    deviation = spacing - eq.s_star
    values = desired_velocity(spacing, p) - eq.v_star
    fit = fit_polynomial(np.column_stack([deviation, values]), degree, interpolate_at=[(0.0, 0.0)])
    poly = fit.polynomial.without_constant()
    errors = poly.evaluate_many(deviation[:, None]) - values
    return DesiredVelocityFit(
        poly,
        degree,
        float(np.sqrt(np.mean(errors ** 2))),
        float(np.max(np.abs(errors))),
        (lo, hi),
    )


def _desired_deviation(s_dev: ArrayLike, p: OvmParams, eq: Equilibrium, fit: Optional[DesiredVelocityFit]):
    if fit is None:
        # exactly zero at s_dev = 0
        s_abs = np.asarray(s_dev, dtype=float) + eq.s_star
        return desired_velocity(s_abs, p) - desired_velocity(eq.s_star, p)
    s_arr = np.asarray(s_dev, dtype=float)
    out = fit.polynomial.evaluate_many(s_arr.reshape(-1, 1)).reshape(s_arr.shape)
    return float(out) if out.ndim == 0 else out


def hdv_acceleration(
    s_dev: ArrayLike,
    v_dev: ArrayLike,
    v_pred_dev: ArrayLike,
    p: OvmParams,
    eq: Equilibrium,
    approx: bool = False,
    fit: Optional[DesiredVelocityFit] = None,
) -> ArrayLike:
    """
    OVM acceleration in deviation coordinates,
    `alpha * (v^d(s + s*) - (v + v*)) + beta * (v_pred - v)`.

    With `approx=True` the fitted polynomial replaces `v^d`; `fit` defaults to the
    degree-5 fit on a 4 m spacing range.
    """
    if approx and fit is None:
        fit = fit_desired_velocity(p, eq)
    vd = _desired_deviation(s_dev, p, eq, fit if approx else None)
    return p.alpha * (vd - v_dev) + p.beta * (np.asarray(v_pred_dev) - v_dev)


def _lift(q: Polynomial, nvars: int, index: int) -> Polynomial:
    # univariate q(t) -> q(x_index)
    terms = {}
    for (e,), c in q.items():
        mono = [0] * nvars
        mono[index] = e
        terms[tuple(mono)] = c
    return Polynomial(nvars, terms)


@dataclass(frozen=True)
class PerformanceWeights:
    """
    Penalty weights of the performance output `z = [sqrt(Q) x; sqrt(R) u]` with
    `sqrt(Q) = diag(theta_s, theta_v, ...)` and `sqrt(R) = theta_u * I`.
    """

    theta_s: float = 0.03
    theta_v: float = 0.15
    theta_u: float = 1.0

    def __post_init__(self):
        for name in ("theta_s", "theta_v", "theta_u"):
            if not getattr(self, name) > 0:
                raise ValueError(f"Invalid {name}. Expected a positive value, got {getattr(self, name)}.")

    def sqrt_Q(self, n: int) -> np.ndarray:
        return np.diag(np.tile([self.theta_s, self.theta_v], n))

    def Q(self, n: int) -> np.ndarray:
        return np.diag(np.tile([self.theta_s ** 2, self.theta_v ** 2], n))

    def sqrt_R(self, m: int) -> np.ndarray:
        return self.theta_u * np.eye(m)

    def R(self, m: int) -> np.ndarray:
        return self.theta_u ** 2 * np.eye(m)


def performance_output(
    x: Sequence[float], u: Sequence[float], weights: PerformanceWeights
) -> Tuple[np.ndarray, float]:
    """
    Returns `z` and `||z||^2 = x^T Q x + u^T R u`.

    Raises
    ------
    ValueError
        The state length is odd or the arrays are not one-dimensional.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.ndim != 1 or x.size % 2 or u.ndim != 1:
        raise ValueError(f"Invalid dimensions: state {x.shape}, input {u.shape}.")
    z = np.concatenate([weights.sqrt_Q(x.size // 2) @ x, weights.sqrt_R(u.size) @ u])
    return z, float(z @ z)


@dataclass(frozen=True, eq=False)
class MixedTrafficModel:
    """
    Lumped mixed-traffic dynamics `x' = f(x) + g u + k w` in deviation coordinates,
    `x = [s_1, v_1, ..., s_n, v_n]`, with `w` the head vehicle's velocity deviation.

    `f` is the polynomial drift certified by the learner; :meth:`exact_rhs` evaluates
    the piecewise model it approximates.
    """

    fleet: FleetConfig
    equilibrium: Equilibrium
    f: Tuple[Polynomial, ...]
    g: np.ndarray
    k: np.ndarray
    fit: DesiredVelocityFit

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__} n={self.n} cavs={list(self.fleet.cav_indices)} "
            f"fit_degree={self.fit.degree}>"
        )

    @property
    def n(self) -> int:
        return self.fleet.n

    @property
    def m(self) -> int:
        return self.fleet.m

    @property
    def state_dim(self) -> int:
        return 2 * self.fleet.n

    def drift(self, x: Sequence[float]) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([row.evaluate(x) for row in self.f])

    def approx_rhs(self, x: Sequence[float], u: Sequence[float], w: float) -> np.ndarray:
        return self.drift(x) + self.g @ np.atleast_1d(np.asarray(u, dtype=float)) + self.k * w

    def exact_rhs(self, x: Sequence[float], u: Sequence[float], w: float) -> np.ndarray:
        return self.rhs(x, u, w)

    def rhs(
        self,
        x: Sequence[float],
        u: Sequence[float],
        w: float,
        *,
        approx: bool = False,
        baseline: bool = False,
    ) -> np.ndarray:
        """
        Closed-form right-hand side.

        Parameters
        -----------
        approx : bool
            Use the fitted desired velocity instead of the piecewise one.
        baseline : bool
            Drive the CAV positions with the OVM law too (all-HDV platoon); `u` is ignored.
        """
        x = np.asarray(x, dtype=float)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        s, v = x[0::2], x[1::2]
        v_prev = np.concatenate([[w], v[:-1]])
        dv = np.zeros(self.n)
        fit = self.fit if approx else None
        for i in range(1, self.n + 1):
            if self.fleet.vehicle_type(i) is VehicleType.HDV or baseline:
                p = self.fleet.params_for(i)
                dv[i - 1] = hdv_acceleration(
                    s[i - 1], v[i - 1], v_prev[i - 1], p, self.equilibrium, approx, fit
                )
        if not baseline:
            for j, i in enumerate(self.fleet.cav_indices):
                dv[i - 1] = u[j]
        out = np.empty_like(x)
        out[0::2] = v_prev - v
        out[1::2] = dv
        return out

    def linearization(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        `(A, B, E)` of the linear part of the polynomial model.
        """
        A = np.vstack([row.linear_part() for row in self.f])
        return A, self.g.copy(), self.k.reshape(-1, 1).copy()

    def nonlinear_variables(self) -> Set[int]:
        """
        State indices that appear in some term of degree two or more of `f`.
        """
        used: Set[int] = set()
        for row in self.f:
            for mono in row:
                if sum(mono) > 1:
                    used.update(i for i, e in enumerate(mono) if e)
        return used

    def fingerprint(self) -> str:
        payload = {
            "fleet": self.fleet.to_payload(),
            "equilibrium": [self.equilibrium.v_star, self.equilibrium.s_star],
            "fit_degree": self.fit.degree,
            "spacing_range": list(self.fit.spacing_range),
            "f": [row.to_payload() for row in self.f],
            "g": self.g.tolist(),
            "k": self.k.tolist(),
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


def assemble_model(
    fleet: FleetConfig,
    eq: Equilibrium,
    fit_degree: int = 5,
    *,
    spacing_bound: float = 4.0,
    max_fit_error: float = 0.5,
) -> MixedTrafficModel:
    """
    Builds the polynomial mixed-traffic model.

    Spacing rows are `v_(i-1) - v_i` (the head-vehicle term of vehicle 1 goes through
    `k`), HDV velocity rows hold the fitted OVM law and CAV velocity rows are zero with
    the input entering through `g`.

    Raises
    ------
    FitError
        The desired-velocity fit misses the samples by `max_fit_error` or more.
    """
    if fit_degree < 1:
        raise FitError(f"Invalid fit degree {fit_degree}. Expected at least 1.")
    if fit_degree < 3:
        logger.warning("Fit degree %d gives a linearised OVM model.", fit_degree)
    eq.check(fleet.baseline_params)
    fit = fit_desired_velocity(fleet.baseline_params, eq, float(spacing_bound), int(fit_degree))
    if fit.max_error >= max_fit_error:
        raise FitError(
            f"Model rejected: desired-velocity fit error {fit.max_error:.3g} m/s exceeds {max_fit_error} m/s."
        )

    nx = 2 * fleet.n
    x = [Polynomial.variable(nx, i) for i in range(nx)]
    zero = Polynomial.zero(nx)
    rows: List[Polynomial] = []
    for i in range(1, fleet.n + 1):
        s_i, v_i = spacing_index(i), velocity_index(i)
        rows.append(-x[v_i] if i == 1 else x[velocity_index(i - 1)] - x[v_i])
        if fleet.vehicle_type(i) is VehicleType.CAV:
            rows.append(zero)
            continue
        p = fleet.hdv_params[i]
        q = _lift(fit.polynomial, nx, s_i)
        rows.append(q * p.alpha - x[v_i] * p.alpha + (x[velocity_index(i - 1)] - x[v_i]) * p.beta)

    g = np.zeros((nx, fleet.m))
    for j, i in enumerate(fleet.cav_indices):
        g[velocity_index(i), j] = 1.0
    k = np.zeros(nx)
    k[spacing_index(1)] = 1.0
    g.setflags(write=False)
    k.setflags(write=False)

    model = MixedTrafficModel(fleet, eq, tuple(rows), g, k, fit)
    logger.debug(
        "Assembled %r: fit max error %.2e m/s, fingerprint %s.",
        model,
        fit.max_error,
        model.fingerprint()[:12],
    )
    return model
