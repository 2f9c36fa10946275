from __future__ import annotations

import csv
import math
import time

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .enums import SolveStatus
from .errors import ScheduleError, SolverError
from .models import getLogger
from .polyalg import AffinePoly, Box, Monomial, Polynomial, box_moment, monomial_basis
from .sdp import SdpOptions
from .sosprog import DecisionPoly, DecisionScalar, SosProgram, SosSolution
from .traffic import MixedTrafficModel, PerformanceWeights
from .types import PolynomialPayload, ValuePayload
from .utils import format_float


__all__ = (
    "ValueFunction",
    "Controller",
    "AttenuationLevel",
    "IterationRecord",
    "IterationLog",
    "LearnerSchedule",
    "OuterRound",
    "LearningResult",
    "value_basis",
    "state_box",
    "negative_hamiltonian",
    "stability_polynomial",
    "policy_evaluation",
    "policy_improvement",
    "optimize_attenuation",
    "gap_identity_check",
    "verify_certificate",
    "run",
)


logger = getLogger(__name__)

GAMMA_SQ_FLOOR = 1e-8


def value_basis(nvars: int, deg_min: int = 2, deg_max: int = 4) -> List[Monomial]:
    """
    Monomials of total degree `deg_min..deg_max` in the state variables.

    Raises
    ------
    ValueError
        `deg_min < 2`; constant and linear terms would break `V(0) = 0` or `u(0) = 0`.
    """
    if deg_min < 2:
        raise ValueError(f"Invalid value basis degree {deg_min}. Expected at least 2.")
    if deg_max < deg_min:
        raise ValueError(f"Invalid value basis degrees {deg_min}..{deg_max}.")
    return monomial_basis(nvars, deg_min, deg_max)


def state_box(n: int, spacing: float = 4.0, velocity: float = 5.0) -> Box:
    """
    The learning region `|s_i| <= spacing, |v_i| <= velocity` in deviation coordinates.
    """
    return Box.symmetric([spacing, velocity] * n)


@dataclass(frozen=True, eq=False)
class ValueFunction:
    """
    `V(x) = sum_i c_i * basis_i(x)` over the lumped state.
    """

    basis: Tuple[Monomial, ...]
    coeffs: np.ndarray

    def __post_init__(self):
        basis = tuple(tuple(int(e) for e in m) for m in self.basis)
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if not basis:
            raise ValueError("Invalid value basis. Expected at least one monomial.")
        if len(coeffs) != len(basis):
            raise ValueError(f"Invalid coefficients. Expected {len(basis)} values, got {len(coeffs)}.")
        if any(sum(m) == 0 for m in basis):
            raise ValueError("Invalid value basis. A constant monomial would break V(0) = 0.")
        if len(set(basis)) != len(basis):
            raise ValueError("Invalid value basis. Duplicate monomials found.")
        coeffs.setflags(write=False)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "coeffs", coeffs)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} nvars={self.nvars} terms={len(self.basis)}>"

    @classmethod
    def from_polynomial(cls, poly: Polynomial, basis: Optional[Sequence[Monomial]] = None) -> "ValueFunction":
        """
        Reads the coefficients of `poly` on `basis` (its own support by default).

        Raises
        ------
        ValueError
            `poly` has a term outside the basis.
        """
        if basis is None:
            basis = sorted(poly.support(), key=lambda m: (sum(m), tuple(-e for e in m)))
        basis = [tuple(m) for m in basis]
        stray = poly.support() - set(basis)
        if stray:
            raise ValueError(f"Polynomial has {len(stray)} terms outside the value basis.")
        return cls(tuple(basis), np.array([poly.coefficient(m) for m in basis]))

    @property
    def nvars(self) -> int:
        return len(self.basis[0])

    def polynomial(self) -> Polynomial:
        return Polynomial(self.nvars, dict(zip(self.basis, self.coeffs)))

    def __call__(self, x: Sequence[float]) -> float:
        return self.polynomial().evaluate(x)

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        return self.polynomial().evaluate_many(points)

    def integral(self, box: Box) -> float:
        return float(sum(c * box_moment(m, box) for m, c in zip(self.basis, self.coeffs)))

    def to_payload(self) -> ValuePayload:
        return {"basis": [list(m) for m in self.basis], "coeffs": [float(c) for c in self.coeffs]}

    @classmethod
    def from_payload(cls, payload: ValuePayload) -> "ValueFunction":
        return cls(tuple(tuple(m) for m in payload["basis"]), np.asarray(payload["coeffs"], dtype=float))


@dataclass(frozen=True)
class Controller:
    """
    State feedback `u = (u_1(x), ..., u_m(x))` with polynomial components and `u(0) = 0`.
    """

    components: Tuple[Polynomial, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("Invalid controller. Expected at least one component.")
        nvars = comps[0].nvars
        for j, comp in enumerate(comps):
            if comp.nvars != nvars:
                raise ValueError(f"Invalid controller component {j}. Expected {nvars} variables.")
            if comp.coefficient((0,) * nvars) != 0.0:
                raise ValueError(f"Invalid controller component {j}. Expected u(0) = 0.")
        object.__setattr__(self, "components", comps)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} m={self.m} nvars={self.nvars} degree={self.degree}>"

    @classmethod
    def linear(cls, gains: Union[np.ndarray, Sequence[Sequence[float]]]) -> "Controller":
        """
        `u = K x` for an `m x 2n` gain matrix.
        """
        K = np.atleast_2d(np.asarray(gains, dtype=float))
        return cls(tuple(Polynomial.linear(row) for row in K))

    @classmethod
    def zero(cls, m: int, nvars: int) -> "Controller":
        return cls.linear(np.zeros((m, nvars)))

    @property
    def m(self) -> int:
        return len(self.components)

    @property
    def nvars(self) -> int:
        return self.components[0].nvars

    @property
    def degree(self) -> int:
        return max(c.degree for c in self.components)

    def gains(self) -> np.ndarray:
        """Linear part, `du/dx` at the origin."""
        return np.vstack([c.linear_part() for c in self.components])

    def __call__(self, x: Sequence[float]) -> np.ndarray:
        return np.array([c.evaluate(x) for c in self.components])

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        return np.column_stack([c.evaluate_many(points) for c in self.components])

    def to_payload(self) -> List[PolynomialPayload]:
        return [c.to_payload() for c in self.components]

    @classmethod
    def from_payload(cls, nvars: int, payload: Sequence[PolynomialPayload]) -> "Controller":
        return cls(tuple(Polynomial.from_payload(nvars, comp) for comp in payload))


@dataclass(frozen=True)
class AttenuationLevel:
    gamma_sq: float

    def __post_init__(self):
        if not (self.gamma_sq > 0 and math.isfinite(self.gamma_sq)):
            raise ValueError(f"Invalid attenuation level. Expected gamma^2 > 0, got {self.gamma_sq}.")

    @classmethod
    def from_gamma(cls, gamma: float) -> "AttenuationLevel":
        return cls(float(gamma) ** 2)

    @property
    def gamma(self) -> float:
        return math.sqrt(self.gamma_sq)


@dataclass
class IterationRecord:
    """
    One solved program of a learning run. `inner == 0` marks the program that opens an
    outer round (attenuation optimisation, or the unconstrained evaluation at a fixed gamma).
    """

    outer: int
    inner: int
    stage: str
    gamma_sq: float
    objective: float
    status: SolveStatus
    inaccurate: bool = False
    gap_residual: float = 0.0
    seconds: float = 0.0
    value: Optional[ValueFunction] = field(default=None, repr=False)
    controller: Optional[Controller] = field(default=None, repr=False)
    sdp_gap: float = 0.0

    @property
    def gamma(self) -> float:
        return math.sqrt(self.gamma_sq)


class IterationLog:
    """
    Chronological record of a learning run.
    """

    FIELDS = (
        "outer",
        "inner",
        "stage",
        "gamma",
        "gamma_sq",
        "objective",
        "status",
        "inaccurate",
        "sdp_gap",
        "gap_residual",
        "seconds",
    )

    def __init__(self):
        self.records: List[IterationRecord] = []
        self.round_gammas: Dict[int, float] = {}

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} records={len(self.records)} rounds={len(self.round_gammas)}>"

    def __len__(self) -> int:
        return len(self.records)

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def close_round(self, outer: int, gamma_sq: float) -> None:
        self.round_gammas[outer] = gamma_sq

    @property
    def rounds(self) -> List[int]:
        return sorted(self.round_gammas)

    def gammas(self) -> List[float]:
        """Certified attenuation level of every finished outer round."""
        return [math.sqrt(self.round_gammas[i]) for i in self.rounds]

    def inner_objectives(self, outer: int) -> List[float]:
        """
        `int_Omega V dx` along one outer round, starting with the value function that
        opened it.
        """
        return [r.objective for r in self.records if r.outer == outer]

    def max_gap_residual(self) -> float:
        return max((r.gap_residual for r in self.records), default=0.0)

    def to_rows(self) -> List[Dict[str, str]]:
        rows = []
        for r in self.records:
            rows.append(
                {
                    "outer": str(r.outer),
                    "inner": str(r.inner),
                    "stage": r.stage,
                    "gamma": format_float(r.gamma),
                    "gamma_sq": format_float(r.gamma_sq),
                    "objective": format_float(r.objective),
                    "status": r.status.value,
                    "inaccurate": str(r.inaccurate).lower(),
                    "sdp_gap": format_float(r.sdp_gap),
                    "gap_residual": format_float(r.gap_residual),
                    "seconds": f"{r.seconds:.3f}",
                }
            )
        return rows

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=self.FIELDS)
            writer.writeheader()
            writer.writerows(self.to_rows())


@dataclass
class LearnerSchedule:
    """
    Loop caps, tolerances and program options of a learning run.

    Parameters
    -----------
    outer_max : int
        Cap on attenuation-optimisation rounds.
    inner_max : int
        Cap on policy-iteration steps per round.
    tol_inner : float
        Relative decrease of `int_Omega V dx` below which a round stops.
    tol_outer : float
        Absolute decrease of gamma below which the run stops. `0` runs every round.
    fixed_gamma : Optional[float]
        Skip attenuation optimisation and run a single round at this gamma.
    gamma_margin : float
        Relative slack added to the optimised gamma^2 before policy evaluation.
    localize : bool
        Impose the Hamiltonian constraint on Omega only, through SOS multipliers on the
        state variables that enter the drift nonlinearly. Off by default, which keeps the
        constraint global.
    prune : bool
        Newton-polytope pruning of the Gram bases.
    """

    outer_max: int = 20
    inner_max: int = 15
    tol_inner: float = 1e-4
    tol_outer: float = 1e-3
    fixed_gamma: Optional[float] = None
    gamma_margin: float = 1e-4
    localize: bool = False
    prune: bool = True
    sdp: SdpOptions = field(default_factory=SdpOptions)

    def __post_init__(self):
        if self.outer_max < 1:
            raise ScheduleError(f"Invalid outer iteration cap {self.outer_max}. Expected at least 1.")
        if self.inner_max < 1:
            raise ScheduleError(f"Invalid inner iteration cap {self.inner_max}. Expected at least 1.")
        if self.tol_inner < 0 or self.tol_outer < 0 or self.gamma_margin < 0:
            raise ScheduleError("Invalid tolerances. Expected non-negative values.")
        if self.fixed_gamma is not None and not self.fixed_gamma > 0:
            raise ScheduleError(f"Invalid fixed gamma {self.fixed_gamma}. Expected a positive value.")


class OuterRound(NamedTuple):
    index: int
    attenuation: AttenuationLevel
    value: ValueFunction
    controller: Controller


class LearningResult(NamedTuple):
    controller: Controller
    attenuation: AttenuationLevel
    value: ValueFunction
    log: IterationLog


# <!-- Hamiltonian -->

ValueLike = Union[ValueFunction, DecisionPoly, Polynomial, AffinePoly]
GammaLike = Union[float, AttenuationLevel, DecisionScalar]


def _value_expression(V: ValueLike, nvars: int) -> AffinePoly:
    if isinstance(V, ValueFunction):
        return AffinePoly.from_polynomial(V.polynomial().embed(nvars))
    if isinstance(V, DecisionPoly):
        return V.expression(nvars)
    if isinstance(V, Polynomial):
        return AffinePoly.from_polynomial(V.embed(nvars))
    if isinstance(V, AffinePoly):
        return V.embed(nvars)
    raise TypeError(f"Invalid value function type {type(V).__name__}.")


def _check_dimensions(model: MixedTrafficModel, u: Controller, V_nvars: int) -> None:
    nx = model.state_dim
    if u.nvars != nx or u.m != model.m:
        raise ValueError(
            f"Controller has {u.m} inputs over {u.nvars} variables; model expects {model.m} over {nx}."
        )
    if V_nvars != nx:
        raise ValueError(f"Value function has {V_nvars} variables; model state has {nx}.")


def _quadratic_form(polys: Sequence[Polynomial], M: np.ndarray, nvars: int) -> Polynomial:
    out = Polynomial.zero(nvars)
    for i, j in zip(*np.nonzero(M)):
        out = out + polys[i] * polys[j] * float(M[i, j])
    return out


def _lagrangian(
    V: AffinePoly, u: Controller, model: MixedTrafficModel, weights: PerformanceWeights, nvars: int
) -> AffinePoly:
    # -(dV/dx)^T (f + g u + k w) - x^T Q x - u^T R u, in `nvars` indeterminates
    nx = model.state_dim
    comps = [c.embed(nvars) for c in u.components]
    w = Polynomial.variable(nvars, nx) if nvars > nx else None
    out = AffinePoly(nvars)
    for i in range(nx):
        dyn = model.f[i].embed(nvars)
        for j, comp in enumerate(comps):
            if model.g[i, j]:
                dyn = dyn + comp * float(model.g[i, j])
        if model.k[i] and w is not None:
            dyn = dyn + w * float(model.k[i])
        if dyn.is_zero():
            continue
        out = out - V.diff(i) * dyn
    states = [Polynomial.variable(nvars, i) for i in range(nx)]
    out = out - _quadratic_form(states, weights.Q(model.n), nvars)
    return out - _quadratic_form(comps, weights.R(model.m), nvars)


def negative_hamiltonian(
    V: ValueLike,
    u: Controller,
    gamma_sq: GammaLike,
    model: MixedTrafficModel,
    weights: PerformanceWeights,
) -> Union[Polynomial, AffinePoly]:
    """
    `-(dV/dx)^T (f + g u + k w) - x^T Q x - u^T R u + gamma^2 w^2` over `(x, w)`, with `w`
    appended as the last indeterminate.

    Returns a :class:`Polynomial` when nothing is a decision quantity, an
    :class:`AffinePoly` otherwise.
    """
    nx = model.state_dim
    nvars = nx + 1
    _check_dimensions(model, u, V.nvars)
    expr = _lagrangian(_value_expression(V, nvars), u, model, weights, nvars)
    w2 = Polynomial.variable(nvars, nx) ** 2
    if isinstance(gamma_sq, DecisionScalar):
        expr = expr + AffinePoly(nvars, {gamma_sq.index: w2})
    else:
        level = gamma_sq.gamma_sq if isinstance(gamma_sq, AttenuationLevel) else float(gamma_sq)
        expr = expr + w2 * level
    return expr.constant_part() if expr.is_constant() else expr


def stability_polynomial(
    V: ValueFunction, u: Controller, model: MixedTrafficModel, weights: PerformanceWeights
) -> Polynomial:
    """
    `-(dV/dx)^T (f + g u) - x^T Q x - u^T R u`, the Hamiltonian at `w = 0` over the state only.
    """
    _check_dimensions(model, u, V.nvars)
    nx = model.state_dim
    return _lagrangian(_value_expression(V, nx), u, model, weights, nx).constant_part()


def _localize(
    program: SosProgram, expr: AffinePoly, model: MixedTrafficModel, box: Box, enabled: bool
) -> AffinePoly:
    """
    Subtracts `sigma_j(x) * (x_j - l_j)(u_j - x_j)` for every state variable entering the
    drift nonlinearly, each `sigma_j` a fresh SOS multiplier without constant term.
    """
    targets = sorted(model.nonlinear_variables()) if enabled else []
    degree = expr.degree + expr.degree % 2
    half = (degree - 2) // 2
    if not targets or half < 1:
        return expr
    nx, nvars = model.state_dim, expr.nvars
    basis = [m + (0,) * (nvars - nx) for m in monomial_basis(nx, 2, 2 * half)]
    for j in targets:
        lo, hi = box.lower[j], box.upper[j]
        x_j = Polynomial.variable(nvars, j)
        bound = (x_j - lo) * (hi - x_j)
        sigma = program.declare_poly(basis)
        program.add_sos_constraint(sigma.expression(), range(nx), label=f"multiplier[{j}]")
        expr = expr - sigma.expression() * bound
    logger.debug("Localised the Hamiltonian on %d state variables.", len(targets))
    return expr


def _check_box(model: MixedTrafficModel, box: Box) -> None:
    if box.dim != model.state_dim:
        raise ValueError(f"Invalid learning region. Expected dimension {model.state_dim}, got {box.dim}.")


# <!-- Algorithm steps -->


def _evaluate(
    u_prev: Controller,
    gamma: AttenuationLevel,
    V_prev: Optional[ValueFunction],
    box: Box,
    basis: Sequence[Monomial],
    model: MixedTrafficModel,
    weights: PerformanceWeights,
    schedule: LearnerSchedule,
) -> Tuple[ValueFunction, SosSolution]:
    _check_box(model, box)
    program = SosProgram(prune=schedule.prune, name="policy-evaluation")
    V = program.declare_poly(basis)
    hamiltonian = negative_hamiltonian(V, u_prev, gamma, model, weights)
    hamiltonian = _localize(program, hamiltonian, model, box, schedule.localize)
    program.add_sos_constraint(hamiltonian, label="hamiltonian")
    program.add_sos_constraint(V.expression(), label="value")
    if V_prev is not None:
        program.add_sos_constraint(V_prev.polynomial() - V.expression(), label="value-decrease")
    program.set_objective(V.integral(box))
    solution = program.solve(schedule.sdp)
    if not solution.is_optimal():
        raise SolverError(
            "policy-evaluation",
            solution.status,
            detail=f"gamma={gamma.gamma:.6g}, residual {solution.max_residual:.2e}",
        )
    return ValueFunction(tuple(V.basis), V.coefficients(solution.values)), solution


def policy_evaluation(
    u_prev: Controller,
    gamma: AttenuationLevel,
    V_prev: Optional[ValueFunction],
    box: Box,
    basis: Sequence[Monomial],
    model: MixedTrafficModel,
    weights: PerformanceWeights,
    schedule: Optional[LearnerSchedule] = None,
) -> ValueFunction:
    """
    Smallest `int_Omega V dx` over value functions with `L(V, u_prev, gamma)` SOS, `V` SOS
    and, when `V_prev` is given, `V_prev - V` SOS.

    Raises
    ------
    SolverError
        The program is infeasible or the solver failed.
    """
    V, _ = _evaluate(u_prev, gamma, V_prev, box, basis, model, weights, schedule or LearnerSchedule())
    return V


def policy_improvement(V: ValueFunction, model: MixedTrafficModel, weights: PerformanceWeights) -> Controller:
    """
    `u = -1/2 R^-1 g^T dV/dx`.
    """
    if V.nvars != model.state_dim:
        raise ValueError(f"Value function has {V.nvars} variables; model state has {model.state_dim}.")
    poly = V.polynomial()
    grad = poly.gradient()
    gain = -0.5 * np.linalg.solve(weights.R(model.m), model.g.T)  # m x 2n
    comps = []
    for row in gain:
        comp = Polynomial.zero(model.state_dim)
        for i in np.flatnonzero(row):
            comp = comp + grad[i] * float(row[i])
        comps.append(comp)
    return Controller(tuple(comps))


def _optimize(
    u_prev: Controller,
    basis: Sequence[Monomial],
    box: Box,
    model: MixedTrafficModel,
    weights: PerformanceWeights,
    schedule: LearnerSchedule,
) -> Tuple[AttenuationLevel, ValueFunction, SosSolution]:
    _check_box(model, box)
    program = SosProgram(prune=schedule.prune, name="attenuation-optimization")
    V = program.declare_poly(basis)
    gamma_sq = program.declare_scalar(lower=GAMMA_SQ_FLOOR)
    hamiltonian = negative_hamiltonian(V, u_prev, gamma_sq, model, weights)
    hamiltonian = _localize(program, hamiltonian, model, box, schedule.localize)
    program.add_sos_constraint(hamiltonian, label="hamiltonian")
    program.add_sos_constraint(V.expression(), label="value")
    program.set_objective({gamma_sq.index: 1.0})
    solution = program.solve(schedule.sdp)
    if not solution.is_optimal():
        raise SolverError(
            "attenuation-optimization",
            solution.status,
            detail="no certified attenuation level for this controller; check that it is admissible",
        )
    level = AttenuationLevel(max(solution.value(gamma_sq), GAMMA_SQ_FLOOR))
    return level, ValueFunction(tuple(V.basis), V.coefficients(solution.values)), solution


def optimize_attenuation(
    u_prev: Controller,
    basis: Sequence[Monomial],
    box: Box,
    model: MixedTrafficModel,
    weights: PerformanceWeights,
    schedule: Optional[LearnerSchedule] = None,
) -> Tuple[AttenuationLevel, ValueFunction]:
    """
    Smallest gamma^2 for which some `V` in the basis makes `L(V, u_prev, gamma)` and `V` SOS.

    Raises
    ------
    SolverError
        No attenuation level can be certified for `u_prev`.
    """
    level, V, _ = _optimize(u_prev, basis, box, model, weights, schedule or LearnerSchedule())
    return level, V


def gap_identity_check(
    V: ValueFunction,
    u_new: Controller,
    u_old: Controller,
    gamma_sq: GammaLike,
    model: MixedTrafficModel,
    weights: PerformanceWeights,
) -> float:
    """
    Coefficient norm of `L(V, u_new) - L(V, u_old) - du^T R du`, zero up to rounding when
    `u_new` is the improved policy of `V`.
    """
    nvars = model.state_dim + 1
    delta = [(a - b).embed(nvars) for a, b in zip(u_new.components, u_old.components)]
    gap = _quadratic_form(delta, weights.R(model.m), nvars)
    lhs = negative_hamiltonian(V, u_new, gamma_sq, model, weights)
    rhs = negative_hamiltonian(V, u_old, gamma_sq, model, weights)
    return (lhs - rhs - gap).coefficient_norm()


def verify_certificate(
    V: ValueFunction,
    u: Controller,
    gamma: AttenuationLevel,
    model: MixedTrafficModel,
    weights: PerformanceWeights,
    box: Box,
    schedule: Optional[LearnerSchedule] = None,
) -> SosSolution:
    """
    Re-checks an accepted `(V, u, gamma)` triple as a standalone feasibility program.
    """
    schedule = schedule or LearnerSchedule()
    _check_box(model, box)
    program = SosProgram(prune=schedule.prune, name="certificate")
    hamiltonian = AffinePoly.coerce(negative_hamiltonian(V, u, gamma, model, weights), model.state_dim + 1)
    hamiltonian = _localize(program, hamiltonian, model, box, schedule.localize)
    program.add_sos_constraint(hamiltonian, label="hamiltonian")
    program.add_sos_constraint(V.polynomial(), label="value")
    return program.solve(schedule.sdp)


# <!-- Learning loop -->


def run(
    model: MixedTrafficModel,
    weights: PerformanceWeights,
    box: Box,
    basis: Sequence[Monomial],
    u0: Controller,
    schedule: Optional[LearnerSchedule] = None,
    *,
    on_round: Optional[Callable[[OuterRound], None]] = None,
) -> LearningResult:
    """
    Two-loop policy iteration.

    Each outer round minimises gamma for the current controller, then alternates policy
    evaluation and improvement at that level (plus `gamma_margin`, never above the previous
    round's level) until `int_Omega V dx` stops decreasing by `tol_inner` relatively. The
    run stops once gamma decreases by less than `tol_outer` or after `outer_max` rounds.

    Parameters
    -----------
    on_round : Optional[Callable[[OuterRound], None]]
        Called with the certified triple of every finished round.

    Raises
    ------
    SolverError
        A program failed. The exception carries the log up to the failure.
    """
    schedule = schedule or LearnerSchedule()
    _check_box(model, box)
    _check_dimensions(model, u0, model.state_dim)
    basis = [tuple(m) for m in basis]
    log = IterationLog()
    u = u0
    prev_gamma_sq = math.inf
    rounds = 1 if schedule.fixed_gamma is not None else schedule.outer_max
    result: Optional[LearningResult] = None

    try:
        for i in range(1, rounds + 1):
            start = time.perf_counter()
            if schedule.fixed_gamma is None:
                level_min, V, solution = _optimize(u, basis, box, model, weights, schedule)
                padded = level_min.gamma_sq * (1.0 + schedule.gamma_margin)
                level = AttenuationLevel(min(padded, prev_gamma_sq))
                stage = "attenuation"
                logger.info("Round %d: certified gamma %.6g for the current controller.", i, level_min.gamma)
            else:
                level = AttenuationLevel.from_gamma(schedule.fixed_gamma)
                V, solution = _evaluate(u, level, None, box, basis, model, weights, schedule)
                stage = "evaluation"
            log.append(
                IterationRecord(
                    i,
                    0,
                    stage,
                    level.gamma_sq,
                    V.integral(box),
                    solution.status,
                    solution.inaccurate,
                    seconds=time.perf_counter() - start,
                    value=V,
                    sdp_gap=solution.sdp_gap,
                )
            )

            objective = V.integral(box)
            for k in range(1, schedule.inner_max + 1):
                start = time.perf_counter()
                u_prev = u
                V, solution = _evaluate(u_prev, level, V, box, basis, model, weights, schedule)
                u = policy_improvement(V, model, weights)
                residual = gap_identity_check(V, u, u_prev, level, model, weights)
                new_objective = V.integral(box)
                log.append(
                    IterationRecord(
                        i,
                        k,
                        "evaluation",
                        level.gamma_sq,
                        new_objective,
                        solution.status,
                        solution.inaccurate,
                        residual,
                        time.perf_counter() - start,
                        V,
                        u,
                        solution.sdp_gap,
                    )
                )
                logger.debug(
                    "Round %d, step %d: objective %.8g, gap residual %.1e.", i, k, new_objective, residual
                )
                decrease = objective - new_objective
                objective = new_objective
                if decrease <= schedule.tol_inner * max(abs(objective), 1e-12):
                    break

            log.close_round(i, level.gamma_sq)
            result = LearningResult(u, level, V, log)
            if on_round is not None:
                on_round(OuterRound(i, level, V, u))
            logger.info("Round %d finished: gamma %.6g after %d evaluations.", i, level.gamma, k)

            if math.isfinite(prev_gamma_sq) and math.sqrt(prev_gamma_sq) - level.gamma < schedule.tol_outer:
                break
            prev_gamma_sq = level.gamma_sq
    except SolverError as exc:
        exc.log = log
        raise

    return result
