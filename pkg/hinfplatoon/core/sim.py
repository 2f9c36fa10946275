from __future__ import annotations

import csv
import math

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union, TYPE_CHECKING

import numpy as np
import scipy.integrate

from .enums import DisturbanceKind, DynamicsMode
from .errors import GainError, SimulationBlowUpError
from .models import getLogger
from .polyalg import Box
from .traffic import MixedTrafficModel, PerformanceWeights
from .types import DisturbancePayload
from .utils import format_float


if TYPE_CHECKING:
    from .learner import Controller


__all__ = (
    "DisturbanceSignal",
    "SimulationConfig",
    "SimulationTrace",
    "GainEstimate",
    "HeadTrack",
    "Scenario",
    "simulate",
    "simulate_many",
    "empirical_gain",
    "head_vehicle_track",
    "peak_deviation",
    "random_initial_state",
)


logger = getLogger(__name__)

PAPER_RATE = 20.0 / math.pi


@dataclass(frozen=True)
class DisturbanceSignal:
    """
    Velocity deviation `w(t)` of the head vehicle, in m/s.

    Use the constructors rather than the raw fields: :meth:`sinusoid`, :meth:`constant`,
    :meth:`braking_pulse`, :meth:`custom` and :meth:`zero`.
    """

    kind: DisturbanceKind
    amplitude: float = 0.0
    rate: float = 0.0
    start: float = 0.0
    duration: float = 0.0
    times: Tuple[float, ...] = ()
    values: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind is DisturbanceKind.INVALID:
            raise ValueError("Invalid disturbance kind.")
        if self.kind is DisturbanceKind.BRAKING_PULSE and not (self.duration > 0 and self.start >= 0):
            raise ValueError(f"Invalid braking pulse. Expected a positive duration, got {self.duration}.")
        if self.kind is DisturbanceKind.CUSTOM:
            if len(self.times) < 2 or len(self.times) != len(self.values):
                raise ValueError("Invalid custom disturbance. Expected at least two (time, value) samples.")
            if np.any(np.diff(self.times) <= 0):
                raise ValueError("Invalid custom disturbance. Sample times must be strictly increasing.")

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} kind='{self.kind.value}' amplitude={self.amplitude}>"

    @classmethod
    def sinusoid(cls, amplitude: float = 5.0, rate: float = PAPER_RATE) -> "DisturbanceSignal":
        """`amplitude * sin(rate * t)`; the defaults give `5 sin(20 t / pi)`."""
        return cls(DisturbanceKind.SINUSOID, float(amplitude), float(rate))

    @classmethod
    def constant(cls, value: float) -> "DisturbanceSignal":
        return cls(DisturbanceKind.CONSTANT, float(value))

    @classmethod
    def braking_pulse(cls, depth: float, start: float, duration: float) -> "DisturbanceSignal":
        """`-depth` on `[start, start + duration)`, zero elsewhere."""
        return cls(DisturbanceKind.BRAKING_PULSE, float(depth), start=float(start), duration=float(duration))

    @classmethod
    def custom(cls, times: Sequence[float], values: Sequence[float]) -> "DisturbanceSignal":
        """Linear interpolation of the samples, zero after the last one."""
        return cls(
            DisturbanceKind.CUSTOM,
            times=tuple(float(t) for t in times),
            values=tuple(float(v) for v in values),
        )

    @classmethod
    def zero(cls) -> "DisturbanceSignal":
        return cls.constant(0.0)

    def __call__(self, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        t_arr = np.asarray(t, dtype=float)
        if self.kind is DisturbanceKind.SINUSOID:
            out = self.amplitude * np.sin(self.rate * t_arr)
        elif self.kind is DisturbanceKind.CONSTANT:
            out = np.full_like(t_arr, self.amplitude)
        elif self.kind is DisturbanceKind.BRAKING_PULSE:
            active = (t_arr >= self.start) & (t_arr < self.start + self.duration)
            out = np.where(active, -self.amplitude, 0.0)
        else:
            out = np.interp(t_arr, self.times, self.values, left=self.values[0], right=0.0)
        return float(out) if out.ndim == 0 else out

    def to_payload(self) -> DisturbancePayload:
        payload: DisturbancePayload = {
            "kind": self.kind.value,
            "amplitude": self.amplitude,
            "rate": self.rate,
        }
        if self.kind is DisturbanceKind.BRAKING_PULSE:
            payload.update(start=self.start, duration=self.duration)
        if self.kind is DisturbanceKind.CUSTOM:
            payload.update(times=list(self.times), values=list(self.values))
        return payload


@dataclass(frozen=True)
class SimulationConfig:
    """
    Fixed-step fourth-order Runge-Kutta settings.

    `initial_state` defaults to the equilibrium. `blow_up` bounds the state norm.
    """

    dt: float = 0.01
    horizon: float = 30.0
    initial_state: Optional[Tuple[float, ...]] = None
    blow_up: float = 1e3

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"Invalid time step {self.dt}. Expected a positive value.")
        if not self.horizon >= self.dt:
            raise ValueError(f"Invalid horizon {self.horizon}. Expected at least one time step.")
        if not self.blow_up > 0:
            raise ValueError(f"Invalid blow-up bound {self.blow_up}.")
        if self.initial_state is not None:
            object.__setattr__(self, "initial_state", tuple(float(v) for v in self.initial_state))

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def time_grid(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass(eq=False)
class SimulationTrace:
    """
    Time-aligned rows of one simulation. `states` holds deviations `[s_1, v_1, ...]`.
    """

    time: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    disturbance: np.ndarray
    output_norm_sq: np.ndarray
    head_velocity: np.ndarray
    cav_indices: Tuple[int, ...] = ()
    baseline: bool = False

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__} samples={len(self.time)} n={self.n} "
            f"horizon={self.time[-1] if len(self.time) else 0.0:.2f}>"
        )

    @property
    def n(self) -> int:
        return self.states.shape[1] // 2

    def spacing(self, vehicle: int) -> np.ndarray:
        return self.states[:, 2 * (vehicle - 1)]

    def velocity(self, vehicle: int) -> np.ndarray:
        """Velocity deviation of a 1-based vehicle; vehicle 0 is the head."""
        if vehicle == 0:
            return self.disturbance
        return self.states[:, 2 * (vehicle - 1) + 1]

    def header(self) -> List[str]:
        cols = ["t"]
        for i in range(1, self.n + 1):
            cols += [f"s_{i}", f"v_{i}"]
        cols += [f"u_{j}" for j in range(1, self.inputs.shape[1] + 1)]
        return cols + ["w", "z_sq"]

    def to_rows(self) -> np.ndarray:
        return np.column_stack(
            [self.time, self.states, self.inputs, self.disturbance, self.output_norm_sq]
        )

    def to_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(self.header())
            for row in self.to_rows():
                writer.writerow([format_float(v) for v in row])


class GainEstimate(NamedTuple):
    numerator: float  # int ||z||^2 dt
    denominator: float  # int ||w||^2 dt
    gamma: float


class HeadTrack(NamedTuple):
    time: np.ndarray
    velocity: np.ndarray
    position: np.ndarray


class Scenario(NamedTuple):
    controller: Optional["Controller"]
    disturbance: DisturbanceSignal
    config: SimulationConfig
    dynamics: DynamicsMode = DynamicsMode.EXACT


def _output_norm_sq(states: np.ndarray, inputs: np.ndarray, weights: PerformanceWeights) -> np.ndarray:
    q = np.tile([weights.theta_s ** 2, weights.theta_v ** 2], states.shape[1] // 2)
    return states ** 2 @ q + weights.theta_u ** 2 * np.sum(inputs ** 2, axis=1)


def simulate(
    model: MixedTrafficModel,
    controller: Optional["Controller"],
    w: DisturbanceSignal,
    cfg: Optional[SimulationConfig] = None,
    dynamics: DynamicsMode = DynamicsMode.EXACT,
    weights: Optional[PerformanceWeights] = None,
) -> SimulationTrace:
    """
    Integrates the closed loop with RK4.

    Parameters
    -----------
    controller : Optional[Controller]
        The state feedback of the CAVs. `None` simulates the all-HDV baseline, where the
        CAV positions follow the OVM law with the fleet's baseline parameters and the
        recorded inputs are zero.
    dynamics : DynamicsMode
        `EXACT` uses the piecewise desired velocity, `APPROXIMATED` the certified
        polynomial model.

    Raises
    ------
    SimulationBlowUpError
        The state norm exceeded `cfg.blow_up` or became non-finite. The partial trace is
        attached.
    """
    cfg = cfg or SimulationConfig()
    weights = weights or PerformanceWeights()
    if dynamics is DynamicsMode.INVALID:
        raise ValueError("Invalid dynamics mode.")
    nx, m = model.state_dim, model.m
    baseline = controller is None
    if not baseline and (controller.nvars != nx or controller.m != m):
        raise ValueError(
            f"Controller has {controller.m} inputs over {controller.nvars} variables; expected {m} over {nx}."
        )
    x0 = np.zeros(nx) if cfg.initial_state is None else np.asarray(cfg.initial_state, dtype=float)
    if x0.shape != (nx,):
        raise ValueError(f"Invalid initial state shape {x0.shape}. Expected ({nx},).")
    approx = dynamics is DynamicsMode.APPROXIMATED

    def policy(x: np.ndarray) -> np.ndarray:
        return np.zeros(m) if baseline else controller(x)

    def rhs(t: float, x: np.ndarray) -> np.ndarray:
        u = policy(x)
        if approx and not baseline:
            return model.approx_rhs(x, u, w(t))
        return model.rhs(x, u, w(t), approx=approx, baseline=baseline)

    time_grid = cfg.time_grid()
    dt = cfg.dt
    states = np.zeros((len(time_grid), nx))
    inputs = np.zeros((len(time_grid), m))
    states[0] = x0
    inputs[0] = policy(x0)

    def trace(upto: int) -> SimulationTrace:
        t, x, u = time_grid[:upto], states[:upto], inputs[:upto]
        dist = np.asarray(w(t), dtype=float).reshape(-1)
        return SimulationTrace(
            t,
            x,
            u,
            dist,
            _output_norm_sq(x, u, weights),
            model.equilibrium.v_star + dist,
            model.fleet.cav_indices,
            baseline,
        )

    x = x0
    for step in range(cfg.steps):
        t = time_grid[step]
        k1 = rhs(t, x)
        k2 = rhs(t + dt / 2, x + dt / 2 * k1)
        k3 = rhs(t + dt / 2, x + dt / 2 * k2)
        k4 = rhs(t + dt, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        norm = float(np.linalg.norm(x))
        if not math.isfinite(norm) or norm > cfg.blow_up:
            raise SimulationBlowUpError(float(time_grid[step + 1]), norm, trace(step + 1))
        states[step + 1] = x
        inputs[step + 1] = policy(x)

    return trace(len(time_grid))


def simulate_many(
    model: MixedTrafficModel,
    scenarios: Sequence[Scenario],
    weights: Optional[PerformanceWeights] = None,
    *,
    max_workers: Optional[int] = None,
) -> List[SimulationTrace]:
    """
    Runs independent scenarios on a thread pool and returns the traces in order.
    """
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [
            pool.submit(simulate, model, s.controller, s.disturbance, s.config, s.dynamics, weights)
            for s in scenarios
        ]
        return [f.result() for f in futures]


def empirical_gain(trace: SimulationTrace, weights: Optional[PerformanceWeights] = None) -> GainEstimate:
    """
    `sqrt(int ||z||^2 dt / int ||w||^2 dt)` by trapezoidal quadrature over the trace.

    With `weights` the output energy is recomputed from the states and inputs; otherwise
    the trace's own `||z||^2` series is used.

    Raises
    ------
    GainError
        The disturbance carries no energy.
    """
    z_sq = trace.output_norm_sq if weights is None else _output_norm_sq(trace.states, trace.inputs, weights)
    w_sq = trace.disturbance ** 2
    num = float(scipy.integrate.trapezoid(z_sq, trace.time))
    den = float(scipy.integrate.trapezoid(w_sq, trace.time))
    if not den > 0:
        raise GainError("Empirical gain is undefined for a disturbance without energy.")
    if np.any(trace.states[0] != 0):
        logger.warning("Initial state is not the equilibrium; the empirical gain is only indicative.")

    tail = trace.time >= trace.time[-1] - 0.1 * (trace.time[-1] - trace.time[0])
    tail_num = float(scipy.integrate.trapezoid(z_sq[tail], trace.time[tail]))
    tail_den = float(scipy.integrate.trapezoid(w_sq[tail], trace.time[tail]))
    if (num > 0 and tail_num > 0.01 * num) or tail_den > 0.01 * den:
        logger.warning("The last 10%% of the horizon holds over 1%% of the energy; gain may be truncated.")
    return GainEstimate(num, den, math.sqrt(num / den))


def head_vehicle_track(
    w: DisturbanceSignal, v_star: float, cfg: Optional[SimulationConfig] = None
) -> HeadTrack:
    """
    Head-vehicle velocity `v* + w(t)` and its position, starting at 0.
    """
    cfg = cfg or SimulationConfig()
    t = cfg.time_grid()
    velocity = v_star + np.asarray(w(t), dtype=float).reshape(-1)
    position = scipy.integrate.cumulative_trapezoid(velocity, t, initial=0.0)
    return HeadTrack(t, velocity, position)


def peak_deviation(trace: SimulationTrace, vehicle: int, window: float = 10.0) -> float:
    """
    Largest `|v_vehicle|` over the trailing `window` seconds.
    """
    if not 0 <= vehicle <= trace.n:
        raise ValueError(f"Invalid vehicle {vehicle} for a platoon of {trace.n}.")
    mask = trace.time >= trace.time[-1] - window
    return float(np.max(np.abs(trace.velocity(vehicle)[mask])))


def random_initial_state(box: Box, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """
    Uniform sample of the box shrunk by `scale` around its centre.
    """
    if not 0 < scale <= 1:
        raise ValueError(f"Invalid scale {scale}. Expected a value in (0, 1].")
    lower, upper = np.asarray(box.lower), np.asarray(box.upper)
    centre = 0.5 * (lower + upper)
    half = 0.5 * (upper - lower) * scale
    return rng.uniform(centre - half, centre + half)
