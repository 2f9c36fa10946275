from __future__ import annotations

import math

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.optimize

from .enums import SdpStatus, SolveStatus
from .errors import StructurallyInfeasibleError
from .models import getLogger
from .polyalg import AffinePoly, Box, Monomial, Polynomial, box_moment, monomial_basis
from .sdp import SdpOptions, SdpResult, SdpStandardForm, solve_sdp


__all__ = (
    "DecisionPoly",
    "DecisionScalar",
    "SosConstraint",
    "SdpProblem",
    "SosSolution",
    "SosProgram",
    "newton_prune",
    "gram_polynomial",
)


logger = getLogger(__name__)

# decision variable index -> weight; the key `None` holds a constant offset
LinearFunctional = Dict[Optional[int], float]


@dataclass(frozen=True)
class DecisionPoly:
    """
    `sum_i c_i * basis_i(x)` with unknown coefficients `c_i`, one decision variable each.
    """

    basis: Tuple[Monomial, ...]
    variables: Tuple[int, ...]

    @property
    def nvars(self) -> int:
        return len(self.basis[0])

    def __len__(self) -> int:
        return len(self.basis)

    def expression(self, nvars: Optional[int] = None) -> AffinePoly:
        """
        The decision polynomial as an affine expression, optionally lifted to `nvars`
        indeterminates.
        """
        expr = AffinePoly(
            self.nvars, {v: Polynomial.monomial(m) for m, v in zip(self.basis, self.variables)}
        )
        return expr if nvars is None else expr.embed(nvars)

    def integral(self, box: Box) -> LinearFunctional:
        """
        `int_box V dx` as a linear functional of the coefficients.
        """
        return {v: box_moment(m, box) for m, v in zip(self.basis, self.variables)}

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        return np.asarray([values[v] for v in self.variables], dtype=float)

    def substitute(self, values: np.ndarray) -> Polynomial:
        return Polynomial(self.nvars, {m: values[v] for m, v in zip(self.basis, self.variables)})


@dataclass(frozen=True)
class DecisionScalar:
    index: int
    lower: Optional[float] = None

    def expression(self, nvars: int) -> AffinePoly:
        return AffinePoly(nvars, {self.index: Polynomial.constant(nvars, 1.0)})


@dataclass
class SosConstraint:
    """
    `expr` must be a sum of squares in the indeterminates, certified with the Gram basis.
    """

    expr: AffinePoly
    indeterminates: Tuple[int, ...]
    gram_basis: Tuple[Monomial, ...]
    label: str

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__} label='{self.label}' degree={self.expr.degree} "
            f"gram={len(self.gram_basis)}>"
        )


@dataclass
class SdpProblem:
    """
    Translation of an SOS program: the standard-form SDP plus the bookkeeping needed to
    read a solution back.

    Decision variable `j` is free variable `j` of the SDP. SOS constraint `i` owns PSD
    block `gram_blocks[i]` (or `None` when its expression is identically zero) and the
    coefficient-matching rows listed in `row_monomials[i]`.
    """

    sdp: SdpStandardForm
    gram_blocks: List[Optional[int]]
    row_monomials: List[List[Monomial]]
    objective_offset: float = 0.0


@dataclass
class SosSolution:
    status: SolveStatus
    values: np.ndarray
    gram: List[np.ndarray]
    objective: float
    inaccurate: bool = False
    max_residual: float = 0.0
    min_eigenvalue: float = 0.0
    sdp_result: Optional[SdpResult] = field(default=None, repr=False)

    def is_optimal(self) -> bool:
        return self.status is SolveStatus.OPTIMAL

    @property
    def sdp_gap(self) -> float:
        """Duality gap the SDP solver stopped at, zero when no SDP was solved."""
        return self.sdp_result.gap if self.sdp_result is not None else 0.0

    def value(self, decision: Union[DecisionPoly, DecisionScalar]) -> Union[Polynomial, float]:
        if isinstance(decision, DecisionScalar):
            return float(self.values[decision.index])
        return decision.substitute(self.values)


def _graded_key(mono: Monomial):
    return (sum(mono), tuple(-e for e in mono))


def newton_prune(candidates: Sequence[Monomial], support: Sequence[Monomial]) -> List[Monomial]:
    """
    Keeps the candidates whose double lies in the convex hull of `support`.

    Membership is one LP feasibility problem per candidate that survives the cheap
    bounding-box and degree tests.
    """
    if not support:
        return []
    pts = np.array(sorted(support, key=_graded_key), dtype=float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    degrees = pts.sum(axis=1)
    dmin, dmax = degrees.min(), degrees.max()
    known = {tuple(int(e) for e in row) for row in pts}
    A_eq = np.vstack([pts.T, np.ones(pts.shape[0])])
    cost = np.zeros(pts.shape[0])
    kept: List[Monomial] = []
    for alpha in candidates:
        target = 2.0 * np.asarray(alpha, dtype=float)
        if np.any(target < lo) or np.any(target > hi) or not dmin <= target.sum() <= dmax:
            continue
        if tuple(2 * e for e in alpha) in known:
            kept.append(alpha)
            continue
        res = scipy.optimize.linprog(
            cost, A_eq=A_eq, b_eq=np.append(target, 1.0), bounds=(0, None), method="highs"
        )
        if res.status == 0:
            kept.append(alpha)
    return kept


class SosProgram:
    """
    Mutable builder for an SOS program: declare decision polynomials and scalars, add SOS
    constraints and linear side constraints, set a linear objective, then :meth:`solve`.

    Parameters
    -----------
    prune : bool
        Prune Gram bases with the Newton polytope of each constrained expression.
        Defaults to `False`, which uses the full half-degree basis.
    eps_psd : float
        Eigenvalue floor accepted for returned Gram matrices.
    eps_eq : Optional[float]
        Coefficient-match residual accepted, measured like the SDP primal residual:
        `||r|| / (1 + ||b||)` over every matching row. Defaults to the solver's `tol_feas`,
        so an optimal SDP always passes.
    name : str
        Label used in log messages.
    """

    def __init__(
        self,
        *,
        prune: bool = False,
        eps_psd: float = 1e-7,
        eps_eq: Optional[float] = None,
        name: str = "sos",
    ):
        self.prune: bool = prune
        self.eps_psd: float = eps_psd
        self.eps_eq: Optional[float] = eps_eq
        self.name: str = name
        self._num_vars: int = 0
        self._lower_bounds: Dict[int, float] = {}
        self._inequalities: List[Tuple[LinearFunctional, float]] = []
        self.constraints: List[SosConstraint] = []
        self.objective: LinearFunctional = {}

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__} name='{self.name}' variables={self._num_vars} "
            f"constraints={len(self.constraints)}>"
        )

    @property
    def num_variables(self) -> int:
        return self._num_vars

    def _allocate(self, count: int) -> Tuple[int, ...]:
        start = self._num_vars
        self._num_vars += count
        return tuple(range(start, start + count))

    def declare_poly(self, basis: Sequence[Monomial]) -> DecisionPoly:
        """
        Allocates one decision variable per basis monomial.

        Raises
        ------
        ValueError
            Empty basis, inconsistent monomial lengths or duplicate monomials.
        """
        basis = tuple(tuple(int(e) for e in m) for m in basis)
        if not basis:
            raise ValueError("Invalid basis. Expected at least one monomial.")
        if len({len(m) for m in basis}) != 1:
            raise ValueError("Invalid basis. All monomials must have the same number of variables.")
        if len(set(basis)) != len(basis):
            raise ValueError("Invalid basis. Duplicate monomials found.")
        return DecisionPoly(basis, self._allocate(len(basis)))

    def declare_scalar(self, *, lower: Optional[float] = None) -> DecisionScalar:
        """
        Allocates a scalar decision variable, optionally bounded below.
        """
        (index,) = self._allocate(1)
        if lower is not None:
            self._lower_bounds[index] = float(lower)
        return DecisionScalar(index, lower)

    def add_linear_inequality(self, functional: LinearFunctional, rhs: float) -> None:
        """
        Records `functional >= rhs`.
        """
        self._check_functional(functional)
        self._inequalities.append((dict(functional), float(rhs)))

    def _check_functional(self, functional: Mapping[Optional[int], float]) -> None:
        for key in functional:
            if key is not None and not 0 <= key < self._num_vars:
                raise ValueError(f"Unknown decision variable {key}.")

    def add_sos_constraint(
        self,
        expr: Union[AffinePoly, Polynomial],
        indeterminates: Optional[Sequence[int]] = None,
        *,
        label: Optional[str] = None,
    ) -> int:
        """
        Requires `expr` to be a sum of squares in the given indeterminates (all of them
        by default). Returns the constraint id.

        The Gram basis holds every monomial of the indeterminates between half the lowest
        and half the even-rounded highest degree of `expr`, Newton-pruned when the program
        was created with `prune=True`.
        """
        expr = AffinePoly.coerce(expr, getattr(expr, "nvars", 1))
        self._check_functional({k: 1.0 for k in expr.decision_variables()})
        nvars = expr.nvars
        indet = tuple(range(nvars)) if indeterminates is None else tuple(sorted(set(indeterminates)))
        if any(not 0 <= i < nvars for i in indet):
            raise ValueError(f"Invalid indeterminates {indet} for {nvars} variables.")
        stray = expr.variables() - set(indet)
        if stray:
            raise ValueError(f"Expression depends on variables {sorted(stray)} outside the indeterminates.")

        half = (expr.degree + 1) // 2
        candidates = []
        for reduced in monomial_basis(len(indet), expr.min_degree // 2, half):
            full = [0] * nvars
            for pos, e in zip(indet, reduced):
                full[pos] = e
            candidates.append(tuple(full))
        if self.prune:
            before = len(candidates)
            candidates = newton_prune(candidates, sorted(expr.support(), key=_graded_key))
            logger.debug("Newton pruning kept %d of %d Gram monomials.", len(candidates), before)
        cid = len(self.constraints)
        self.constraints.append(
            SosConstraint(expr, indet, tuple(candidates), label or f"{self.name}[{cid}]")
        )
        return cid

    def set_objective(self, functional: Mapping[Optional[int], float]) -> None:
        """
        Minimise the linear functional. Without an objective the program is a pure
        feasibility problem.
        """
        self._check_functional(functional)
        self.objective = dict(functional)

    # <!-- translation -->

    def to_sdp(self) -> SdpProblem:
        """
        Gram-matrix reduction: one PSD block per non-trivial SOS constraint, one 1x1 block
        per bound or linear inequality, one equality row per monomial.

        Raises
        ------
        ValueError
            The program has no constraint.
        StructurallyInfeasibleError
            A term with a constant coefficient cannot be produced by the Gram basis.
        """
        if not self.constraints and not self._inequalities and not self._lower_bounds:
            raise ValueError("An SOS program needs at least one constraint.")

        gram_blocks: List[Optional[int]] = []
        block_sizes: List[int] = []
        for con in self.constraints:
            if con.gram_basis:
                gram_blocks.append(len(block_sizes))
                block_sizes.append(len(con.gram_basis))
            else:
                gram_blocks.append(None)
        side = [({k: 1.0}, lb) for k, lb in sorted(self._lower_bounds.items())] + self._inequalities
        side_blocks = list(range(len(block_sizes), len(block_sizes) + len(side)))
        block_sizes.extend([1] * len(side))
        if not block_sizes:
            # every constraint is trivially zero; keep one dummy block so the SDP is well formed
            block_sizes.append(1)

        sdp = SdpStandardForm(block_sizes, self._num_vars)
        row_monomials: List[List[Monomial]] = []
        for con, block in zip(self.constraints, gram_blocks):
            products: Dict[Monomial, List[Tuple[int, int]]] = {}
            basis = con.gram_basis
            for a in range(len(basis)):
                for b in range(a, len(basis)):
                    mono = tuple(x + y for x, y in zip(basis[a], basis[b]))
                    products.setdefault(mono, []).append((a, b))
            rows = sorted(set(products) | con.expr.support(), key=_graded_key)
            const = con.expr.constant_part()
            kept_rows = []
            for mono in rows:
                entries = [(block, a, b, 1.0) for a, b in products.get(mono, ())]
                free = {
                    key: -con.expr.part(key).coefficient(mono)
                    for key in con.expr.decision_variables()
                    if con.expr.part(key).coefficient(mono) != 0.0
                }
                rhs = const.coefficient(mono)
                if not entries and not free:
                    if rhs != 0.0:
                        raise StructurallyInfeasibleError(mono, rhs)
                    continue
                sdp.add_constraint(entries, rhs, free)
                kept_rows.append(mono)
            row_monomials.append(kept_rows)

        for (functional, rhs), block in zip(side, side_blocks):
            # functional - slack = rhs - offset
            free = {k: v for k, v in functional.items() if k is not None}
            sdp.add_constraint([(block, 0, 0, -1.0)], rhs - functional.get(None, 0.0), free)

        sdp.set_objective((), {k: v for k, v in self.objective.items() if k is not None})
        return SdpProblem(sdp, gram_blocks, row_monomials, self.objective.get(None, 0.0))

    def dump_sdp(self, path: Union[str, Path]) -> None:
        """
        Writes the translated SDP in the plain-text dump format of :class:`SdpStandardForm`.
        """
        self.to_sdp().sdp.dump(path)

    # <!-- solving -->

    def solve(self, options: Optional[SdpOptions] = None) -> SosSolution:
        """
        Translates, solves, and verifies every certificate.

        A stalled SDP whose Gram matrices still pass the eigenvalue floor and the
        coefficient-match bound is accepted as optimal with `inaccurate=True`.
        """
        try:
            problem = self.to_sdp()
        except StructurallyInfeasibleError as exc:
            logger.debug("%s: %s", self.name, exc)
            return SosSolution(SolveStatus.INFEASIBLE, np.full(self._num_vars, np.nan), [], np.nan)

        opts = options or SdpOptions()
        result = solve_sdp(problem.sdp, opts)
        values = result.free.copy()
        grams = [
            result.X[block].copy() if block is not None else np.zeros((0, 0)) for block in problem.gram_blocks
        ]
        objective = float(
            sum(w * values[k] for k, w in self.objective.items() if k is not None)
            + self.objective.get(None, 0.0)
        )
        status = SolveStatus.from_sdp(result.status)
        solution = SosSolution(status, values, grams, objective, sdp_result=result)
        if result.status in (SdpStatus.PRIMAL_INFEASIBLE, SdpStatus.DUAL_INFEASIBLE):
            logger.debug("%s: SDP reported %s.", self.name, result.status.value)
            return solution

        residual, min_eig = self.verify(values, grams, rhs_norm=float(np.linalg.norm(problem.sdp.b)))
        solution.max_residual, solution.min_eigenvalue = residual, min_eig
        limit = opts.tol_feas if self.eps_eq is None else self.eps_eq
        certified = min_eig >= -self.eps_psd and residual <= limit + 1e-14
        if result.status is SdpStatus.OPTIMAL and not certified:
            logger.warning(
                "%s: SDP optimal but certificate check failed (residual %.2e, min eig %.2e).",
                self.name,
                residual,
                min_eig,
            )
            solution.status = SolveStatus.NUMERICAL_FAILURE
        elif result.status is SdpStatus.STALLED and certified:
            logger.warning(
                "%s: SDP stalled after %d iterations (gap %.2e); certificate holds, accepting.",
                self.name,
                result.iterations,
                result.gap,
            )
            solution.status = SolveStatus.OPTIMAL
            solution.inaccurate = True
        logger.debug(
            "%s: %s in %d iterations, objective %.8g.",
            self.name,
            solution.status.value,
            result.iterations,
            objective,
        )
        return solution

    def verify(
        self, values: np.ndarray, grams: Sequence[np.ndarray], rhs_norm: Optional[float] = None
    ) -> Tuple[float, float]:
        """
        Rebuilds each constrained polynomial from its Gram matrix and compares it with the
        substituted expression.

        Parameters
        -----------
        rhs_norm : Optional[float]
            Norm of the SDP right-hand side. Defaults to the norm of the constant parts of
            the constrained expressions.

        Returns
        -------
        Tuple[float, float]
            Coefficient residual `||r|| / (1 + rhs_norm)` over all constraints, and the
            smallest Gram eigenvalue.
        """
        squared, worst_eig = 0.0, np.inf
        assignment = {i: float(v) for i, v in enumerate(values)}
        for con, G in zip(self.constraints, grams):
            target = con.expr.substitute(assignment)
            if con.gram_basis:
                worst_eig = min(worst_eig, float(np.linalg.eigvalsh(0.5 * (G + G.T))[0]))
            rebuilt = gram_polynomial(con.gram_basis, G, con.expr.nvars)
            squared += (rebuilt - target).coefficient_norm() ** 2
        if rhs_norm is None:
            constants = [c.expr.constant_part().coefficient_norm() for c in self.constraints]
            rhs_norm = math.sqrt(sum(c * c for c in constants))
        residual = math.sqrt(squared) / (1.0 + rhs_norm)
        return residual, (0.0 if worst_eig == np.inf else worst_eig)


def gram_polynomial(basis: Sequence[Monomial], gram: np.ndarray, nvars: int) -> Polynomial:
    """
    `m(x)^T G m(x)` for the monomial vector `m`.
    """
    terms: Dict[Monomial, float] = {}
    for a in range(len(basis)):
        for b in range(len(basis)):
            mono = tuple(x + y for x, y in zip(basis[a], basis[b]))
            terms[mono] = terms.get(mono, 0.0) + float(gram[a, b])
    return Polynomial(nvars, terms)
