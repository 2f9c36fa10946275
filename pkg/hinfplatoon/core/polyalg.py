from __future__ import annotations

import math

from dataclasses import dataclass
from typing import (
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np
import scipy.linalg

from .errors import FitError
from .models import getLogger
from .types import PolynomialPayload


__all__ = (
    "Monomial",
    "Polynomial",
    "AffinePoly",
    "Box",
    "PolynomialFit",
    "monomial_degree",
    "monomial_basis",
    "box_moment",
    "integrate_box",
    "fit_polynomial",
)


logger = getLogger(__name__)

Monomial = Tuple[int, ...]
Scalar = Union[int, float, np.floating]


def monomial_degree(monomial: Monomial) -> int:
    return sum(monomial)


def _compositions(nvars: int, degree: int) -> Iterator[Monomial]:
    # lexicographically descending: x1^d first, x_n^d last
    if nvars == 1:
        yield (degree,)
        return
    for first in range(degree, -1, -1):
        for rest in _compositions(nvars - 1, degree - first):
            yield (first,) + rest


def monomial_basis(nvars: int, deg_min: int, deg_max: int) -> List[Monomial]:
    """
    All monomials in `nvars` indeterminates with total degree in `[deg_min, deg_max]`,
    in graded-lex order.

    Example: two variables, degrees 2..2 gives `[x1^2, x1*x2, x2^2]`.

    Raises
    ------
    ValueError
        `nvars < 1` or the degree range is empty or negative.
    """
    if nvars < 1:
        raise ValueError(f"Invalid number of variables. Expected at least 1, got {nvars}.")
    if deg_min < 0 or deg_max < deg_min:
        raise ValueError(f"Invalid degree range [{deg_min}, {deg_max}].")
    basis: List[Monomial] = []
    for degree in range(deg_min, deg_max + 1):
        basis.extend(_compositions(nvars, degree))
    return basis


def _check_monomial(monomial: Iterable[int], nvars: int) -> Monomial:
    mono = tuple(int(e) for e in monomial)
    if len(mono) != nvars:
        raise ValueError(f"Invalid monomial {mono}. Expected {nvars} exponents, got {len(mono)}.")
    if any(e < 0 for e in mono):
        raise ValueError(f"Invalid monomial {mono}. Exponents must be non-negative.")
    return mono


def _add_monomials(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


class Polynomial:
    """
    Sparse real polynomial in a fixed number of indeterminates.

    Terms are stored as a mapping of exponent tuple to coefficient. The mapping is kept
    canonical: no exact-zero coefficient is ever stored, so structurally equal polynomials
    compare equal.

    Parameters
    -----------
    nvars : int
        Number of indeterminates.
    terms : Optional[Mapping[Monomial, float]]
        Initial terms. Repeated monomials are summed.
    """

    __slots__ = ("_nvars", "_terms", "_arrays")

    def __init__(self, nvars: int, terms: Optional[Mapping[Monomial, Scalar]] = None):
        if nvars < 1:
            raise ValueError(f"Invalid number of variables. Expected at least 1, got {nvars}.")
        self._nvars: int = int(nvars)
        self._terms: Dict[Monomial, float] = {}
        self._arrays: Optional[Tuple[np.ndarray, np.ndarray]] = None
        if terms:
            for mono, coeff in terms.items():
                self._accumulate(_check_monomial(mono, self._nvars), float(coeff))

    @classmethod
    def _from_canonical(cls, nvars: int, terms: Dict[Monomial, float]) -> "Polynomial":
        # trusted constructor: terms already checked and free of zeros
        poly = cls.__new__(cls)
        poly._nvars = nvars
        poly._terms = terms
        poly._arrays = None
        return poly

    def _accumulate(self, mono: Monomial, coeff: float) -> None:
        if not math.isfinite(coeff):
            raise ValueError(f"Invalid coefficient {coeff} for monomial {mono}.")
        value = self._terms.get(mono, 0.0) + coeff
        if value == 0.0:
            self._terms.pop(mono, None)
        else:
            self._terms[mono] = value

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars)

    @classmethod
    def constant(cls, nvars: int, value: Scalar) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int) -> "Polynomial":
        """
        The polynomial `x_index` (0-based).
        """
        if not 0 <= index < nvars:
            raise ValueError(f"Invalid variable index {index} for {nvars} variables.")
        mono = tuple(1 if i == index else 0 for i in range(nvars))
        return cls(nvars, {mono: 1.0})

    @classmethod
    def monomial(cls, monomial: Monomial, coefficient: Scalar = 1.0) -> "Polynomial":
        return cls(len(monomial), {monomial: coefficient})

    @classmethod
    def linear(cls, coefficients: Sequence[Scalar]) -> "Polynomial":
        """
        The linear form `sum_i c_i x_i`.
        """
        nvars = len(coefficients)
        terms = {}
        for i, c in enumerate(coefficients):
            terms[tuple(1 if j == i else 0 for j in range(nvars))] = c
        return cls(nvars, terms)

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__} nvars={self._nvars} terms={len(self._terms)} degree={self.degree}>"
        )

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        parts = []
        for mono in sorted(self._terms, key=lambda m: (sum(m), tuple(-e for e in m))):
            factors = [f"x{i + 1}" + (f"^{e}" if e > 1 else "") for i, e in enumerate(mono) if e]
            coeff = self._terms[mono]
            parts.append(f"{coeff:+.6g}" + ("*" + "*".join(factors) if factors else ""))
        return " ".join(parts)

    @property
    def nvars(self) -> int:
        return self._nvars

    @property
    def terms(self) -> Dict[Monomial, float]:
        """
        A copy of the canonical term mapping.
        """
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self) -> int:
        return len(self._terms)

    def __iter__(self) -> Iterator[Monomial]:
        return iter(self._terms)

    def __contains__(self, monomial: Monomial) -> bool:
        return monomial in self._terms

    def coefficient(self, monomial: Monomial) -> float:
        return self._terms.get(tuple(monomial), 0.0)

    @property
    def degree(self) -> int:
        """
        Total degree. The zero polynomial has degree 0.
        """
        return max((sum(m) for m in self._terms), default=0)

    @property
    def min_degree(self) -> int:
        return min((sum(m) for m in self._terms), default=0)

    def support(self) -> Set[Monomial]:
        return set(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def variables(self) -> Set[int]:
        """
        Indices of the indeterminates this polynomial actually depends on.
        """
        used = set()
        for mono in self._terms:
            used.update(i for i, e in enumerate(mono) if e)
        return used

    def _check_compatible(self, other: "Polynomial") -> None:
        if other._nvars != self._nvars:
            raise ValueError(
                f"Incompatible polynomials. Expected {self._nvars} variables, got {other._nvars} instead."
            )

    # <!-- arithmetic -->

    def __add__(self, other: Union["Polynomial", Scalar]) -> "Polynomial":
        if isinstance(other, (int, float, np.floating)):
            other = Polynomial.constant(self._nvars, other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check_compatible(other)
        result = Polynomial._from_canonical(self._nvars, dict(self._terms))
        for mono, coeff in other._terms.items():
            result._accumulate(mono, coeff)
        return result

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial._from_canonical(self._nvars, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other: Union["Polynomial", Scalar]) -> "Polynomial":
        if isinstance(other, (int, float, np.floating)):
            return self + (-float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other: Scalar) -> "Polynomial":
        return (-self) + other

    def scale(self, factor: Scalar) -> "Polynomial":
        factor = float(factor)
        if factor == 0.0:
            return Polynomial.zero(self._nvars)
        result = Polynomial._from_canonical(self._nvars, {})
        for mono, coeff in self._terms.items():
            result._accumulate(mono, coeff * factor)
        return result

    def __mul__(self, other: Union["Polynomial", Scalar]) -> "Polynomial":
        if isinstance(other, (int, float, np.floating)):
            return self.scale(other)
        if not isinstance(other, Polynomial):
            return NotImplemented
        self._check_compatible(other)
        result = Polynomial._from_canonical(self._nvars, {})
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                result._accumulate(_add_monomials(m1, m2), c1 * c2)
        return result

    def __rmul__(self, other: Scalar) -> "Polynomial":
        if isinstance(other, (int, float, np.floating)):
            return self.scale(other)
        return NotImplemented

    def __truediv__(self, other: Scalar) -> "Polynomial":
        if isinstance(other, (int, float, np.floating)):
            return self.scale(1.0 / float(other))
        return NotImplemented

    def __pow__(self, exponent: int) -> "Polynomial":
        if not isinstance(exponent, int) or exponent < 0:
            raise ValueError(f"Invalid exponent {exponent}. Expected a non-negative integer.")
        result = Polynomial.constant(self._nvars, 1.0)
        base = self
        while exponent:
            if exponent & 1:
                result = result * base
            exponent >>= 1
            if exponent:
                base = base * base
        return result

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._nvars == other._nvars and self._terms == other._terms

    __hash__ = None

    def is_close(self, other: "Polynomial", atol: float = 1e-9) -> bool:
        """
        Coefficient-wise comparison with an absolute tolerance.
        """
        self._check_compatible(other)
        for mono in self.support() | other.support():
            if abs(self.coefficient(mono) - other.coefficient(mono)) > atol:
                return False
        return True

    def coefficient_norm(self) -> float:
        """
        Euclidean norm of the coefficient vector.
        """
        return math.sqrt(sum(c * c for c in self._terms.values()))

    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def without_constant(self) -> "Polynomial":
        terms = dict(self._terms)
        terms.pop((0,) * self._nvars, None)
        return Polynomial._from_canonical(self._nvars, terms)

    # <!-- calculus -->

    def diff(self, index: int) -> "Polynomial":
        """
        Partial derivative with respect to `x_index` (0-based).
        """
        if not 0 <= index < self._nvars:
            raise ValueError(f"Invalid variable index {index} for {self._nvars} variables.")
        result = Polynomial._from_canonical(self._nvars, {})
        for mono, coeff in self._terms.items():
            e = mono[index]
            if e == 0:
                continue
            lowered = mono[:index] + (e - 1,) + mono[index + 1 :]
            result._accumulate(lowered, coeff * e)
        return result

    def gradient(self) -> List["Polynomial"]:
        return [self.diff(i) for i in range(self._nvars)]

    def linear_part(self) -> np.ndarray:
        """
        Coefficients of the degree-one terms, i.e. the gradient at the origin.
        """
        out = np.zeros(self._nvars)
        for mono, coeff in self._terms.items():
            if sum(mono) == 1:
                out[mono.index(1)] = coeff
        return out

    # <!-- evaluation -->

    def _compiled(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._arrays is None:
            if self._terms:
                exps = np.array(list(self._terms.keys()), dtype=float)
                coeffs = np.array(list(self._terms.values()), dtype=float)
            else:
                exps = np.zeros((0, self._nvars))
                coeffs = np.zeros(0)
            self._arrays = (exps, coeffs)
        return self._arrays

    def evaluate(self, point: Sequence[float]) -> float:
        x = np.asarray(point, dtype=float)
        if x.shape != (self._nvars,):
            raise ValueError(f"Invalid point shape {x.shape}. Expected ({self._nvars},).")
        exps, coeffs = self._compiled()
        if not coeffs.size:
            return 0.0
        return float(np.prod(x ** exps, axis=1) @ coeffs)

    __call__ = evaluate

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """
        Evaluates at every row of a `(K, nvars)` array.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self._nvars:
            raise ValueError(f"Invalid points shape {pts.shape}. Expected (K, {self._nvars}).")
        exps, coeffs = self._compiled()
        if not coeffs.size:
            return np.zeros(pts.shape[0])
        return np.prod(pts[:, None, :] ** exps[None, :, :], axis=2) @ coeffs

    # <!-- structure -->

    def embed(self, nvars: int) -> "Polynomial":
        """
        The same polynomial seen in `nvars >= self.nvars` indeterminates; the new ones are
        appended after the existing ones and do not appear.
        """
        if nvars < self._nvars:
            raise ValueError(f"Cannot embed {self._nvars} variables into {nvars}.")
        pad = (0,) * (nvars - self._nvars)
        return Polynomial._from_canonical(nvars, {m + pad: c for m, c in self._terms.items()})

    def compose_affine(self, scale: float, shift: float) -> "Polynomial":
        """
        For a univariate `p`, returns `q(x) = p(scale * x + shift)`.
        """
        if self._nvars != 1:
            raise ValueError("Affine composition is only defined for univariate polynomials.")
        inner = Polynomial(1, {(1,): scale, (0,): shift})
        result = Polynomial.zero(1)
        for k in range(self.degree, -1, -1):
            result = result * inner + self.coefficient((k,))
        return result

    def to_payload(self) -> PolynomialPayload:
        """
        JSON-friendly list of `[exponents, coefficient]` pairs, graded-lex ordered.
        """
        order = sorted(self._terms, key=lambda m: (sum(m), tuple(-e for e in m)))
        return [[list(m), self._terms[m]] for m in order]

    @classmethod
    def from_payload(cls, nvars: int, payload: PolynomialPayload) -> "Polynomial":
        return cls(nvars, {tuple(mono): coeff for mono, coeff in payload})


class AffinePoly:
    """
    A polynomial whose coefficients are affine in scalar decision variables:
    `p_0(x) + sum_j c_j * p_j(x)`.

    Decision variables are identified by integer indices handed out by the SOS program.
    The constant part is stored under the key `None`.
    """

    __slots__ = ("_nvars", "_parts")

    def __init__(self, nvars: int, parts: Optional[Mapping[Optional[int], Polynomial]] = None):
        self._nvars: int = nvars
        self._parts: Dict[Optional[int], Polynomial] = {}
        for key, poly in (parts or {}).items():
            if poly.nvars != nvars:
                raise ValueError(f"Expected polynomials in {nvars} variables, got {poly.nvars} instead.")
            if not poly.is_zero():
                self._parts[key] = poly

    @classmethod
    def from_polynomial(cls, poly: Polynomial) -> "AffinePoly":
        return cls(poly.nvars, {None: poly})

    @classmethod
    def coerce(cls, value: Union["AffinePoly", Polynomial, Scalar], nvars: int) -> "AffinePoly":
        if isinstance(value, AffinePoly):
            return value
        if isinstance(value, Polynomial):
            return cls.from_polynomial(value)
        return cls.from_polynomial(Polynomial.constant(nvars, value))

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} nvars={self._nvars} decisions={len(self.decision_variables())}>"

    @property
    def nvars(self) -> int:
        return self._nvars

    @property
    def parts(self) -> Dict[Optional[int], Polynomial]:
        return dict(self._parts)

    def part(self, key: Optional[int]) -> Polynomial:
        return self._parts.get(key, Polynomial.zero(self._nvars))

    def constant_part(self) -> Polynomial:
        return self.part(None)

    def decision_variables(self) -> List[int]:
        return sorted(k for k in self._parts if k is not None)

    def is_constant(self) -> bool:
        return not self.decision_variables()

    @property
    def degree(self) -> int:
        return max((p.degree for p in self._parts.values()), default=0)

    @property
    def min_degree(self) -> int:
        return min((p.min_degree for p in self._parts.values()), default=0)

    def support(self) -> Set[Monomial]:
        out: Set[Monomial] = set()
        for poly in self._parts.values():
            out |= poly.support()
        return out

    def variables(self) -> Set[int]:
        out: Set[int] = set()
        for poly in self._parts.values():
            out |= poly.variables()
        return out

    def _combine(self, other: "AffinePoly", sign: float) -> "AffinePoly":
        if other._nvars != self._nvars:
            raise ValueError(
                f"Incompatible expressions. Expected {self._nvars} variables, got {other._nvars} instead."
            )
        parts = dict(self._parts)
        for key, poly in other._parts.items():
            parts[key] = parts[key] + poly * sign if key in parts else poly * sign
        return AffinePoly(self._nvars, parts)

    def __add__(self, other) -> "AffinePoly":
        return self._combine(AffinePoly.coerce(other, self._nvars), 1.0)

    __radd__ = __add__

    def __sub__(self, other) -> "AffinePoly":
        return self._combine(AffinePoly.coerce(other, self._nvars), -1.0)

    def __rsub__(self, other) -> "AffinePoly":
        return AffinePoly.coerce(other, self._nvars)._combine(self, -1.0)

    def __neg__(self) -> "AffinePoly":
        return AffinePoly(self._nvars, {k: -p for k, p in self._parts.items()})

    def __mul__(self, other: Union[Polynomial, Scalar]) -> "AffinePoly":
        # products of two decision-dependent expressions would not be affine
        if isinstance(other, AffinePoly):
            if not other.is_constant():
                if self.is_constant():
                    return other * self.constant_part()
                raise TypeError("Product of two decision-dependent expressions is not affine.")
            other = other.constant_part()
        return AffinePoly(self._nvars, {k: p * other for k, p in self._parts.items()})

    __rmul__ = __mul__

    def embed(self, nvars: int) -> "AffinePoly":
        return AffinePoly(nvars, {k: p.embed(nvars) for k, p in self._parts.items()})

    def diff(self, index: int) -> "AffinePoly":
        return AffinePoly(self._nvars, {k: p.diff(index) for k, p in self._parts.items()})

    def gradient(self) -> List["AffinePoly"]:
        return [self.diff(i) for i in range(self._nvars)]

    def integrate_box(self, box: "Box") -> Dict[Optional[int], float]:
        """
        Integral over a box as an affine function: constant under `None`, weights per variable.
        """
        return {k: integrate_box(p, box) for k, p in self._parts.items()}

    def substitute(self, values: Mapping[int, float]) -> Polynomial:
        """
        Fixes every decision variable and returns the resulting polynomial.
        """
        result = self.constant_part()
        for key in self.decision_variables():
            if key not in values:
                raise KeyError(f"No value given for decision variable {key}.")
            result = result + self._parts[key] * float(values[key])
        return result


@dataclass(frozen=True)
class Box:
    """
    Axis-aligned box `prod_i [lower_i, upper_i]`.
    """

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper) or not lower:
            raise ValueError(f"Invalid box bounds. Got {len(lower)} lower and {len(upper)} upper values.")
        for i, (lo, hi) in enumerate(zip(lower, upper)):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo >= hi:
                raise ValueError(f"Invalid box bounds on axis {i}: [{lo}, {hi}].")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def symmetric(cls, half_widths: Sequence[float]) -> "Box":
        return cls(tuple(-abs(h) for h in half_widths), tuple(abs(h) for h in half_widths))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def half_widths(self) -> np.ndarray:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / 2.0

    def contains(self, point: Sequence[float], tol: float = 0.0) -> bool:
        x = np.asarray(point, dtype=float)
        return bool(np.all(x >= np.asarray(self.lower) - tol) and np.all(x <= np.asarray(self.upper) + tol))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.dim))


def box_moment(monomial: Monomial, box: Box) -> float:
    """
    Integral of a monomial over a box, `prod_i (u_i^(a_i+1) - l_i^(a_i+1)) / (a_i+1)`.
    """
    if len(monomial) != box.dim:
        raise ValueError(f"Monomial has {len(monomial)} exponents, box has dimension {box.dim}.")
    value = 1.0
    for a, lo, hi in zip(monomial, box.lower, box.upper):
        value *= (hi ** (a + 1) - lo ** (a + 1)) / (a + 1)
    return value


def integrate_box(poly: Polynomial, box: Box) -> float:
    return sum(coeff * box_moment(mono, box) for mono, coeff in poly.items())


class PolynomialFit(NamedTuple):
    polynomial: Polynomial
    residual: float  # root-mean-square over the samples
    max_error: float


def fit_polynomial(
    samples: Union[np.ndarray, Sequence[Tuple[float, float]]],
    degree: int,
    interpolate_at: Sequence[Tuple[float, float]] = (),
) -> PolynomialFit:
    """
    Least-squares fit of a univariate polynomial of the given degree, subject to passing
    exactly through the `interpolate_at` points.

    The fit is computed in centred and scaled coordinates, then expanded back to the
    monomial basis of the original abscissa.

    Parameters
    -----------
    samples : array-like of shape (K, 2)
        `(abscissa, value)` pairs.
    degree : int
        Polynomial degree, at least 1.
    interpolate_at : Sequence[Tuple[float, float]]
        Points the fit must reproduce exactly.

    Raises
    ------
    FitError
        Too few samples, too many interpolation constraints, or a rank-deficient system.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise FitError(f"Invalid samples shape {pts.shape}. Expected (K, 2).")
    if degree < 1:
        raise FitError(f"Invalid fit degree {degree}. Expected at least 1.")
    s, v = pts[:, 0], pts[:, 1]
    if np.unique(s).size <= degree:
        raise FitError(f"Need more than {degree} distinct samples for a degree-{degree} fit.")
    constraints = np.asarray(interpolate_at, dtype=float).reshape(-1, 2)
    if constraints.shape[0] > degree:
        raise FitError(f"Too many interpolation points ({constraints.shape[0]}) for degree {degree}.")

    center = 0.5 * (s.max() + s.min())
    half = 0.5 * (s.max() - s.min()) or 1.0
    A = np.vander((s - center) / half, degree + 1, increasing=True)

    if constraints.shape[0]:
        C = np.vander((constraints[:, 0] - center) / half, degree + 1, increasing=True)
        if np.linalg.matrix_rank(C) < C.shape[0]:
            raise FitError("Interpolation points are not distinct.")
        c0 = np.linalg.lstsq(C, constraints[:, 1], rcond=None)[0]
        null = scipy.linalg.null_space(C)
        reduced = A @ null
        if np.linalg.matrix_rank(reduced) < null.shape[1]:
            raise FitError("Rank-deficient constrained least-squares system.")
        z = np.linalg.lstsq(reduced, v - A @ c0, rcond=None)[0]
        coef = c0 + null @ z
    else:
        if np.linalg.matrix_rank(A) < degree + 1:
            raise FitError("Rank-deficient least-squares system.")
        coef = np.linalg.lstsq(A, v, rcond=None)[0]

    errors = A @ coef - v
    scaled = Polynomial(1, {(k,): c for k, c in enumerate(coef)})
    # p(s) = q((s - center) / half)
    poly = scaled.compose_affine(1.0 / half, -center / half)
    fit = PolynomialFit(poly, float(np.sqrt(np.mean(errors ** 2))), float(np.max(np.abs(errors))))
    logger.debug("Degree-%d fit: rms %.3e, max %.3e.", degree, fit.residual, fit.max_error)
    return fit
