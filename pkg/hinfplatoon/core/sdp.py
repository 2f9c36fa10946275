from __future__ import annotations

import math

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.sparse

from .enums import SdpStatus
from .models import getLogger


__all__ = (
    "SdpStandardForm",
    "SdpOptions",
    "SdpResult",
    "solve_sdp",
)


logger = getLogger(__name__)

_DUMP_HEADER = "sdp-dump 1"

# (block, row, col, value) with row <= col; the matrix is symmetric
BlockEntry = Tuple[int, int, int, float]


class SdpStandardForm:
    """
    Semidefinite program in primal standard form with free variables::

        minimize    sum_k <C_k, X_k> + c_f . x_f
        subject to  sum_k <A_ik, X_k> + F_i . x_f = b_i      i = 1..m
                    X_k PSD,  x_f free

    Symmetric matrices are given by their upper triangle. An entry `(k, a, b, v)` with
    `a != b` sets both `(a, b)` and `(b, a)` to `v`.

    Parameters
    -----------
    block_sizes : Sequence[int]
        Dimensions of the PSD blocks.
    num_free : int
        Number of free scalar variables.
    """

    def __init__(self, block_sizes: Sequence[int], num_free: int = 0):
        sizes = tuple(int(n) for n in block_sizes)
        if not sizes or any(n < 1 for n in sizes):
            raise ValueError(f"Invalid block sizes {sizes}. Expected at least one positive dimension.")
        if num_free < 0:
            raise ValueError(f"Invalid number of free variables {num_free}.")
        self.block_sizes: Tuple[int, ...] = sizes
        self.num_free: int = int(num_free)
        self._rhs: List[float] = []
        self._entries: List[Tuple[int, int, int, int, float]] = []  # (row, block, a, b, value)
        self._free_entries: List[Tuple[int, int, float]] = []  # (row, free index, value)
        self._objective: List[BlockEntry] = []
        self._free_cost: np.ndarray = np.zeros(self.num_free)
        self._compiled = None

    def __repr__(self) -> str:
        return (
            f"<{self.__class__.__name__} blocks={list(self.block_sizes)} free={self.num_free} "
            f"constraints={self.num_constraints}>"
        )

    @property
    def num_constraints(self) -> int:
        return len(self._rhs)

    @property
    def total_dimension(self) -> int:
        return sum(self.block_sizes)

    def _check_entry(self, block: int, a: int, b: int) -> Tuple[int, int, int]:
        if not 0 <= block < len(self.block_sizes):
            raise ValueError(f"Invalid block index {block}.")
        n = self.block_sizes[block]
        if not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"Invalid entry ({a}, {b}) for block {block} of size {n}.")
        return (block, a, b) if a <= b else (block, b, a)

    def _check_free(self, index: int) -> int:
        if not 0 <= index < self.num_free:
            raise ValueError(f"Invalid free variable index {index}.")
        return index

    def add_constraint(
        self,
        entries: Iterable[BlockEntry],
        rhs: float,
        free: Optional[Mapping[int, float]] = None,
    ) -> int:
        """
        Adds one equality constraint and returns its row index.
        """
        row = len(self._rhs)
        for block, a, b, value in entries:
            block, a, b = self._check_entry(block, a, b)
            if value != 0.0:
                self._entries.append((row, block, a, b, float(value)))
        for index, value in (free or {}).items():
            if value != 0.0:
                self._free_entries.append((row, self._check_free(index), float(value)))
        self._rhs.append(float(rhs))
        self._compiled = None
        return row

    def set_objective(
        self, entries: Iterable[BlockEntry] = (), free_cost: Optional[Mapping[int, float]] = None
    ) -> None:
        self._objective = []
        for block, a, b, value in entries:
            block, a, b = self._check_entry(block, a, b)
            self._objective.append((block, a, b, float(value)))
        self._free_cost = np.zeros(self.num_free)
        for index, value in (free_cost or {}).items():
            self._free_cost[self._check_free(index)] += float(value)
        self._compiled = None

    # <!-- compiled operators -->

    def _compile(self) -> "_Operators":
        if self._compiled is None:
            if not self._rhs:
                raise ValueError("An SDP needs at least one constraint.")
            self._compiled = _Operators(self)
        return self._compiled

    @property
    def b(self) -> np.ndarray:
        return np.array(self._rhs)

    @property
    def C(self) -> List[np.ndarray]:
        return [c.copy() for c in self._compile().C]

    @property
    def free_cost(self) -> np.ndarray:
        return self._free_cost.copy()

    def apply(self, X: Sequence[np.ndarray], free: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Returns `A(X) + F x_f`.
        """
        ops = self._compile()
        out = ops.apply(X)
        if free is not None and self.num_free:
            out = out + ops.F @ free
        return out

    def objective_value(self, X: Sequence[np.ndarray], free: Optional[np.ndarray] = None) -> float:
        ops = self._compile()
        value = sum(float(np.vdot(c, x)) for c, x in zip(ops.C, X))
        if free is not None and self.num_free:
            value += float(self._free_cost @ free)
        return value

    # <!-- text dump -->

    def to_text(self) -> str:
        """
        Plain-text sparse dump. Indices are 1-based in the file::

            sdp-dump 1
            sizes <n_1> ... <n_k>
            free <count>
            constraints <m>
            b <row> <value>
            c <free> <value>
            C <block> <a> <b> <value>
            A <row> <block> <a> <b> <value>
            F <row> <free> <value>
        """
        r = repr
        lines = [
            _DUMP_HEADER,
            "sizes " + " ".join(str(n) for n in self.block_sizes),
            f"free {self.num_free}",
            f"constraints {self.num_constraints}",
        ]
        lines.extend(f"b {i + 1} {r(v)}" for i, v in enumerate(self._rhs) if v != 0.0)
        lines.extend(f"c {j + 1} {r(float(v))}" for j, v in enumerate(self._free_cost) if v != 0.0)
        lines.extend(f"C {k + 1} {a + 1} {b + 1} {r(v)}" for k, a, b, v in self._objective)
        lines.extend(f"A {i + 1} {k + 1} {a + 1} {b + 1} {r(v)}" for i, k, a, b, v in self._entries)
        lines.extend(f"F {i + 1} {j + 1} {r(v)}" for i, j, v in self._free_entries)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SdpStandardForm":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not lines or lines[0] != _DUMP_HEADER:
            raise ValueError("Not an SDP dump: missing header line.")
        header: Dict[str, List[str]] = {}
        body: List[List[str]] = []
        for ln in lines[1:]:
            tag, *rest = ln.split()
            if tag in ("sizes", "free", "constraints"):
                header[tag] = rest
            else:
                body.append([tag] + rest)
        try:
            problem = cls([int(n) for n in header["sizes"]], int(header["free"][0]))
            m = int(header["constraints"][0])
        except (KeyError, IndexError) as exc:
            raise ValueError(f"Incomplete SDP dump header: {exc}") from exc
        rhs = [0.0] * m
        rows: List[List[BlockEntry]] = [[] for _ in range(m)]
        frees: List[Dict[int, float]] = [{} for _ in range(m)]
        objective: List[BlockEntry] = []
        cost: Dict[int, float] = {}
        for tag, *f in body:
            if tag == "b":
                rhs[int(f[0]) - 1] = float(f[1])
            elif tag == "c":
                cost[int(f[0]) - 1] = float(f[1])
            elif tag == "C":
                objective.append((int(f[0]) - 1, int(f[1]) - 1, int(f[2]) - 1, float(f[3])))
            elif tag == "A":
                rows[int(f[0]) - 1].append((int(f[1]) - 1, int(f[2]) - 1, int(f[3]) - 1, float(f[4])))
            elif tag == "F":
                frees[int(f[0]) - 1][int(f[1]) - 1] = float(f[2])
            else:
                raise ValueError(f"Unknown SDP dump record `{tag}`.")
        for i in range(m):
            problem.add_constraint(rows[i], rhs[i], frees[i])
        problem.set_objective(objective, cost)
        return problem

    def dump(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SdpStandardForm":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


class _Operators:
    """
    Dense objective blocks and sparse constraint operators of a compiled problem.

    For block k, `P[k]` has shape `(n_k^2, m)`; column i is the row-major
    vectorisation of the full symmetric `A_ik`.
    """

    def __init__(self, problem: SdpStandardForm):
        m = problem.num_constraints
        self.m = m
        self.sizes = problem.block_sizes
        self.b = np.array(problem._rhs)
        self.C: List[np.ndarray] = [np.zeros((n, n)) for n in self.sizes]
        for k, a, b, v in problem._objective:
            self.C[k][a, b] += v
            if a != b:
                self.C[k][b, a] += v

        per_block: List[Tuple[List[int], List[int], List[float]]] = [([], [], []) for _ in self.sizes]
        for row, k, a, b, v in problem._entries:
            n = self.sizes[k]
            flat, cols, vals = per_block[k]
            flat.append(a * n + b)
            cols.append(row)
            vals.append(v)
            if a != b:
                flat.append(b * n + a)
                cols.append(row)
                vals.append(v)
        self.P: List[scipy.sparse.csc_matrix] = []
        self.Pt: List[scipy.sparse.csr_matrix] = []
        self.active: List[np.ndarray] = []
        for (flat, cols, vals), n in zip(per_block, self.sizes):
            P = scipy.sparse.coo_matrix((vals, (flat, cols)), shape=(n * n, m)).tocsc()
            P.sum_duplicates()
            self.P.append(P)
            self.Pt.append(P.T.tocsr())
            self.active.append(np.flatnonzero(np.diff(P.indptr)))

        nf = problem.num_free
        if nf:
            rows = [e[0] for e in problem._free_entries]
            cols = [e[1] for e in problem._free_entries]
            vals = [e[2] for e in problem._free_entries]
            self.F = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(m, nf)).toarray()
        else:
            self.F = np.zeros((m, 0))
        self.c_free = problem._free_cost.copy()

    def apply(self, X: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.m)
        for Pt, Xk in zip(self.Pt, X):
            out += Pt @ Xk.ravel()
        return out

    def adjoint(self, y: np.ndarray) -> List[np.ndarray]:
        return [(P @ y).reshape(n, n) for P, n in zip(self.P, self.sizes)]

    def schur(self, X: Sequence[np.ndarray], S_inv: Sequence[np.ndarray]) -> np.ndarray:
        """
        `M_ij = tr(A_i X A_j S^-1)`, summed over blocks.
        """
        M = np.zeros((self.m, self.m))
        for P, Pt, active, Xk, Sk, n in zip(self.P, self.Pt, self.active, X, S_inv, self.sizes):
            if not active.size:
                continue
            chunk = max(1, min(active.size, (1 << 22) // (n * n)))
            for start in range(0, active.size, chunk):
                cols = active[start : start + chunk]
                W = np.empty((n * n, cols.size))
                for j, i in enumerate(cols):
                    lo, hi = P.indptr[i], P.indptr[i + 1]
                    flat = P.indices[lo:hi]
                    # X A_i S^-1 as a sum of outer products over the entries of A_i
                    W[:, j] = ((Xk[:, flat // n] * P.data[lo:hi]) @ Sk[flat % n, :]).ravel()
                M[:, cols] += Pt @ W
        return 0.5 * (M + M.T)


@dataclass
class SdpOptions:
    tol_gap: float = 1e-7
    tol_feas: float = 1e-7
    tol_infeas: float = 1e-8
    max_iter: int = 200
    step_fraction: float = 0.98

    def __post_init__(self):
        if not (0.0 < self.step_fraction < 1.0):
            raise ValueError(f"Invalid step fraction {self.step_fraction}. Expected a value in (0, 1).")
        if self.max_iter < 1:
            raise ValueError(f"Invalid iteration cap {self.max_iter}.")


@dataclass
class SdpIterate:
    iteration: int
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    mu: float


@dataclass
class SdpResult:
    """
    Outcome of :func:`solve_sdp`. On `OPTIMAL` the iterate satisfies the gap and
    feasibility tolerances; otherwise it is the last iterate reached.
    """

    status: SdpStatus
    X: List[np.ndarray]
    y: np.ndarray
    S: List[np.ndarray]
    free: np.ndarray
    primal_objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    history: List[SdpIterate] = field(default_factory=list, repr=False)

    def is_optimal(self) -> bool:
        return self.status is SdpStatus.OPTIMAL


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


def _max_step(X: np.ndarray, dX: np.ndarray, chol: np.ndarray) -> float:
    # largest alpha with X + alpha dX PSD, from the eigenvalues of L^-1 dX L^-T
    half = scipy.linalg.solve_triangular(chol, dX, lower=True)
    scaled = scipy.linalg.solve_triangular(chol, half.T, lower=True)
    lam = float(np.linalg.eigvalsh(_sym(scaled))[0])
    return math.inf if lam >= 0.0 else -1.0 / lam


def _inner(A: Sequence[np.ndarray], B: Sequence[np.ndarray]) -> float:
    return sum(float(np.vdot(a, b)) for a, b in zip(A, B))


def _fro(A: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(a, a)) for a in A))


def solve_sdp(problem: SdpStandardForm, options: Optional[SdpOptions] = None) -> SdpResult:
    """
    Primal-dual path-following interior-point method with the HKM search direction and
    Mehrotra predictor-corrector steps, started from scaled identities.

    Free variables are carried through the augmented system `[[M, F], [F^T, 0]]`.
    Infeasibility is reported heuristically: a primal-infeasible status means the dual
    iterate, normalised by its objective, became an approximate Farkas certificate (and
    symmetrically for dual infeasibility).

    Parameters
    -----------
    problem : SdpStandardForm
        The program to solve.
    options : Optional[SdpOptions]
        Tolerances and iteration cap.

    Returns
    -------
    SdpResult
        The final iterate with its status.
    """
    opts = options or SdpOptions()
    ops = problem._compile()
    m, nf = ops.m, problem.num_free
    sizes = ops.sizes
    n_total = sum(sizes)
    b, C, F, c_free = ops.b, ops.C, ops.F, ops.c_free

    norm_b = float(np.linalg.norm(b))
    norm_C = math.sqrt(_fro(C) ** 2 + float(c_free @ c_free))
    scale = max(1.0, float(np.max(np.abs(b))), max(float(np.max(np.abs(c))) for c in C))
    if nf:
        scale = max(scale, float(np.max(np.abs(c_free))))

    X = [scale * np.eye(n) for n in sizes]
    S = [scale * np.eye(n) for n in sizes]
    y = np.zeros(m)
    xf = np.zeros(nf)
    history: List[SdpIterate] = []
    status = SdpStatus.STALLED
    stalls = 0

    def result(status: SdpStatus, iteration: int, pobj, dobj, pinf, dinf) -> SdpResult:
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        return SdpResult(status, X, y, S, xf, pobj, dobj, gap, pinf, dinf, iteration, history)

    iteration = 0
    pobj = dobj = pinf = dinf = math.nan
    for iteration in range(opts.max_iter + 1):
        r_p = b - ops.apply(X) - F @ xf
        Aty = ops.adjoint(y)
        R_d = [c - a - s for c, a, s in zip(C, Aty, S)]
        r_f = c_free - F.T @ y

        pobj = _inner(C, X) + float(c_free @ xf)
        dobj = float(b @ y)
        complementarity = _inner(X, S)
        mu = complementarity / n_total
        pinf = float(np.linalg.norm(r_p)) / (1.0 + norm_b)
        dres = math.sqrt(_fro(R_d) ** 2 + float(r_f @ r_f))
        dinf = dres / (1.0 + norm_C)
        rel_gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        history.append(SdpIterate(iteration, pobj, dobj, pinf, dinf, mu))
        logger.debug(
            "it %3d  pobj %+.8e  dobj %+.8e  pinf %.2e  dinf %.2e  mu %.2e",
            iteration,
            pobj,
            dobj,
            pinf,
            dinf,
            mu,
        )

        if (
            rel_gap <= opts.tol_gap
            and pinf <= opts.tol_feas
            and dinf <= opts.tol_feas
            and complementarity <= opts.tol_gap * max(1.0, _fro(X))
        ):
            return result(SdpStatus.OPTIMAL, iteration, pobj, dobj, pinf, dinf)

        if dobj > 0.0:
            violation = _fro([c - r for c, r in zip(C, R_d)]) + float(np.linalg.norm(c_free - r_f))
            if violation / dobj <= opts.tol_infeas:
                return result(SdpStatus.PRIMAL_INFEASIBLE, iteration, pobj, dobj, pinf, dinf)
        if pobj < 0.0:
            ray = float(np.linalg.norm(b - r_p))
            if ray / -pobj <= opts.tol_infeas:
                return result(SdpStatus.DUAL_INFEASIBLE, iteration, pobj, dobj, pinf, dinf)

        if iteration == opts.max_iter:
            break

        try:
            chol_X = [np.linalg.cholesky(x) for x in X]
            chol_S = [scipy.linalg.cho_factor(s, lower=True) for s in S]
            S_inv = [scipy.linalg.cho_solve(cs, np.eye(n)) for cs, n in zip(chol_S, sizes)]
            S_inv = [_sym(s) for s in S_inv]
            M = ops.schur(X, S_inv)
            K = np.block([[M, F], [F.T, np.zeros((nf, nf))]]) if nf else M
            lu = scipy.linalg.lu_factor(K, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            logger.debug("Factorisation failed at iteration %d: %s", iteration, exc)
            break

        X_RdSinv = [x @ r @ si for x, r, si in zip(X, R_d, S_inv)]

        def direction(Rc_Sinv: List[np.ndarray]):
            T = [rc - xr for rc, xr in zip(Rc_Sinv, X_RdSinv)]
            rhs = np.concatenate([r_p - ops.apply(T), r_f]) if nf else r_p - ops.apply(T)
            sol = scipy.linalg.lu_solve(lu, rhs)
            dy, dxf = sol[:m], sol[m:]
            Atdy = ops.adjoint(dy)
            dS = [r - a for r, a in zip(R_d, Atdy)]
            dX = [_sym(t + x @ a @ si) for t, x, a, si in zip(T, X, Atdy, S_inv)]
            return dX, dxf, dy, dS

        def step_lengths(dX, dS) -> Tuple[float, float]:
            a_p = min(_max_step(x, d, L) for x, d, L in zip(X, dX, chol_X))
            a_d = min(_max_step(s, d, cs[0]) for s, d, cs in zip(S, dS, chol_S))
            return min(1.0, opts.step_fraction * a_p), min(1.0, opts.step_fraction * a_d)

        # predictor
        dX_a, _, _, dS_a = direction([-x for x in X])
        ap_a, ad_a = step_lengths(dX_a, dS_a)
        X_aff = [x + ap_a * d for x, d in zip(X, dX_a)]
        S_aff = [s + ad_a * d for s, d in zip(S, dS_a)]
        mu_aff = _inner(X_aff, S_aff) / n_total
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3 if mu > 0 else 0.0

        # corrector
        Rc_Sinv = [sigma * mu * si - x - da @ ds @ si for si, x, da, ds in zip(S_inv, X, dX_a, dS_a)]
        dX, dxf, dy, dS = direction(Rc_Sinv)
        a_p, a_d = step_lengths(dX, dS)

        X = [x + a_p * d for x, d in zip(X, dX)]
        xf = xf + a_p * dxf
        y = y + a_d * dy
        S = [s + a_d * d for s, d in zip(S, dS)]

        if max(a_p, a_d) < 1e-10:
            stalls += 1
            if stalls >= 3:
                logger.debug("Step lengths collapsed at iteration %d.", iteration)
                break
        else:
            stalls = 0

    return result(status, iteration, pobj, dobj, pinf, dinf)
