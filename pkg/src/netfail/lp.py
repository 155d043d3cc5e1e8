"""Shed-cost linear programs: primal/dual construction, solving, vertex oracle.

The equilibrium shed cost of a demand vector ``D`` is the optimal value of

    primal:  min 1'x+   s.t. (A' - I) x+ + x- = s - D,   x+, x- >= 0
    dual:    max y'(D - s)   s.t. (I - A) y <= 1,        y >= 0

The primal is feasible iff total demand does not exceed total supply; when it
is infeasible the cost is treated as +infinity (a tagged value, never a float
``inf`` inside arithmetic).  The production solver is a dense revised simplex
run on the dual, which has d rows against the primal's 2d columns; the
primal's optimal ``x+`` is recovered from the dual's simplex multipliers.

``enumerate_dual_vertices`` lists the extreme points of the dual feasible
region for small ``d``; it is the independent oracle the solver is tested
against, and it also drives the analytic conditional-Monte-Carlo checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Literal

import numpy as np

from . import _simplex
from .network import ScaledInstance

__all__ = [
    "LpProblem",
    "LpSolution",
    "ShortfallCost",
    "SolverTolerances",
    "DEFAULT_TOLERANCES",
    "SolverNumericalError",
    "DualSolver",
    "build_primal",
    "build_dual",
    "solve_lp",
    "shortfall_cost",
    "enumerate_dual_vertices",
]

#: Combinatorial guard for vertex enumeration.
MAX_ENUMERATION_DIM = 8


class SolverNumericalError(RuntimeError):
    """The simplex could not certify any status (pivot breakdown or
    iteration cap); never silently reported as a wrong status."""


@dataclass(frozen=True)
class SolverTolerances:
    """All solver tolerances in one record so tests can tighten them."""

    pivot: float = 1e-9
    feasibility: float = 1e-8
    degenerate_step: float = 1e-10
    #: Relative tolerance of the total-demand infeasibility test.
    sum_test_rel: float = 1e-12


DEFAULT_TOLERANCES = SolverTolerances()


@dataclass(frozen=True)
class LpProblem:
    """Dense LP: optimize ``c @ x`` subject to rows ``A x (sense) b``, x >= 0."""

    sense: Literal["min", "max"]
    c: np.ndarray
    A: np.ndarray
    row_senses: tuple[str, ...]
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if self.sense not in ("min", "max"):
            raise ValueError(f"unknown objective sense {self.sense!r}")
        if A.shape != (b.size, c.size):
            raise ValueError(
                f"inconsistent dimensions: A is {A.shape}, c has {c.size}, "
                f"b has {b.size}"
            )
        if len(self.row_senses) != b.size:
            raise ValueError("one row sense per constraint row required")
        for s in self.row_senses:
            if s not in ("=", "<="):
                raise ValueError(f"unsupported row sense {s!r}")
        if not (np.isfinite(c).all() and np.isfinite(A).all() and np.isfinite(b).all()):
            raise ValueError("LP data must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class LpSolution:
    """Solver outcome.

    ``objective`` and ``x`` are meaningful when status is "optimal".  For
    "unbounded" problems ``ray`` is an improving recession direction; for
    "infeasible" ones ``infeasibility_gap`` is the positive phase-1 optimum.
    ``basis`` identifies the final basis (variable indices in row order,
    slack/artificial columns included).
    """

    status: Literal["optimal", "unbounded", "infeasible"]
    objective: float | None
    x: np.ndarray | None
    basis: tuple[int, ...] = ()
    ray: np.ndarray | None = None
    infeasibility_gap: float | None = None


@dataclass(frozen=True)
class ShortfallCost:
    """Shed cost ``L(D)``: a nonnegative real, or the infeasible tag standing
    for +infinity.  Kept out of float arithmetic by design; use
    :meth:`exceeds` for threshold comparisons."""

    value: float | None

    INFEASIBLE_TAG = "InfeasiblePrimal"

    @classmethod
    def infeasible(cls) -> "ShortfallCost":
        return cls(value=None)

    @property
    def is_infeasible(self) -> bool:
        return self.value is None

    def exceeds(self, k: float) -> bool:
        """L(D) > k, with the infeasible tag greater than any finite k."""
        if self.value is None:
            return True
        return self.value > k

    def as_float(self) -> float:
        """Collapse to a float for reporting only (+inf when infeasible)."""
        return math.inf if self.value is None else self.value

    def __repr__(self) -> str:
        if self.value is None:
            return f"ShortfallCost({self.INFEASIBLE_TAG})"
        return f"ShortfallCost({self.value!r})"


def build_primal(instance: ScaledInstance, D: np.ndarray) -> LpProblem:
    """min 1'x+ s.t. (A' - I) x+ + I x- = s - D over x+, x- >= 0.

    Columns are ordered x+_1..x+_d, x-_1..x-_d.
    """
    D = np.asarray(D, dtype=float)
    d = instance.d
    if D.shape != (d,):
        raise ValueError(f"demand vector has shape {D.shape}, expected ({d},)")
    A = instance.spec.A
    eye = np.eye(d)
    mat = np.hstack([A.T - eye, eye])
    c = np.concatenate([np.ones(d), np.zeros(d)])
    return LpProblem(
        sense="min", c=c, A=mat, row_senses=("=",) * d, b=instance.s - D
    )


def build_dual(instance: ScaledInstance, D: np.ndarray) -> LpProblem:
    """max y'(D - s) s.t. (I - A) y <= 1 over y >= 0."""
    D = np.asarray(D, dtype=float)
    d = instance.d
    if D.shape != (d,):
        raise ValueError(f"demand vector has shape {D.shape}, expected ({d},)")
    M = np.eye(d) - instance.spec.A
    return LpProblem(
        sense="max", c=D - instance.s, A=M, row_senses=("<=",) * d, b=np.ones(d)
    )


# ---------------------------------------------------------------------------
# General dense simplex (two-phase, full tableau).  This is the reference
# solver behind solve_lp; the hot paths use DualSolver below.
# ---------------------------------------------------------------------------


def _pick_entering(rc, allowed, rule, tol):
    enter = -1
    if rule == "bland":
        for j in range(rc.size):
            if allowed[j] and rc[j] < -tol:
                return j
        return -1
    best = -tol
    for j in range(rc.size):
        if allowed[j] and rc[j] < best:
            best = rc[j]
            enter = j
    return enter


def _simplex_phase(T, basis, cost, allowed, rule, tol, degen_tol, bland_after, max_iter):
    """Minimize ``cost`` on the tableau in place.  Returns ('optimal', None)
    or ('unbounded', entering column)."""
    m = T.shape[0]
    degen = 0
    active_rule = rule
    for _ in range(max_iter):
        cB = cost[basis]
        rc = cost - cB @ T[:, :-1]
        enter = _pick_entering(rc, allowed, active_rule, tol)
        if enter < 0:
            return "optimal", None
        col = T[:, enter]
        leave = -1
        theta = 0.0
        for i in range(m):
            if col[i] > tol:
                ratio = max(T[i, -1], 0.0) / col[i]
                if (
                    leave < 0
                    or ratio < theta - 1e-12
                    or (abs(ratio - theta) <= 1e-12 and basis[i] < basis[leave])
                ):
                    leave = i
                    theta = ratio
        if leave < 0:
            return "unbounded", enter
        if theta < degen_tol:
            degen += 1
            if degen >= bland_after:
                active_rule = "bland"
        piv = T[leave, enter]
        T[leave] /= piv
        for i in range(m):
            if i != leave and T[i, enter] != 0.0:
                T[i] -= T[i, enter] * T[leave]
        basis[leave] = enter
    raise SolverNumericalError("simplex iteration cap exceeded")


def solve_lp(
    problem: LpProblem,
    pivot_rule: str = "dantzig",
    tolerances: SolverTolerances = DEFAULT_TOLERANCES,
) -> LpSolution:
    """Two-phase dense simplex for any :class:`LpProblem`.

    Deterministic given the problem and pivot rule ("dantzig" or "bland");
    Dantzig pricing switches itself to Bland's rule after ``10 * m``
    degenerate pivots, so either setting terminates.
    """
    if pivot_rule not in ("dantzig", "bland"):
        raise ValueError(f"unknown pivot rule {pivot_rule!r}")
    tol = tolerances.pivot
    m, n = problem.A.shape
    minimize = problem.sense == "min"
    c = problem.c if minimize else -problem.c

    # standard form: append slacks for <= rows, then sign-normalize b
    slack_rows = [i for i, s in enumerate(problem.row_senses) if s == "<="]
    n_slack = len(slack_rows)
    A = np.hstack([problem.A, np.zeros((m, n_slack))])
    for col, i in enumerate(slack_rows):
        A[i, n + col] = 1.0
    b = problem.b.copy()
    flip = b < 0
    A[flip] *= -1.0
    b[flip] = -b[flip]

    # starting basis: un-flipped slack where available, else artificial
    basis = np.full(m, -1, dtype=int)
    for col, i in enumerate(slack_rows):
        if not flip[i]:
            basis[i] = n + col
    art_rows = [i for i in range(m) if basis[i] < 0]
    n_art = len(art_rows)
    A = np.hstack([A, np.zeros((m, n_art))])
    for col, i in enumerate(art_rows):
        A[i, n + n_slack + col] = 1.0
        basis[i] = n + n_slack + col
    ncols = n + n_slack + n_art
    T = np.hstack([A, b[:, None]])
    bland_after = 10 * m
    max_iter = 10_000 + 200 * ncols

    allowed = np.ones(ncols, dtype=bool)
    if n_art:
        phase1_cost = np.zeros(ncols)
        phase1_cost[n + n_slack :] = 1.0
        status, _ = _simplex_phase(
            T, basis, phase1_cost, allowed, pivot_rule, tol,
            tolerances.degenerate_step, bland_after, max_iter,
        )
        assert status == "optimal"  # phase 1 is bounded below by 0
        gap = float(phase1_cost[basis] @ T[:, -1])
        if gap > tolerances.feasibility:
            return LpSolution(
                status="infeasible", objective=None, x=None,
                basis=tuple(int(j) for j in basis), infeasibility_gap=gap,
            )
        # drive basic artificials out where a real pivot exists
        for i in range(m):
            if basis[i] >= n + n_slack:
                for j in range(n + n_slack):
                    if abs(T[i, j]) > tol:
                        piv = T[i, j]
                        T[i] /= piv
                        for ii in range(m):
                            if ii != i and T[ii, j] != 0.0:
                                T[ii] -= T[ii, j] * T[i]
                        basis[i] = j
                        break
        allowed[n + n_slack :] = False

    cost = np.concatenate([c, np.zeros(n_slack + n_art)])
    status, enter = _simplex_phase(
        T, basis, cost, allowed, pivot_rule, tol,
        tolerances.degenerate_step, bland_after, max_iter,
    )
    if status == "unbounded":
        ray = np.zeros(ncols)
        ray[enter] = 1.0
        ray[basis] = -T[:, enter]
        return LpSolution(
            status="unbounded", objective=None, x=None,
            basis=tuple(int(j) for j in basis), ray=ray[:n],
        )
    x_full = np.zeros(ncols)
    x_full[basis] = np.maximum(T[:, -1], 0.0)
    x = x_full[:n]
    obj = float(problem.c @ x)
    return LpSolution(
        status="optimal", objective=obj, x=x, basis=tuple(int(j) for j in basis)
    )


# ---------------------------------------------------------------------------
# Hot-path solver: revised simplex on the dual with reusable workspace.
# ---------------------------------------------------------------------------


class DualSolver:
    """Reusable revised-simplex workspace for one instance's dual polytope.

    Holds mutable state (basis, inverse), so use one solver per thread.
    Successive :meth:`maximize` calls warm-start from the previous basis,
    which pays off when objectives change slowly (the radial root-finder).
    """

    def __init__(
        self,
        instance: ScaledInstance,
        ub: np.ndarray | None = None,
        tolerances: SolverTolerances = DEFAULT_TOLERANCES,
    ):
        d = instance.d
        self.instance = instance
        self.tolerances = tolerances
        self.M = np.ascontiguousarray(np.eye(d) - instance.spec.A)
        self.ub = np.ones(d) if ub is None else np.asarray(ub, dtype=float).copy()
        if self.ub.shape != (d,) or np.any(self.ub <= 0):
            raise ValueError("dual right-hand side must be strictly positive")
        self.d = d
        self.basis = np.arange(d, 2 * d, dtype=np.int64)
        self.in_basis = np.zeros(2 * d, dtype=np.bool_)
        self.in_basis[d:] = True
        self.Binv = np.eye(d)
        self.xB = self.ub.copy()
        self.pi = np.zeros(d)
        self.pivot_count = np.zeros(1, dtype=np.int64)
        self._y = np.zeros(d)
        self.bland_after = 10 * d
        self.max_iter = 2_000 + 400 * d

    def reset(self) -> None:
        _simplex.reset_to_slack_basis(self.basis, self.in_basis)
        self.Binv[:] = 0.0
        np.fill_diagonal(self.Binv, 1.0)
        self.pivot_count[0] = 0

    def maximize(self, r: np.ndarray, warm: bool = True) -> tuple[bool, float]:
        """Maximize ``r @ y`` over the polytope.

        Returns ``(bounded, value)``; ``bounded`` False means an improving
        recession ray exists (the primal is infeasible for this demand).
        """
        if not warm:
            self.reset()
        t = self.tolerances
        status, obj, _ = _simplex.dual_simplex(
            self.M, self.ub, np.ascontiguousarray(r, dtype=np.float64),
            self.basis, self.in_basis, self.Binv, self.xB, self.pi,
            self.pivot_count,
            t.pivot, t.feasibility, t.degenerate_step,
            self.bland_after, self.max_iter,
        )
        if status == _simplex.STATUS_NUMFAIL:
            raise SolverNumericalError(
                "dual simplex exceeded its iteration cap without certifying a status"
            )
        if status == _simplex.STATUS_UNBOUNDED:
            self.reset()
            return False, math.inf
        return True, float(obj)

    def y(self) -> np.ndarray:
        """Optimal dual vector of the last bounded solve."""
        _simplex.extract_y(self.basis, self.xB, self._y)
        return self._y.copy()

    def y_view(self) -> np.ndarray:
        """Like :meth:`y` but returns the internal buffer (valid until the
        next solve); for hot paths that consume it immediately."""
        _simplex.extract_y(self.basis, self.xB, self._y)
        return self._y

    def x_plus(self) -> np.ndarray:
        """Optimal shed amounts of the primal, from the simplex multipliers."""
        return np.maximum(self.pi, 0.0)

    def x_minus(self, r: np.ndarray) -> np.ndarray:
        """Optimal unused supply: x- = M' x+ - r, clipped at zero."""
        return np.maximum(self.M.T @ self.x_plus() - r, 0.0)


def shortfall_cost(
    instance: ScaledInstance,
    D: np.ndarray,
    solver: DualSolver | None = None,
    tolerances: SolverTolerances = DEFAULT_TOLERANCES,
) -> ShortfallCost:
    """Shed cost L(D): the infeasible tag when total demand exceeds total
    supply, otherwise the common optimal value of the primal and dual.

    Infeasibility uses the exact aggregate test (total demand vs. total
    supply) rather than a phase-1 solve; it is equivalent for this
    constraint structure and costs O(d).
    """
    D = np.asarray(D, dtype=float)
    if D.shape != (instance.d,):
        raise ValueError(f"demand vector has shape {D.shape}, expected ({instance.d},)")
    total_s = float(np.sum(instance.s))
    slack = total_s - float(np.sum(D))
    if slack < -tolerances.sum_test_rel * max(1.0, abs(total_s)):
        return ShortfallCost.infeasible()
    if solver is None:
        solver = DualSolver(instance, tolerances=tolerances)
    bounded, value = solver.maximize(D - instance.s)
    if not bounded:
        # the aggregate test certifies feasibility, so an unbounded dual can
        # only be a numerical artifact on the boundary
        raise SolverNumericalError(
            "dual reported unbounded although total demand <= total supply"
        )
    if value < -tolerances.feasibility:
        raise SolverNumericalError(f"dual optimum {value} below zero")
    return ShortfallCost(max(value, 0.0))


def enumerate_dual_vertices(
    instance: ScaledInstance, dedupe_tol: float = 1e-9
) -> np.ndarray:
    """All extreme points of ``{y : M y <= 1, y >= 0}``, origin included.

    Brute-force over the d-subsets of the 2d constraint rows: each
    nonsingular subset pins a basic solution, kept when it satisfies the
    remaining constraints within ``1e-9``.  Guarded to ``d <= 8``.
    Returns an array of shape (n_vertices, d), lexicographically sorted.
    """
    d = instance.d
    if d > MAX_ENUMERATION_DIM:
        raise ValueError(
            f"vertex enumeration is combinatorial; d={d} exceeds the "
            f"guard {MAX_ENUMERATION_DIM}"
        )
    M = np.eye(d) - instance.spec.A
    rows = np.vstack([M, -np.eye(d)])
    rhs = np.concatenate([np.ones(d), np.zeros(d)])

    subsets = np.array(list(combinations(range(2 * d), d)), dtype=int)
    mats = rows[subsets]  # (ns, d, d)
    norms = np.linalg.norm(mats, axis=2).prod(axis=1)
    dets = np.linalg.det(mats)
    good = np.abs(dets) > 1e-11 * np.maximum(norms, 1e-30)
    if not good.any():
        return np.zeros((1, d))
    sols = np.linalg.solve(mats[good], rhs[subsets[good]][..., None])[..., 0]
    feas = (sols @ M.T <= 1.0 + dedupe_tol).all(axis=1) & (sols >= -dedupe_tol).all(
        axis=1
    )
    pts = sols[feas]
    pts[np.abs(pts) < 1e-12] = 0.0

    # greedy dedupe within tolerance
    order = np.lexsort(pts.T[::-1])
    pts = pts[order]
    kept: list[np.ndarray] = []
    for p in pts:
        if not any(np.max(np.abs(p - q)) <= dedupe_tol for q in kept):
            kept.append(p)
    out = np.array(kept)
    return out[np.lexsort(out.T[::-1])]
