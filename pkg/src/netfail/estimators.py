"""Failure-probability estimators and the replication harness.

Three unbiased estimators of ``alpha(k) = P{L(D) > k}``:

* naive: the plain indicator of failure on an unconditioned demand draw;
* importance sampling: demands drawn from a mixture of single-node-overflow
  conditional laws, weighted by the likelihood ratio (total overflow tail
  mass over the number of overflowing nodes);
* conditional Monte Carlo: demands in polar form; given the direction, the
  failure probability over the radius is computed analytically from the chi
  survival function at the smallest failing radius.

The harness runs N replications on per-replication random streams (stream
index = replication index) and accumulates them in fixed-size blocks with
compensated sums, merging blocks in index order; estimates are therefore
identical for every thread count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import gammaincc as _gammaincc

from .lp import (
    DEFAULT_TOLERANCES,
    DualSolver,
    SolverNumericalError,
    SolverTolerances,
)
from .network import ScaledInstance
from .stochastic import (
    DEFAULT_SAMPLER_PARAMS,
    GaussianModel,
    SamplerParams,
    StreamPool,
    chi_survival,
    normal_quantile,
    normal_sf,
    philox_key_batch,
    sample_angle,
    sample_conditional_demand,
    sample_demand,
)

__all__ = [
    "METHODS",
    "EstimatorConfig",
    "RootFinderParams",
    "RunStats",
    "MixtureWeights",
    "ExperimentRow",
    "TailUnderflowError",
    "mixture_weights",
    "failure_indicator",
    "naive_replication",
    "is_replication",
    "find_radial_root",
    "failure_radius_intervals",
    "cmc_replication",
    "run_estimator",
    "compare_methods",
    "rows_to_csv",
    "CSV_COLUMNS",
]

METHODS = ("naive", "is", "cmc")

#: Stream namespace per method, stable regardless of request order.
_METHOD_NAMESPACE = {"naive": 0, "is": 1, "cmc": 2}

#: Replications per accumulation block; fixed so that the reduction order
#: (and therefore every reported digit) is independent of the thread count.
_BLOCK = 1024


class TailUnderflowError(ArithmeticError):
    """Every node's overflow probability underflows double precision; the
    event is beyond what importance sampling can represent."""


@dataclass(frozen=True)
class RootFinderParams:
    """Radial root-finder knobs."""

    #: Absolute bracket tolerance scale: stop at width <= abs_tol * (1 + r).
    abs_tol: float = 1e-9
    #: Radius cap: the search stops where the radial survival mass drops
    #: below this floor (contributions smaller than any representable term).
    tail_mass_floor: float = 1e-300
    #: First bracket probe for the geometric doubling phase.
    bracket_start: float = 1.0


DEFAULT_ROOT_PARAMS = RootFinderParams()


@dataclass(frozen=True)
class EstimatorConfig:
    """One estimator run: method, replication count, seed, and tolerances."""

    method: str
    n_replications: int
    seed: int
    level: float = 0.95
    threads: int = 1
    measure_time: bool = True
    root: RootFinderParams = DEFAULT_ROOT_PARAMS
    sampler: SamplerParams = DEFAULT_SAMPLER_PARAMS
    tolerances: SolverTolerances = DEFAULT_TOLERANCES

    def __post_init__(self):
        method = self.method.lower()
        if method not in METHODS:
            raise ValueError(
                f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}"
            )
        object.__setattr__(self, "method", method)
        if self.n_replications < 2:
            raise ValueError("need at least 2 replications to estimate a variance")
        if not 0.0 < self.level < 1.0:
            raise ValueError(f"confidence level must be in (0, 1), got {self.level}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass(frozen=True)
class RunStats:
    """Replication summary: estimate, spread, timing, efficiency."""

    n_replications: int
    estimate: float
    variance: float
    rse: float
    ci_halfwidth: float
    ct_seconds: float | None
    rse2_ct: float | None
    hits: int

    @property
    def degenerate(self) -> bool:
        """True when no replication produced a positive value (RSE is NaN)."""
        return self.estimate == 0.0


@dataclass(frozen=True)
class MixtureWeights:
    """Node-overflow mixture: p[i] proportional to P{D_i > s_i}, and the
    total overflow tail mass tau (the likelihood-ratio numerator)."""

    p: np.ndarray
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "_cum", np.cumsum(self.p))

    def draw_node(self, rng: np.random.Generator) -> int:
        i = int(self._cum.searchsorted(rng.random(), side="right"))
        return i if i < self.p.size else self.p.size - 1


def mixture_weights(model: GaussianModel, instance: ScaledInstance) -> MixtureWeights:
    """Overflow-probability mixture weights, computed with the tail-stable
    survival function so deep-tail nodes keep their relative order."""
    z = (instance.s - model.mu) / model.sigma_marginal
    tails = normal_sf(z)
    tau = float(np.sum(tails))
    if tau <= 0.0:
        raise TailUnderflowError(
            "every node overflow probability underflows double precision; "
            "the failure event is beyond the representable tail"
        )
    return MixtureWeights(p=tails / tau, tau=tau)


# ---------------------------------------------------------------------------
# Failure indicator with aggregate screening.
# ---------------------------------------------------------------------------


def _sum_tolerance(instance: ScaledInstance, tolerances: SolverTolerances) -> float:
    return tolerances.sum_test_rel * max(1.0, abs(float(instance.s.sum())))


def failure_indicator(
    instance: ScaledInstance, D: np.ndarray, solver: DualSolver
) -> bool:
    """Whether ``L(D) > k``, solving the LP only when cheap bounds cannot
    decide.

    ``L = 0`` when no node overflows; ``L >= max_i(D_i - s_i)`` because unit
    vectors are dual feasible; and the primal is infeasible exactly when
    total demand exceeds total supply.  Only demands inside the remaining
    band reach the simplex.
    """
    diff = D - instance.s
    top = diff.max()
    if top <= 0.0:
        return False
    if top > instance.k:
        return True
    if diff.sum() > _sum_tolerance(instance, solver.tolerances):
        return True
    bounded, value = solver.maximize(diff)
    if not bounded:
        raise SolverNumericalError(
            "dual reported unbounded although total demand <= total supply"
        )
    return value > instance.k


def naive_replication(
    model: GaussianModel,
    instance: ScaledInstance,
    rng: np.random.Generator,
    solver: DualSolver | None = None,
) -> float:
    """Indicator of failure on one unconditioned demand draw."""
    if solver is None:
        solver = DualSolver(instance)
    D = sample_demand(model, rng)
    return 1.0 if failure_indicator(instance, D, solver) else 0.0


def is_replication(
    model: GaussianModel,
    instance: ScaledInstance,
    weights: MixtureWeights,
    rng: np.random.Generator,
    solver: DualSolver | None = None,
    sampler: SamplerParams = DEFAULT_SAMPLER_PARAMS,
) -> float:
    """One importance-sampling replication.

    Draws a node from the overflow mixture, a demand conditioned on that
    node overflowing, and returns the likelihood ratio
    ``tau / #{overflowing nodes}`` times the failure indicator.  The value is
    bounded by ``tau`` since at least the chosen node overflows.
    """
    if solver is None:
        solver = DualSolver(instance)
    i = weights.draw_node(rng)
    D = sample_conditional_demand(model, instance, i, rng, sampler)
    if not failure_indicator(instance, D, solver):
        return 0.0
    overflow = int(np.count_nonzero(D > instance.s))
    return weights.tau / max(overflow, 1)


# ---------------------------------------------------------------------------
# Radial structure for conditional Monte Carlo.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _radius_cap(d: int, floor: float) -> float:
    """Smallest radius whose chi survival mass falls below ``floor``."""
    hi = 1.0
    while chi_survival(d, hi) >= floor:
        hi *= 2.0
        if hi > 1e6:  # pragma: no cover - unreachable for sane floors
            return hi
    lo = hi / 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi_survival(d, mid) >= floor:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-9 * (1.0 + hi):
            break
    return hi


class _RadialCost:
    """Shed cost along a demand ray ``D(R) = mu + R * W Psi``.

    The dual polytope is fixed, so every evaluation is a warm-started solve
    with objective ``r0 + R * w``; besides the cost comparison it reports the
    active affine piece (intercept, slope) for root polishing.  Infeasibility
    along the ray is an aggregate linear condition, so probes past the
    feasibility boundary never touch the LP.
    """

    __slots__ = ("w", "r0", "k", "solver", "sum_tol", "sum_r0", "sum_w", "_buf")

    def __init__(self, model, instance, Psi, solver):
        self.w = model.W @ np.asarray(Psi, dtype=float)
        self.r0 = model.mu - instance.s
        self.k = instance.k
        self.solver = solver
        self.sum_tol = _sum_tolerance(instance, solver.tolerances)
        self.sum_r0 = float(self.r0.sum())
        self.sum_w = float(self.w.sum())
        self._buf = np.empty_like(self.r0)

    def infeasible_at(self, R: float) -> bool:
        return self.sum_r0 + R * self.sum_w > self.sum_tol

    def feasibility_boundary(self) -> float:
        """Largest feasible radius (+inf when the ray never leaves the
        feasible region)."""
        if self.sum_w <= 0.0:
            return math.inf
        return (self.sum_tol - self.sum_r0) / self.sum_w

    def fails_at(self, R: float) -> tuple[bool, float, float]:
        """(failure, piece intercept, piece slope) at radius R."""
        if self.infeasible_at(R):
            return True, math.nan, math.nan
        np.multiply(self.w, R, out=self._buf)
        self._buf += self.r0
        solver = self.solver
        bounded, value = solver.maximize(self._buf)
        if not bounded:
            raise SolverNumericalError(
                "dual reported unbounded although total demand <= total supply"
            )
        y = solver.y_view()
        return value > self.k, float(y @ self.r0), float(y @ self.w)


def _polish_root(cost: _RadialCost, lo, hi, hi_piece, abs_tol):
    """Shrink a bracket (no failure at lo, failure at hi) below ``abs_tol``.

    The cost along the ray is a max of finitely many affine functions, each a
    certified lower bound, so the active piece at the failing end crosses the
    threshold at a point that is still >= the true root: stepping there
    either lands exactly on the root (the piece is active and equals the
    threshold) or replaces the failing end with a new active piece.  Plain
    bisection covers brackets ending at the feasibility jump, where no piece
    exists.
    """
    k = cost.k
    while hi - lo > abs_tol * (1.0 + hi):
        cand = None
        newton = False
        if hi_piece is not None and hi_piece[1] > 1e-13:
            rhat = (k - hi_piece[0]) / hi_piece[1]
            # require real progress from the failing end, or the loop could
            # stall re-testing the same crossing
            if lo < rhat <= hi - 1e-3 * (hi - lo):
                cand = rhat
                newton = True
        if cand is None:
            cand = 0.5 * (lo + hi)
        fail, a, b = cost.fails_at(cand)
        if fail:
            hi = cand
            hi_piece = None if math.isnan(a) else (a, b)
        elif newton:
            # the piece is a lower bound that equals k here, so the cost is
            # exactly k at cand and exceeds it beyond: cand is the infimum
            return cand
        else:
            lo = cand
    return 0.5 * (lo + hi)


def _ray_intervals(cost: _RadialCost, cap: float, params: RootFinderParams):
    """Failure set when the cost at radius zero is within threshold: a single
    ray bracketed by geometric doubling, then polished."""
    lo = 0.0
    hi = None
    hi_piece = None
    R = params.bracket_start
    while True:
        probe = min(R, cap)
        fail, a, b = cost.fails_at(probe)
        if fail:
            hi = probe
            hi_piece = None if math.isnan(a) else (a, b)
            break
        lo = probe
        if probe >= cap:
            return []
        R *= 2.0
    if hi_piece is None:
        # the bracket closed on the infeasible region: jump straight to the
        # (closed-form) feasibility boundary and test the cost there
        boundary = min(max(cost.feasibility_boundary(), lo), hi)
        fail, a, b = cost.fails_at(boundary)
        if fail and not math.isnan(a):
            hi, hi_piece = boundary, (a, b)
        elif not fail:
            # cost stays within threshold on the whole feasible segment, so
            # failure starts exactly at the infeasibility jump
            return [(boundary, math.inf)]
        else:  # pragma: no cover - boundary rounded into infeasibility
            hi = boundary
    root = _polish_root(cost, lo, hi, hi_piece, params.abs_tol)
    return [(root, math.inf)]


def _scan_intervals(cost: _RadialCost, cap: float, params: RootFinderParams):
    """General failure set scan for instances where a mean exceeds supply:
    geometric grid detection of crossings, then bisection on each edge."""
    grid = [0.0] + [cap * 2.0 ** (-j) for j in range(40, -1, -1)]
    flags = [cost.fails_at(R)[0] for R in grid]
    edges: list[float] = []
    for j in range(1, len(grid)):
        if flags[j] != flags[j - 1]:
            lo, hi = grid[j - 1], grid[j]
            while hi - lo > params.abs_tol * (1.0 + hi):
                mid = 0.5 * (lo + hi)
                if cost.fails_at(mid)[0] == flags[j]:
                    hi = mid
                else:
                    lo = mid
            edges.append(0.5 * (lo + hi))
    intervals: list[tuple[float, float]] = []
    if flags[0]:
        start: float | None = 0.0
        rest = edges
    elif edges:
        start = edges[0]
        rest = edges[1:]
    else:
        return []
    for j in range(0, len(rest), 2):
        intervals.append((start, rest[j]))
        start = rest[j + 1] if j + 1 < len(rest) else None
    if start is not None:
        intervals.append((start, math.inf))
    return intervals


def failure_radius_intervals(
    model: GaussianModel,
    instance: ScaledInstance,
    Psi: np.ndarray,
    solver: DualSolver | None = None,
    params: RootFinderParams = DEFAULT_ROOT_PARAMS,
) -> list[tuple[float, float]]:
    """Failure set along the ray as a list of disjoint intervals.

    The main case (every mean within supply) is a single ray ``(r*, inf)``:
    the cost along the ray is a max of affine functions that starts at zero,
    so it crosses the threshold once.  If some mean exceeds its supply the
    cost at radius zero may already exceed the threshold; a forward scan
    over geometric grid points then detects every crossing and the result is
    a union of intervals.
    """
    if solver is None:
        solver = DualSolver(instance)
    cost = _RadialCost(model, instance, Psi, solver)
    cap = _radius_cap(instance.d, params.tail_mass_floor)
    if instance.mean_within_supply:
        return _ray_intervals(cost, cap, params)
    return _scan_intervals(cost, cap, params)


def find_radial_root(
    model: GaussianModel,
    instance: ScaledInstance,
    Psi: np.ndarray,
    solver: DualSolver | None = None,
    params: RootFinderParams = DEFAULT_ROOT_PARAMS,
) -> float:
    """Smallest radius at which the network fails along direction ``W Psi``:
    ``inf{R >= 0 : L(mu + R W Psi) > k}``, or +inf when no failure occurs up
    to the radius cap."""
    intervals = failure_radius_intervals(model, instance, Psi, solver, params)
    return intervals[0][0] if intervals else math.inf


def _interval_mass(d: int, intervals) -> float:
    half_d = 0.5 * d
    value = 0.0
    for lo, hi in intervals:
        value += float(_gammaincc(half_d, 0.5 * lo * lo)) - (
            0.0 if math.isinf(hi) else float(_gammaincc(half_d, 0.5 * hi * hi))
        )
    return min(max(value, 0.0), 1.0)


def cmc_replication(
    model: GaussianModel,
    instance: ScaledInstance,
    rng: np.random.Generator,
    solver: DualSolver | None = None,
    params: RootFinderParams = DEFAULT_ROOT_PARAMS,
) -> float:
    """One conditional Monte Carlo replication: the analytic radial failure
    mass given a uniform direction; always in [0, 1]."""
    if solver is None:
        solver = DualSolver(instance)
    Psi = sample_angle(model.d, rng)
    intervals = failure_radius_intervals(model, instance, Psi, solver, params)
    return _interval_mass(instance.d, intervals)


# ---------------------------------------------------------------------------
# Replication harness.
# ---------------------------------------------------------------------------


class _NeumaierSum:
    """Compensated accumulator; deterministic for a fixed addition order."""

    __slots__ = ("s", "c")

    def __init__(self):
        self.s = 0.0
        self.c = 0.0

    def add(self, x: float) -> None:
        t = self.s + x
        if abs(self.s) >= abs(x):
            self.c += (self.s - t) + x
        else:
            self.c += (x - t) + self.s
        self.s = t

    def total(self) -> float:
        return self.s + self.c


def _block_bounds(b: int, n_total: int) -> tuple[int, int]:
    lo = b * _BLOCK
    return lo, min(n_total, lo + _BLOCK)


def _naive_block(model, instance, config, namespace, b):
    """One block of naive replications: per-replication streams, vectorized
    screening, LP solves only for undecided demands."""
    lo, hi = _block_bounds(b, config.n_replications)
    count = hi - lo
    keys = philox_key_batch(config.seed, (namespace,), np.arange(lo, hi))
    pool = StreamPool()
    d = model.d
    diff = np.empty((count, d))
    for j in range(count):
        z = pool.get(keys[j]).standard_normal(d)
        diff[j] = model.mu + model.W @ z
    diff -= instance.s
    top = diff.max(axis=1)
    total = diff.sum(axis=1)
    sum_tol = _sum_tolerance(instance, config.tolerances)
    fail = top > instance.k
    fail |= (top > 0.0) & (total > sum_tol)
    band = np.nonzero((top > 0.0) & ~fail)[0]
    if band.size:
        solver = DualSolver(instance, tolerances=config.tolerances)
        for j in band:
            bounded, value = solver.maximize(np.ascontiguousarray(diff[j]))
            if not bounded:
                raise SolverNumericalError(
                    "dual reported unbounded although total demand <= total supply"
                )
            if value > instance.k:
                fail[j] = True
    hits = int(np.count_nonzero(fail))
    return float(hits), float(hits), hits


def _loop_block(replicate, config, namespace, b):
    """Generic per-replication block loop with compensated accumulation."""
    lo, hi = _block_bounds(b, config.n_replications)
    keys = philox_key_batch(config.seed, (namespace,), np.arange(lo, hi))
    pool = StreamPool()
    acc = _NeumaierSum()
    acc2 = _NeumaierSum()
    hits = 0
    for j in range(hi - lo):
        v = replicate(pool.get(keys[j]))
        acc.add(v)
        acc2.add(v * v)
        if v > 0.0:
            hits += 1
    return acc.total(), acc2.total(), hits


def _block_runner(model, instance, config, namespace) -> Callable[[int], tuple]:
    if config.method == "naive":
        return lambda b: _naive_block(model, instance, config, namespace, b)
    if config.method == "is":
        weights = mixture_weights(model, instance)

        def run_is(b):
            solver = DualSolver(instance, tolerances=config.tolerances)
            return _loop_block(
                lambda rng: is_replication(
                    model, instance, weights, rng, solver, config.sampler
                ),
                config, namespace, b,
            )

        return run_is

    def run_cmc(b):
        solver = DualSolver(instance, tolerances=config.tolerances)
        return _loop_block(
            lambda rng: cmc_replication(model, instance, rng, solver, config.root),
            config, namespace, b,
        )

    return run_cmc


def run_estimator(
    model: GaussianModel, instance: ScaledInstance, config: EstimatorConfig
) -> RunStats:
    """Run N independent replications and summarize them.

    Stream index = replication index, and replications are reduced in fixed
    blocks, so the estimate, variance, and hit count are identical for every
    thread count.  Wall-clock time covers the replication loop only.
    """
    namespace = _METHOD_NAMESPACE[config.method]
    N = config.n_replications
    n_blocks = (N + _BLOCK - 1) // _BLOCK
    runner = _block_runner(model, instance, config, namespace)

    t0 = time.perf_counter()
    if config.threads <= 1 or n_blocks <= 1:
        partials = [runner(b) for b in range(n_blocks)]
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            partials = list(pool.map(runner, range(n_blocks)))
    ct = time.perf_counter() - t0

    total = _NeumaierSum()
    total_sq = _NeumaierSum()
    hits = 0
    for bs, bs2, bh in partials:
        total.add(bs)
        total_sq.add(bs2)
        hits += bh
    mean = total.total() / N
    var = max(total_sq.total() - N * mean * mean, 0.0) / (N - 1)
    se = math.sqrt(var / N)
    rse = se / mean if mean > 0.0 else math.nan
    halfwidth = normal_quantile(1.0 - (1.0 - config.level) / 2.0) * se
    ct_out = ct if config.measure_time else None
    rse2ct = (rse * rse * ct) if config.measure_time else None
    return RunStats(
        n_replications=N,
        estimate=mean,
        variance=var,
        rse=rse,
        ci_halfwidth=halfwidth,
        ct_seconds=ct_out,
        rse2_ct=rse2ct,
        hits=hits,
    )


@dataclass(frozen=True)
class ExperimentRow:
    """One (method, instance) result, the unit of the CSV output."""

    method: str
    n: float
    k: float
    stats: RunStats


def compare_methods(
    model: GaussianModel,
    instance: ScaledInstance,
    configs: Sequence[EstimatorConfig],
) -> list[ExperimentRow]:
    """Run several methods on one instance under a shared master seed.

    Each method draws from its own stream namespace, so adding or removing
    methods never perturbs the others' results.
    """
    if not configs:
        raise ValueError("need at least one estimator configuration")
    return [
        ExperimentRow(
            method=c.method,
            n=instance.n,
            k=instance.k,
            stats=run_estimator(model, instance, c),
        )
        for c in configs
    ]


CSV_COLUMNS = (
    "method",
    "n",
    "k",
    "N",
    "alpha_hat",
    "rse",
    "ci_halfwidth",
    "ct_seconds",
    "rse2ct",
    "hits",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "NaN"
        return repr(value)
    return str(value)


def rows_to_csv(rows: Iterable[ExperimentRow]) -> str:
    """Render experiment rows as CSV (full float precision; NaN spelled out,
    timing columns empty when timing was disabled)."""
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        st = row.stats
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    row.method,
                    row.n,
                    row.k,
                    st.n_replications,
                    st.estimate,
                    st.rse,
                    st.ci_halfwidth,
                    st.ct_seconds,
                    st.rse2_ct,
                    st.hits,
                )
            )
        )
    return "\n".join(lines) + "\n"
