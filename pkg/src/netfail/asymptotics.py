"""Large-rarity decay rate of the failure probability and convergence
diagnostics.

As the rarity parameter grows, ``n**(-2*beta) * log alpha(k_n)`` approaches
``-gamma(t*)**2 / (2 sigma(t*)**2)`` where ``t*`` minimizes the
supply-to-noise ratio ``gamma(t)/sigma(t)``: the cheapest node to overwhelm
dominates the tail.  ``rate_sweep`` estimates the failure probability along
an n-grid and tabulates the scaled log against the limiting rate;
``probability_sandwich`` gives closed-form bounds (a single-node overflow
from below, the union of overflows from above) that every estimate must
respect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimators import EstimatorConfig, run_estimator
from .network import NetworkSpec, ScaledInstance, ThresholdRule, scale_instance
from .stochastic import GaussianModel, normal_sf

__all__ = [
    "LdRate",
    "RateRow",
    "RateReport",
    "ld_rate",
    "probability_sandwich",
    "rate_sweep",
    "rate_report_to_csv",
]


@dataclass(frozen=True)
class LdRate:
    """Decay-rate header: the dominant node (0-based), its supply-to-noise
    ratio, and the limiting rate."""

    t_star: int
    ratio: float
    rate: float


@dataclass(frozen=True)
class RateRow:
    """One grid point of a rate sweep; ``scaled_log`` is NaN when the
    estimate degenerated to zero (flagged, not an error)."""

    n: float
    estimate: float
    scaled_log: float
    rse: float
    degenerate: bool


@dataclass(frozen=True)
class RateReport:
    header: LdRate
    beta: float
    rows: tuple[RateRow, ...]


def ld_rate(spec: NetworkSpec) -> LdRate:
    """Dominant node and decay rate: ``t* = argmin gamma/sigma`` (ties to the
    lowest index) and ``rate = gamma(t*)^2 / (2 sigma(t*)^2)``."""
    sigma_marginal = np.sqrt(np.diag(spec.sigma))
    ratios = spec.gamma / sigma_marginal
    t_star = int(np.argmin(ratios))  # argmin takes the first minimum
    ratio = float(ratios[t_star])
    return LdRate(t_star=t_star, ratio=ratio, rate=0.5 * ratio * ratio)


def probability_sandwich(
    model: GaussianModel, instance: ScaledInstance
) -> tuple[float, float]:
    """Closed-form bounds on the failure probability.

    Lower: the most-overloaded single node pushes the shed cost past ``k``
    on its own.  Upper: failure requires at least one node to overflow, so
    the union tail mass (capped at 1) dominates.
    """
    z_hi = (instance.s - model.mu + instance.k) / model.sigma_marginal
    lower = float(np.max(normal_sf(z_hi)))
    z_lo = (instance.s - model.mu) / model.sigma_marginal
    upper = float(min(np.sum(normal_sf(z_lo)), 1.0))
    return lower, upper


def rate_sweep(
    model: GaussianModel,
    spec: NetworkSpec,
    n_values: Sequence[float],
    k_rule: ThresholdRule | float,
    config: EstimatorConfig,
) -> RateReport:
    """Estimate the failure probability along an increasing n-grid and
    record ``n**(-2*beta) * log(alpha_hat)`` next to the limiting rate.

    Zero estimates are kept as flagged rows (scaled log NaN) rather than
    dropped, so grid positions stay aligned with the request.
    """
    n_values = [float(n) for n in n_values]
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n values must be strictly increasing")
    header = ld_rate(spec)
    rows = []
    for n in n_values:
        instance = scale_instance(spec, n, k_rule)
        stats = run_estimator(model, instance, config)
        if stats.estimate > 0.0:
            scaled = math.log(stats.estimate) / n ** (2.0 * spec.beta)
            rows.append(
                RateRow(
                    n=n,
                    estimate=stats.estimate,
                    scaled_log=scaled,
                    rse=stats.rse,
                    degenerate=False,
                )
            )
        else:
            rows.append(
                RateRow(
                    n=n, estimate=0.0, scaled_log=math.nan, rse=math.nan,
                    degenerate=True,
                )
            )
    return RateReport(header=header, beta=spec.beta, rows=tuple(rows))


def rate_report_to_csv(report: RateReport) -> str:
    lines = ["n,alpha_hat,scaled_log,neg_rate"]
    for row in report.rows:
        scaled = "NaN" if math.isnan(row.scaled_log) else repr(row.scaled_log)
        lines.append(f"{row.n!r},{row.estimate!r},{scaled},{-report.header.rate!r}")
    return "\n".join(lines) + "\n"
