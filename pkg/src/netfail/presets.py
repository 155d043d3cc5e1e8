"""Built-in experiment presets: the three benchmark networks.

``example1`` is a 3-node path network with one heavily supplied node,
``example2`` a 10-node network with an asymmetric edge list, and
``example3`` a 30-node directed ring with equicorrelated demands and a
threshold that grows like ``20 * sqrt(n)``.  Each preset carries its n-grid
and the standard replication count of 1e5.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NetworkSpec, ThresholdRule, default_routing

__all__ = ["ExperimentPreset", "PRESET_NAMES", "preset"]

#: Default replication count for all presets.
PRESET_REPLICATIONS = 100_000


@dataclass(frozen=True)
class ExperimentPreset:
    """A named network plus the grid it is benchmarked on."""

    name: str
    spec: NetworkSpec
    n_values: tuple[float, ...]
    k_rule: ThresholdRule
    n_replications: int = PRESET_REPLICATIONS

    def describe(self) -> str:
        return (
            f"{self.name}: d={self.spec.d}, beta={self.spec.beta:g}, "
            f"{self.k_rule.describe()}, n grid {list(self.n_values)}"
        )


def _example1() -> ExperimentPreset:
    H = np.array(
        [
            [0, 1, 0],
            [1, 0, 1],
            [0, 1, 0],
        ],
        dtype=float,
    )
    sigma = np.array(
        [
            [1.0, 0.5, 0.1],
            [0.5, 1.0, 0.5],
            [0.1, 0.5, 1.0],
        ]
    )
    spec = NetworkSpec(
        H=H,
        A=default_routing(H),
        gamma=np.array([3.0, 1.0, 13.0]),
        mu=np.array([1.0, 1.0, 2.0]),
        sigma=sigma,
        beta=1.0,
    )
    return ExperimentPreset(
        name="example1",
        spec=spec,
        n_values=(1.5, 2.5, 3.2, 3.9, 4.5, 4.9),
        k_rule=ThresholdRule.constant(1.0),
    )


#: Directed edges of the 10-node example (0-based pairs).
_EXAMPLE2_EDGES = (
    (1, 2), (1, 3), (2, 1), (3, 4), (3, 8), (4, 5), (4, 7),
    (5, 6), (6, 7), (7, 8), (8, 9), (9, 10), (10, 1),
)

_EXAMPLE2_SIGMA = [
    [0.5, 0.3, 0.3, 0.25, 0.2, 0.15, 0.2, 0.25, 0.2, 0.15],
    [0.3, 0.5, 0.25, 0.2, 0.15, 0.1, 0.15, 0.2, 0.15, 0.1],
    [0.3, 0.25, 0.5, 0.3, 0.25, 0.2, 0.25, 0.3, 0.25, 0.2],
    [0.25, 0.2, 0.3, 0.5, 0.3, 0.25, 0.3, 0.25, 0.2, 0.15],
    [0.2, 0.15, 0.25, 0.3, 0.5, 0.3, 0.25, 0.2, 0.15, 0.1],
    [0.15, 0.1, 0.2, 0.25, 0.3, 0.5, 0.3, 0.25, 0.2, 0.15],
    [0.2, 0.15, 0.25, 0.3, 0.25, 0.3, 0.5, 0.3, 0.25, 0.2],
    [0.25, 0.2, 0.3, 0.25, 0.2, 0.25, 0.3, 0.5, 0.3, 0.25],
    [0.2, 0.15, 0.25, 0.2, 0.15, 0.2, 0.25, 0.3, 0.5, 0.3],
    [0.15, 0.1, 0.2, 0.15, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5],
]


def _example2() -> ExperimentPreset:
    H = np.zeros((10, 10))
    for i, j in _EXAMPLE2_EDGES:
        H[i - 1, j - 1] = 1.0
    spec = NetworkSpec(
        H=H,
        A=default_routing(H),
        gamma=np.array([3.0, 5.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 15.0]),
        mu=np.array([1.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
        sigma=np.array(_EXAMPLE2_SIGMA),
        beta=1.0,
    )
    return ExperimentPreset(
        name="example2",
        spec=spec,
        n_values=(1.0, 1.3, 1.5, 1.6, 1.7, 1.8),
        k_rule=ThresholdRule.constant(2.0),
    )


def _example3() -> ExperimentPreset:
    d = 30
    H = np.zeros((d, d))
    for i in range(d - 1):
        H[i, i + 1] = 1.0
    H[d - 1, 0] = 1.0
    sigma = np.full((d, d), 0.4)
    np.fill_diagonal(sigma, 1.0)
    spec = NetworkSpec(
        H=H,
        A=default_routing(H),
        gamma=np.full(d, 2.0),
        mu=np.ones(d),
        sigma=sigma,
        beta=1.0,
    )
    return ExperimentPreset(
        name="example3",
        spec=spec,
        n_values=(1.20, 1.50, 1.70, 1.95, 2.05, 2.16),
        k_rule=ThresholdRule(coefficient=20.0, power=0.5),
    )


_BUILDERS = {
    "example1": _example1,
    "example2": _example2,
    "example3": _example3,
}

PRESET_NAMES = tuple(_BUILDERS)


def preset(name: str) -> ExperimentPreset:
    """Look up a preset by name; raises KeyError listing the valid names."""
    try:
        builder = _BUILDERS[name.lower()]
    except KeyError:
        raise KeyError(
            f"unknown preset {name!r}; available presets: {', '.join(PRESET_NAMES)}"
        ) from None
    return builder()
