"""Distribution-network description, validation, and supply scaling.

A network is a directed graph on ``d`` nodes.  Each node holds a supply of a
divisible commodity and faces a random Gaussian demand; demand a node cannot
serve locally is pushed to its out-neighbors in fixed proportions.  The static
problem data live in :class:`NetworkSpec`; binding a spec to a rarity
parameter ``n`` (supplies ``s = n**beta * gamma``) and a failure threshold
``k`` yields a :class:`ScaledInstance`, the unit consumed by the LP layer and
the estimators.

All arrays are stored as read-only ``float64`` copies, so specs and instances
are safe to share between threads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
import numpy as np

__all__ = [
    "NetworkSpec",
    "ScaledInstance",
    "ThresholdRule",
    "ValidationReport",
    "AssumptionWarning",
    "NetworkValidationError",
    "validate_network",
    "default_routing",
    "scale_instance",
    "spec_to_dict",
    "spec_from_dict",
    "load_network",
    "save_network",
]

#: Tolerance on routing-matrix row sums (rows must be stochastic).
ROW_SUM_TOL = 1e-12


class NetworkValidationError(ValueError):
    """A network description violates a structural invariant."""


class AssumptionWarning(UserWarning):
    """Advisory: the instance breaks a hypothesis of the asymptotic theory.

    The LPs and the estimators stay well defined; only the large-rarity
    guarantees lose their footing.
    """


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NetworkSpec:
    """Static description of the network and its demand law.

    Attributes:
        H: d x d incidence matrix with entries in {0, 1}, zero diagonal.
        A: d x d routing matrix; ``A[i, j]`` is the share of node i's
            unserved demand pushed to node j.  Rows sum to one and the
            support matches ``H``.
        gamma: positive supply shape; node i's supply is ``n**beta * gamma[i]``.
        mu: demand means.
        sigma: demand covariance matrix (symmetric positive definite).
        beta: positive supply scale exponent.
    """

    H: np.ndarray
    A: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "H", _readonly(self.H))
        object.__setattr__(self, "A", _readonly(self.A))
        object.__setattr__(self, "gamma", _readonly(self.gamma))
        object.__setattr__(self, "mu", _readonly(self.mu))
        object.__setattr__(self, "sigma", _readonly(self.sigma))
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def d(self) -> int:
        """Node count."""
        return self.H.shape[0] if self.H.ndim == 2 else 0

    def validate(self) -> "ValidationReport":
        return validate_network(self)


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of :func:`validate_network`: ``ok`` or a list of violations."""

    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise NetworkValidationError("; ".join(self.violations))


@dataclass(frozen=True)
class ThresholdRule:
    """Failure threshold as a function of the rarity parameter: ``k = c * n**p``.

    ``p == 0`` is a constant threshold.  Both coefficient and power must be
    nonnegative so the threshold never goes negative.
    """

    coefficient: float
    power: float = 0.0

    def __post_init__(self):
        if self.coefficient < 0 or self.power < 0:
            raise NetworkValidationError(
                f"threshold rule needs c >= 0 and p >= 0, got "
                f"c={self.coefficient}, p={self.power}"
            )

    @classmethod
    def constant(cls, k: float) -> "ThresholdRule":
        return cls(coefficient=float(k), power=0.0)

    def __call__(self, n: float) -> float:
        return self.coefficient * float(n) ** self.power

    def to_dict(self) -> dict:
        if self.power == 0.0:
            return {"constant": self.coefficient}
        return {"coefficient": self.coefficient, "power": self.power}

    @classmethod
    def from_dict(cls, data: dict | float) -> "ThresholdRule":
        if isinstance(data, (int, float)):
            return cls.constant(float(data))
        if "constant" in data:
            return cls.constant(float(data["constant"]))
        return cls(float(data["coefficient"]), float(data.get("power", 0.0)))

    def describe(self) -> str:
        if self.power == 0.0:
            return f"k = {self.coefficient:g}"
        return f"k = {self.coefficient:g} * n^{self.power:g}"


@dataclass(frozen=True)
class ScaledInstance:
    """A spec bound to rarity parameter ``n``: supplies ``s = n**beta * gamma``
    and threshold ``k``."""

    spec: NetworkSpec
    n: float
    s: np.ndarray
    k: float

    def __post_init__(self):
        object.__setattr__(self, "s", _readonly(self.s))

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def mean_within_supply(self) -> bool:
        """True when every demand mean sits at or below its node's supply."""
        return bool(np.all(self.spec.mu <= self.s))


def _strongly_connected(H: np.ndarray) -> bool:
    """Every node reaches every node along directed H edges."""
    d = H.shape[0]
    adj = H > 0
    for mat in (adj, adj.T):
        seen = np.zeros(d, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            i = stack.pop()
            for j in np.nonzero(mat[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        if not seen.all():
            return False
    return True


def validate_network(spec: NetworkSpec) -> ValidationReport:
    """Check every structural invariant of a :class:`NetworkSpec`.

    Returns a report rather than raising, so callers (and the CLI) can show
    all violations at once.  Positive definiteness of the covariance is
    certified by attempting its triangular factorization.
    """
    v: list[str] = []
    H, A = spec.H, spec.A
    if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] < 2:
        return ValidationReport(("H must be a square matrix with d >= 2",))
    d = H.shape[0]
    for name, arr, shape in (
        ("A", A, (d, d)),
        ("gamma", spec.gamma, (d,)),
        ("mu", spec.mu, (d,)),
        ("sigma", spec.sigma, (d, d)),
    ):
        if arr.shape != shape:
            v.append(f"{name} has shape {arr.shape}, expected {shape}")
    if v:
        return ValidationReport(tuple(v))

    if not np.isin(H, (0.0, 1.0)).all():
        v.append("H entries must be 0 or 1")
    if np.any(np.diag(H) != 0):
        v.append("H has a nonzero diagonal entry")
    if not _strongly_connected(H):
        v.append("H is not irreducible (graph is not strongly connected)")

    if np.any(np.diag(A) != 0):
        v.append("A has a nonzero diagonal entry")
    if np.any((A > 0) != (H > 0)):
        v.append("support of A does not match support of H")
    if np.any(A < 0) or np.any(A > 1):
        v.append("A entries must lie in [0, 1]")
    bad_rows = np.nonzero(np.abs(A.sum(axis=1) - 1.0) > ROW_SUM_TOL)[0]
    if bad_rows.size:
        v.append(f"A rows {bad_rows.tolist()} do not sum to 1 within {ROW_SUM_TOL:g}")

    if not np.allclose(spec.sigma, spec.sigma.T, rtol=0.0, atol=1e-12):
        v.append("sigma is not symmetric")
    else:
        try:
            np.linalg.cholesky(spec.sigma)
        except np.linalg.LinAlgError:
            v.append("sigma is not positive definite")

    if np.any(spec.gamma <= 0):
        v.append("gamma must be strictly positive")
    if not spec.beta > 0:
        v.append("beta must be strictly positive")
    if not (
        np.isfinite(H).all()
        and np.isfinite(A).all()
        and np.isfinite(spec.gamma).all()
        and np.isfinite(spec.mu).all()
        and np.isfinite(spec.sigma).all()
    ):
        v.append("network data contain non-finite entries")
    return ValidationReport(tuple(v))


def default_routing(H: np.ndarray) -> np.ndarray:
    """Equal-split routing: each unit of unserved demand is shared uniformly
    among out-neighbors, ``A[i, j] = H[i, j] / sum_j H[i, j]``."""
    H = np.asarray(H, dtype=float)
    row = H.sum(axis=1)
    if np.any(row == 0):
        dead = np.nonzero(row == 0)[0].tolist()
        raise NetworkValidationError(f"H rows {dead} have no outgoing edge")
    return H / row[:, None]


def scale_instance(
    spec: NetworkSpec, n: float, k_rule: ThresholdRule | float
) -> ScaledInstance:
    """Bind ``spec`` to rarity parameter ``n``: ``s = n**beta * gamma`` and
    ``k = k_rule(n)``.

    Warns (does not reject) when some ``mu[i] > s[i]``: the LPs and the
    estimators remain well defined, but the asymptotic theory's hypotheses
    no longer hold, which matters for the CMC ray structure.
    """
    if not n > 0:
        raise NetworkValidationError(f"rarity parameter must be positive, got {n}")
    if isinstance(k_rule, (int, float)):
        k_rule = ThresholdRule.constant(float(k_rule))
    k = k_rule(n)
    if k < 0:
        raise NetworkValidationError(f"threshold rule produced k = {k} < 0")
    s = float(n) ** spec.beta * spec.gamma
    inst = ScaledInstance(spec=spec, n=float(n), s=s, k=float(k))
    if not inst.mean_within_supply:
        over = np.nonzero(spec.mu > s)[0].tolist()
        warnings.warn(
            f"mean demand exceeds supply at nodes {over} (n={n:g}); "
            "asymptotic guarantees do not apply at this scale",
            AssumptionWarning,
            stacklevel=2,
        )
    return inst


# ---------------------------------------------------------------------------
# JSON serialization.  Schema: {"d": int, "H": [[...]], "A": [[...]] (optional,
# omitted means equal-split routing), "gamma": [...], "mu": [...],
# "sigma": [[...]], "beta": float}.
# ---------------------------------------------------------------------------


def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "d": spec.d,
        "H": spec.H.astype(int).tolist(),
        "A": spec.A.tolist(),
        "gamma": spec.gamma.tolist(),
        "mu": spec.mu.tolist(),
        "sigma": spec.sigma.tolist(),
        "beta": spec.beta,
    }


def spec_from_dict(data: dict) -> NetworkSpec:
    try:
        H = np.asarray(data["H"], dtype=float)
        gamma = np.asarray(data["gamma"], dtype=float)
        mu = np.asarray(data["mu"], dtype=float)
        sigma = np.asarray(data["sigma"], dtype=float)
        beta = float(data["beta"])
    except KeyError as exc:
        raise NetworkValidationError(f"network document is missing key {exc}") from exc
    if "d" in data and int(data["d"]) != H.shape[0]:
        raise NetworkValidationError(
            f"declared d={data['d']} does not match H shape {H.shape}"
        )
    A = np.asarray(data["A"], dtype=float) if "A" in data else default_routing(H)
    return NetworkSpec(H=H, A=A, gamma=gamma, mu=mu, sigma=sigma, beta=beta)


def load_network(path: str | Path) -> NetworkSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh))


def save_network(spec: NetworkSpec, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2)
        fh.write("\n")
