"""Problem data, normalization and constraint accounting.

All quantities are in the normalized form used throughout the package:
``gamma[i, j]`` is the SNR UE ``j`` would see from BS ``i`` with the full
power budget over the full bandwidth, ``rate[j]`` is the demand in
bits/s/Hz of total bandwidth, ``x[i, j]`` is the fraction of BS ``i``'s
budget spent on UE ``j`` and ``y[j]`` the fraction of spectrum given to
UE ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

LN2 = np.log(2.0)

# linear constraints (budgets, spectrum sum)
TOL_EQ = 1e-9
# relative tolerance on the rate equalities
TOL_RATE = 1e-7
# a power ratio below this counts as "not served"
ZERO_X = 1e-8
# every served UE needs at least this much spectrum
Y_MIN = 1e-9
# exp() argument ceiling; beyond it the required power is treated as infinite
U_MAX = 700.0


class InfeasibleInstance(ValueError):
    """Raised when an instance can never be served (e.g. an uncoverable UE)."""


@dataclass(frozen=True)
class PhysicalProblem:
    """Downlink problem in physical units (watts, hertz, W/Hz)."""

    p0: float
    b0: float
    n0: float
    channel_gain: np.ndarray
    rate_demand: np.ndarray

    def __post_init__(self):
        gain = np.array(self.channel_gain, dtype=float, ndmin=2)
        demand = np.array(self.rate_demand, dtype=float, ndmin=1)
        if gain.ndim != 2 or gain.shape[1] != demand.shape[0]:
            raise ValueError(f"channel_gain {gain.shape} does not match "
                             f"rate_demand {demand.shape}")
        if min(self.p0, self.b0, self.n0) <= 0:
            raise ValueError("p0, b0 and n0 must be positive")
        if np.any(gain < 0) or not np.all(np.isfinite(gain)):
            raise ValueError("channel gains must be finite and non-negative")
        if np.any(demand <= 0):
            raise ValueError("rate demands must be positive")
        gain.setflags(write=False)
        demand.setflags(write=False)
        object.__setattr__(self, "channel_gain", gain)
        object.__setattr__(self, "rate_demand", demand)

    @property
    def num_bs(self) -> int:
        return self.channel_gain.shape[0]

    @property
    def num_ue(self) -> int:
        return self.channel_gain.shape[1]


@dataclass(frozen=True)
class Instance:
    """Normalized problem: SNR matrix ``gamma`` (M x N) and demands ``rate`` (N)."""

    gamma: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        gamma = np.array(self.gamma, dtype=float, ndmin=2)
        rate = np.array(self.rate, dtype=float, ndmin=1)
        if gamma.ndim != 2 or rate.ndim != 1 or gamma.shape[1] != rate.shape[0]:
            raise ValueError(f"gamma {gamma.shape} does not match rate {rate.shape}")
        if gamma.shape[0] < 1 or gamma.shape[1] < 1:
            raise ValueError("need at least one BS and one UE")
        if np.any(gamma < 0) or not np.all(np.isfinite(gamma)):
            raise ValueError("gamma must be finite and non-negative")
        if np.any(rate <= 0) or not np.all(np.isfinite(rate)):
            raise ValueError("rate demands must be positive and finite")
        uncovered = np.flatnonzero(~np.any(gamma > 0, axis=0))
        if uncovered.size:
            raise InfeasibleInstance(f"uncoverable UE(s) {uncovered.tolist()}")
        gamma.setflags(write=False)
        rate.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "rate", rate)

    @property
    def num_bs(self) -> int:
        return self.gamma.shape[0]

    @property
    def num_ue(self) -> int:
        return self.gamma.shape[1]

    def scaled(self, eps: float) -> "Instance":
        """Same channels, demands multiplied by ``eps``."""
        return Instance(self.gamma, self.rate * eps)

    def to_dict(self) -> dict:
        return {"num_bs": self.num_bs, "num_ue": self.num_ue,
                "gamma": self.gamma.tolist(), "rate": self.rate.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Instance":
        if "gamma" in d:
            inst = cls(np.asarray(d["gamma"], dtype=float),
                       np.asarray(d["rate"], dtype=float))
        else:
            inst = normalize(PhysicalProblem(
                p0=float(d["p0"]), b0=float(d["b0"]), n0=float(d["n0"]),
                channel_gain=np.asarray(d["channel_gain"], dtype=float),
                rate_demand=np.asarray(d["rate_demand"], dtype=float)))
        for key, val in (("num_bs", inst.num_bs), ("num_ue", inst.num_ue)):
            if key in d and int(d[key]) != val:
                raise ValueError(f"{key}={d[key]} disagrees with data ({val})")
        return inst


@dataclass(frozen=True)
class Allocation:
    """Power ratios ``x`` (M x N), bandwidth ratios ``y`` (N) and objective.

    ``mu`` and ``weights`` carry the Lagrange multipliers when the
    allocation comes from the dual solver: ``mu`` prices spectrum and
    ``weights[i] = 1 + lambda_i`` prices BS ``i``'s power budget.
    """

    x: np.ndarray
    y: np.ndarray
    feasible: bool
    mu: Optional[float] = None
    weights: Optional[np.ndarray] = None
    info: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float, ndmin=2)
        y = np.array(self.y, dtype=float, ndmin=1)
        if x.shape[1] != y.shape[0]:
            raise ValueError(f"x {x.shape} does not match y {y.shape}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.weights is not None:
            w = np.array(self.weights, dtype=float)
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def z(self) -> float:
        return float(np.sum(self.x))

    @classmethod
    def infeasible(cls, num_bs: int, num_ue: int, **info) -> "Allocation":
        return cls(np.zeros((num_bs, num_ue)), np.full(num_ue, 1.0 / num_ue),
                   feasible=False, info=info)

    def support(self, thresh: float = ZERO_X) -> np.ndarray:
        return self.x > thresh

    def to_dict(self) -> dict:
        d = {"x": self.x.tolist(), "y": self.y.tolist(), "z": self.z,
             "feasible": bool(self.feasible)}
        if self.mu is not None:
            d["mu"] = self.mu
        if self.weights is not None:
            d["weights"] = self.weights.tolist()
        if "reason" in self.info:
            d["reason"] = str(self.info["reason"])
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Allocation":
        return cls(np.asarray(d["x"], dtype=float), np.asarray(d["y"], dtype=float),
                   feasible=bool(d.get("feasible", True)), mu=d.get("mu"),
                   weights=None if d.get("weights") is None else np.asarray(d["weights"]))


def normalize(p: PhysicalProblem) -> Instance:
    """Convert a physical problem to normalized SNRs and spectral demands."""
    gamma = p.p0 * p.channel_gain / (p.n0 * p.b0)
    return Instance(gamma, p.rate_demand / p.b0)


def received_power(rate, y):
    """Received SNR-power ``(2**(rate/y) - 1) * y`` needed on a channel of width ``y``.

    Works elementwise; overflow maps to ``inf``.
    """
    rate = np.asarray(rate, dtype=float)
    y = np.asarray(y, dtype=float)
    with np.errstate(over="ignore", divide="ignore"):
        u = rate * LN2 / y
        return np.where(u > U_MAX, np.inf, np.expm1(np.minimum(u, U_MAX)) * y)


def required_power(r_prime: float, y: float, gamma: float) -> float:
    """Power ratio a single BS with SNR ``gamma`` spends to carry ``r_prime`` over ``y``."""
    if y <= 0 or gamma <= 0:
        raise ValueError(f"required_power needs y > 0 and gamma > 0, got y={y}, gamma={gamma}")
    if r_prime <= 0:
        raise ValueError("r_prime must be positive")
    return float(received_power(r_prime, y)) / gamma


def required_power_derivative(r_prime: float, y: float, gamma: float) -> float:
    """d/dy of :func:`required_power`; always negative."""
    if y <= 0 or gamma <= 0:
        raise ValueError("required_power_derivative needs y > 0 and gamma > 0")
    u = r_prime * LN2 / y
    # 2^{r/y}(1 - u) - 1, written to stay accurate for small u
    return float(np.expm1(u) - u * np.exp(u)) / gamma


@dataclass(frozen=True)
class Report:
    rate_residuals: np.ndarray
    power_slacks: np.ndarray
    spectrum_residual: float
    z: float

    def max_rate_violation(self, rate_scale: np.ndarray) -> float:
        return float(np.max(np.abs(self.rate_residuals) / rate_scale))


def evaluate(inst: Instance, alloc: Allocation) -> Report:
    """Constraint residuals of ``alloc`` on ``inst``.

    ``rate_residuals[j] = sum_i gamma_ij x_ij - (2^{R_j/y_j} - 1) y_j``,
    ``power_slacks[i] = 1 - sum_j x_ij`` and
    ``spectrum_residual = sum_j y_j - 1``.
    """
    if alloc.x.shape != inst.gamma.shape:
        raise ValueError(f"allocation shape {alloc.x.shape} != instance {inst.gamma.shape}")
    delivered = np.sum(inst.gamma * alloc.x, axis=0)
    needed = np.where(alloc.y > 0, received_power(inst.rate, np.maximum(alloc.y, 1e-300)), np.inf)
    return Report(rate_residuals=delivered - needed,
                  power_slacks=1.0 - alloc.x.sum(axis=1),
                  spectrum_residual=float(alloc.y.sum() - 1.0),
                  z=alloc.z)


def check_feasible(inst: Instance, alloc: Allocation,
                   tol_eq: float = TOL_EQ, tol_rate: float = TOL_RATE) -> bool:
    """True when ``alloc`` meets every constraint within the package tolerances."""
    if np.any(alloc.x < -tol_eq) or np.any(alloc.y < Y_MIN):
        return False
    rep = evaluate(inst, alloc)
    needed = received_power(inst.rate, alloc.y)
    return bool(np.all(rep.power_slacks >= -tol_eq)
                and abs(rep.spectrum_residual) <= tol_eq
                and np.all(np.abs(rep.rate_residuals) <= tol_rate * needed))
