"""Ornstein-Uhlenbeck time functions and time-window quadrature."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import NegativeTime, NonFiniteIntegrand


def alpha(t):
    return np.exp(-0.5 * np.asarray(t, dtype=float))


def h(t):
    return -np.expm1(-np.asarray(t, dtype=float))


def h_tilde(t, sigma):
    return alpha(t) ** 2 * sigma**2 + h(t)


def rho(t, sigma):
    """alpha^2 sigma^2 / h_tilde, taken as 0 when sigma = 0."""
    num = alpha(t) ** 2 * sigma**2
    den = h_tilde(t, sigma)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(num == 0, 0.0, num / np.where(den == 0, 1.0, den))


@dataclass(frozen=True)
class ScheduleValues:
    alpha: float
    h: float
    h_tilde: float
    rho: float


def schedule_eval(t: float, sigma: float) -> ScheduleValues:
    if t < 0:
        raise NegativeTime(f"t = {t} < 0")
    if np.isinf(t):
        return ScheduleValues(0.0, 1.0, 1.0, 0.0)
    return ScheduleValues(
        alpha=float(alpha(t)),
        h=float(h(t)),
        h_tilde=float(h_tilde(t, sigma)),
        rho=float(rho(t, sigma)),
    )


@dataclass(frozen=True)
class DiffusionSchedule:
    """Time window [t0, T] with a uniform composite-trapezoid rule."""

    t0: float = 0.01
    T: float = 1.0
    n_nodes: int = 64

    def __post_init__(self):
        if not 0 < self.t0 < self.T:
            raise ValueError(f"need 0 < t0 < T, got t0={self.t0}, T={self.T}")
        if self.n_nodes < 2:
            raise ValueError("n_nodes must be >= 2")

    @cached_property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.n_nodes)

    @cached_property
    def weights(self) -> np.ndarray:
        dt = (self.T - self.t0) / (self.n_nodes - 1)
        w = np.full(self.n_nodes, dt)
        w[0] = w[-1] = dt / 2
        return w

    @property
    def length(self) -> float:
        return self.T - self.t0

    def average(self, values) -> float:
        """Time average of per-node values (last axis is the node axis)."""
        values = np.asarray(values, dtype=float)
        return values @ self.weights / self.length

    def to_dict(self) -> dict:
        return {"t0": self.t0, "T": self.T, "n_time_nodes": self.n_nodes}


def time_average(sched: DiffusionSchedule, integrand):
    """Return ``(average, node_values)`` of ``integrand(t)`` over the window."""
    vals = np.empty(sched.n_nodes)
    for i, t in enumerate(sched.nodes):
        v = float(integrand(t))
        if not np.isfinite(v):
            raise NonFiniteIntegrand(float(t), v)
        vals[i] = v
    return float(sched.average(vals)), vals
