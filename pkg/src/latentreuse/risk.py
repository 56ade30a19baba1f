"""Explicit comparator maps and Monte Carlo score-risk estimators."""

from __future__ import annotations

import numpy as np

from .datamodel import MixtureModel, NoisyLowDimModel
from .geometry import Frame, _check_same_ambient, pinv, subspace_report
from .mc import N_BATCHES, RiskEstimate, time_averaged_expectation
from .schedule import DiffusionSchedule, h
from .score import AnalyticScore, ProjectedScore, g_map, projected_posterior


class FrozenComparator:
    """Core map ``f(z, t) = B g(B^+ z, t)`` with ``B = V^T A`` for the target.

    ``outside_hypotheses`` is set when some principal angle sits at pi/2
    within the 1e-8 cosine floor, i.e. the upper-bound formulas do not apply.
    """

    def __init__(self, target: NoisyLowDimModel, V: Frame):
        _check_same_ambient(target.frame, V)
        rep = subspace_report(V, target.frame)
        self.target = target
        self.V = V
        self.B = rep.B
        self.B_pinv = rep.B_pinv
        self.outside_hypotheses = rep.excluded

    def __call__(self, z, t):
        z = np.asarray(z, dtype=float)
        return g_map(self.target, z @ self.B_pinv.T, t) @ self.B.T

    def score_field(self) -> ProjectedScore:
        return ProjectedScore(self.V, self, label="frozen_comparator")


def frozen_comparator(target: NoisyLowDimModel, V: Frame):
    """Return ``(f_comp, s_comp)``."""
    f = FrozenComparator(target, V)
    return f, f.score_field()


class ComponentComparator:
    """``psi_i(z, t) = H g_i(H^+ z, t)`` with ``H = U^T A_i``."""

    def __init__(self, model: NoisyLowDimModel, U: Frame):
        self.model = model
        self.H = U.data.T @ model.A
        self.H_pinv = pinv(self.H)

    def __call__(self, z, t):
        z = np.asarray(z, dtype=float)
        return g_map(self.model, z @ self.H_pinv.T, t) @ self.H.T


class MixedComparator:
    """``f_mix(z, t) = pi_1^U psi_1 + pi_2^U psi_2`` on the coordinates ``U^T x``."""

    def __init__(self, mix: MixtureModel, U: Frame):
        self.mix = mix
        self.U = U
        self.psi = tuple(ComponentComparator(c, U) for c in mix.components)

    def parts(self, z, t):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        piU = projected_posterior(self.mix, self.U, z, t)
        return piU, self.psi[0](z, t), self.psi[1](z, t)

    def __call__(self, z, t):
        single = np.asarray(z).ndim == 1
        piU, p1, p2 = self.parts(z, t)
        out = piU[:, 0:1] * p1 + piU[:, 1:2] * p2
        return out[0] if single else out

    def score_field(self) -> ProjectedScore:
        return ProjectedScore(self.U, self, label="mixed_comparator")


def mixed_comparator(mix: MixtureModel, U: Frame):
    """Return ``(f_mix, s_mix)``."""
    f = MixedComparator(mix, U)
    return f, f.score_field()


def estimate_risk(
    s,
    reference,
    sched: DiffusionSchedule,
    n: int = 100_000,
    seed: int = 0,
    n_batches: int = N_BATCHES,
    workers: int = 1,
) -> RiskEstimate:
    """Time-averaged ``E ||s(X_t, t) - grad log p_t(X_t)||^2`` under ``reference``."""
    truth = AnalyticScore(reference)

    def per_point(xt, t, x0, labels):
        return np.sum((s(xt, t) - truth(xt, t)) ** 2, axis=1)

    return time_averaged_expectation(
        reference, per_point, sched, n, seed, "estimate_risk", n_batches, workers,
        label=getattr(s, "label", "score"),
    )


def estimate_comparator_approx(
    f_a,
    f_b,
    U: Frame,
    reference,
    sched: DiffusionSchedule,
    n: int = 100_000,
    seed: int = 0,
    n_batches: int = N_BATCHES,
    workers: int = 1,
) -> RiskEstimate:
    """Time-averaged ``(1/h^2) E ||f_a(U^T X_t, t) - f_b(U^T X_t, t)||^2``."""
    Ud = U.data

    def per_point(xt, t, x0, labels):
        z = xt @ Ud
        return np.sum((f_a(z, t) - f_b(z, t)) ** 2, axis=1) / float(h(t)) ** 2

    return time_averaged_expectation(
        reference, per_point, sched, n, seed, "comparator_approx", n_batches, workers,
        label="approx",
    )
