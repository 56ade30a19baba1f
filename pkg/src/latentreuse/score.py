"""Closed-form scores of the noised data model and the maps built from them.

All functions accept a single point or an ``(n, dim)`` batch and a scalar
time; the output has the same leading shape as the input.  Densities and
posterior weights are handled in log space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import logsumexp

from .datamodel import MixtureModel, NoisyLowDimModel, latent_components
from .errors import NotGaussian, SingularCovariance
from .geometry import Frame
from .schedule import alpha, h, h_tilde, rho

LOG2PI = np.log(2 * np.pi)


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


def _unbatch(a, single):
    return a[0] if single else a


@dataclass(frozen=True)
class _Comp:
    logw: float
    mean: np.ndarray
    chol: np.ndarray

    @property
    def logdet(self):
        return 2.0 * np.sum(np.log(np.diag(self.chol)))


def _comp(w, mean, cov):
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("covariance not positive definite") from exc
    if np.min(np.diag(L)) <= 1e-150:
        raise SingularCovariance("covariance numerically singular")
    logw = np.log(w) if w > 0 else -np.inf
    return _Comp(logw, np.asarray(mean, dtype=float), L)


def gmm_terms(y, comps):
    """Log density, score and responsibilities of a Gaussian mixture at ``y``.

    ``y`` is ``(n, d)``; returns ``(logp (n,), score (n, d), resp (n, K),
    comp_scores (K, n, d))``.
    """
    n, d = y.shape
    K = len(comps)
    logs = np.empty((n, K))
    scores = np.empty((K, n, d))
    for k, c in enumerate(comps):
        diff = y - c.mean
        sol = solve_triangular(c.chol, diff.T, lower=True)
        logs[:, k] = c.logw - 0.5 * np.sum(sol**2, axis=0) - 0.5 * c.logdet - 0.5 * d * LOG2PI
        scores[k] = -cho_solve((c.chol, True), diff.T).T
    logp = logsumexp(logs, axis=1)
    resp = np.exp(logs - logp[:, None])
    score = np.einsum("nk,knd->nd", resp, scores)
    return logp, score, resp, scores


def latent_laws(model: NoisyLowDimModel, t: float):
    """Components of the law of ``Y_t = A^T X_t``: N(alpha m, alpha^2 S + h_tilde I)."""
    a, ht = float(alpha(t)), float(h_tilde(t, model.sigma))
    d = model.d
    return [_comp(w, a * g.mean, a**2 * g.cov + ht * np.eye(d)) for w, g in latent_components(model.latent)]


@dataclass(frozen=True)
class LatentMaps:
    latent_score: np.ndarray
    g: np.ndarray
    f_star: np.ndarray


def latent_maps(model: NoisyLowDimModel, y, t: float) -> LatentMaps:
    """Latent score of Y_t with the maps ``g = y + h s`` and ``f* = y + h_tilde s``."""
    yb, single = _batch(y)
    _, s, _, _ = gmm_terms(yb, latent_laws(model, t))
    ht, htil = float(h(t)), float(h_tilde(t, model.sigma))
    return LatentMaps(
        latent_score=_unbatch(s, single),
        g=_unbatch(yb + ht * s, single),
        f_star=_unbatch(yb + htil * s, single),
    )


def g_map(model: NoisyLowDimModel, y, t: float):
    return latent_maps(model, y, t).g


def latent_log_density(model: NoisyLowDimModel, y, t: float):
    yb, single = _batch(y)
    return _unbatch(gmm_terms(yb, latent_laws(model, t))[0], single)


def log_density(model: NoisyLowDimModel, x, t: float):
    """log p_t(x), factorized into the on-support and orthogonal parts."""
    xb, single = _batch(x)
    A = model.A
    y = xb @ A
    perp = xb - y @ A.T
    htil = float(h_tilde(t, model.sigma))
    lp = gmm_terms(y, latent_laws(model, t))[0]
    lp = lp - 0.5 * (model.D - model.d) * (LOG2PI + np.log(htil)) - 0.5 * np.sum(perp**2, axis=1) / htil
    return _unbatch(lp, single)


@dataclass(frozen=True)
class ScoreParts:
    total: np.ndarray
    on_support: np.ndarray
    orthogonal: np.ndarray


def ambient_score(model: NoisyLowDimModel, x, t: float) -> ScoreParts:
    xb, single = _batch(x)
    A = model.A
    y = xb @ A
    _, s, _, _ = gmm_terms(y, latent_laws(model, t))
    on = s @ A.T
    orth = -(xb - y @ A.T) / float(h_tilde(t, model.sigma))
    return ScoreParts(*(_unbatch(v, single) for v in (on + orth, on, orth)))


def G_field(model: NoisyLowDimModel, x, t: float):
    """``A g(A^T x, t) + rho(t) P^perp x``, so that score = (G - x) / h."""
    xb, single = _batch(x)
    A = model.A
    y = xb @ A
    g = g_map(model, y, t)
    return _unbatch(g @ A.T + float(rho(t, model.sigma)) * (xb - y @ A.T), single)


def mixture_terms(mix: MixtureModel, x, t: float):
    """Per-component log densities (n, 2) and scores (2, n, D) at a batch."""
    xb, _ = _batch(x)
    logs = np.stack([log_density(c, xb, t) for c in mix.components], axis=1)
    with np.errstate(divide="ignore"):
        logs = logs + np.log(np.asarray(mix.omega))[None, :]
    scores = np.stack([ambient_score(c, xb, t).total for c in mix.components])
    return logs, scores


def _posterior(logs):
    lse = logsumexp(logs, axis=1, keepdims=True)
    pi = np.exp(logs - lse)
    pi[:, 1] = 1.0 - pi[:, 0]
    return pi


def mixture_score(mix: MixtureModel, x, t: float):
    """Score of the mixed law and the posterior weights ``(pi_1, pi_2)``."""
    xb, single = _batch(x)
    logs, scores = mixture_terms(mix, xb, t)
    pi = _posterior(logs)
    score = pi[:, 0:1] * scores[0] + pi[:, 1:2] * scores[1]
    return _unbatch(score, single), _unbatch(pi, single)


def mixture_log_density(mix: MixtureModel, x, t: float):
    xb, single = _batch(x)
    logs, _ = mixture_terms(mix, xb, t)
    return _unbatch(logsumexp(logs, axis=1), single)


def projected_laws(model: NoisyLowDimModel, U: Frame, t: float):
    """Components of the law of ``U^T X_t`` (Gaussian or Gaussian mixture)."""
    a, ht = float(alpha(t)), float(h_tilde(t, model.sigma))
    H = U.data.T @ model.A
    m = U.latent_dim
    return [
        _comp(w, a * H @ g.mean, a**2 * H @ g.cov @ H.T + ht * np.eye(m))
        for w, g in latent_components(model.latent)
    ]


def projected_posterior(mix: MixtureModel, U: Frame, z, t: float):
    """Posterior component weights given only the coordinates ``z = U^T x``."""
    zb, single = _batch(z)
    logs = np.stack([gmm_terms(zb, projected_laws(c, U, t))[0] for c in mix.components], axis=1)
    with np.errstate(divide="ignore"):
        logs = logs + np.log(np.asarray(mix.omega))[None, :]
    return _unbatch(_posterior(logs), single)


@dataclass(frozen=True)
class AffineMap:
    C: np.ndarray
    b: np.ndarray

    def __call__(self, y):
        return np.asarray(y) @ self.C.T + self.b


def gaussian_g_affine(model: NoisyLowDimModel, t: float) -> AffineMap:
    """``g(y) = C y + b`` with ``C = I - h K^{-1}``, ``b = h K^{-1} alpha m``, ``K = alpha^2 S + h_tilde I``."""
    if not model.is_gaussian:
        raise NotGaussian("closed-form affine g needs a Gaussian latent")
    a, ht, htil = float(alpha(t)), float(h(t)), float(h_tilde(t, model.sigma))
    S, m = model.latent.cov, model.latent.mean
    K = a**2 * S + htil * np.eye(model.d)
    Kinv = np.linalg.inv(K)
    C = np.eye(model.d) - ht * Kinv
    b = ht * Kinv @ (a * m)
    return AffineMap(0.5 * (C + C.T), b)


def g_jacobians(model: NoisyLowDimModel, y, t: float):
    """Exact Jacobians of ``g(., t)`` at a batch: I + h * Hessian of log p^LD."""
    yb, _ = _batch(y)
    comps = latent_laws(model, t)
    _, s, resp, scores = gmm_terms(yb, comps)
    d = model.d
    hess = -np.einsum("nk,kij->nij", resp, np.stack([cho_solve((c.chol, True), np.eye(d)) for c in comps]))
    hess += np.einsum("nk,kni,knj->nij", resp, scores, scores) - np.einsum("ni,nj->nij", s, s)
    return np.eye(d) + float(h(t)) * hess


def lipschitz_g(model: NoisyLowDimModel, t: float, n_probe: int = 4096, seed: int = 0):
    """Lipschitz constant of ``g(., t)`` and whether it is exact.

    Exact (``||C_t||_op``) for a Gaussian latent.  For mixtures the sup of the
    Jacobian norm over probes drawn from the law of Y_t is returned and
    flagged as an estimate.
    """
    if model.is_gaussian:
        return float(np.linalg.norm(gaussian_g_affine(model, t).C, 2)), True
    from .rng import make_rng

    rng = make_rng(seed, "lipschitz_g")
    comps = latent_laws(model, t)
    w = np.exp([c.logw for c in comps])
    lab = rng.choice(len(comps), size=n_probe, p=w / w.sum())
    y = np.stack([comps[k].mean for k in lab]) + np.einsum(
        "nij,nj->ni", np.stack([comps[k].chol for k in lab]), rng.standard_normal((n_probe, model.d))
    )
    J = g_jacobians(model, y, t)
    return float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2)))), False


class AnalyticScore:
    """Exact score of a single model or a two-domain mixture."""

    def __init__(self, reference):
        self.reference = reference
        self.label = "analytic"

    def __call__(self, x, t):
        if isinstance(self.reference, MixtureModel):
            return mixture_score(self.reference, x, t)[0]
        return ambient_score(self.reference, x, t).total


class ProjectedScore:
    """Score field ``(1/h) U f(U^T x, t) - x / h`` for a core map ``f``."""

    def __init__(self, frame: Frame, core, label="projected"):
        self.frame = frame
        self.core = core
        self.label = label

    def __call__(self, x, t):
        xb, single = _batch(x)
        U = self.frame.data
        ht = float(h(t))
        out = (self.core(xb @ U, t) @ U.T - xb) / ht
        return _unbatch(out, single)


def null_score(x, t):
    """The projected score with a zero core map: ``-x / h``."""
    return -np.asarray(x, dtype=float) / float(h(t))


def affine_core(C, b):
    """Core map ``z -> C z + b`` independent of t (for fixtures and tests)."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    b = np.asarray(b, dtype=float)

    def core(z, t):
        return np.asarray(z) @ C.T + b

    return core


__all__ = [
    "AffineMap",
    "AnalyticScore",
    "G_field",
    "LatentMaps",
    "ProjectedScore",
    "ScoreParts",
    "ambient_score",
    "g_map",
    "gaussian_g_affine",
    "latent_maps",
    "lipschitz_g",
    "log_density",
    "mixture_score",
    "null_score",
    "projected_posterior",
]
