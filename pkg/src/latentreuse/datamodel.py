"""Noisy low-dimensional data model x = A z + eps and its two-domain mixture."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DimensionMismatch, NegativeTime, NotGaussian
from .geometry import Frame
from .rng import make_rng
from .schedule import alpha, h

PSD_CLAMP = -1e-10


def _psd(cov, d):
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape != (d, d):
        raise DimensionMismatch(f"covariance must be {d}x{d}, got {cov.shape}")
    cov = 0.5 * (cov + cov.T)
    w, Q = np.linalg.eigh(cov)
    if w.min() < PSD_CLAMP:
        raise ValueError(f"covariance has eigenvalue {w.min():.3e} < {PSD_CLAMP}")
    if w.min() < 0:
        cov = (Q * np.clip(w, 0, None)) @ Q.T
        cov = 0.5 * (cov + cov.T)
    return cov


def _sqrt_factor(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, Q = np.linalg.eigh(cov)
        return Q * np.sqrt(np.clip(w, 0, None))


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", _psd(self.cov, m.size))

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, n, rng):
        L = _sqrt_factor(self.cov)
        return self.mean + rng.standard_normal((n, self.dim)) @ L.T

    def to_dict(self):
        return {"type": "gaussian", "params": {"mean": self.mean.tolist(), "cov": self.cov.tolist()}}

    @classmethod
    def standard(cls, d: int) -> "Gaussian":
        return cls(np.zeros(d), np.eye(d))


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        comps = tuple(self.components)
        if w.ndim != 1 or w.size != len(comps) or w.size == 0:
            raise ValueError("need one positive weight per component")
        if np.any(w <= 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError(f"mixture weights must be positive and sum to 1, got {w}")
        if len({c.dim for c in comps}) != 1:
            raise DimensionMismatch("mixture components differ in dimension")
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def sample(self, n, rng):
        labels = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k, c in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[idx] = c.sample(idx.size, rng)
        return out

    def to_dict(self):
        return {
            "type": "gaussian_mixture",
            "params": {
                "weights": self.weights.tolist(),
                "components": [c.to_dict()["params"] for c in self.components],
            },
        }


LatentDistribution = Union[Gaussian, GaussianMixture]


def latent_components(latent: LatentDistribution):
    """``[(weight, Gaussian), ...]`` view of either latent family."""
    if isinstance(latent, Gaussian):
        return [(1.0, latent)]
    if isinstance(latent, GaussianMixture):
        return list(zip(latent.weights.tolist(), latent.components))
    raise NotGaussian(f"unsupported latent family {type(latent).__name__}")


def latent_from_dict(d: dict) -> LatentDistribution:
    kind, p = d["type"], d.get("params", {})
    if kind == "gaussian":
        return Gaussian(p["mean"], p["cov"])
    if kind == "gaussian_mixture":
        return GaussianMixture(p["weights"], [Gaussian(c["mean"], c["cov"]) for c in p["components"]])
    raise ValueError(f"unknown latent type {kind!r}")


@dataclass(frozen=True, eq=False)
class NoisyLowDimModel:
    """One domain: ``x = A z + eps`` with ``eps ~ N(0, sigma^2 I_D)``."""

    frame: Frame
    latent: LatentDistribution
    sigma: float = 0.0

    def __post_init__(self):
        if self.latent.dim != self.frame.latent_dim:
            raise DimensionMismatch(
                f"latent dim {self.latent.dim} != frame latent dim {self.frame.latent_dim}"
            )
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def A(self) -> np.ndarray:
        return self.frame.data

    @property
    def D(self) -> int:
        return self.frame.ambient_dim

    @property
    def d(self) -> int:
        return self.frame.latent_dim

    @property
    def is_gaussian(self) -> bool:
        return isinstance(self.latent, Gaussian)

    def to_dict(self):
        return {"frame": self.frame.to_dict(), "latent": self.latent.to_dict(), "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d):
        return cls(Frame.from_dict(d["frame"]), latent_from_dict(d["latent"]), d.get("sigma", 0.0))


@dataclass(frozen=True, eq=False)
class MixtureModel:
    omega: tuple
    components: tuple

    def __post_init__(self):
        om = tuple(float(w) for w in self.omega)
        comps = tuple(self.components)
        if len(om) != 2 or len(comps) != 2:
            raise ValueError("a mixture has exactly two domains")
        if min(om) < 0 or abs(sum(om) - 1) > 1e-12:
            raise ValueError(f"omega must be nonnegative and sum to 1, got {om}")
        if comps[0].D != comps[1].D:
            raise DimensionMismatch("mixture components live in different ambient dims")
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "components", comps)

    @property
    def D(self) -> int:
        return self.components[0].D

    def to_dict(self):
        return {"omega": list(self.omega), "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["omega"]), tuple(NoisyLowDimModel.from_dict(c) for c in d["components"]))


def _draw(model: NoisyLowDimModel, n: int, rng) -> np.ndarray:
    z = model.latent.sample(n, rng)
    x = z @ model.A.T
    if model.sigma > 0:
        x = x + model.sigma * rng.standard_normal((n, model.D))
    return x


def sample_data(model: NoisyLowDimModel, n: int, seed: int, stream=0) -> np.ndarray:
    """``n x D`` draws from the model; bit-identical for a fixed (seed, stream)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _draw(model, n, make_rng(seed, "sample_data", stream))


def forward_noise(x0, t, rng):
    """One draw of X_t | X_0 = x0 using a caller-owned generator."""
    x0 = np.asarray(x0, dtype=float)
    if np.any(np.asarray(t) < 0):
        raise NegativeTime(f"t = {t} < 0")
    return alpha(t) * x0 + np.sqrt(h(t)) * rng.standard_normal(x0.shape)


def noise_forward(x0, t: float, seed: int, stream=0) -> np.ndarray:
    """Sample N(alpha(t) x0, h(t) I); works on a vector or an ``n x D`` batch."""
    return forward_noise(x0, t, make_rng(seed, "noise_forward", stream))


def _draw_mixture(mix: MixtureModel, n: int, rng):
    labels = np.where(rng.random(n) < mix.omega[0], 1, 2)
    x = np.empty((n, mix.D))
    for i, comp in enumerate(mix.components, start=1):
        idx = np.flatnonzero(labels == i)
        if idx.size:
            x[idx] = _draw(comp, idx.size, rng)
    return x, labels


def sample_mixture(mix: MixtureModel, n: int, seed: int, stream=0):
    """Draw ``(samples, labels)`` with labels in {1, 2}."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _draw_mixture(mix, n, make_rng(seed, "sample_mixture", stream))


def draw_reference(reference, n, rng):
    """Samples from a single model or a mixture; labels are all 1 for a single model."""
    if isinstance(reference, MixtureModel):
        return _draw_mixture(reference, n, rng)
    return _draw(reference, n, rng), np.ones(n, dtype=int)


def ambient_gaussian_params(model: NoisyLowDimModel, t: float):
    """Law of X_t as ``[(weight, mean, cov), ...]``, one entry per latent component."""
    a, ht = float(alpha(t)), float(h(t))
    A = model.A
    out = []
    for w, g in latent_components(model.latent):
        mean = a * A @ g.mean
        cov = a**2 * (A @ g.cov @ A.T + model.sigma**2 * np.eye(model.D)) + ht * np.eye(model.D)
        out.append((w, mean, 0.5 * (cov + cov.T)))
    return out
