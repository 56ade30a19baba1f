"""ReLU core networks on projected coordinates and denoising score matching.

The score model is ``s(x, t) = (1/h) U f(U^T x, t) - x/h``.  With the
denoising target ``(alpha x0 - x_t)/h`` the per-example loss collapses to
``||alpha x0 - U f(U^T x_t, t)||^2 / h^2``, which splits into a regression of
``f`` onto ``alpha U^T x0`` plus a term that does not depend on ``f``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .datamodel import NoisyLowDimModel
from .errors import Diverged
from .geometry import Frame
from .mc import N_BATCHES, RiskEstimate, batch_mean_stats, time_averaged_batches, time_averaged_expectation
from .rng import make_rng
from .schedule import DiffusionSchedule, alpha, h
from .score import AnalyticScore, ProjectedScore


@dataclass(eq=False)
class ReluCore:
    """Fully connected ReLU net on ``[z, t]`` with a final norm clip at ``K``."""

    weights: list
    biases: list
    K: float
    kappa: float

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def latent_dim(self) -> int:
        return self.weights[-1].shape[0]

    def _inputs(self, z, t):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        tt = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (z.shape[0], 1))
        return np.hstack([z, tt])

    def forward(self, inp):
        acts = [inp]
        a = inp
        L = len(self.weights)
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W.T + b
            if i < L - 1:
                a = np.maximum(a, 0.0)
            acts.append(a)
        y = acts[-1]
        norm = np.linalg.norm(y, axis=1, keepdims=True)
        scale = np.minimum(1.0, self.K / np.maximum(norm, 1e-300))
        return y * scale, (acts, norm, scale)

    def backward(self, cache, dout):
        """Gradients of ``sum(dout * out)`` with respect to every parameter."""
        acts, norm, scale = cache
        y = acts[-1]
        clipped = scale[:, 0] < 1.0
        dy = dout * scale
        if np.any(clipped):
            u = y[clipped] / norm[clipped]
            dy[clipped] = scale[clipped] * (dout[clipped] - u * np.sum(u * dout[clipped], axis=1, keepdims=True))
        gW, gb = [None] * len(self.weights), [None] * len(self.weights)
        delta = dy
        for i in range(len(self.weights) - 1, -1, -1):
            gW[i] = delta.T @ acts[i]
            gb[i] = delta.sum(axis=0)
            if i:
                delta = (delta @ self.weights[i]) * (acts[i] > 0)
        return gW, gb

    def __call__(self, z, t):
        single = np.asarray(z).ndim == 1
        out = self.forward(self._inputs(z, t))[0]
        return out[0] if single else out

    def params(self):
        return self.weights + self.biases

    def copy(self):
        return ReluCore([W.copy() for W in self.weights], [b.copy() for b in self.biases], self.K, self.kappa)

    def project(self):
        for p in self.params():
            np.clip(p, -self.kappa, self.kappa, out=p)

    def to_dict(self):
        return {
            "widths": self.widths,
            "K": self.K,
            "kappa": self.kappa,
            "weights": [W.reshape(-1).tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        w = d["widths"]
        Ws = [np.asarray(v, dtype=float).reshape(w[i + 1], w[i]) for i, v in enumerate(d["weights"])]
        bs = [np.asarray(v, dtype=float) for v in d["biases"]]
        return cls(Ws, bs, float(d["K"]), float(d["kappa"]))


def init_core(m: int, hidden=(64, 64, 64), K=None, kappa=10.0, seed=0) -> ReluCore:
    """He-normal weights, zero biases."""
    rng = make_rng(seed, "init_core")
    widths = [m + 1, *hidden, m]
    Ws = [rng.standard_normal((o, i)) * math.sqrt(2.0 / i) for i, o in zip(widths[:-1], widths[1:])]
    bs = [np.zeros(o) for o in widths[1:]]
    core = ReluCore(Ws, bs, 10.0 * math.sqrt(m) if K is None else float(K), float(kappa))
    core.project()
    return core


def core_forward(core: ReluCore, z, t):
    return core(z, t)


def regression_loss_and_grad(core: ReluCore, z, t, target, weight=None):
    """``mean_i w_i ||target_i - f(z_i, t_i)||^2`` and its parameter gradient."""
    out, cache = core.forward(core._inputs(z, t))
    r = out - target
    w = np.ones(len(r)) if weight is None else np.asarray(weight, dtype=float)
    n = len(r)
    loss = float(np.sum(w * np.sum(r**2, axis=1)) / n)
    gW, gb = core.backward(cache, 2.0 * w[:, None] * r / n)
    return loss, gW + gb


# --------------------------------------------------------------------------
# time sampling


def _inv_h2_antiderivative(t):
    e = np.expm1(t)
    return np.log(e) - 1.0 / e


class TimeSampler:
    """Draws training times and the weights that keep the time average unbiased.

    ``importance`` samples t with density proportional to 1/h(t)^2, which
    makes every per-example weight equal to ``avg_t 1/h^2``.
    """

    def __init__(self, sched: DiffusionSchedule, mode: str = "importance"):
        if mode not in ("importance", "uniform"):
            raise ValueError(f"unknown time sampling {mode!r}")
        self.sched = sched
        self.mode = mode
        lo, hi = sched.t0, sched.T
        self.mean_inv_h2 = float((_inv_h2_antiderivative(hi) - _inv_h2_antiderivative(lo)) / (hi - lo))
        if mode == "importance":
            grid = np.geomspace(lo, hi, 4097)
            cdf = _inv_h2_antiderivative(grid) - _inv_h2_antiderivative(lo)
            self._grid, self._cdf = grid, cdf / cdf[-1]

    def draw(self, n, rng):
        """Times and weights ``w(t)`` with ``E[w(t) phi(t)] = avg_t phi(t) / h(t)^2``."""
        if self.mode == "uniform":
            t = rng.uniform(self.sched.t0, self.sched.T, n)
            return t, 1.0 / h(t) ** 2
        t = np.interp(rng.random(n), self._cdf, self._grid)
        return t, np.full(n, self.mean_inv_h2)


# --------------------------------------------------------------------------
# truncation


@dataclass(frozen=True, eq=False)
class TruncationRegion:
    """Box ``||A^T x|| <= R_z`` and ``||P^perp x|| <= R_perp`` around the target subspace."""

    frame: Frame
    R_z: float
    R_perp: float
    C_z: float
    C_perp: float
    delta: float
    n2: int

    def contains(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        A = self.frame.data
        y = x @ A
        perp = np.linalg.norm(x - y @ A.T, axis=1)
        slack = 1e-9 * np.maximum(1.0, np.linalg.norm(x, axis=1))
        return (np.linalg.norm(y, axis=1) <= self.R_z) & (perp <= self.R_perp + slack)


def truncation_radii(target: NoisyLowDimModel, n2: int, delta: float, C_z: float = 1.0, C_perp: float = 1.0):
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    lg = math.sqrt(math.log(8 * n2 / delta))
    s = target.sigma
    R_z = C_z * (1 + s) * (math.sqrt(target.d) + lg)
    R_perp = C_perp * s * (math.sqrt(target.D - target.d) + lg)
    return TruncationRegion(target.frame, R_z, R_perp, C_z, C_perp, delta, n2)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    n_epochs: int = 200
    batch_size: int = 256
    step_size: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    n_time_samples: int = 1
    truncation: bool = False
    K: float | None = None
    kappa: float = 10.0
    hidden: tuple = (64, 64, 64)
    time_sampling: str = "importance"

    def __post_init__(self):
        if self.n_epochs < 0 or self.batch_size < 1 or self.n_time_samples < 1:
            raise ValueError("counts must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        self.hidden = tuple(int(w) for w in self.hidden)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass(eq=False)
class TrainResult:
    core: ReluCore
    trace: list
    config: TrainConfig
    n_used: int
    frame: Frame = field(default=None)

    def score_field(self) -> ProjectedScore:
        return ProjectedScore(self.frame, self.core, label="network")

    def to_dict(self):
        return {
            **self.core.to_dict(),
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "trace": list(self.trace),
            "n_used": self.n_used,
        }


def train(
    samples,
    U: Frame,
    config: TrainConfig,
    sched: DiffusionSchedule | None = None,
    region: TruncationRegion | None = None,
) -> TrainResult:
    """Empirical denoising-risk minimization over a ReLU core on ``U^T x``.

    Momentum SGD with a constant step; parameters are clipped to
    ``[-kappa, kappa]`` after each step.  Gradients are taken on the loss
    divided by ``avg_t 1/h^2`` so the step size is scale-free; the trace
    reports the unscaled empirical risk (per-epoch running mean).
    """
    sched = sched or DiffusionSchedule()
    x = np.asarray(samples, dtype=float)
    if config.truncation:
        if region is None:
            raise ValueError("truncation requested without a TruncationRegion")
        x = x[region.contains(x)]
    Ud = U.data
    m = U.latent_dim
    core = init_core(m, config.hidden, config.K, config.kappa, config.seed)
    ts = TimeSampler(sched, config.time_sampling)
    scale = ts.mean_inv_h2
    rng = make_rng(config.seed, "train")
    vel = [np.zeros_like(p) for p in core.params()]
    trace = []
    n = len(x)
    for epoch in range(config.n_epochs):
        order = rng.permutation(n)
        tot, cnt = 0.0, 0
        for start in range(0, n, config.batch_size):
            x0 = np.repeat(x[order[start : start + config.batch_size]], config.n_time_samples, axis=0)
            t, w = ts.draw(len(x0), rng)
            a, hh = alpha(t)[:, None], h(t)[:, None]
            xt = a * x0 + np.sqrt(hh) * rng.standard_normal(x0.shape)
            y0 = x0 @ Ud
            target = a * y0
            loss, grads = regression_loss_and_grad(core, xt @ Ud, t, target, w / scale)
            const = float(np.mean(w * (a[:, 0] ** 2) * np.sum((x0 - y0 @ Ud.T) ** 2, axis=1)))
            if not np.isfinite(loss):
                raise Diverged(f"non-finite loss at epoch {epoch}")
            tot += (loss * scale + const) * len(x0)
            cnt += len(x0)
            for p, g, v in zip(core.params(), grads, vel):
                v *= config.momentum
                v -= config.step_size * g
                p += v
            core.project()
        trace.append(tot / max(cnt, 1))
    return TrainResult(core, trace, config, n, U)


# --------------------------------------------------------------------------
# denoising loss and its gap to the score risk


def denoising_loss(x0, s, sched: DiffusionSchedule, n_t: int = 1, seed: int = 0) -> float:
    """Quadrature estimate of the per-example denoising loss at ``x0``.

    ``n_t`` fresh noise draws per quadrature node.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = make_rng(seed, "denoising_loss")
    vals = np.empty(sched.n_nodes)
    for j, t in enumerate(sched.nodes):
        a, hh = float(alpha(t)), float(h(t))
        xt = a * x0 + math.sqrt(hh) * rng.standard_normal((n_t, x0.size))
        err = (a * x0 - xt) / hh - s(xt, float(t))
        vals[j] = np.mean(np.sum(err**2, axis=1))
    return float(sched.average(vals))


def denoising_risk(s, reference, sched: DiffusionSchedule, n: int = 100_000, seed: int = 0,
                   n_batches: int = N_BATCHES, workers: int = 1) -> RiskEstimate:
    """Population denoising risk of ``s`` under ``reference`` (Monte Carlo)."""

    def per_point(xt, t, x0, labels):
        return np.sum(((alpha(t) * x0 - xt) / h(t) - s(xt, t)) ** 2, axis=1)

    return time_averaged_expectation(reference, per_point, sched, n, seed, "denoising_risk", n_batches, workers,
                                     label="denoising_risk")


@dataclass(frozen=True, eq=False)
class GapResult:
    labels: tuple
    denoising: np.ndarray
    score_risk: np.ndarray
    gap: np.ndarray
    gap_stderr: np.ndarray
    pair_diff: np.ndarray
    pair_stderr: np.ndarray


def denoising_gap(fields, reference, sched: DiffusionSchedule, n: int = 100_000, seed: int = 0,
                  n_batches: int = N_BATCHES) -> GapResult:
    """Denoising risk minus score risk for several fields on shared draws.

    Pairwise differences of the gaps carry their own batch-means errors, so
    the constancy of the gap is tested with the correlated noise cancelled.
    """
    truth = AnalyticScore(reference)
    k = len(fields)

    def per_point(xt, t, x0, labels):
        target = (alpha(t) * x0 - xt) / h(t)
        true = truth(xt, t)
        cols = []
        for s in fields:
            v = s(xt, t)
            cols.append(np.sum((target - v) ** 2, axis=1))
            cols.append(np.sum((v - true) ** 2, axis=1))
        return np.stack(cols, axis=1)

    out, sizes = time_averaged_batches(reference, per_point, sched, n, seed, "denoising_gap", n_batches)
    avg = out[:, 0, :]
    R, L = avg[:, 0::2], avg[:, 1::2]
    gaps = R - L
    mR, _ = batch_mean_stats(R, sizes)
    mL, _ = batch_mean_stats(L, sizes)
    mg, sg = batch_mean_stats(gaps, sizes)
    diff = np.zeros((k, k))
    dse = np.zeros((k, k))
    for i in range(k):
        for j in range(k):
            mu, se = batch_mean_stats(gaps[:, i] - gaps[:, j], sizes)
            diff[i, j], dse[i, j] = mu, se
    return GapResult(tuple(getattr(f, "label", str(i)) for i, f in enumerate(fields)), mR, mL, mg, sg, diff, dse)


def e2_upper_bound(D: int, sched: DiffusionSchedule) -> float:
    """``D/(T - t0) * log((e^T - 1)/(e^t0 - 1))``, the time average of D/h."""
    return D / sched.length * math.log(math.expm1(sched.T) / math.expm1(sched.t0))


# --------------------------------------------------------------------------
# post-hoc class diagnostics


def core_diagnostics(core: ReluCore, z, sched: DiffusionSchedule, seed: int = 0, eps: float = 1e-4) -> dict:
    """Sparsity, max |parameter|, and sampled Lipschitz estimates in z and t."""
    rng = make_rng(seed, "core_diagnostics")
    z = np.atleast_2d(np.asarray(z, dtype=float))
    t = rng.uniform(sched.t0, sched.T, len(z))
    dz = rng.standard_normal(z.shape)
    dz *= eps / np.linalg.norm(dz, axis=1, keepdims=True)
    gam = np.linalg.norm(core(z + dz, t) - core(z, t), axis=1) / eps
    t2 = np.clip(t + eps, sched.t0, sched.T)
    gam_t = np.linalg.norm(core(z, t2) - core(z, t), axis=1) / np.maximum(t2 - t, 1e-300)
    return {
        "nonzero_params": int(sum(np.count_nonzero(p) for p in core.params())),
        "max_abs_param": float(max(np.abs(p).max() for p in core.params())),
        "lipschitz_z_sampled": float(gam.max()),
        "lipschitz_t_sampled": float(gam_t[t2 > t].max()) if np.any(t2 > t) else 0.0,
        "max_output_norm": float(np.linalg.norm(core(z, t), axis=1).max()),
    }
