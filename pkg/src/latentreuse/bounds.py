"""Bound formulas for frozen reuse and mixed-projector training.

Frozen reuse (target model, frozen frame V):
    lower bound   per t: mu/h^2 * (d2 - sum cos^2) + s^4 a^4/(h^2 ht) * (D - d1 - d2 + sum cos^2)
    upper bound   per t: branch-dependent sum of signal, stability, info and noise terms
    exact oracle  per t: best measurable predictor on V^T X_t (Gaussian latents only)

Mixed training (two frames, weights w_i = omega_i c_i):
    M_mix = sum_i w_i A_i A_i^T, optimal k-frame = top-k eigenspace,
    Gamma(W) = sum_i w_i ||P_W^perp A_i||_F^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datamodel import MixtureModel, NoisyLowDimModel, latent_components
from .errors import IllConditioned, KOutOfRange, NotGaussian, RankConditionViolated
from .geometry import Frame, _check_same_ambient, subspace_report
from .mc import N_BATCHES, RiskEstimate, batch_mean_stats, run_batches, time_averaged_expectation
from .rng import make_rng
from .schedule import DiffusionSchedule, alpha, h, h_tilde, rho
from .score import G_field, gaussian_g_affine, g_map, latent_laws, lipschitz_g, mixture_score, projected_posterior
from .risk import ComponentComparator

ILL_COS = 1e-4


# --------------------------------------------------------------------------
# moments of the target latent score map


@dataclass(frozen=True, eq=False)
class GMoments:
    M_g: np.ndarray
    mu_min: float
    lambda_max: float
    M_Y: np.ndarray
    L_g: float
    exact: bool = True
    M_g_stderr: np.ndarray | None = None


def _second_moment_Y(model, t):
    out = 0.0
    for c in latent_laws(model, t):
        S = c.chol @ c.chol.T
        out = out + np.exp(c.logw) * (S + np.outer(c.mean, c.mean))
    return out


def g_moments(model: NoisyLowDimModel, t: float, n_mc: int = 100_000, seed: int = 0) -> GMoments:
    """``E[g g^T]`` and ``E[Y Y^T]`` for ``Y_t = A^T X_t``.

    Exact for a Gaussian latent (``g`` is affine).  For mixtures ``M_g`` is a
    Monte Carlo estimate and ``L_g`` a sampled Jacobian sup; ``exact`` is False.
    """
    M_Y = _second_moment_Y(model, t)
    if model.is_gaussian:
        aff = gaussian_g_affine(model, t)
        c = latent_laws(model, t)[0]
        cov_y = c.chol @ c.chol.T
        Eg = aff.C @ c.mean + aff.b
        M_g = aff.C @ cov_y @ aff.C.T + np.outer(Eg, Eg)
        L_g, _ = lipschitz_g(model, t)
        M_g_se = None
        exact = True
    else:
        comps = latent_laws(model, t)
        w = np.exp([c.logw for c in comps])

        def batch(rng, size):
            lab = rng.choice(len(comps), size=size, p=w / w.sum())
            y = np.empty((size, model.d))
            for k, c in enumerate(comps):
                idx = np.flatnonzero(lab == k)
                y[idx] = c.mean + rng.standard_normal((idx.size, model.d)) @ c.chol.T
            g = g_map(model, y, t)
            return np.einsum("ni,nj->ij", g, g) / size

        out, sizes = run_batches(batch, n_mc, seed, f"g_moments:{float(t).hex()}")
        M_g, M_g_se = batch_mean_stats(np.stack(out), sizes)
        L_g, _ = lipschitz_g(model, t, seed=seed)
        exact = False
    M_g = 0.5 * (M_g + M_g.T)
    ev = np.linalg.eigvalsh(M_g)
    return GMoments(
        M_g=M_g,
        mu_min=float(max(ev[0], 0.0)),
        lambda_max=float(ev[-1]),
        M_Y=0.5 * (M_Y + M_Y.T),
        L_g=L_g,
        exact=exact,
        M_g_stderr=M_g_se,
    )


def moment_series(model, sched, n_mc=100_000, seed=0):
    return [g_moments(model, float(t), n_mc, seed) for t in sched.nodes]


# --------------------------------------------------------------------------
# reports


@dataclass(eq=False)
class BoundReport:
    """Per-node series and their time averages, plus metadata."""

    nodes: np.ndarray
    series: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    stderr: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_series(cls, sched: DiffusionSchedule, series: dict, meta=None):
        series = {k: np.asarray(v, dtype=float) for k, v in series.items()}
        values = {k: float(sched.average(v)) for k, v in series.items()}
        return cls(np.asarray(sched.nodes), series, values, {}, dict(meta or {}))

    def merge(self, other: "BoundReport") -> "BoundReport":
        return BoundReport(
            self.nodes,
            {**self.series, **other.series},
            {**self.values, **other.values},
            {**self.stderr, **other.stderr},
            {**self.meta, **other.meta},
        )

    def to_dict(self):
        return {
            "nodes": np.asarray(self.nodes).tolist(),
            "series": {k: np.asarray(v).tolist() for k, v in self.series.items()},
            "values": dict(self.values),
            "stderr": dict(self.stderr),
            "meta": dict(self.meta),
        }

    def csv_rows(self):
        """Long-format rows ``(t, term, value, stderr)``; averages use an empty t."""
        rows = []
        for term in sorted(self.series):
            for t, v in zip(self.nodes, self.series[term]):
                rows.append((float(t), term, float(v), None))
        for term in sorted(self.values):
            rows.append((None, term, self.values[term], self.stderr.get(term)))
        return rows


# --------------------------------------------------------------------------
# frozen reuse


def _frozen_geometry(target, V):
    _check_same_ambient(target.frame, V)
    return subspace_report(V, target.frame)


def frozen_lower_bound(target: NoisyLowDimModel, V: Frame, sched: DiffusionSchedule, moments=None) -> BoundReport:
    rep = _frozen_geometry(target, V)
    D, d1, d2 = target.D, V.latent_dim, target.d
    moments = moments or moment_series(target, sched)
    t = sched.nodes
    a, ht, htil = alpha(t), h(t), h_tilde(t, target.sigma)
    mu = np.array([m.mu_min for m in moments])
    signal = mu / ht**2 * (d2 - rep.cos2_sum)
    noise = target.sigma**4 * a**4 / (ht**2 * htil) * (D - d1 - d2 + rep.cos2_sum)
    return BoundReport.from_series(
        sched,
        {"lower_signal": signal, "lower_noise": noise, "lower_bound": signal + noise},
        {"angles": rep.angles.tolist(), "moments_exact": all(m.exact for m in moments)},
    )


def frozen_upper_bound(target: NoisyLowDimModel, V: Frame, sched: DiffusionSchedule, moments=None) -> BoundReport:
    """Comparator-risk upper bound; the branch is chosen from d1 vs d2."""
    rep = _frozen_geometry(target, V)
    D, d1, d2 = target.D, V.latent_dim, target.d
    if d1 >= d2:
        branch, required = "d1>=d2", d2
    else:
        branch, required = "d1<d2", d1
    if rep.B_rank != required:
        raise RankConditionViolated(branch, rep.B_rank, required)
    if np.min(rep.cosines) < ILL_COS:
        raise IllConditioned(
            f"smallest cos(theta) = {np.min(rep.cosines):.3e} < {ILL_COS}; tan^2 terms exceed 1e8"
        )
    moments = moments or moment_series(target, sched)
    t = sched.nodes
    a, ht, htil = alpha(t), h(t), h_tilde(t, target.sigma)
    lam = np.array([m.lambda_max for m in moments])
    Lg = np.array([m.L_g for m in moments])
    Bop2 = rep.B_opnorm**2
    signal = lam / ht**2 * (d2 - rep.cos2_sum)
    stability = 2 * Bop2 * htil * Lg**2 / ht**2 * rep.tan2_sum
    if d1 < d2:
        proj = np.eye(d2) - rep.B_pinv @ rep.B
        info = np.array([2 * Bop2 * L**2 / hh**2 * np.trace(proj @ m.M_Y) for L, hh, m in zip(Lg, ht, moments)])
    else:
        info = np.zeros_like(t)
    noise = target.sigma**4 * a**4 / (ht**2 * htil) * (D + d1 - d2 - rep.cos2_sum)
    return BoundReport.from_series(
        sched,
        {
            "upper_signal": signal,
            "upper_stability": stability,
            "upper_info": info,
            "upper_noise": noise,
            "upper_bound": signal + stability + info + noise,
        },
        {"branch": branch, "lipschitz_exact": all(m.exact for m in moments)},
    )


def _affine_G(model, t):
    """``G(x) = Q x + q`` for a Gaussian latent."""
    aff = gaussian_g_affine(model, t)
    A = model.A
    P = A @ A.T
    Q = A @ aff.C @ A.T + float(rho(t, model.sigma)) * (np.eye(model.D) - P)
    return Q, A @ aff.b


def _oracle_at(model, V, t):
    w, mu, Sig = _ambient_single(model, t)
    Q, q = _affine_G(model, t)
    Vd = V.data
    Pperp = np.eye(model.D) - Vd @ Vd.T
    EG = Q @ mu + q
    covG = Q @ Sig @ Q.T
    out = np.trace(Pperp @ covG @ Pperp) + float(np.sum((Pperp @ EG) ** 2))
    # conditional variance of V^T G given Z = V^T X
    cGG = Vd.T @ covG @ Vd
    cGZ = Vd.T @ Q @ Sig @ Vd
    cZZ = Vd.T @ Sig @ Vd
    inn = np.trace(cGG - cGZ @ np.linalg.solve(cZZ, cGZ.T))
    scale = np.trace(covG) + float(EG @ EG)
    return max(out, 0.0), max(inn, 0.0), scale


def _ambient_single(model, t):
    from .datamodel import ambient_gaussian_params

    return ambient_gaussian_params(model, t)[0]


def exact_structural_oracle(target: NoisyLowDimModel, V: Frame, sched: DiffusionSchedule) -> BoundReport:
    """Best risk over all score fields ``(1/h) V f(V^T x, t) - x/h`` (Gaussian latent)."""
    if not target.is_gaussian:
        raise NotGaussian("the exact structural oracle needs a Gaussian latent")
    _check_same_ambient(target.frame, V)
    out, inn, scale = np.array([_oracle_at(target, V, float(t)) for t in sched.nodes]).T
    ht = h(sched.nodes)
    return BoundReport.from_series(
        sched,
        {
            "oracle_out": out / ht**2,
            "oracle_in": inn / ht**2,
            "oracle": (out + inn) / ht**2,
            "oracle_scale": scale / ht**2,
        },
    )


def frozen_bound_report(target: NoisyLowDimModel, V: Frame, sched: DiffusionSchedule) -> BoundReport:
    """Lower bound, exact oracle (if Gaussian) and upper bound in one report.

    Failures of the upper-bound hypotheses are recorded in ``meta`` instead of
    raised.
    """
    moments = moment_series(target, sched)
    rep = _frozen_geometry(target, V)
    report = frozen_lower_bound(target, V, sched, moments)
    report.meta.update(
        d1=V.latent_dim,
        d2=target.d,
        D=target.D,
        cos2_sum=rep.cos2_sum,
        excluded_angles=rep.n_excluded,
        outside_upper_hypotheses=False,
    )
    if target.is_gaussian:
        report = report.merge(exact_structural_oracle(target, V, sched))
    try:
        report = report.merge(frozen_upper_bound(target, V, sched, moments))
    except (RankConditionViolated, IllConditioned) as exc:
        report.meta["outside_upper_hypotheses"] = True
        report.meta["upper_bound_error"] = f"{type(exc).__name__}: {exc}"
    return report


def sandwich_violations(report: BoundReport, rtol: float = 1e-8, atol: float = 1e-12):
    """Nodes where lower <= oracle <= upper fails beyond ``rtol`` (relative).

    The reference magnitude is the largest of the three values and, when
    present, ``E||G||^2 / h^2`` (the risk of the zero core map), so exact
    zeros do not turn round-off into violations.
    """
    s = report.series
    lo, orc = s["lower_bound"], s["oracle"]
    up = s.get("upper_bound")
    bad = []
    scale = np.maximum(np.abs(orc), np.abs(lo))
    if "oracle_scale" in s:
        scale = np.maximum(scale, s["oracle_scale"])
    if up is not None:
        scale = np.maximum(scale, np.abs(up))
    tol = rtol * scale + atol
    for j, t in enumerate(report.nodes):
        if lo[j] > orc[j] + tol[j]:
            bad.append((float(t), "lower>oracle", float(lo[j]), float(orc[j])))
        if up is not None and orc[j] > up[j] + tol[j]:
            bad.append((float(t), "oracle>upper", float(orc[j]), float(up[j])))
    return bad


def regression_oracle_mc(
    target: NoisyLowDimModel,
    V: Frame,
    sched: DiffusionSchedule,
    n: int = 100_000,
    seed: int = 0,
    n_batches: int = N_BATCHES,
    workers: int = 1,
) -> RiskEstimate:
    """Monte Carlo structural risk of the best affine predictor on ``V^T X_t``.

    Coefficients are fitted by least squares on an independent sample at each
    node, then the risk is measured on fresh draws.  For Gaussian latents the
    best affine predictor is the conditional mean, so this estimates the
    exact oracle; for mixtures it upper-estimates it.
    """
    from .datamodel import draw_reference

    Vd = V.data
    coefs = {}
    for j, t in enumerate(sched.nodes):
        rng = make_rng(seed, "regression_fit", j)
        x0, _ = draw_reference(target, n, rng)
        xt = alpha(t) * x0 + np.sqrt(h(t)) * rng.standard_normal(x0.shape)
        Z = np.hstack([np.ones((n, 1)), xt @ Vd])
        Y = G_field(target, xt, float(t)) @ Vd
        coefs[float(t)] = np.linalg.lstsq(Z, Y, rcond=None)[0]

    def per_point(xt, t, x0, labels):
        G = G_field(target, xt, t)
        z = xt @ Vd
        pred = np.hstack([np.ones((len(z), 1)), z]) @ coefs[t]
        inside = G @ Vd
        outside = G - inside @ Vd.T
        err = np.sum(outside**2, axis=1) + np.sum((inside - pred) ** 2, axis=1)
        return err / float(h(t)) ** 2

    return time_averaged_expectation(
        target, per_point, sched, n, seed, "regression_eval", n_batches, workers,
        label="regression_oracle" + ("" if target.is_gaussian else "_upper_estimate"),
    )


# --------------------------------------------------------------------------
# mixed training


def mixed_weights(model: NoisyLowDimModel, sched: DiffusionSchedule, n_mc: int = 100_000, seed: int = 0):
    """``(c_bar, n_bar)``: time averages of lambda_max/h^2 and a^4 s^4/(h^2 ht)."""
    t = sched.nodes
    lam = np.array([m.lambda_max for m in moment_series(model, sched, n_mc, seed)])
    ht, a, htil = h(t), alpha(t), h_tilde(t, model.sigma)
    c_bar = float(sched.average(lam / ht**2))
    n_bar = float(sched.average(a**4 * model.sigma**4 / (ht**2 * htil)))
    return c_bar, n_bar


def closed_form_spectrum(frames, weights):
    """Eigenvalues of ``a P_1 + b P_2`` from the principal angles between the frames."""
    A1, A2 = frames
    a, b = weights
    D, d1, d2 = A1.ambient_dim, A1.latent_dim, A2.latent_dim
    phi = subspace_report(A1, A2).angles
    c2 = np.cos(phi) ** 2
    root = 0.5 * np.sqrt((a - b) ** 2 + 4 * a * b * c2)
    lam = list((a + b) / 2 + root) + list((a + b) / 2 - root)
    lam += [a] * max(d1 - d2, 0) + [b] * max(d2 - d1, 0)
    lam += [0.0] * (D - len(lam))
    return np.sort(np.asarray(lam))[::-1]


@dataclass(frozen=True, eq=False)
class MixedProjectorSolution:
    M_mix: np.ndarray
    spectrum: np.ndarray
    W_k: Frame
    k: int
    residual: float
    closed_form: np.ndarray
    closed_form_error: float
    frames: tuple
    weights: tuple

    def gamma_of(self, W: Frame) -> float:
        return gamma_residual(W, self.frames, self.weights)


def solve_mixed_projector(frames, weights, k: int) -> MixedProjectorSolution:
    """Top-k eigenspace of ``M_mix = sum_i w_i A_i A_i^T``."""
    A1, A2 = frames
    _check_same_ambient(A1, A2)
    D = A1.ambient_dim
    if not max(A1.latent_dim, A2.latent_dim) <= k <= D:
        raise KOutOfRange(f"k={k} outside [{max(A1.latent_dim, A2.latent_dim)}, {D}]")
    w1, w2 = (float(w) for w in weights)
    M = w1 * A1.projector() + w2 * A2.projector()
    M = 0.5 * (M + M.T)
    ev, Q = np.linalg.eigh(M)
    order = np.argsort(ev)[::-1]
    ev, Q = ev[order], Q[:, order]
    W = Frame(Q[:, :k])
    residual = float(np.sum(ev[k:]))
    cf = closed_form_spectrum(frames, (w1, w2))
    return MixedProjectorSolution(
        M_mix=M,
        spectrum=ev,
        W_k=W,
        k=k,
        residual=residual,
        closed_form=cf,
        closed_form_error=float(np.max(np.abs(cf - ev))),
        frames=(A1, A2),
        weights=(w1, w2),
    )


def gamma_residual(W, frames, weights) -> float:
    """``sum_i w_i ||P_W^perp A_i||_F^2``; ``W`` may be a Frame or a ``(..., D, k)`` stack."""
    Wd = W.data if isinstance(W, Frame) else np.asarray(W)
    total = 0.0
    for A, w in zip(frames, weights):
        Ad = A.data
        resid = Ad - Wd @ (np.swapaxes(Wd, -1, -2) @ Ad)
        total = total + float(w) * np.sum(resid**2, axis=(-2, -1))
    return total if np.ndim(total) else float(total)


@dataclass(frozen=True, eq=False)
class MixedPenalties:
    reconstruction: tuple
    compression: RiskEstimate


def mixed_penalty_terms(
    mix: MixtureModel,
    U: Frame,
    sched: DiffusionSchedule,
    n_mc: int = 100_000,
    seed: int = 0,
    n_batches: int = N_BATCHES,
    workers: int = 1,
) -> MixedPenalties:
    """Reconstruction errors for each component and the posterior-compression error."""
    Ud = U.data
    psi = [ComponentComparator(c, U) for c in mix.components]
    recon = []
    for i, comp in enumerate(mix.components):

        def per_point(xt, t, x0, labels, comp=comp, p=psi[i]):
            z = xt @ Ud
            diff = p(z, t) - G_field(comp, xt, t) @ Ud
            return np.sum(diff**2, axis=1) / float(h(t)) ** 2

        recon.append(
            time_averaged_expectation(
                comp, per_point, sched, n_mc, seed, f"reconstruction_{i + 1}", n_batches, workers,
                label=f"R_{i + 1}",
            )
        )

    def per_point_P(xt, t, x0, labels):
        z = xt @ Ud
        _, pi = mixture_score(mix, xt, t)
        piU = projected_posterior(mix, U, z, t)
        gap = np.sum((psi[0](z, t) - psi[1](z, t)) ** 2, axis=1)
        return (piU[:, 0] - pi[:, 0]) ** 2 * gap / float(h(t)) ** 2

    P = time_averaged_expectation(
        mix, per_point_P, sched, n_mc, seed, "compression", n_batches, workers, label="P"
    )
    return MixedPenalties(tuple(recon), P)


def component_weights(mix: MixtureModel, sched: DiffusionSchedule, c_mode="c_bar", n_mc=100_000, seed=0):
    """``(c, n_bar)`` per component; ``c_mode`` is "c_bar", "unit" or an explicit pair."""
    cn = [mixed_weights(m, sched, n_mc, seed) for m in mix.components]
    n_bar = tuple(x[1] for x in cn)
    if isinstance(c_mode, str):
        if c_mode == "c_bar":
            c = tuple(x[0] for x in cn)
        elif c_mode == "unit":
            c = (1.0, 1.0)
        else:
            raise ValueError(f"unknown c_mode {c_mode!r}")
    else:
        c = tuple(float(v) for v in c_mode)
    return c, n_bar


def mixed_oracle_upper_bound(
    mix: MixtureModel,
    U: Frame,
    sched: DiffusionSchedule,
    eta: float = 1.0,
    approx_term: float = 0.0,
    approx_stderr: float = 0.0,
    penalties: MixedPenalties | None = None,
    weights=None,
    n_mc: int = 100_000,
    seed: int = 0,
) -> dict:
    """Every addend of the mixed-oracle upper bound at the frame ``U``.

    ``weights`` is ``(c, n_bar)`` per component (default: c = c_bar).  The
    approximation term is a measured input.  Standard errors of the Monte
    Carlo addends are propagated to ``stderr``.
    """
    if eta <= 0:
        raise ValueError("eta must be > 0")
    c, n_bar = weights or component_weights(mix, sched, "c_bar", n_mc, seed)
    om = mix.omega
    frames = tuple(m.frame for m in mix.components)
    gamma = gamma_residual(U, frames, [om[i] * c[i] for i in range(2)])
    Ud = U.data
    PU_perp = np.eye(mix.D) - Ud @ Ud.T
    traces = [float(np.trace(PU_perp @ m.frame.perp_projector())) for m in mix.components]
    noise = sum(om[i] * n_bar[i] * traces[i] for i in range(2))
    pen = penalties or mixed_penalty_terms(mix, U, sched, n_mc, seed)
    R = [r.value for r in pen.reconstruction]
    recon = 2 * sum(om[i] * R[i] for i in range(2))
    recon_se = 2 * np.sqrt(sum((om[i] * pen.reconstruction[i].stderr) ** 2 for i in range(2)))
    comp = 2 * pen.compression.value
    comp_se = 2 * pen.compression.stderr
    bracket = gamma + noise + recon + comp
    bracket_se = float(np.hypot(recon_se, comp_se))
    approx_w = 1 + 1 / eta
    total = (1 + eta) * bracket + approx_w * approx_term
    return {
        "gamma": gamma,
        "noise": noise,
        "noise_traces": traces,
        "reconstruction": recon,
        "reconstruction_stderr": float(recon_se),
        "R": R,
        "R_stderr": [r.stderr for r in pen.reconstruction],
        "compression": comp,
        "compression_stderr": float(comp_se),
        "P": pen.compression.value,
        "bracket": bracket,
        "bracket_stderr": bracket_se,
        "eta": eta,
        "approx_term": approx_term,
        "total": total,
        "stderr": float(np.hypot((1 + eta) * bracket_se, approx_w * approx_stderr)),
        "c": list(c),
        "n_bar": list(n_bar),
    }
