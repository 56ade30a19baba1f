"""Executable property checks; each returns a row ``{name, statistic, tolerance, passed}``."""

from __future__ import annotations

import math

import numpy as np

from .bounds import (
    closed_form_spectrum,
    frozen_bound_report,
    gamma_residual,
    sandwich_violations,
    solve_mixed_projector,
)
from .datamodel import Gaussian, GaussianMixture, NoisyLowDimModel
from .geometry import Frame, axis_frame, haar_frame, rotate_frame
from .rng import derive_seed, make_rng
from .sampler import SamplerConfig, covariance_with_se, reverse_sample
from .schedule import DiffusionSchedule, h
from .score import AnalyticScore, ambient_score, log_density, null_score
from .trainer import denoising_gap, e2_upper_bound, init_core, regression_loss_and_grad


def _row(name, statistic, tolerance, passed, detail=""):
    return {
        "name": name,
        "statistic": float(statistic),
        "tolerance": float(tolerance),
        "passed": bool(passed),
        "detail": detail,
    }


def _two_lines(phi, D=4):
    A1 = axis_frame(D, [0])
    A2 = Frame(np.cos(phi) * A1.data + np.sin(phi) * np.eye(D)[:, [1]])
    return A1, A2


def check_angle_spectrum(n_triples=100, seed=0):
    """Numeric eigenvalues of ``a P1 + b P2`` against the principal-angle closed form."""
    rng = make_rng(seed, "check_angle_spectrum")
    worst = 0.0
    for _ in range(n_triples):
        a, b = rng.uniform(0.05, 2.0, 2)
        phi = rng.uniform(0, np.pi / 2)
        A1, A2 = _two_lines(phi)
        ev = np.sort(np.linalg.eigvalsh(a * A1.projector() + b * A2.projector()))[::-1]
        root = 0.5 * math.sqrt((a - b) ** 2 + 4 * a * b * math.cos(phi) ** 2)
        expect = np.array([(a + b) / 2 + root, (a + b) / 2 - root, 0.0, 0.0])
        worst = max(worst, float(np.max(np.abs(ev - expect))))
        # balanced weights: (1 +- cos phi) / 2
        evb = np.sort(np.linalg.eigvalsh(0.5 * A1.projector() + 0.5 * A2.projector()))[::-1][:2]
        worst = max(worst, float(np.max(np.abs(evb - [(1 + math.cos(phi)) / 2, (1 - math.cos(phi)) / 2]))))
    return _row("angle_spectrum", worst, 1e-10, worst <= 1e-10)


def check_projector_optimality(D=16, d=3, k=4, n_candidates=10_000, seed=0):
    """Gamma at the top-k eigenspace equals the spectral tail and beats random frames."""
    rng = make_rng(seed, "check_projector_optimality")
    A1 = Frame(haar_frame(D, d, rng).data)
    A2 = Frame(haar_frame(D, d, rng).data)
    w = (0.7, 0.4)
    sol = solve_mixed_projector((A1, A2), w, k)
    g_opt = gamma_residual(sol.W_k, (A1, A2), w)
    tail_err = abs(g_opt - float(np.sum(sol.spectrum[k:])))
    trace_err = abs(float(np.sum(sol.spectrum)) - (w[0] * d + w[1] * d))
    cands = haar_frame(D, k, rng, size=n_candidates)
    margin = float(np.min(gamma_residual(cands, (A1, A2), w)) - g_opt)
    return [
        _row("gamma_equals_spectral_tail", tail_err, 1e-10, tail_err <= 1e-10),
        _row("spectrum_trace_identity", trace_err, 1e-10, trace_err <= 1e-10),
        _row("no_random_frame_beats_W_k", margin, -1e-10, margin >= -1e-10,
             f"{n_candidates} Haar candidates"),
        _row("closed_form_spectrum_generic", float(np.max(np.abs(closed_form_spectrum((A1, A2), w) - sol.spectrum))),
             1e-10, float(np.max(np.abs(closed_form_spectrum((A1, A2), w) - sol.spectrum))) <= 1e-10),
    ]


def sandwich_grid():
    """Gaussian-target fixtures ``(label, target, V)`` over D, angles and noise."""
    out = []
    for D, d in ((2, 1), (8, 2), (32, 4)):
        A = axis_frame(D, list(range(d)))
        lat = Gaussian(np.linspace(-0.5, 0.5, d), np.diag(np.linspace(0.5, 2.0, d)))
        for theta in (0.0, np.pi / 8, np.pi / 4, 3 * np.pi / 8, 0.45 * np.pi):
            V = rotate_frame(A, [theta] * d, derive_seed(D, "sandwich", d))
            for sigma in (0.0, 0.1, 0.5):
                out.append((f"D={D},theta={theta:.4f},sigma={sigma}", NoisyLowDimModel(A, lat, sigma), V))
    return out


def check_sandwich(sched=None):
    sched = sched or DiffusionSchedule()
    worst = 0
    names = []
    for label, target, V in sandwich_grid():
        rep = frozen_bound_report(target, V, sched)
        bad = sandwich_violations(rep, rtol=1e-8)
        if bad or "upper_bound" not in rep.series:
            worst += 1
            names.append(label)
    return _row("sandwich_lower_oracle_upper", worst, 0, worst == 0, ";".join(names))


def decomposition_model():
    A = Frame(np.linalg.qr(make_rng(5, "decomposition").standard_normal((4, 2)))[0])
    lat = GaussianMixture([0.3, 0.7], [Gaussian([1.0, -0.5], np.eye(2) * 0.4), Gaussian([-1.0, 0.5], np.diag([0.8, 0.2]))])
    return NoisyLowDimModel(A, lat, 0.1)


def check_score_decomposition(n_points=1000, seed=0, step=1e-5):
    """On-support and orthogonal score parts are orthogonal and sum to grad log p."""
    model = decomposition_model()
    rng = make_rng(seed, "check_score_decomposition")
    worst_ip, worst_fd = 0.0, 0.0
    for _ in range(n_points):
        t = float(rng.uniform(0.05, 1.0))
        x = 1.5 * rng.standard_normal(model.D)
        parts = ambient_score(model, x, t)
        ip = abs(float(parts.on_support @ parts.orthogonal))
        E = np.eye(model.D) * step
        fd = (log_density(model, x + E, t) - log_density(model, x - E, t)) / (2 * step)
        rel = float(np.linalg.norm(fd - parts.total) / max(1.0, np.linalg.norm(parts.total)))
        worst_ip, worst_fd = max(worst_ip, ip), max(worst_fd, rel)
    return [
        _row("score_parts_orthogonal", worst_ip, 1e-10, worst_ip <= 1e-10),
        _row("score_matches_fd_log_density", worst_fd, 1e-5, worst_fd <= 1e-5),
    ]


class _OffsetScore:
    def __init__(self, base, offset):
        self.base, self.offset = base, np.asarray(offset, dtype=float)
        self.label = "offset"

    def __call__(self, x, t):
        return self.base(x, t) + self.offset


def check_vincent_gap(n=20_000, seed=0, sched=None):
    """Denoising risk minus score risk is the same constant for three fields."""
    sched = sched or DiffusionSchedule(t0=0.1, T=1.0, n_nodes=32)
    model = NoisyLowDimModel(axis_frame(2, [0]), Gaussian.standard(1), 0.0)
    truth = AnalyticScore(model)
    fields = [truth, null_score_field(), _OffsetScore(truth, [0.5, -0.3])]
    res = denoising_gap(fields, model, sched, n=n, seed=seed)
    z = 0.0
    for i in range(3):
        for j in range(i + 1, 3):
            z = max(z, abs(res.pair_diff[i, j]) / res.pair_stderr[i, j])
    bound = e2_upper_bound(model.D, sched)
    e2 = float(res.gap[0])
    return [
        _row("vincent_gap_constant_z", z, 4.0, z <= 4.0),
        _row("e2_below_closed_form", e2 - bound, 0.0, e2 <= bound, f"E2={e2:.6g}, bound={bound:.6g}"),
    ]


def null_score_field():
    class _Null:
        label = "null"

        def __call__(self, x, t):
            return null_score(x, t)

    return _Null()


def gradient_check(seed=0, n_params=20, step=1e-5):
    """Worst relative error between backprop and central differences."""
    rng = make_rng(seed, "gradient_check")
    core = init_core(2, hidden=(8, 8), K=3.0, kappa=10.0, seed=seed)
    for p in core.params():
        p += 0.1 * rng.standard_normal(p.shape)
    z = rng.standard_normal((16, 2)) * 2.0
    t = rng.uniform(0.1, 1.0, 16)
    target = rng.standard_normal((16, 2))
    _, grads = regression_loss_and_grad(core, z, t, target)
    params = core.params()
    worst = 0.0
    for _ in range(n_params):
        i = int(rng.integers(len(params)))
        idx = tuple(int(rng.integers(s)) for s in params[i].shape)
        old = params[i][idx]
        params[i][idx] = old + step
        lp, _ = regression_loss_and_grad(core, z, t, target)
        params[i][idx] = old - step
        lm, _ = regression_loss_and_grad(core, z, t, target)
        params[i][idx] = old
        fd = (lp - lm) / (2 * step)
        g = grads[i][idx]
        worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-8))
    return _row("backprop_matches_fd", worst, 1e-4, worst <= 1e-4)


def check_output_bound(n_probe=100_000, seed=0):
    rng = make_rng(seed, "check_output_bound")
    core = init_core(2, hidden=(16, 16), K=0.5, seed=seed)
    z = 10 * rng.standard_normal((n_probe, 2))
    norms = np.linalg.norm(core(z, rng.uniform(0, 1, n_probe)), axis=1)
    worst = float(norms.max() - core.K)
    return _row("core_output_norm_bounded", worst, 1e-12, worst <= 1e-12)


def check_sampler(n_chains=10_000, n_steps=200, seed=0, sched=None):
    """Terminal covariance of reverse sampling with the exact STD1 score."""
    sched = sched or DiffusionSchedule()
    model = NoisyLowDimModel(axis_frame(2, [0]), Gaussian.standard(1), 0.0)
    x = reverse_sample(AnalyticScore(model), SamplerConfig(n_steps, sched, seed), n_chains, 2)
    cov, se = covariance_with_se(x)
    expect = np.diag([1.0, float(h(sched.t0))])
    z = float(np.max(np.abs(cov - expect) / se))
    return _row("sampler_terminal_covariance_z", z, 5.0, z <= 5.0)


def run_all(cfg_inv: dict, sched: DiffusionSchedule, n_samples: int, seed: int):
    rows = [check_angle_spectrum(cfg_inv["n_triples"], derive_seed(seed, "spectrum"))]
    rows += check_projector_optimality(n_candidates=cfg_inv["n_candidates"], seed=derive_seed(seed, "optimality"))
    rows.append(check_sandwich(sched))
    rows += check_score_decomposition(cfg_inv["n_points"], derive_seed(seed, "decomposition"))
    rows += check_vincent_gap(n_samples, derive_seed(seed, "vincent"))
    rows.append(gradient_check(derive_seed(seed, "gradcheck")))
    rows.append(check_output_bound(seed=derive_seed(seed, "output_bound")))
    rows.append(check_sampler(seed=derive_seed(seed, "sampler"), sched=sched))
    return rows
