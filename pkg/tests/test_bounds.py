import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentreuse.bounds import (
    BoundReport,
    closed_form_spectrum,
    exact_structural_oracle,
    frozen_bound_report,
    frozen_lower_bound,
    frozen_upper_bound,
    g_moments,
    gamma_residual,
    mixed_oracle_upper_bound,
    mixed_penalty_terms,
    mixed_weights,
    regression_oracle_mc,
    sandwich_violations,
    solve_mixed_projector,
)
from latentreuse.datamodel import Gaussian, GaussianMixture, MixtureModel, NoisyLowDimModel
from latentreuse.errors import IllConditioned, KOutOfRange, NotGaussian, RankConditionViolated
from latentreuse.geometry import Frame, axis_frame, haar_frame, rotate_frame
from latentreuse.rng import make_rng
from latentreuse.schedule import DiffusionSchedule, alpha, h, h_tilde

from conftest import line_frame, std1


def std2_oracle(theta, t):
    """Best structural risk integrand for STD1 data seen through span{(cos, sin)}.

    X_t ~ N(0, diag(1, h)), G = a^2 x1 e1.  Outside V: a^4 s^2.  Inside V:
    Var(V^T G | Z) = a^4 c^2 - (a^2 c^2)^2 / (c^2 + s^2 h).
    """
    a4, ht = alpha(t) ** 4, h(t)
    c2, s2 = np.cos(theta) ** 2, np.sin(theta) ** 2
    return (a4 * s2 + a4 * c2 - a4 * c2**2 / (c2 + s2 * ht)) / ht**2


class TestGMoments:
    @pytest.mark.parametrize("t", [0.01, 0.5, 1.0])
    def test_std1(self, t):
        g = g_moments(std1(), t)
        np.testing.assert_allclose(g.M_g, [[alpha(t) ** 4]], rtol=1e-12)
        assert g.mu_min == pytest.approx(alpha(t) ** 4) and g.lambda_max == pytest.approx(alpha(t) ** 4)
        assert g.exact

    def test_isotropic_two_dim(self):
        m = NoisyLowDimModel(axis_frame(4, [0, 1]), Gaussian.standard(2), 0.0)
        g = g_moments(m, 0.3)
        np.testing.assert_allclose(g.M_g, alpha(0.3) ** 4 * np.eye(2), atol=1e-14)
        assert g.L_g == pytest.approx(alpha(0.3) ** 2)

    def test_near_point_mass(self):
        m = NoisyLowDimModel(axis_frame(3, [0, 1]), Gaussian([1.0, -1.0], 1e-14 * np.eye(2)), 0.0)
        g = g_moments(m, 0.2)
        assert g.mu_min >= 0 and g.mu_min <= g.lambda_max
        np.testing.assert_allclose(np.linalg.eigvalsh(g.M_Y).min() >= 0, True)

    def test_mixture_monte_carlo_agrees_with_gaussian_limit(self):
        # a one-component "mixture" must reproduce the closed form within MC error
        lat = GaussianMixture([1.0], [Gaussian([0.5], [[2.0]])])
        mix_model = NoisyLowDimModel(axis_frame(2, [0]), lat, 0.1)
        ref = NoisyLowDimModel(axis_frame(2, [0]), Gaussian([0.5], [[2.0]]), 0.1)
        mc, ex = g_moments(mix_model, 0.3, n_mc=40_000, seed=1), g_moments(ref, 0.3)
        assert not mc.exact
        assert abs(mc.M_g[0, 0] - ex.M_g[0, 0]) <= 4 * mc.M_g_stderr[0, 0]


class TestFrozenLowerBound:
    def test_contained_noiseless_is_zero(self, sched):
        target = NoisyLowDimModel(axis_frame(4, [0]), Gaussian.standard(1), 0.0)
        rep = frozen_lower_bound(target, axis_frame(4, [0, 2]), sched)
        np.testing.assert_allclose(rep.series["lower_bound"], 0.0, atol=1e-12)

    @pytest.mark.parametrize("theta", [0.2, np.pi / 4, 1.3])
    def test_std2_integrand(self, theta, sched):
        rep = frozen_lower_bound(std1(), line_frame(theta), sched)
        t = sched.nodes
        np.testing.assert_allclose(rep.series["lower_bound"], alpha(t) ** 4 * np.sin(theta) ** 2 / h(t) ** 2, rtol=1e-10)
        np.testing.assert_allclose(rep.series["lower_noise"], 0.0)

    def test_orthogonal(self, sched):
        rep = frozen_lower_bound(std1(), axis_frame(2, [1]), sched)
        t = sched.nodes
        np.testing.assert_allclose(rep.series["lower_bound"], alpha(t) ** 4 / h(t) ** 2, rtol=1e-12)

    def test_noise_term_closed_form(self, sched):
        target = NoisyLowDimModel(axis_frame(5, [0]), Gaussian.standard(1), 0.3)
        rep = frozen_lower_bound(target, line_frame(0.4, D=5), sched)
        t = sched.nodes
        expect = 0.3**4 * alpha(t) ** 4 / (h(t) ** 2 * h_tilde(t, 0.3)) * (5 - 1 - 1 + np.cos(0.4) ** 2)
        np.testing.assert_allclose(rep.series["lower_noise"], expect, rtol=1e-12)


class TestFrozenUpperBound:
    def test_aligned_noiseless_zero(self, sched):
        rep = frozen_upper_bound(std1(), axis_frame(2, [0]), sched)
        np.testing.assert_allclose(rep.series["upper_bound"], 0.0, atol=1e-12)

    @pytest.mark.parametrize("theta", [0.3, np.pi / 4, 1.2])
    def test_std2_integrand(self, theta, sched):
        rep = frozen_upper_bound(std1(), line_frame(theta), sched)
        t = sched.nodes
        s2 = np.sin(theta) ** 2
        expect = alpha(t) ** 4 * s2 / h(t) ** 2 + 2 * alpha(t) ** 4 * s2 / h(t)
        np.testing.assert_allclose(rep.series["upper_bound"], expect, rtol=1e-10)
        assert rep.meta["branch"] == "d1>=d2"

    def test_near_orthogonal_is_ill_conditioned(self, sched):
        with pytest.raises(IllConditioned):
            frozen_upper_bound(std1(), line_frame(np.pi / 2 - 1e-6), sched)

    def test_rank_condition(self, sched):
        target = NoisyLowDimModel(axis_frame(4, [0, 1]), Gaussian.standard(2), 0.0)
        # d1 = 2 >= d2 = 2 but V meets col(A) in one direction only
        with pytest.raises(RankConditionViolated) as exc:
            frozen_upper_bound(target, axis_frame(4, [0, 2]), sched)
        assert exc.value.branch == "d1>=d2"

    def test_info_term_only_when_d1_lt_d2(self, sched):
        target = NoisyLowDimModel(axis_frame(6, [0, 1]), Gaussian.standard(2), 0.1)
        V = rotate_frame(target.frame, [0.4], seed=0, latent_dim=1)
        rep = frozen_upper_bound(target, V, sched)
        assert rep.meta["branch"] == "d1<d2" and rep.values["upper_info"] > 0
        V2 = rotate_frame(target.frame, [0.4, 0.2], seed=0, latent_dim=3)
        assert frozen_upper_bound(target, V2, sched).values["upper_info"] == 0.0


class TestExactOracle:
    def test_square_frame_zero(self, sched):
        m = NoisyLowDimModel(axis_frame(3, [0]), Gaussian([0.3], [[2.0]]), 0.4)
        rep = exact_structural_oracle(m, Frame(haar_frame(3, 3, make_rng(0, "q")).data), sched)
        np.testing.assert_allclose(rep.series["oracle"], 0.0, atol=1e-8 * rep.series["oracle_scale"].max())

    def test_aligned_noiseless_zero(self, sched):
        rep = exact_structural_oracle(std1(), axis_frame(2, [0]), sched)
        np.testing.assert_allclose(rep.series["oracle"], 0.0, atol=1e-10)

    @pytest.mark.parametrize("theta", [0.1, np.pi / 4, 1.0, np.pi / 2])
    def test_std2_closed_form(self, theta, sched):
        rep = exact_structural_oracle(std1(), line_frame(theta), sched)
        np.testing.assert_allclose(rep.series["oracle"], std2_oracle(theta, sched.nodes), rtol=1e-9)

    def test_std2_sandwich(self, sched):
        rep = frozen_bound_report(std1(), line_frame(np.pi / 4), sched)
        assert sandwich_violations(rep) == []

    def test_mixture_rejected(self, sched):
        lat = GaussianMixture([0.5, 0.5], [Gaussian([1.0], [[1.0]]), Gaussian([-1.0], [[1.0]])])
        with pytest.raises(NotGaussian):
            exact_structural_oracle(NoisyLowDimModel(axis_frame(2, [0]), lat, 0.0), axis_frame(2, [1]), sched)

    def test_regression_mc_within_3se(self, small_sched):
        m = NoisyLowDimModel(axis_frame(3, [0]), Gaussian([0.5], [[1.5]]), 0.2)
        V = rotate_frame(m.frame, [np.pi / 4], seed=1)
        exact = exact_structural_oracle(m, V, small_sched).values["oracle"]
        est = regression_oracle_mc(m, V, small_sched, n=100_000, seed=3)
        assert abs(est.value - exact) <= 3 * est.stderr

    @settings(max_examples=25, deadline=None)
    @given(theta=st.floats(0.0, 1.5), sigma=st.sampled_from([0.0, 0.1, 0.5]), seed=st.integers(0, 1000))
    def test_sandwich_property(self, theta, sigma, seed):
        sched = DiffusionSchedule(0.01, 1.0, 16)
        rng = make_rng(seed, "sandwich")
        M = rng.standard_normal((2, 2))
        target = NoisyLowDimModel(axis_frame(6, [0, 1]), Gaussian(rng.standard_normal(2), M @ M.T + 0.2 * np.eye(2)), sigma)
        V = rotate_frame(target.frame, [theta, theta / 2], seed)
        rep = frozen_bound_report(target, V, sched)
        assert sandwich_violations(rep) == []
        assert np.all(rep.series["lower_signal"] >= 0) and np.all(rep.series["lower_noise"] >= 0)


class TestBoundReportSerialization:
    def test_csv_rows_and_dict(self, small_sched):
        rep = frozen_bound_report(std1(), line_frame(0.5), small_sched)
        rows = rep.csv_rows()
        terms = {r[1] for r in rows}
        assert {"lower_bound", "oracle", "upper_bound"} <= terms
        averages = [r for r in rows if r[0] is None]
        assert len(averages) == len(rep.values)
        d = rep.to_dict()
        assert len(d["series"]["oracle"]) == small_sched.n_nodes


class TestMixedWeights:
    def test_noiseless_nbar_zero(self, sched):
        assert mixed_weights(std1(), sched)[1] == 0.0

    def test_std1_cbar(self, sched):
        c, _ = mixed_weights(std1(), sched)
        t = sched.nodes
        assert c == pytest.approx(sched.average(alpha(t) ** 4 / h(t) ** 2), rel=1e-12)

    def test_sigma_fourth_power_scaling(self, sched):
        _, n1 = mixed_weights(std1(1e-3), sched)
        _, n2 = mixed_weights(std1(2e-3), sched)
        assert n2 / n1 == pytest.approx(16.0, rel=1e-3)


class TestMixedProjector:
    def test_balanced_pi_over_three(self):
        sol = solve_mixed_projector((axis_frame(3, [0]), line_frame(np.pi / 3, D=3)), (0.5, 0.5), 1)
        np.testing.assert_allclose(sol.spectrum, [0.75, 0.25, 0.0], atol=1e-12)
        assert sol.closed_form_error <= 1e-10

    def test_orthogonal_axes(self):
        sol = solve_mixed_projector((axis_frame(3, [0]), axis_frame(3, [1])), (0.5, 0.5), 1)
        assert sol.residual == pytest.approx(0.5, abs=1e-14)

    def test_full_space(self):
        frames = (axis_frame(4, [0]), line_frame(0.3, D=4))
        assert solve_mixed_projector(frames, (0.3, 0.7), 4).residual == pytest.approx(0.0, abs=1e-14)

    def test_k_out_of_range(self):
        frames = (axis_frame(4, [0, 1]), axis_frame(4, [2]))
        with pytest.raises(KOutOfRange):
            solve_mixed_projector(frames, (0.5, 0.5), 1)
        with pytest.raises(KOutOfRange):
            solve_mixed_projector(frames, (0.5, 0.5), 5)

    @settings(max_examples=30, deadline=None)
    @given(d1=st.integers(1, 3), d2=st.integers(1, 3), a=st.floats(0.01, 3), b=st.floats(0.01, 3), seed=st.integers(0, 10**6))
    def test_spectrum_properties(self, d1, d2, a, b, seed):
        rng = make_rng(seed, "mixproj")
        A1, A2 = haar_frame(8, d1, rng), haar_frame(8, d2, rng)
        k0 = max(d1, d2)
        sols = [solve_mixed_projector((A1, A2), (a, b), k) for k in range(k0, 9)]
        s = sols[0]
        assert np.sum(s.spectrum) == pytest.approx(a * d1 + b * d2, abs=1e-10)
        assert s.closed_form_error <= 1e-10
        res = [x.residual for x in sols]
        assert np.all(np.diff(res) <= 1e-12)
        for x in sols:
            assert x.residual == pytest.approx(np.trace(x.M_mix) - np.sum(x.spectrum[: x.k]), abs=1e-10)
            assert x.gamma_of(x.W_k) == pytest.approx(x.residual, abs=1e-10)


class TestGammaResidual:
    def test_containment_zero(self):
        frames = (axis_frame(5, [0]), line_frame(0.7, D=5))
        assert gamma_residual(axis_frame(5, [0, 1, 3]), frames, (0.4, 0.6)) == pytest.approx(0.0, abs=1e-14)

    def test_random_frames_never_beat_optimum(self):
        rng = make_rng(2, "gamma")
        frames = (haar_frame(10, 2, rng), haar_frame(10, 3, rng))
        sol = solve_mixed_projector(frames, (1.0, 0.5), 3)
        cands = haar_frame(10, 3, rng, size=10_000)
        assert np.min(gamma_residual(cands, frames, (1.0, 0.5))) >= sol.residual - 1e-10

    def test_closed_form_spectrum_unequal_dims(self):
        frames = (axis_frame(6, [0, 1, 2]), rotate_frame(axis_frame(6, [0, 1, 2]), [0.4], seed=0, latent_dim=1))
        M = 0.3 * frames[0].projector() + 0.9 * frames[1].projector()
        np.testing.assert_allclose(closed_form_spectrum(frames, (0.3, 0.9)), np.sort(np.linalg.eigvalsh(M))[::-1], atol=1e-12)


def two_line_mixture(phi=np.pi / 3, sigma=(0.0, 0.0), D=3):
    c1 = NoisyLowDimModel(axis_frame(D, [0]), Gaussian.standard(1), sigma[0])
    c2 = NoisyLowDimModel(line_frame(phi, D=D), Gaussian.standard(1), sigma[1])
    return MixtureModel((0.5, 0.5), (c1, c2))


class TestMixedPenalties:
    def test_square_identical_components_no_compression(self, small_sched):
        m = NoisyLowDimModel(axis_frame(2, [0]), Gaussian([0.2], [[1.0]]), 0.1)
        mix = MixtureModel((0.5, 0.5), (m, m))
        pen = mixed_penalty_terms(mix, axis_frame(2, [0, 1]), small_sched, n_mc=2000, seed=0)
        assert pen.compression.value == pytest.approx(0.0, abs=1e-20)

    def test_exact_reconstruction_on_own_frame(self, small_sched):
        mix = two_line_mixture()
        pen = mixed_penalty_terms(mix, axis_frame(3, [0]), small_sched, n_mc=2000, seed=0)
        assert pen.reconstruction[0].value == pytest.approx(0.0, abs=1e-20)
        assert pen.compression.value >= 0

    def test_aligned_frame_reconstructs_better(self, small_sched):
        mix = two_line_mixture(sigma=(0.1, 0.1))
        W = solve_mixed_projector(tuple(c.frame for c in mix.components), (0.5, 0.5), 2).W_k
        U = axis_frame(3, [0])
        pw = mixed_penalty_terms(mix, W, small_sched, n_mc=20_000, seed=4)
        pu = mixed_penalty_terms(mix, U, small_sched, n_mc=20_000, seed=4)
        r_w, r_u = pw.reconstruction[1], pu.reconstruction[1]
        assert r_w.value + 3 * r_w.stderr < r_u.value - 3 * r_u.stderr


class TestMixedOracleUpperBound:
    def test_containment_terms(self, small_sched):
        mix = two_line_mixture(sigma=(0.1, 0.2), D=4)
        frames = tuple(c.frame for c in mix.components)
        k = 3
        W = solve_mixed_projector(frames, (0.5, 0.5), k).W_k
        out = mixed_oracle_upper_bound(mix, W, small_sched, eta=1.0, n_mc=20_000, seed=1)
        nb = out["n_bar"]
        assert out["gamma"] == pytest.approx(0.0, abs=1e-12)
        assert out["noise"] == pytest.approx(sum(0.5 * n * (4 - k) for n in nb), rel=1e-10)
        for i in range(2):
            assert abs(out["R"][i] - nb[i] * (k - 1)) <= 4 * out["R_stderr"][i]

    def test_small_eta_limit(self, small_sched):
        mix = two_line_mixture(sigma=(0.1, 0.1))
        out = mixed_oracle_upper_bound(mix, axis_frame(3, [0, 1]), small_sched, eta=1e-9, n_mc=2000, seed=0)
        assert out["total"] == pytest.approx(out["bracket"], rel=1e-8)

    def test_addends_sum(self, small_sched):
        mix = two_line_mixture(sigma=(0.1, 0.1))
        out = mixed_oracle_upper_bound(mix, axis_frame(3, [0]), small_sched, eta=0.5, approx_term=0.3, n_mc=2000, seed=0)
        br = out["gamma"] + out["noise"] + out["reconstruction"] + out["compression"]
        assert out["bracket"] == pytest.approx(br)
        assert out["total"] == pytest.approx(1.5 * br + 3.0 * 0.3)
