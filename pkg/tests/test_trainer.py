import json

import numpy as np
import pytest
from scipy.integrate import quad

from latentreuse.datamodel import Gaussian, NoisyLowDimModel, sample_data
from latentreuse.errors import Diverged
from latentreuse.geometry import axis_frame
from latentreuse.invariants import check_vincent_gap, gradient_check
from latentreuse.rng import make_rng
from latentreuse.schedule import DiffusionSchedule, alpha, h
from latentreuse.trainer import (
    ReluCore,
    TimeSampler,
    TrainConfig,
    core_diagnostics,
    denoising_loss,
    e2_upper_bound,
    init_core,
    regression_loss_and_grad,
    train,
    truncation_radii,
)

from conftest import std1


def linear_core(m, K=100.0):
    W = np.hstack([np.eye(m), np.zeros((m, 1))])
    return ReluCore([W], [np.zeros(m)], K, 10.0)


class TestReluCore:
    def test_zero_weights(self):
        core = init_core(3, hidden=(5, 5), seed=0)
        for p in core.params():
            p[...] = 0
        np.testing.assert_array_equal(core(np.ones((4, 3)), 0.5), 0.0)

    def test_identity_layer(self):
        z = np.array([[0.3, -0.2], [1.0, 2.0]])
        np.testing.assert_allclose(linear_core(2)(z, 0.4), z)

    def test_norm_clip(self):
        z = np.array([[3.0, 4.0], [0.3, 0.4]])
        out = linear_core(2, K=1.0)(z, 0.1)
        np.testing.assert_allclose(out, [[0.6, 0.8], [0.3, 0.4]])

    def test_single_vector_input(self):
        out = linear_core(2)(np.array([0.5, 0.5]), 0.2)
        assert out.shape == (2,)

    def test_widths_and_default_K(self):
        core = init_core(4, hidden=(7, 3), seed=1)
        assert core.widths == [5, 7, 3, 4]
        assert core.K == pytest.approx(20.0)

    def test_params_within_kappa(self):
        core = init_core(2, hidden=(4,), kappa=0.01, seed=0)
        assert max(np.abs(p).max() for p in core.params()) <= 0.01

    def test_output_bound_many_probes(self):
        core = init_core(2, hidden=(16, 16), K=0.5, seed=3)
        rng = make_rng(3, "probe")
        out = core(10 * rng.standard_normal((100_000, 2)), rng.uniform(0, 1, 100_000))
        assert np.linalg.norm(out, axis=1).max() <= 0.5 + 1e-12

    def test_json_round_trip(self):
        core = init_core(2, hidden=(6, 6), seed=4)
        back = ReluCore.from_dict(json.loads(json.dumps(core.to_dict())))
        z = make_rng(0, "z").standard_normal((10, 2))
        np.testing.assert_array_equal(back(z, 0.3), core(z, 0.3))


class TestGradients:
    def test_backprop_matches_central_differences(self):
        row = gradient_check(seed=0)
        assert row["passed"], row

    def test_clipped_branch(self):
        core = init_core(2, hidden=(8,), K=0.05, seed=2)
        rng = make_rng(2, "clip")
        z, t, target = rng.standard_normal((8, 2)) * 3, rng.uniform(0.1, 1, 8), rng.standard_normal((8, 2))
        _, grads = regression_loss_and_grad(core, z, t, target)
        W = core.params()[0]
        eps = 1e-6
        old = W[1, 0]
        W[1, 0] = old + eps
        lp, _ = regression_loss_and_grad(core, z, t, target)
        W[1, 0] = old - eps
        lm, _ = regression_loss_and_grad(core, z, t, target)
        W[1, 0] = old
        assert grads[0][1, 0] == pytest.approx((lp - lm) / (2 * eps), rel=1e-5, abs=1e-10)

    def test_weighted_loss(self):
        core = linear_core(1)
        loss, _ = regression_loss_and_grad(core, [[1.0], [2.0]], 0.5, [[0.0], [0.0]], weight=[1.0, 3.0])
        assert loss == pytest.approx((1 + 12) / 2)


class TestTimeSampler:
    def test_mean_inv_h2_matches_quadrature(self, sched):
        ts = TimeSampler(sched)
        ref = quad(lambda t: 1 / h(t) ** 2, sched.t0, sched.T, limit=200)[0] / sched.length
        assert ts.mean_inv_h2 == pytest.approx(ref, rel=1e-9)

    @pytest.mark.parametrize("mode", ["importance", "uniform"])
    def test_weighted_average_unbiased(self, mode, sched):
        ts = TimeSampler(sched, mode)
        t, w = ts.draw(400_000, make_rng(0, "ts", mode))
        assert np.all((t >= sched.t0) & (t <= sched.T))
        vals = w * alpha(t) ** 2
        ref = quad(lambda s: alpha(s) ** 2 / h(s) ** 2, sched.t0, sched.T, limit=200)[0] / sched.length
        se = vals.std() / np.sqrt(len(vals))
        assert abs(vals.mean() - ref) <= 4 * se

    def test_unknown_mode(self, sched):
        with pytest.raises(ValueError):
            TimeSampler(sched, "sobol")


class TestDenoising:
    def test_loss_zero_for_exact_target(self, small_sched):
        x0 = np.array([0.7, -0.2])

        def s(x, t):
            return (alpha(t) * x0 - x) / h(t)

        assert denoising_loss(x0, s, small_sched, n_t=3) == pytest.approx(0.0, abs=1e-20)

    def test_e2_example(self):
        sched = DiffusionSchedule(t0=0.1, T=1.0, n_nodes=8)
        ref = quad(lambda t: 2 / h(t), 0.1, 1.0)[0] / 0.9
        assert e2_upper_bound(2, sched) == pytest.approx(ref, rel=1e-12)
        assert e2_upper_bound(2, sched) == pytest.approx(6.20776, abs=1e-5)
        assert e2_upper_bound(6, sched) == pytest.approx(3 * e2_upper_bound(2, sched))

    def test_gap_constant_across_fields(self):
        rows = check_vincent_gap(n=8192, seed=1)
        assert all(r["passed"] for r in rows), rows


class TestTruncation:
    def test_radii_formula(self):
        target = NoisyLowDimModel(axis_frame(5, [0, 1]), Gaussian.standard(2), 0.2)
        reg = truncation_radii(target, 1000, 0.1, C_z=1.5, C_perp=2.0)
        lg = np.sqrt(np.log(8 * 1000 / 0.1))
        assert reg.R_z == pytest.approx(1.5 * 1.2 * (np.sqrt(2) + lg))
        assert reg.R_perp == pytest.approx(2.0 * 0.2 * (np.sqrt(3) + lg))

    def test_noiseless_perp_radius_zero_keeps_support(self):
        reg = truncation_radii(std1(), 100, 0.05)
        assert reg.R_perp == 0.0
        assert reg.contains(np.array([[1.0, 0.0]]))[0]
        assert not reg.contains(np.array([[1.0, 1e-3]]))[0]

    def test_tail_rejection_rate(self):
        target = NoisyLowDimModel(axis_frame(4, [0]), Gaussian.standard(1), 0.1)
        n2, delta = 10_000, 0.05
        reg = truncation_radii(target, n2, delta, C_z=2.0, C_perp=2.0)
        x = sample_data(target, 100_000, seed=0)
        rejected = np.mean(~reg.contains(x))
        assert rejected <= 10 * delta / (4 * n2)

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            truncation_radii(std1(), 10, 1.5)


class TestTrain:
    def test_zero_epochs_returns_init(self, small_sched):
        cfg = TrainConfig(n_epochs=0, hidden=(8,), seed=11)
        res = train(sample_data(std1(), 64, seed=0), axis_frame(2, [0]), cfg, small_sched)
        ref = init_core(1, (8,), None, 10.0, 11)
        for a, b in zip(res.core.params(), ref.params()):
            np.testing.assert_array_equal(a, b)
        assert res.trace == []

    def test_loss_decreases(self, small_sched):
        cfg = TrainConfig(n_epochs=8, hidden=(16, 16), batch_size=128, seed=0)
        res = train(sample_data(std1(), 2048, seed=1), axis_frame(2, [0]), cfg, small_sched)
        assert res.trace[-1] < res.trace[0]
        assert res.n_used == 2048

    def test_deterministic(self, small_sched):
        cfg = TrainConfig(n_epochs=2, hidden=(8,), batch_size=64, seed=5)
        x = sample_data(std1(), 256, seed=2)
        a = train(x, axis_frame(2, [0]), cfg, small_sched)
        b = train(x, axis_frame(2, [0]), cfg, small_sched)
        assert a.trace == b.trace

    def test_truncation_filters(self, small_sched):
        x = sample_data(std1(), 256, seed=3)
        x[:5, 1] = 1.0
        reg = truncation_radii(std1(), 256, 0.05)
        cfg = TrainConfig(n_epochs=1, hidden=(4,), truncation=True)
        assert train(x, axis_frame(2, [0]), cfg, small_sched, reg).n_used == 251
        with pytest.raises(ValueError):
            train(x, axis_frame(2, [0]), cfg, small_sched)

    def test_nonfinite_data_diverges(self, small_sched):
        x = sample_data(std1(), 64, seed=0)
        x[0, 0] = np.nan
        with pytest.raises(Diverged):
            train(x, axis_frame(2, [0]), TrainConfig(n_epochs=1, hidden=(4,)), small_sched)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(step_size=0.0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)

    def test_result_serializes(self, small_sched):
        res = train(sample_data(std1(), 64, seed=0), axis_frame(2, [0]),
                    TrainConfig(n_epochs=1, hidden=(4,)), small_sched)
        d = json.loads(json.dumps(res.to_dict()))
        assert d["config"]["hidden"] == [4] and len(d["trace"]) == 1
        diag = core_diagnostics(res.core, np.zeros((10, 1)), small_sched)
        assert diag["max_output_norm"] <= res.core.K
