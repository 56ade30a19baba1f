import numpy as np
import pytest

from latentreuse.errors import Diverged
from latentreuse.invariants import check_sampler
from latentreuse.sampler import (
    SamplerConfig,
    covariance_with_se,
    quadratic_energy,
    reverse_sample,
    samples_csv,
    write_samples_csv,
)
from latentreuse.schedule import DiffusionSchedule
from latentreuse.score import AnalyticScore

from conftest import std1


class TestGrid:
    @pytest.mark.parametrize("grid", ["geometric", "uniform"])
    def test_endpoints(self, grid, sched):
        ts = SamplerConfig(10, sched, grid=grid).times()
        assert len(ts) == 11 and ts[0] == pytest.approx(sched.T) and ts[-1] == pytest.approx(sched.t0)
        assert np.all(np.diff(ts) < 0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            SamplerConfig(1)
        with pytest.raises(ValueError):
            SamplerConfig(10, grid="cosine")


class TestReverseSample:
    def test_std1_terminal_covariance(self):
        row = check_sampler(n_chains=10_000, n_steps=200, seed=0)
        assert row["passed"], row

    def test_contracting_score_stays_finite(self, sched):
        x = reverse_sample(lambda x, t: -x, SamplerConfig(50, sched, seed=1), 500, 3)
        assert x.shape == (500, 3) and np.all(np.isfinite(x))

    def test_reproducible(self, small_sched):
        cfg = SamplerConfig(20, small_sched, seed=7)
        s = AnalyticScore(std1())
        np.testing.assert_array_equal(reverse_sample(s, cfg, 100, 2), reverse_sample(s, cfg, 100, 2))
        other = reverse_sample(s, SamplerConfig(20, small_sched, seed=8), 100, 2)
        assert not np.array_equal(other, reverse_sample(s, cfg, 100, 2))

    def test_explosive_score_diverges(self):
        sched = DiffusionSchedule(0.01, 1.0, 8)
        with pytest.raises(Diverged):
            reverse_sample(lambda x, t: 1e4 * x, SamplerConfig(50, sched), 10, 2)


class TestStatistics:
    def test_covariance_se_shapes(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((20_000, 2)) * [1.0, 2.0]
        cov, se = covariance_with_se(x)
        np.testing.assert_allclose(cov, np.cov(x.T), rtol=1e-12)
        # Var of x_i^2 for a normal is 2 s^4
        assert se[1, 1] == pytest.approx(np.sqrt(2 * 16 / 20_000), rel=0.05)

    def test_quadratic_energy(self):
        x = np.array([[1.0, 2.0], [3.0, 0.0]])
        m, _ = quadratic_energy(x, np.diag([0.0, 1.0]))
        assert m == pytest.approx(2.0)


class TestCsv:
    def test_format(self, tmp_path):
        x = np.array([[0.1, 1.0], [-2.5, 3.0]])
        text = samples_csv(x)
        assert text.split("\r\n")[0] == "x0,x1"
        assert text.endswith("\r\n") and text.count("\r\n") == 3
        p = tmp_path / "s.csv"
        write_samples_csv(x, p)
        assert p.read_bytes() == text.encode()
        back = np.loadtxt(p, delimiter=",", skiprows=1)
        np.testing.assert_array_equal(back, x)
