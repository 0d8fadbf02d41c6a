import math

import mpmath
import numpy as np
import pytest

from bsnn.errors import ShapeError
from bsnn.flipstats import (
    FlipModelInput,
    GradientStats,
    collect_gradient_stats,
    flip_probability_analytic,
    flip_probability_montecarlo,
    flip_ratio,
    monotonicity_check,
    normal_cdf,
    take_sign_snapshot,
)

mpmath.mp.dps = 50


def phi_ref(z: float) -> float:
    """High-precision normal CDF, independent of the library's erfc path."""
    return float(mpmath.ncdf(mpmath.mpf(z)))


class TestNormalCdf:
    def test_against_high_precision_grid(self):
        zs = np.linspace(-8.0, 8.0, 1601)
        got = normal_cdf(zs)
        want = np.array([phi_ref(z) for z in zs])
        assert np.max(np.abs(got - want)) <= 1e-10

    def test_scalar_matches_array_path(self):
        zs = [-3.7, -0.2, 0.0, 1.9]
        arr = normal_cdf(np.array(zs))
        for z, a in zip(zs, arr):
            assert normal_cdf(z) == a

    def test_frozen_values(self):
        # mpmath.ncdf at 50 digits
        assert abs(normal_cdf(0.0) - 0.5) < 1e-15
        assert abs(normal_cdf(1.0) - 0.84134474606854292859) < 1e-12
        assert abs(normal_cdf(-2.5) - 0.0062096653257761351670) < 1e-14

    def test_symmetry(self):
        zs = np.linspace(0.0, 6.0, 200)
        assert np.allclose(normal_cdf(zs) + normal_cdf(-zs), 1.0, atol=1e-15)

    def test_monotone_nondecreasing(self):
        zs = np.linspace(-10, 10, 4001)
        vals = normal_cdf(zs)
        assert np.all(np.diff(vals) >= 0.0)


class TestAnalyticFlipProbability:
    def ref(self, omega, eta, mu, sigma):
        z = (mpmath.mpf(omega) / eta - mu) / sigma
        if omega >= 0:
            return float(1 - mpmath.ncdf(z))
        return float(mpmath.ncdf(z))

    def test_against_high_precision(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            omega = float(rng.uniform(-0.5, 0.5))
            eta = float(rng.uniform(0.01, 0.5))
            mu = float(rng.uniform(-2, 2))
            sigma = float(rng.uniform(0.1, 3))
            got = flip_probability_analytic(omega, eta, mu, sigma)
            assert got == pytest.approx(self.ref(omega, eta, mu, sigma), abs=1e-12)

    def test_frozen_values(self):
        # (omega/eta - mu) / sigma = (0.05/0.1 - 0.2) / 0.5 = 0.6; sf(0.6)
        assert flip_probability_analytic(0.05, 0.1, 0.2, 0.5) == pytest.approx(
            0.27425311775007145, abs=1e-14
        )
        # omega < 0: cdf((-0.5 - 0.2) / 0.5) = cdf(-1.4)
        assert flip_probability_analytic(-0.05, 0.1, 0.2, 0.5) == pytest.approx(
            0.080756659233771066, abs=1e-14
        )

    def test_zero_weight_uses_positive_branch(self):
        # at omega = 0 a flip needs a positive update direction: P = sf(-mu/sigma)
        assert flip_probability_analytic(0.0, 0.1, 0.0, 1.0) == pytest.approx(0.5)
        assert flip_probability_analytic(0.0, 0.1, 3.0, 1.0) > 0.99

    def test_reflection_symmetry(self):
        # mirroring both the weight and the gradient mean preserves the
        # flip probability; the two branch formulas must agree exactly
        rng = np.random.default_rng(4)
        for _ in range(200):
            omega = float(rng.uniform(0.001, 0.5))
            eta = float(rng.uniform(0.01, 0.5))
            mu = float(rng.uniform(-2, 2))
            sigma = float(rng.uniform(0.1, 3))
            p_pos = flip_probability_analytic(omega, eta, mu, sigma)
            p_neg = flip_probability_analytic(-omega, eta, -mu, sigma)
            assert p_pos == pytest.approx(p_neg, abs=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            flip_probability_analytic(0.1, 0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            flip_probability_analytic(0.1, 0.1, 0.0, -1.0)
        with pytest.raises(ValueError):
            FlipModelInput(0.1, -0.2, 0.0, 1.0)


class TestMonteCarlo:
    def test_matches_analytic_within_stderr(self):
        cases = [
            (0.05, 0.1, 0.2, 0.5),
            (-0.08, 0.2, -0.4, 1.0),
            (0.0, 0.1, 0.0, 1.0),
            (0.3, 0.05, 2.0, 0.7),
        ]
        for i, (omega, eta, mu, sigma) in enumerate(cases):
            res = flip_probability_montecarlo(
                omega, eta, mu, sigma, samples=200_000, seed=100 + i
            )
            p = flip_probability_analytic(omega, eta, mu, sigma)
            assert abs(res.estimate - p) <= 4 * res.stderr
            assert res.samples == 200_000
            assert res.flips == round(res.estimate * res.samples)

    def test_extreme_probability_has_positive_stderr(self):
        # far tail: expect zero observed flips, stderr must not collapse
        res = flip_probability_montecarlo(0.5, 0.01, 0.0, 1.0, samples=10_000, seed=1)
        assert res.flips == 0
        assert res.stderr > 0.0

    def test_stderr_formula(self):
        res = flip_probability_montecarlo(0.05, 0.1, 0.2, 0.5, samples=50_000, seed=2)
        p_adj = (res.flips + 2.0) / (res.samples + 4.0)
        assert res.stderr == pytest.approx(
            math.sqrt(p_adj * (1.0 - p_adj) / res.samples), rel=1e-12
        )

    def test_seed_reproducible(self):
        a = flip_probability_montecarlo(0.05, 0.1, 0.2, 0.5, samples=20_000, seed=9)
        b = flip_probability_montecarlo(0.05, 0.1, 0.2, 0.5, samples=20_000, seed=9)
        assert a == b

    def test_sample_floor(self):
        with pytest.raises(ValueError):
            flip_probability_montecarlo(0.05, 0.1, 0.2, 0.5, samples=100)


class TestMonotonicity:
    def test_analytic_model_passes(self):
        mu_grid = np.linspace(-1.5, 1.5, 13)
        sigma_grid = np.linspace(0.2, 2.0, 10)
        for omega in (-0.2, 0.0, 0.15):
            rep = monotonicity_check(omega, 0.1, mu_grid, sigma_grid)
            assert rep.ok, rep.violations
            assert rep.checked_mu_pairs > 0
            assert rep.checked_sigma_pairs > 0

    def test_direction_along_mu(self):
        # positive weight: raising the gradient mean raises the flip chance
        p1 = flip_probability_analytic(0.1, 0.1, 0.0, 1.0)
        p2 = flip_probability_analytic(0.1, 0.1, 0.5, 1.0)
        assert p2 > p1
        # negative weight: the same change lowers it
        q1 = flip_probability_analytic(-0.1, 0.1, 0.0, 1.0)
        q2 = flip_probability_analytic(-0.1, 0.1, 0.5, 1.0)
        assert q2 < q1

    def test_direction_along_sigma(self):
        # p < 1/2 regime: more gradient noise means more flips
        lo = flip_probability_analytic(0.3, 0.1, 0.5, 0.5)
        hi = flip_probability_analytic(0.3, 0.1, 0.5, 1.5)
        assert lo < 0.5 and lo < hi
        # p > 1/2 regime: more noise pulls the probability back toward 1/2
        lo = flip_probability_analytic(0.02, 0.1, 1.5, 0.5)
        hi = flip_probability_analytic(0.02, 0.1, 1.5, 1.5)
        assert lo > 0.5 and lo > hi


class TestSignTelemetry:
    def test_flip_ratio_matches_direct_count(self, rng):
        for _ in range(20):
            sizes = rng.integers(1, 40, size=3)
            w0 = {f"l{i}": rng.standard_normal(s) for i, s in enumerate(sizes)}
            w1 = {k: v + 0.8 * rng.standard_normal(v.shape) for k, v in w0.items()}
            a = take_sign_snapshot(0, w0)
            b = take_sign_snapshot(1, w1)
            direct = sum(
                int(((w0[k] >= 0) != (w1[k] >= 0)).sum()) for k in w0
            ) / sum(v.size for v in w0.values())
            assert flip_ratio(a, b) == pytest.approx(direct, abs=1e-15)

    def test_zero_counts_positive_sign(self):
        a = take_sign_snapshot(0, {"w": np.array([0.0, -1.0])})
        b = take_sign_snapshot(1, {"w": np.array([1.0, -2.0])})
        assert flip_ratio(a, b) == 0.0

    def test_identical_snapshots(self):
        w = {"w": np.array([0.5, -0.5, 0.25])}
        assert flip_ratio(take_sign_snapshot(0, w), take_sign_snapshot(1, w)) == 0.0

    def test_mismatched_layers_raise(self):
        a = take_sign_snapshot(0, {"w": np.ones(3)})
        b = take_sign_snapshot(1, {"v": np.ones(3)})
        with pytest.raises(ShapeError):
            flip_ratio(a, b)

    def test_size_change_raises(self):
        a = take_sign_snapshot(0, {"w": np.ones(3)})
        b = take_sign_snapshot(1, {"w": np.ones(4)})
        with pytest.raises(ShapeError):
            flip_ratio(a, b)


class TestGradientStats:
    def test_merge_matches_pooled(self, rng):
        for _ in range(30):
            parts = [rng.standard_normal(int(rng.integers(1, 200))) for _ in range(4)]
            st = GradientStats()
            for p in parts:
                st.update(p)
            pooled = np.concatenate(parts)
            assert st.count == pooled.size
            assert st.mean == pytest.approx(float(pooled.mean()), abs=1e-10)
            assert st.variance == pytest.approx(float(pooled.var()), abs=1e-10)

    def test_merge_is_associative_enough(self, rng):
        xs = rng.standard_normal(100)
        a = GradientStats()
        a.update(xs[:30])
        b = GradientStats()
        b.update(xs[30:])
        m = a.merge(b)
        assert m.mean == pytest.approx(float(xs.mean()), abs=1e-12)
        assert m.variance == pytest.approx(float(xs.var()), abs=1e-12)

    def test_empty_update_is_noop(self):
        st = GradientStats()
        st.update(np.array([]))
        assert st.count == 0 and st.variance == 0.0

    def test_collect_per_timestep(self, rng):
        g = rng.standard_normal((3, 5, 4))
        stats = collect_gradient_stats(g)
        assert len(stats) == 3
        for t, st in enumerate(stats):
            assert st.mean == pytest.approx(float(g[t].mean()), abs=1e-12)
            assert st.variance == pytest.approx(float(g[t].var()), abs=1e-12)

    def test_collect_rejects_scalar(self):
        with pytest.raises(ShapeError):
            collect_gradient_stats(np.float64(1.0))
