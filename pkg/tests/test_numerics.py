import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowinv.errors import InvalidArgumentError
from flowinv.numerics import (
    GradCheckReport,
    RngStream,
    energy_distance,
    finite_diff_check,
    gaussian_sample,
    sinusoidal_embedding,
)


class TestRngStream:
    def test_same_seed_same_draws(self):
        a = RngStream(42).normal((5,))
        b = RngStream(42).normal((5,))
        np.testing.assert_array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(RngStream(1).normal((5,)), RngStream(2).normal((5,)))

    def test_split_streams_are_deterministic(self):
        kids1 = RngStream(7).split(3)
        kids2 = RngStream(7).split(3)
        for a, b in zip(kids1, kids2):
            np.testing.assert_array_equal(a.normal((4,)), b.normal((4,)))

    def test_split_independent_of_parent_consumption(self):
        # child streams are keyed by spawn index, not by parent state
        r1 = RngStream(3)
        r1.normal((100,))
        c1 = r1.split(1)[0]
        r2 = RngStream(3)
        c2 = r2.split(1)[0]
        np.testing.assert_array_equal(c1.normal((8,)), c2.normal((8,)))

    def test_sequential_splits_do_not_repeat(self):
        r = RngStream(5)
        a = r.split(2)
        b = r.split(2)
        draws = [s.normal((4,)) for s in a + b]
        for i in range(len(draws)):
            for j in range(i + 1, len(draws)):
                assert not np.array_equal(draws[i], draws[j])

    def test_integers_range(self):
        vals = RngStream(0).integers(1, 5, (1000,))
        assert vals.min() >= 1 and vals.max() <= 4


class TestGaussianSample:
    def test_shape_and_dtype(self):
        x = gaussian_sample(RngStream(0), (3, 4))
        assert x.shape == (3, 4) and x.dtype == np.float64

    def test_moments(self):
        x = gaussian_sample(RngStream(1), (200000,))
        assert abs(x.mean()) < 0.01
        assert abs(x.std() - 1.0) < 0.01

    @pytest.mark.parametrize("shape", [(), (0,), (2, -1)])
    def test_bad_shapes_rejected(self, shape):
        with pytest.raises(InvalidArgumentError):
            gaussian_sample(RngStream(0), shape)


class TestFiniteDiffCheck:
    def test_quadratic_exact_gradient(self):
        a = np.array([2.0, -1.0, 0.5])

        def loss(p):
            return float(np.sum(a * p**2)), 2.0 * a * p

        rep = finite_diff_check(loss, np.array([1.0, 2.0, 3.0]))
        assert isinstance(rep, GradCheckReport)
        assert rep.max_relative_error < 1e-8
        assert rep.per_parameter_errors.shape == (3,)

    def test_wrong_gradient_detected(self):
        # analytic gradient scaled by 2: relative error (|2g - g|)/|2g| = 0.5
        def loss(p):
            return float(np.sum(p**2)), 4.0 * p

        rep = finite_diff_check(loss, np.array([1.0, -2.0]))
        assert rep.max_relative_error == pytest.approx(0.5, abs=1e-6)

    def test_worst_index_reported(self):
        def loss(p):
            g = 2.0 * p
            g[1] *= 3.0  # corrupt one coordinate
            return float(np.sum(p**2)), g

        rep = finite_diff_check(loss, np.array([1.0, 1.0, 1.0]))
        assert rep.worst_parameter_index == 1

    def test_bad_step_rejected(self):
        with pytest.raises(InvalidArgumentError):
            finite_diff_check(lambda p: (0.0, p), np.zeros(2), step=0.0)


class TestEnergyDistance:
    def test_identical_sets_zero(self):
        x = RngStream(0).normal((50, 3))
        assert energy_distance(x, x) == pytest.approx(0.0, abs=1e-12)

    def test_exact_symmetry(self):
        rng = RngStream(1)
        a = rng.normal((40, 2))
        b = rng.normal((60, 2)) + 1.0
        assert energy_distance(a, b) == energy_distance(b, a)

    def test_separated_sets_positive(self):
        rng = RngStream(2)
        a = rng.normal((100, 2))
        b = rng.normal((100, 2)) + 5.0
        assert energy_distance(a, b) > 1.0

    def test_matches_quadratic_definition(self):
        # brute-force O(n^2) double loop as the independent oracle
        rng = RngStream(3)
        a = rng.normal((15, 2))
        b = rng.normal((20, 2)) + 0.5

        def mean_dist(u, v):
            return np.mean([np.linalg.norm(x - y) for x in u for y in v])

        expected = 2 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b)
        assert energy_distance(a, b) == pytest.approx(expected, rel=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            energy_distance(np.zeros((5, 2)), np.zeros((5, 3)))

    def test_too_few_samples(self):
        with pytest.raises(InvalidArgumentError):
            energy_distance(np.zeros((1, 2)), np.zeros((5, 2)))

    @settings(max_examples=25, deadline=None)
    @given(
        seed=st.integers(0, 10**6),
        na=st.integers(2, 30),
        nb=st.integers(2, 30),
        shiftx=st.floats(-3, 3),
    )
    def test_nonnegative_and_symmetric(self, seed, na, nb, shiftx):
        rng = RngStream(seed)
        a = rng.normal((na, 2))
        b = rng.normal((nb, 2)) + shiftx
        d = energy_distance(a, b)
        assert d >= -1e-10
        assert d == energy_distance(b, a)


class TestSinusoidalEmbedding:
    def test_shape(self):
        e = sinusoidal_embedding(np.array([0.1, 0.5]), 16)
        assert e.shape == (2, 16)

    def test_values_at_zero(self):
        e = sinusoidal_embedding(np.array([0.0]), 8)
        np.testing.assert_allclose(e[0, :4], 0.0)
        np.testing.assert_allclose(e[0, 4:], 1.0)

    def test_odd_dim_rejected(self):
        with pytest.raises(InvalidArgumentError):
            sinusoidal_embedding(np.array([0.5]), 7)

    def test_distinguishes_times(self):
        e = sinusoidal_embedding(np.array([0.2, 0.8]), 16)
        assert np.linalg.norm(e[0] - e[1]) > 0.1
