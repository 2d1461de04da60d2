import numpy as np
import pytest
from scipy import stats

from vaxsae.inference.polya_gamma import pg_mean, sample_polya_gamma


def _pg_var(c):
    # Var PG(1, c) = (sinh c - c) / (4 c^3 cosh^2(c/2)), limit 1/24 at 0
    c = abs(c)
    if c < 1e-4:
        return 1 / 24
    return (np.sinh(c) - c) / (4 * c**3 * np.cosh(c / 2) ** 2)


@pytest.mark.parametrize("c", [0.0, 1.0, 3.0, -2.5, 12.0])
def test_mean_within_3se(c):
    rng = np.random.default_rng(42)
    x = sample_polya_gamma(1, np.full(50000, c), rng)
    se = np.sqrt(_pg_var(c) / x.size)
    assert abs(x.mean() - pg_mean(1, c)) < 3 * se
    assert x.var() == pytest.approx(_pg_var(c), rel=0.05)


def test_symmetry_ks():
    rng = np.random.default_rng(3)
    a = sample_polya_gamma(1, np.full(10000, 1.7), rng)
    b = sample_polya_gamma(1, np.full(10000, -1.7), rng)
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_b_sums():
    rng = np.random.default_rng(4)
    x = sample_polya_gamma(np.full(20000, 3), 0.5, rng)
    assert abs(x.mean() - pg_mean(3, 0.5)) < 3 * np.sqrt(3 * _pg_var(0.5) / 20000)


def test_shapes_and_scalars(rng):
    assert isinstance(sample_polya_gamma(1, 0.3, rng), float)
    assert sample_polya_gamma(1, np.zeros((2, 3)), rng).shape == (2, 3)
    assert np.all(sample_polya_gamma(1, np.linspace(-50, 50, 101), rng) > 0)


def test_invalid_b(rng):
    with pytest.raises(ValueError):
        sample_polya_gamma(0, 1.0, rng)
    with pytest.raises(ValueError):
        sample_polya_gamma(1.5, 1.0, rng)


def test_pg_mean_limit():
    assert pg_mean(1, 0.0) == pytest.approx(0.25)
    assert pg_mean(1, 1.0) == pytest.approx(np.tanh(0.5) / 2)
    assert pg_mean(2, 1e-9) == pytest.approx(0.5)


def test_deterministic():
    a = sample_polya_gamma(1, np.linspace(-3, 3, 50), np.random.default_rng(9))
    b = sample_polya_gamma(1, np.linspace(-3, 3, 50), np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_extreme_tilt_no_overflow():
    import warnings

    from vaxsae.inference.polya_gamma import _prob_exponential_piece

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        p = _prob_exponential_piece(np.array([0.0, 1.0, 60.0, 500.0]))
        x = sample_polya_gamma(np.ones(3, dtype=int), np.array([200.0, 1000.0, -1000.0]), np.random.default_rng(0))
    assert np.all((p >= 0) & (p <= 1)) and p[-1] == 0.0
    # PG(1, c) concentrates at tanh(c/2) / (2c) for large c
    np.testing.assert_allclose(x, [1 / 400, 1 / 2000, 1 / 2000], rtol=0.5)
