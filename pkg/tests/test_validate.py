import numpy as np
import pandas as pd
import pytest

from vaxsae.graph import from_edges
from vaxsae.inference import PosteriorDraws
from vaxsae.model import SurveyData
from vaxsae.validate import (
    SBCConfig,
    ValidationError,
    correlation_table,
    coverage_correlation,
    empirical_prevalence,
    run_sbc,
    state_aggregate,
    validation_table,
)


@pytest.fixture
def g4():
    return from_edges("ABCD", [("A", "B"), ("C", "D")], {"A": "s1", "B": "s1", "C": "s2", "D": "s3"})


def test_state_aggregate_mean(g4):
    out = state_aggregate(np.array([0.2, 0.4, 0.7, 0.1]), g4)
    assert out.set_index("state")["p_hat"].to_dict() == pytest.approx({"s1": 0.3, "s2": 0.7, "s3": 0.1})


def test_state_aggregate_permutation():
    g1 = from_edges("AB", [], {"A": "s", "B": "s"})
    g2 = from_edges("BA", [], {"A": "s", "B": "s"})
    a = state_aggregate(np.array([[0.1], [0.5]]), g1)
    b = state_aggregate(np.array([[0.5], [0.1]]), g2)
    assert a["p_hat"].item() == pytest.approx(b["p_hat"].item())


def test_state_aggregate_missing(g4):
    with pytest.raises(ValidationError, match="B"):
        state_aggregate(np.array([0.2, np.nan, 0.7, 0.1]), g4)


def test_aggregation_commutes_with_mean(g4):
    draws = np.random.default_rng(0).uniform(size=(50, 4, 2))
    a = state_aggregate(draws.mean(axis=0), g4)["p_hat"].to_numpy()
    per_draw = np.stack([state_aggregate(d, g4)["p_hat"].to_numpy() for d in draws])
    np.testing.assert_allclose(a, per_draw.mean(axis=0), atol=1e-14)


def _data(lga, y, time=None, n=4, T=1):
    lga = np.asarray(lga)
    z = np.zeros(len(lga), dtype=np.int64)
    time = z if time is None else np.asarray(time)
    return SurveyData(lga, time, z, z, {"v": np.asarray(y)}, n, tuple(range(T)))


def test_empirical_prevalence_pooled(g4):
    lga = [0] * 10 + [1] * 10
    y = [1] * 3 + [0] * 7 + [1] * 5 + [0] * 5
    e = empirical_prevalence(_data(lga, y), g4, "v").set_index("state")
    assert e.loc["s1", "e_hat"] == pytest.approx(0.4)
    assert e.loc["s1", "n"] == 20
    assert np.isnan(e.loc["s2", "e_hat"]) and e.loc["s2", "n"] == 0


def test_empirical_all_vaccinated(g4):
    e = empirical_prevalence(_data([2, 2, 2], [1, 1, 1]), g4, "v").set_index("state")
    assert e.loc["s2", "e_hat"] == 1.0


def test_correlation_examples():
    e = np.array([0.2, 0.5, 0.4, 0.9])
    assert coverage_correlation(e, e) == pytest.approx(1.0)
    assert coverage_correlation(1 - e, e) == pytest.approx(-1.0)
    assert coverage_correlation(3 * e + 1, 2 * e - 5) == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        coverage_correlation([0.5, 0.5, 0.5], [0.1, 0.2, 0.3])
    with pytest.raises(ValidationError):
        coverage_correlation([0.1, 0.2], [0.1, 0.2])
    # missing pairs are dropped
    assert coverage_correlation([0.1, 0.2, np.nan, 0.4], [0.1, 0.2, 0.3, 0.4]) == pytest.approx(1.0)


def test_affine_invariance():
    rng = np.random.default_rng(1)
    p, e = rng.uniform(size=10), rng.uniform(size=10)
    assert coverage_correlation(p, e) == pytest.approx(coverage_correlation(2 * p + 0.1, 2 * e + 0.1))


def test_validation_and_correlation_tables(g4):
    rng = np.random.default_rng(2)
    C, S, n, T = 1, 5, 4, 2
    draws = PosteriorDraws(rng.normal(0, 1, (C, S, n, T)), np.zeros((C, S, 4, n, T)),
                           np.zeros((C, S, 4, 2)), {"years": [0, 1]})
    lga = np.repeat(np.arange(4), 20)
    time = np.tile(np.repeat([0, 1], 10), 4)
    data = _data(lga, rng.integers(0, 2, 80), time, T=2)
    val = validation_table(draws, data, g4, "v")
    assert list(val.columns) == ["state", "year", "vaccine", "p_hat", "e_hat", "n"]
    assert len(val) == 6
    corr = correlation_table(val)
    assert set(corr["year"]) == {"all", 0, 1}
    assert corr.loc[corr.year == "all", "n_pairs"].item() == 6


def test_sbc_zero_replications():
    with pytest.raises(ValidationError):
        run_sbc(SBCConfig(replications=0))
    with pytest.raises(ValidationError):
        SBCConfig(draws=100, bins=10)


def test_sbc_small_run_shapes():
    r = run_sbc(SBCConfig(replications=3, warmup=20, draws=19, thin=1, bins=5))
    assert len(r.ranks) == 5
    for v in r.ranks.values():
        assert v.shape == (3,) and v.min() >= 0 and v.max() <= 19
    assert all(h.sum() == 3 for h in r.histograms.values())
    assert isinstance(r.passed(), bool)
