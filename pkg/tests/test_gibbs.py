import numpy as np
import pytest

from vaxsae.fields import FieldStructure, natural_to_internal
from vaxsae.graph import from_edges, icar_structure
from vaxsae.inference import FitConfig, fit, latent_full_conditional, run_chain
from vaxsae.inference.gibbs import Problem
from vaxsae.model import ModelState, SurveyData
from vaxsae.simulate import draw_field, simulate_geography, simulate_survey

from oracles import constrained_covariance


def _toy_data(graph, T=1, per=20, seed=0):
    rng = np.random.default_rng(seed)
    n = graph.n_units
    cell = np.repeat(np.arange(n * T), per)
    lga, time = cell % n, cell // n
    dm = rng.integers(0, 3, len(cell))
    hc = rng.integers(0, 3, len(cell))
    y = rng.integers(0, 2, len(cell))
    return SurveyData(lga, time, dm, hc, {"y": y}, n, tuple(range(T)))


def test_config_roundtrip_and_hash():
    c = FitConfig(chains=2, fixed_theta=np.zeros((4, 2)))
    c2 = FitConfig.from_dict(c.to_dict())
    assert c2 == c and c2.hash() == c.hash()
    assert FitConfig(seed=1).hash() != FitConfig(seed=2).hash()
    with pytest.raises(ValueError):
        FitConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        FitConfig(intercept="global")
    with pytest.raises(ValueError):
        FitConfig(fixed_theta=np.zeros(3))


def test_full_conditional_no_data(path3):
    data = SurveyData.empty(3, (0,))
    p = Problem(data, path3, "bcg")
    s = ModelState.zeros(3, 1)
    Q0 = np.eye(3)
    Q, b = latent_full_conditional(0, s, p, Q0, omega_g=np.zeros(0))
    np.testing.assert_array_equal(Q, Q0)
    np.testing.assert_array_equal(b, 0)


def test_full_conditional_rank_one(path3):
    z = np.zeros(1, dtype=np.int64)
    data = SurveyData(np.array([1]), z, np.array([1]), z, {"y": np.array([1])}, 3, (0,))
    p = Problem(data, path3, "y")
    s = ModelState.zeros(3, 1, 1)
    Q, b = latent_full_conditional(0, s, p, np.eye(3), omega_g=np.ones(1))
    np.testing.assert_array_equal(np.diag(Q), [1, 2, 1])
    np.testing.assert_allclose(b, [0, 0.5, 0])


def test_full_conditional_dense_oracle(path3):
    rng = np.random.default_rng(8)
    data = _toy_data(path3, per=15, seed=3)
    p = Problem(data, path3, "y")
    s = ModelState(rng.standard_normal((3, 1)), rng.standard_normal((4, 3, 1)), np.zeros((4, 2)),
                   rng.uniform(0.1, 0.3, data.n_records))
    fs = FieldStructure(icar_structure(path3), 1)
    tau = 1.7
    Qp = tau * fs.structure(0.0)
    k = 2
    Q, b = latent_full_conditional(k, s, p, Qp + tau * fs.A.T @ fs.A)
    # dense record-level assembly
    X = np.zeros((data.n_records, 3))
    delta = np.column_stack([data.dm_class == 1, data.dm_class == 2, data.hc_class == 1, data.hc_class == 2])
    X[np.arange(data.n_records), data.lga] = delta[:, k]
    eta = s.alpha[data.lga, 0] + sum(s.gamma[j, data.lga, 0] * delta[:, j] for j in range(4))
    eta_rest = eta - s.gamma[k, data.lga, 0] * delta[:, k]
    Qd = Qp + X.T @ np.diag(s.omega) @ X
    bd = X.T @ (data.y["y"] - 0.5 - s.omega * eta_rest)
    np.testing.assert_allclose(Q - tau * fs.A.T @ fs.A, Qd, atol=1e-12)
    np.testing.assert_allclose(b, bd, atol=1e-12)
    # constrained mean from the dense formula
    C = constrained_covariance(Qd, fs.A)
    from vaxsae.fields import ConstrainedGaussian

    m = ConstrainedGaussian(Q, b=b, A=fs.A).conditional_mean()
    m_ref = C @ bd
    np.testing.assert_allclose(m, m_ref, atol=1e-8)


def test_zero_information_reproduces_prior():
    g = simulate_geography(6, 2, np.random.default_rng(0))
    T = 3
    data = SurveyData.empty(6, tuple(range(T)))
    rho, tau = 0.6, 2.0
    th = np.tile(natural_to_internal(rho, tau), (4, 1))
    d = fit(data, g, FitConfig(chains=2, warmup=50, draws=1500, seed=3, fixed_theta=th), "bcg")
    post_sd = d.flat("gamma")[:, 0].std(axis=0)
    fs = FieldStructure(icar_structure(g), T)
    rng = np.random.default_rng(1)
    prior = np.array([draw_field(fs, rho, tau, rng) for _ in range(3000)])
    np.testing.assert_allclose(post_sd, prior.std(axis=0), rtol=0.1)


def test_determinism_and_chain_independence():
    rng = np.random.default_rng(5)
    g = simulate_geography(8, 2, rng)
    data, _ = simulate_survey(g, 2, children_per_cell=10, rng=rng)
    cfg = FitConfig(chains=2, warmup=20, draws=20, seed=7)
    a = fit(data, g, cfg, "bcg")
    b = fit(data, g, cfg, "bcg")
    for name in ("alpha", "gamma", "theta"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert not np.array_equal(a.gamma[0], a.gamma[1])
    c = fit(data, g, FitConfig(chains=2, warmup=20, draws=20, seed=8), "bcg")
    assert not np.array_equal(a.gamma, c.gamma)


def test_constraints_hold_in_draws():
    rng = np.random.default_rng(6)
    g = simulate_geography(9, 3, rng)
    data, _ = simulate_survey(g, 2, children_per_cell=8, rng=rng)
    d = fit(data, g, FitConfig(chains=2, warmup=10, draws=10, seed=1), "dpt_complete")
    assert np.abs(d.gamma.sum(axis=3)).max() < 1e-8
    assert d.alpha.shape == (2, 10, 9, 2) and d.theta.shape == (2, 10, 4, 2)
    assert "max_rhat" in d.meta and "converged" in d.meta


def test_year_intercept_mode():
    rng = np.random.default_rng(7)
    g = simulate_geography(6, 2, rng)
    data, _ = simulate_survey(g, 2, children_per_cell=8, rng=rng)
    d = fit(data, g, FitConfig(chains=2, warmup=10, draws=10, intercept="year"), "bcg")
    assert np.ptp(d.alpha, axis=2).max() == 0


def test_run_chain_with_init(path3):
    data = _toy_data(path3)
    init = ModelState.zeros(3, 1, data.n_records)
    cfg = FitConfig(chains=1, warmup=0, draws=5)
    r = run_chain(data, path3, cfg, "y", np.random.default_rng(0), init)
    assert r.gamma.shape == (5, 4, 3, 1)


def test_island_graph_runs():
    g = from_edges("ABCD", [("A", "B"), ("B", "C")], "ssss")
    data = _toy_data(g, T=2, per=10)
    for mode in ("independent", "pin"):
        d = fit(data, g, FitConfig(chains=2, warmup=10, draws=10, islands=mode), "y")
        if mode == "pin":
            assert np.all(d.gamma[:, :, :, 3] == 0) or np.abs(d.gamma[:, :, :, 3]).max() < 1e-8
        else:
            assert np.abs(d.gamma[:, :, :, 3]).max() > 0


def test_parameter_table_names():
    rng = np.random.default_rng(2)
    g = simulate_geography(4, 1, rng)
    data, _ = simulate_survey(g, 2, children_per_cell=5, rng=rng)
    d = fit(data, g, FitConfig(chains=2, warmup=4, draws=6), "bcg", diagnose=False)
    tab = d.parameter_table()
    assert "rho_m_d" in tab and "tau_h_hc" in tab and "gamma_m_hc[3,2008]" in tab
    assert all(v.shape == (2, 6) for v in tab.values())


@pytest.mark.slow
def test_acceptance_rate_in_band():
    rng = np.random.default_rng(11)
    g = simulate_geography(20, 2, rng)
    data, _ = simulate_survey(g, 3, children_per_cell=30, rng=rng)
    d = fit(data, g, FitConfig(chains=2, warmup=400, draws=300, seed=2), "dpt_complete")
    acc = np.asarray(d.meta["accept_rate"])
    assert np.all((acc > 0.1) & (acc < 0.7))


def test_conditional_stable_near_unit_rho():
    from vaxsae.fields import log1m_rho2
    from vaxsae.inference.gibbs import THETA2_MAX, _Sampler

    rng = np.random.default_rng(4)
    g = simulate_geography(6, 2, rng)
    data, _ = simulate_survey(g, 3, children_per_cell=5, rng=rng)
    s = _Sampler(Problem(data, g, "bcg"), FitConfig(), rng)
    n = s.p.n_cells
    lms = []
    for th2 in (THETA2_MAX - 1, THETA2_MAX):
        cg, lm = s._conditional(np.array([0.0, th2]), np.full(n, 0.5), np.zeros(n))
        assert np.isfinite(lm) and np.all(np.isfinite(cg.sample(rng)))
        lms.append(lm)
    # the naive 1 - rho^2 has lost several digits at this theta2
    rho = np.tanh(THETA2_MAX / 2)
    assert abs(np.log1p(-rho * rho) - log1m_rho2(THETA2_MAX)) > 1e-5
    assert np.all(np.isfinite(lms))


def test_weak_data_two_waves_does_not_crash():
    # few children and two waves leave rho free to run towards 1
    rng = np.random.default_rng(3)
    g = simulate_geography(16, 4, rng)
    data, _ = simulate_survey(g, 2, children_per_cell=20, rng=rng)
    d = fit(data, g, FitConfig(chains=1, warmup=300, draws=300, seed=1), "zero_dose")
    assert np.all(np.abs(d.theta[..., 1]) <= 30.0)
