"""State-level adequacy check and simulation-based calibration.

The adequacy check predicts coverage per LGA, averages it over the LGAs of
each state and compares the result with the pooled share of vaccinated
children in that state. Calibration draws truths from the prior, fits each
replicate and tests the ranks of the truths among the posterior draws for
uniformity.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import chisquare

from .fields import FieldStructure, HyperPrior, internal_to_natural, sample_hyperprior
from .graph import AdjacencyGraph, icar_structure
from .inference.gibbs import FitConfig, PosteriorDraws, fit
from .inference.summaries import cell_prevalence, profile_weights
from .model import FIELDS, ModelState, SurveyData, inverse_logit, linear_predictor, build_design
from .simulate import DM_PROPORTIONS, HC_PROPORTIONS, draw_field, simulate_classes, simulate_geography

logger = logging.getLogger(__name__)


class ValidationError(ValueError):
    pass


# ------------------------------------------------------------ aggregation


def state_aggregate(pi_hat: np.ndarray, graph: AdjacencyGraph, years=None) -> pd.DataFrame:
    """Unweighted mean of per-LGA coverage over the LGAs of each state.

    ``pi_hat`` is ``(n, T)``. Any missing (NaN) prediction is an error.
    """
    pi_hat = np.asarray(pi_hat, dtype=float)
    if pi_hat.ndim == 1:
        pi_hat = pi_hat[:, None]
    if pi_hat.shape[0] != graph.n_units:
        raise ValidationError("pi_hat must have one row per unit")
    if np.isnan(pi_hat).any():
        bad = sorted({graph.unit_ids[j] for j in np.flatnonzero(np.isnan(pi_hat).any(axis=1))})
        raise ValidationError(f"missing prediction for LGA(s) {', '.join(bad)}")
    T = pi_hat.shape[1]
    years = tuple(years) if years is not None else tuple(range(T))
    rows = []
    for s, members in graph.state_members().items():
        means = pi_hat[list(members)].mean(axis=0)
        rows.extend((s, years[t], float(means[t])) for t in range(T))
    return pd.DataFrame(rows, columns=["state", "year", "p_hat"])


def empirical_prevalence(data: SurveyData, graph: AdjacencyGraph, vaccine: str) -> pd.DataFrame:
    """Pooled share vaccinated per state and wave.

    State-waves without children get ``e_hat = NaN`` and ``n = 0``.
    """
    y = data.outcome(vaccine)
    state_idx = {s: i for i, s in enumerate(graph.states)}
    st = np.array([state_idx[graph.state_of[j]] for j in range(graph.n_units)], dtype=np.int64)
    S, T = len(state_idx), data.T
    key = st[data.lga] * T + data.time
    n = np.bincount(key, minlength=S * T)
    k = np.bincount(key, weights=y, minlength=S * T)
    with np.errstate(invalid="ignore", divide="ignore"):
        e = np.where(n > 0, k / np.maximum(n, 1), np.nan)
    rows = [(s, data.years[t], float(e[i * T + t]), int(n[i * T + t]))
            for s, i in state_idx.items() for t in range(T)]
    return pd.DataFrame(rows, columns=["state", "year", "e_hat", "n"])


def coverage_correlation(p_hat, e_hat) -> float:
    """Pearson correlation of aligned predicted and empirical prevalence.

    Pairs with a missing value in either vector are dropped first.
    """
    p = np.asarray(p_hat, dtype=float)
    e = np.asarray(e_hat, dtype=float)
    if p.shape != e.shape:
        raise ValidationError("p_hat and e_hat must be aligned")
    ok = ~(np.isnan(p) | np.isnan(e))
    p, e = p[ok], e[ok]
    if p.size < 3:
        raise ValidationError("need at least 3 non-missing pairs")
    if np.ptp(p) == 0 or np.ptp(e) == 0:
        raise ValidationError("zero variance in one of the vectors")
    return float(np.corrcoef(p, e)[0, 1])


def validation_table(draws: PosteriorDraws, data: SurveyData, graph: AdjacencyGraph,
                     vaccine: str) -> pd.DataFrame:
    """Predicted against empirical state prevalence for one fitted vaccine.

    LGA coverage mixes the profile coverages with the cell's observed
    empowerment mix (wave mix where a cell has no records).
    """
    pi_mean, _ = cell_prevalence(draws, profile_weights(data))
    agg = state_aggregate(pi_mean, graph, data.years)
    emp = empirical_prevalence(data, graph, vaccine)
    out = agg.merge(emp, on=["state", "year"], how="left")
    out.insert(2, "vaccine", vaccine)
    return out[["state", "year", "vaccine", "p_hat", "e_hat", "n"]]


def correlation_table(validation: pd.DataFrame) -> pd.DataFrame:
    """Pearson r per vaccine, pooled over waves and per wave.

    Groups where r is undefined (fewer than 3 pairs or no variance) get NaN.
    """
    rows = []
    for vaccine, g in validation.groupby("vaccine", sort=False):
        groups = [("all", g)] + [(y, gy) for y, gy in g.groupby("year", sort=False)]
        for year, gy in groups:
            ok = gy["e_hat"].notna()
            try:
                r = coverage_correlation(gy["p_hat"], gy["e_hat"])
            except ValidationError:
                r = float("nan")
            rows.append((vaccine, year, r, int(ok.sum())))
    return pd.DataFrame(rows, columns=["vaccine", "year", "r", "n_pairs"])


# ---------------------------------------------------------- calibration


def _sbc_prior() -> HyperPrior:
    return HyperPrior(log_tau_shape=3.0, log_tau_rate=3.0, theta2_mean=0.0, theta2_sd=1.0)


@dataclass(frozen=True)
class SBCConfig:
    """Settings of a calibration run.

    The hyperprior and intercept variance are proper and moderate so that
    prior draws give data sets of sensible size; the fit uses the same
    values.
    """

    replications: int = 200
    n_units: int = 9
    n_states: int = 3
    waves: int = 2
    children_per_cell: int = 30
    warmup: int = 200
    draws: int = 99
    thin: int = 4
    sigma2_alpha: float = 1.0
    prior: HyperPrior = field(default_factory=_sbc_prior)
    monitor_field: int = 0
    n_cells: int = 3
    bins: int = 10
    update_omega: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ValidationError("replications must be at least 1")
        if (self.draws + 1) % self.bins:
            raise ValidationError("bins must divide draws + 1")


@dataclass
class SBCReport:
    """Ranks of the truth (0..draws) per monitored parameter and replication."""

    ranks: dict[str, np.ndarray]
    pvalues: dict[str, float]
    histograms: dict[str, np.ndarray]
    config: SBCConfig

    @property
    def min_pvalue(self) -> float:
        return min(self.pvalues.values())

    def passed(self, alpha: float = 0.01) -> bool:
        return all(p > alpha for p in self.pvalues.values())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.ranks)


def _sbc_replicate(graph: AdjacencyGraph, structure: FieldStructure, cfg: SBCConfig,
                   cells: np.ndarray, ss: np.random.SeedSequence) -> dict[str, int]:
    sim_ss, fit_ss = ss.spawn(2)
    rng = np.random.default_rng(sim_ss)
    n, T = graph.n_units, cfg.waves
    theta1, theta2 = sample_hyperprior(cfg.prior, rng, 4)
    rho, tau = internal_to_natural(theta1, theta2)
    alpha = np.sqrt(cfg.sigma2_alpha) * rng.standard_normal((n, T))
    gamma = np.stack([draw_field(structure, rho[k], tau[k], rng) for k in range(4)])
    state = ModelState(alpha, gamma, np.column_stack([theta1, theta2]))

    cell = np.repeat(np.arange(n * T), cfg.children_per_cell)
    lga, time = cell % n, cell // n
    dm = simulate_classes(len(cell), DM_PROPORTIONS, rng)
    hc = simulate_classes(len(cell), HC_PROPORTIONS, rng)
    eta = linear_predictor(state, lga, time, build_design(dm, hc))
    y = (rng.random(len(cell)) < inverse_logit(eta)).astype(np.int64)
    data = SurveyData(lga, time, dm, hc, {"y": y}, n, tuple(range(T)))

    fc = FitConfig(chains=1, warmup=cfg.warmup, draws=cfg.draws, thin=cfg.thin,
                   seed=int(fit_ss.generate_state(1)[0]), sigma2_alpha=cfg.sigma2_alpha,
                   prior=cfg.prior, update_omega=cfg.update_omega)
    post = fit(data, graph, fc, "y", diagnose=False)
    k = cfg.monitor_field
    name = FIELDS[k]
    out = {
        f"rho_{name}": int(np.sum(post.rho[0, :, k] < rho[k])),
        f"tau_{name}": int(np.sum(post.tau[0, :, k] < tau[k])),
    }
    for c in cells:
        j, t = c % n, c // n
        out[f"gamma_{name}[{j},{t}]"] = int(np.sum(post.gamma[0, :, k, j, t] < gamma[k, j, t]))
    return out


def run_sbc(config: SBCConfig = SBCConfig()) -> SBCReport:
    """Simulation-based calibration on a small random geography.

    Each replication draws hyperparameters, intercepts and fields from the
    prior, simulates one Bernoulli outcome, fits one chain and records the
    rank of every monitored truth among the thinned posterior draws.
    Uniformity of the ranks is tested with a chi-square test on
    ``config.bins`` equal bins.
    """
    if config.replications < 1:
        raise ValidationError("replications must be at least 1")
    root = np.random.SeedSequence(config.seed)
    geo_ss, cell_ss, rep_ss = root.spawn(3)
    graph = simulate_geography(config.n_units, config.n_states, np.random.default_rng(geo_ss))
    structure = FieldStructure(icar_structure(graph), config.waves)
    cells = np.random.default_rng(cell_ss).choice(graph.n_units * config.waves, config.n_cells,
                                                  replace=False)
    ranks: dict[str, list[int]] = {}
    for ss in rep_ss.spawn(config.replications):
        for key, r in _sbc_replicate(graph, structure, config, cells, ss).items():
            ranks.setdefault(key, []).append(r)
    width = (config.draws + 1) // config.bins
    out_ranks, pvals, hists = {}, {}, {}
    for key, r in ranks.items():
        r = np.asarray(r)
        h = np.bincount(r // width, minlength=config.bins)
        out_ranks[key] = r
        hists[key] = h
        pvals[key] = float(chisquare(h).pvalue)
    return SBCReport(out_ranks, pvals, hists, config)


def sbc_config_dict(config: SBCConfig) -> dict:
    d = asdict(config)
    d["prior"] = config.prior.to_dict()
    return d
