"""Synthetic geographies and surveys drawn from the model itself."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import pandas as pd

from .empowerment import DM_ITEMS, HC_ITEMS
from .fields import ConstrainedGaussian, FieldStructure, natural_to_internal
from .graph import AdjacencyGraph, connected_components, from_edges, icar_structure
from .model import FIELDS, PROFILES, VACCINES, ModelState, SurveyData, inverse_logit

SURVEY_WAVES = (2003, 2008, 2013, 2018)
DM_PROPORTIONS = (0.4566, 0.2550, 0.2884)
HC_PROPORTIONS = (0.3092, 0.2828, 0.4080)

# vaccines with their own generative model; the rest are derived
MODELLED = ("bcg", "dpt_complete", "mcv1", "no_dose_given_incomplete", "polio3")


class SimulationError(ValueError):
    pass


def default_years(T: int) -> tuple[int, ...]:
    if T <= len(SURVEY_WAVES):
        return SURVEY_WAVES[:T]
    return SURVEY_WAVES + tuple(SURVEY_WAVES[-1] + 5 * (i + 1) for i in range(T - len(SURVEY_WAVES)))


# ------------------------------------------------------------------ geography


def _grid_shape(n: int) -> tuple[int, int]:
    cols = math.ceil(math.sqrt(n))
    return math.ceil(n / cols), cols


def _is_connected(n: int, nbrs: list[set[int]]) -> bool:
    seen = {0}
    stack = [0]
    while stack:
        i = stack.pop()
        for j in nbrs[i]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    return len(seen) == n


def grid_positions(n_units: int) -> np.ndarray:
    """(row, col) of each unit on the near-square grid."""
    _, cols = _grid_shape(n_units)
    idx = np.arange(n_units)
    return np.column_stack([idx // cols, idx % cols])


def simulate_geography(n_units: int, n_states: int, rng: np.random.Generator,
                       drop_prob: float = 0.15) -> AdjacencyGraph:
    """Rook-adjacency grid with random edge deletions and contiguous states.

    Units fill a near-square grid row by row. Each edge is considered for
    deletion with probability ``drop_prob``; a deletion is kept only if both
    endpoints retain at least two neighbors and the graph stays connected.
    States are grown from random seed units by round-robin breadth-first
    expansion, so each state is contiguous and non-empty.
    """
    if n_states < 1 or n_units < n_states:
        raise SimulationError(f"need n_units >= n_states >= 1, got {n_units}, {n_states}")
    pos = grid_positions(n_units)
    _, cols = _grid_shape(n_units)
    nbrs: list[set[int]] = [set() for _ in range(n_units)]
    edges = []
    for i in range(n_units):
        r, c = pos[i]
        for j in (i + 1 if c + 1 < cols else None, i + cols):
            if j is not None and j < n_units:
                edges.append((i, j))
                nbrs[i].add(j)
                nbrs[j].add(i)
    for e in rng.permutation(len(edges)):
        if rng.random() >= drop_prob:
            continue
        i, j = edges[e]
        if len(nbrs[i]) <= 2 or len(nbrs[j]) <= 2:
            continue
        nbrs[i].discard(j)
        nbrs[j].discard(i)
        if not _is_connected(n_units, nbrs):
            nbrs[i].add(j)
            nbrs[j].add(i)

    state = np.full(n_units, -1)
    seeds = rng.choice(n_units, size=n_states, replace=False)
    frontiers = []
    for s, u in enumerate(seeds):
        state[u] = s
        frontiers.append(deque([int(u)]))
    while (state < 0).any():
        for s in range(n_states):
            q = frontiers[s]
            while q:
                u = q[0]
                free = sorted(j for j in nbrs[u] if state[j] < 0)
                if not free:
                    q.popleft()
                    continue
                j = free[int(rng.integers(len(free)))]
                state[j] = s
                q.append(j)
                break
    width = len(str(n_units))
    sw = len(str(n_states))
    unit_ids = [f"U{i + 1:0{width}d}" for i in range(n_units)]
    states = [f"S{s + 1:0{sw}d}" for s in state]
    pairs = [(unit_ids[i], unit_ids[j]) for i in range(n_units) for j in sorted(nbrs[i]) if i < j]
    return from_edges(unit_ids, pairs, states)


def grid_geojson(graph: AdjacencyGraph) -> dict:
    """Unit squares for a graph built by :func:`simulate_geography`."""
    pos = grid_positions(graph.n_units)
    feats = []
    for i, uid in enumerate(graph.unit_ids):
        r, c = (float(v) for v in pos[i])
        ring = [[c, -r], [c + 1, -r], [c + 1, -r - 1], [c, -r - 1], [c, -r]]
        feats.append({
            "type": "Feature",
            "properties": {"unit": uid, "state": graph.state_of[i]},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    return {"type": "FeatureCollection", "features": feats}


# --------------------------------------------------------------------- survey


@dataclass(frozen=True)
class FieldTruth:
    rho: float = 0.7
    tau: float = 1.0


@dataclass(frozen=True)
class OutcomeTruth:
    """Generating values for one modelled outcome.

    Cell intercepts are ``alpha_mean + alpha_sd * N(0, 1)``.
    """

    alpha_mean: float = 0.5
    alpha_sd: float = 0.5
    fields: tuple[FieldTruth, ...] = (FieldTruth(),) * 4


def _default_outcomes() -> dict[str, OutcomeTruth]:
    return {
        "bcg": OutcomeTruth(alpha_mean=1.2),
        "dpt_complete": OutcomeTruth(alpha_mean=0.3),
        "mcv1": OutcomeTruth(alpha_mean=0.6),
        "no_dose_given_incomplete": OutcomeTruth(alpha_mean=0.0),
        "polio3": OutcomeTruth(alpha_mean=1.5, alpha_sd=0.3),
    }


@dataclass(frozen=True)
class TruthConfig:
    outcomes: Mapping[str, OutcomeTruth] = field(default_factory=_default_outcomes)
    dm_proportions: tuple[float, float, float] = DM_PROPORTIONS
    hc_proportions: tuple[float, float, float] = HC_PROPORTIONS
    islands: str = "independent"

    def __post_init__(self):
        for name in ("dm_proportions", "hc_proportions"):
            p = np.asarray(getattr(self, name), dtype=float)
            if p.shape != (3,) or np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise SimulationError(f"{name} must be 3 non-negative values summing to 1")
        missing = set(MODELLED) - set(self.outcomes)
        if missing:
            raise SimulationError(f"truth config lacks outcome(s) {sorted(missing)}")
        for name, o in self.outcomes.items():
            if len(o.fields) != 4:
                raise SimulationError(f"{name}: need four field settings")
            for f in o.fields:
                if not abs(f.rho) < 1 or not f.tau > 0:
                    raise SimulationError(f"{name}: need |rho| < 1 and tau > 0")

    def to_dict(self) -> dict:
        return {
            "outcomes": {k: asdict(v) for k, v in self.outcomes.items()},
            "dm_proportions": list(self.dm_proportions),
            "hc_proportions": list(self.hc_proportions),
            "islands": self.islands,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TruthConfig":
        d = dict(d)
        if "outcomes" in d:
            outs = _default_outcomes()
            for k, v in d["outcomes"].items():
                v = dict(v)
                if "fields" in v:
                    v["fields"] = tuple(FieldTruth(**f) for f in v["fields"])
                outs[k] = OutcomeTruth(**v)
            d["outcomes"] = outs
        for key in ("dm_proportions", "hc_proportions"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class SimTruth:
    """Generating states and the implied cell probabilities.

    ``pi[name]`` has shape ``(n, T, 3, 3)``: probability for each
    ``(dm_class, hc_class)`` profile.
    """

    states: dict[str, ModelState]
    pi: dict[str, np.ndarray]
    config: TruthConfig
    years: tuple

    def to_dict(self) -> dict:
        out = {"years": list(self.years), "config": self.config.to_dict(), "outcomes": {}}
        for k, s in self.states.items():
            out["outcomes"][k] = {
                "alpha": s.alpha.tolist(),
                "gamma": {f: s.gamma[i].tolist() for i, f in enumerate(FIELDS)},
                "theta": {f: s.theta[i].tolist() for i, f in enumerate(FIELDS)},
            }
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimTruth":
        states = {}
        for k, o in d["outcomes"].items():
            states[k] = ModelState(
                alpha=np.asarray(o["alpha"], dtype=float),
                gamma=np.stack([np.asarray(o["gamma"][f], dtype=float) for f in FIELDS]),
                theta=np.stack([np.asarray(o["theta"][f], dtype=float) for f in FIELDS]),
            )
        pi = {k: profile_probabilities(s) for k, s in states.items()}
        return cls(states, pi, TruthConfig.from_dict(d["config"]), tuple(d["years"]))


def profile_probabilities(state: ModelState) -> np.ndarray:
    """``(n, T, 3, 3)`` success probability for every empowerment profile."""
    n, T = state.alpha.shape
    out = np.empty((n, T, 3, 3))
    for d, h in PROFILES:
        eta = state.alpha.copy()
        if d:
            eta += state.gamma[d - 1]
        if h:
            eta += state.gamma[1 + h]
        out[:, :, d, h] = inverse_logit(eta)
    return out


def draw_field(structure: FieldStructure, rho: float, tau: float, rng: np.random.Generator) -> np.ndarray:
    """One ``(n, T)`` draw from the constrained ICAR x AR1 prior."""
    Q = structure.precision(rho, tau)
    if structure.A.size:
        Q = Q + tau * (structure.A.T @ structure.A)
    x = ConstrainedGaussian(Q, A=structure.A if structure.A.size else None).sample(rng)
    return x.reshape(structure.T, structure.n).T.copy()


def draw_state(structure: FieldStructure, truth: OutcomeTruth, rng: np.random.Generator) -> ModelState:
    n, T = structure.n, structure.T
    alpha = truth.alpha_mean + truth.alpha_sd * rng.standard_normal((n, T))
    gamma = np.stack([draw_field(structure, f.rho, f.tau, rng) for f in truth.fields])
    theta = np.array([natural_to_internal(f.rho, f.tau) for f in truth.fields])
    return ModelState(alpha=alpha, gamma=gamma, theta=theta)


def simulate_classes(n: int, proportions, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(3, size=n, p=np.asarray(proportions, dtype=float)).astype(np.int64)


def simulate_survey(
    graph: AdjacencyGraph,
    T: int,
    truth_config: TruthConfig | None = None,
    children_per_cell: int = 40,
    rng: np.random.Generator | None = None,
    years=None,
) -> tuple[SurveyData, SimTruth]:
    """Draw fields, empowerment classes and vaccine indicators.

    BCG, DPT3 and MCV1 are independent Bernoulli-logit outcomes. Zero-dose is
    built from a dose count: a child without DPT3 got no dose with
    probability given by the ``no_dose_given_incomplete`` model, otherwise 1-2
    doses. All-basic also needs a third polio dose drawn from ``polio3``.
    """
    truth_config = truth_config or TruthConfig()
    rng = rng if rng is not None else np.random.default_rng()
    years = tuple(years) if years is not None else default_years(T)
    if len(years) != T:
        raise SimulationError("years must have length T")
    structure = FieldStructure(icar_structure(graph), T, truth_config.islands)
    states = {name: draw_state(structure, truth_config.outcomes[name], rng) for name in MODELLED}
    pi = {name: profile_probabilities(s) for name, s in states.items()}

    n = graph.n_units
    cells = np.arange(n * T)
    cell = np.repeat(cells, children_per_cell)
    lga = cell % n
    time = cell // n
    N = len(cell)
    dm = simulate_classes(N, truth_config.dm_proportions, rng)
    hc = simulate_classes(N, truth_config.hc_proportions, rng)

    def bern(name):
        p = pi[name][lga, time, dm, hc]
        return (rng.random(N) < p).astype(np.int64)

    y = {v: bern(v) for v in ("bcg", "dpt_complete", "mcv1")}
    no_dose = bern("no_dose_given_incomplete")
    partial = rng.integers(1, 3, size=N)
    doses = np.where(y["dpt_complete"] == 1, 3, np.where(no_dose == 1, 0, partial))
    polio3 = bern("polio3")
    y["zero_dose"] = (doses == 0).astype(np.int64)
    y["all_basic"] = (y["bcg"] & y["dpt_complete"] & y["mcv1"] & polio3).astype(np.int64)
    y = {v: y[v] for v in VACCINES}

    width = len(str(children_per_cell))
    ids = np.array([
        f"{graph.unit_ids[j]}-{years[t]}-{i:0{width}d}"
        for j, t, i in zip(lga, time, np.tile(np.arange(children_per_cell), n * T))
    ])
    data = SurveyData(lga=lga, time=time, dm_class=dm, hc_class=hc, y=y, n_units=n,
                      years=years, child_id=ids)
    return data, SimTruth(states=states, pi=pi, config=truth_config, years=years)


def simulate_one_factor(n: int, loadings, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Continuous items from a one-factor model; returns ``(items, factor)``."""
    lam = np.asarray(loadings, dtype=float)
    f = rng.standard_normal(n)
    e = rng.standard_normal((n, len(lam))) * np.sqrt(1.0 - lam**2)
    return f[:, None] * lam + e, f


def simulate_responses(survey_years, rng: np.random.Generator, loading: float = 0.8,
                       missing_rate: float = 0.0) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Raw questionnaire codes driven by two latent empowerment factors.

    Returns ``(raw, latent)`` where ``raw`` has the eight item columns plus
    ``survey_year`` in the original survey coding, and ``latent`` holds the
    true factor values.
    """
    survey_years = np.asarray(survey_years)
    n = len(survey_years)
    lam = np.full(4, loading)
    dm_star, f_dm = simulate_one_factor(n, lam, rng)
    hc_star, f_hc = simulate_one_factor(n, lam, rng)
    # staggered item thresholds keep the summed scores from piling up on ties
    lo = np.array([-0.9, -0.5, -0.1, 0.3])
    level = 1 + (dm_star > lo).astype(int) + (dm_star > lo + 0.9).astype(int)
    not_involved = np.where(rng.random(level.shape) < 0.8, 3, 4)
    dm_codes = np.where(level == 3, 1, np.where(level == 2, 2, not_involved)).astype(float)
    hc_codes = np.where(hc_star > np.array([-0.8, -0.3, 0.2, 0.7]), 2, 1).astype(float)
    raw = pd.DataFrame(np.column_stack([dm_codes, hc_codes]), columns=list(DM_ITEMS + HC_ITEMS))
    if missing_rate > 0:
        mask = rng.random(raw.shape) < missing_rate
        raw = raw.mask(mask)
    raw.insert(0, "respondent_id", [f"R{i:06d}" for i in range(n)])
    raw["survey_year"] = survey_years
    latent = pd.DataFrame({"respondent_id": raw["respondent_id"], "f_dm": f_dm, "f_hc": f_hc})
    return raw, latent


def graph_is_connected(graph: AdjacencyGraph) -> bool:
    return connected_components(graph)[1] == 1
