"""Posterior summaries: coverage maps, effect maps and conditional coverage.

Coverage probabilities are transformed draw by draw and then averaged, so
``pi_hat`` is the posterior mean of ``inverse_logit(eta)`` rather than the
logistic of the posterior mean of ``eta``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..graph import AdjacencyGraph
from ..model import FIELDS, PROFILES, SurveyData, build_design, inverse_logit
from .gibbs import PosteriorDraws


class SummaryError(ValueError):
    pass


def profile_eta(alpha: np.ndarray, gamma: np.ndarray, dm: int, hc: int) -> np.ndarray:
    """``eta`` of an empowerment profile; ``alpha`` is ``(..., n, T)`` and
    ``gamma`` is ``(..., 4, n, T)``."""
    delta = build_design([dm], [hc])[0]
    eta = np.array(alpha, dtype=float, copy=True)
    for k in range(4):
        if delta[k]:
            eta = eta + gamma[..., k, :, :]
    return eta


@dataclass
class Summary:
    """Posterior means and sds per (unit, wave).

    ``pi_mean``/``pi_sd`` are ``(9, n, T)`` indexed like :data:`PROFILES`;
    ``gamma_mean``/``gamma_sd`` are ``(4, n, T)`` indexed like :data:`FIELDS`.
    """

    pi_mean: np.ndarray
    pi_sd: np.ndarray
    gamma_mean: np.ndarray
    gamma_sd: np.ndarray
    unit_ids: tuple
    years: tuple

    def to_frame(self) -> pd.DataFrame:
        """Long table with one row per (lga, year)."""
        n, T = self.gamma_mean.shape[1:]
        lga = np.tile(np.asarray(self.unit_ids, dtype=object), T)
        year = np.repeat(np.asarray(self.years, dtype=object), n)
        cols = {"lga": lga, "year": year}
        for p, (d, h) in enumerate(PROFILES):
            cols[f"pi_dm{d}_hc{h}_mean"] = self.pi_mean[p].T.ravel()
            cols[f"pi_dm{d}_hc{h}_sd"] = self.pi_sd[p].T.ravel()
        for k, name in enumerate(FIELDS):
            cols[f"gamma_{name}_mean"] = self.gamma_mean[k].T.ravel()
            cols[f"gamma_{name}_sd"] = self.gamma_sd[k].T.ravel()
        return pd.DataFrame(cols)


def _mean_sd(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # population sd so that a single draw gives exactly 0
    return x.mean(axis=0), x.std(axis=0)


def summarize(draws: PosteriorDraws, graph: AdjacencyGraph | None = None) -> Summary:
    """Coverage ``pi_hat`` per profile and effect ``gamma_hat`` per field."""
    alpha = draws.flat("alpha")
    gamma = draws.flat("gamma")
    if alpha.shape[0] == 0:
        raise SummaryError("no draws to summarize")
    n, T = alpha.shape[1:]
    pm = np.empty((len(PROFILES), n, T))
    ps = np.empty_like(pm)
    for p, (d, h) in enumerate(PROFILES):
        pm[p], ps[p] = _mean_sd(inverse_logit(profile_eta(alpha, gamma, d, h)))
    gm, gs = _mean_sd(gamma)
    unit_ids = graph.unit_ids if graph is not None else tuple(str(j) for j in range(n))
    years = tuple(draws.meta.get("years", range(T)))
    return Summary(pm, ps, gm, gs, tuple(unit_ids), years)


def _profile_pi(draws: PosteriorDraws) -> np.ndarray:
    """``(S, 9, n, T)`` coverage draws for every profile."""
    alpha = draws.flat("alpha")
    gamma = draws.flat("gamma")
    return np.stack([inverse_logit(profile_eta(alpha, gamma, d, h)) for d, h in PROFILES], axis=1)


def conditional_coverage(draws: PosteriorDraws, data: SurveyData, dimension: str = "dm",
                         levels=None) -> pd.DataFrame:
    """Mean coverage over (record, draw) pairs by empowerment level and wave.

    ``dimension`` is ``"dm"`` or ``"hc"``. Each record contributes the
    coverage of its own cell and profile. ``levels`` defaults to the levels
    present in ``data``; asking for a level without records raises
    :class:`SummaryError`. Waves without records at a level are left out.
    """
    if dimension not in ("dm", "hc"):
        raise SummaryError("dimension must be 'dm' or 'hc'")
    level = data.dm_class if dimension == "dm" else data.hc_class
    if levels is None:
        levels = np.unique(level).tolist()
        if not levels:
            raise SummaryError("no records")
    for lv in levels:
        if not np.any(level == lv):
            raise SummaryError(f"no records at {dimension} level {lv}")
    pi = _profile_pi(draws).mean(axis=0)  # (9, n, T); averaging is linear
    prof = data.dm_class * 3 + data.hc_class
    rec_pi = pi[prof, data.lga, data.time]
    rows = []
    for lv in levels:
        for t, year in enumerate(data.years):
            m = (level == lv) & (data.time == t)
            if m.any():
                rows.append((lv, year, float(rec_pi[m].mean()), int(m.sum())))
        m = level == lv
        rows.append((lv, "all", float(rec_pi[m].mean()), int(m.sum())))
    return pd.DataFrame(rows, columns=["level", "year", "coverage", "n_records"])


def profile_weights(data: SurveyData, fallback: str = "wave") -> np.ndarray:
    """Empowerment-profile mix per cell, ``(9, n, T)``, each cell summing to 1.

    Cells without records take the pooled mix of their wave (or of all
    records when ``fallback="all"``).
    """
    n, T = data.n_units, data.T
    prof = data.dm_class * 3 + data.hc_class
    counts = np.zeros((9, n, T))
    np.add.at(counts, (prof, data.lga, data.time), 1.0)
    total = counts.sum(axis=0)
    if data.n_records == 0:
        return np.full((9, n, T), 1.0 / 9.0)
    wave = counts.sum(axis=1)  # (9, T)
    if fallback == "all":
        wave = np.repeat(wave.sum(axis=1, keepdims=True), T, axis=1)
    empty_wave = wave.sum(axis=0) == 0
    wave[:, empty_wave] = counts.sum(axis=(1, 2))[:, None]
    wave = wave / wave.sum(axis=0, keepdims=True)
    w = np.where(total > 0, counts / np.maximum(total, 1.0), wave[:, None, :])
    return w


def cell_prevalence(draws: PosteriorDraws, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Population coverage per (unit, wave): the profile mix ``weights`` applied
    to each draw's profile coverages. Returns ``(mean, sd)`` over draws."""
    pi = _profile_pi(draws)
    mix = np.einsum("spnt,pnt->snt", pi, weights)
    return _mean_sd(mix)


def cell_prevalence_draws(draws: PosteriorDraws, weights: np.ndarray) -> np.ndarray:
    """Per-draw population coverage ``(S, n, T)``."""
    return np.einsum("spnt,pnt->snt", _profile_pi(draws), weights)
