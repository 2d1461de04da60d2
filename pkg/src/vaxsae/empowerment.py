"""Empowerment indices from survey responses.

Decision-making items are recoded to 1 (no part in the decision), 2 (joint)
and 3 (sole decision). Healthcare-access items keep 1 (big problem) and
2 (not a big problem). A one-factor principal-factor solution is extracted
per item set, regression scores are computed, and scores are cut into
tertiles separately within each survey wave.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

DM_ITEMS = ("dm_purchases", "dm_healthcare", "dm_husband_money", "dm_visits")
HC_ITEMS = ("hc_permission", "hc_money", "hc_distance", "hc_alone")
RAW_COLUMNS = DM_ITEMS + HC_ITEMS + ("survey_year",)

CLASS_LABELS = ("not empowered", "moderately empowered", "highly empowered")


class ResponseError(ValueError):
    pass


def _as_codes(items) -> np.ndarray:
    arr = np.asarray(items, dtype=float)
    if np.any(np.isnan(arr)):
        raise ResponseError("missing responses must be removed before recoding")
    if np.any(arr != np.round(arr)):
        raise ResponseError("response codes must be integers")
    return arr.astype(np.int64)


def recode_decision(items) -> np.ndarray:
    """Recode 'final say' answers: 1 woman alone -> 3, 2 jointly -> 2, 3/4 -> 1."""
    codes = _as_codes(items)
    bad = ~np.isin(codes, (1, 2, 3, 4))
    if bad.any():
        raise ResponseError(f"decision-making code out of range: {np.unique(codes[bad]).tolist()}")
    lut = np.array([0, 3, 2, 1, 1])  # indexed by original code
    return lut[codes]


def recode_healthcare(items) -> np.ndarray:
    """Healthcare-access barriers keep their coding (1 big problem, 2 not)."""
    codes = _as_codes(items)
    bad = ~np.isin(codes, (1, 2))
    if bad.any():
        raise ResponseError(f"healthcare code out of range: {np.unique(codes[bad]).tolist()}")
    return codes.copy()


@dataclass(frozen=True)
class FactorModel:
    """One-factor principal-factor solution on the correlation scale.

    Attributes
    ----------
    loadings : ndarray of shape (p,)
    uniquenesses : ndarray of shape (p,)
    explained : float
        Leading eigenvalue over ``p``.
    means, sds : ndarray of shape (p,)
        Item moments used for standardization.
    corr : ndarray of shape (p, p)
    """

    loadings: np.ndarray
    uniquenesses: np.ndarray
    explained: float
    means: np.ndarray
    sds: np.ndarray
    corr: np.ndarray

    @property
    def score_weights(self) -> np.ndarray:
        # regression (Thurstone) weights R^{-1} lambda
        return np.linalg.pinv(self.corr, hermitian=True) @ self.loadings


def fit_factor_model(response_matrix, min_rows: int = 10) -> FactorModel:
    """Extract the first principal factor of the item correlation matrix.

    Loadings are the leading eigenvector scaled by the square root of the
    leading eigenvalue, oriented so that they sum to a positive value. Items
    must be coded so that larger values mean more empowerment.
    """
    X = np.asarray(response_matrix, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("need a 2-d matrix with at least 2 items")
    if X.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} complete rows, got {X.shape[0]}")
    if np.any(np.isnan(X)):
        raise ValueError("response matrix contains missing values")
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    if np.any(sds == 0):
        raise ValueError(f"item(s) {np.flatnonzero(sds == 0).tolist()} have zero variance")
    Z = (X - means) / sds
    corr = (Z.T @ Z) / len(Z)
    evals, evecs = np.linalg.eigh(corr)
    lam, v = evals[-1], evecs[:, -1]
    s = v.sum()
    if s < 0 or (s == 0 and v[np.argmax(np.abs(v))] < 0):
        v = -v
    loadings = np.sqrt(lam) * v
    return FactorModel(
        loadings=loadings,
        uniquenesses=1.0 - loadings**2,
        explained=float(lam / X.shape[1]),
        means=means,
        sds=sds,
        corr=corr,
    )


def factor_scores(response_matrix, model: FactorModel) -> np.ndarray:
    """Regression-method factor scores."""
    X = np.asarray(response_matrix, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(model.loadings):
        raise ValueError(
            f"expected {len(model.loadings)} item columns, got shape {X.shape}"
        )
    Z = (X - model.means) / model.sds
    return Z @ model.score_weights


def tertile_boundaries(scores) -> tuple[float, float]:
    s = np.asarray(scores, dtype=float)
    q = np.quantile(s, [1.0 / 3.0, 2.0 / 3.0], method="inverted_cdf")
    return float(q[0]), float(q[1])


def assign_tertiles(
    scores,
    survey_year_labels,
    boundaries: Mapping[object, Sequence[float]] | None = None,
) -> np.ndarray:
    """Tertile class (0, 1, 2) of each score, computed within its wave.

    A score equal to a boundary goes to the lower class. ``boundaries`` maps a
    wave label to a fixed ``(lower, upper)`` cut pair instead of the empirical
    tertiles.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(survey_year_labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and wave labels must align")
    out = np.empty(len(scores), dtype=np.int64)
    for wave in pd.unique(labels):
        idx = np.flatnonzero(labels == wave)
        fixed = None
        if boundaries is not None:
            # JSON configs carry wave labels as strings
            fixed = boundaries.get(wave, boundaries.get(str(wave)))
        if fixed is not None:
            b1, b2 = fixed
        else:
            if len(idx) < 3:
                raise ValueError(f"wave {wave!r} has fewer than 3 observations")
            b1, b2 = tertile_boundaries(scores[idx])
        out[idx] = (scores[idx] > b1).astype(np.int64) + (scores[idx] > b2)
    return out


@dataclass
class IndexResult:
    table: pd.DataFrame
    dm_model: FactorModel
    hc_model: FactorModel
    n_dropped: int


def build_index(raw: pd.DataFrame, boundaries: Mapping | None = None) -> IndexResult:
    """Run recoding, factor extraction, scoring and tertiles on a raw table.

    Rows with any missing item are dropped first (complete-case analysis).
    ``boundaries`` may hold ``{"dm": {wave: (b1, b2)}, "hc": {...}}``.
    """
    missing = [c for c in RAW_COLUMNS if c not in raw.columns]
    if missing:
        raise ResponseError(f"missing column(s): {', '.join(missing)}")
    complete = raw.dropna(subset=list(RAW_COLUMNS))
    n_dropped = len(raw) - len(complete)
    complete = complete.reset_index(drop=True)
    dm = recode_decision(complete[list(DM_ITEMS)].to_numpy())
    hc = recode_healthcare(complete[list(HC_ITEMS)].to_numpy())
    dm_model = fit_factor_model(dm)
    hc_model = fit_factor_model(hc)
    waves = complete["survey_year"].to_numpy()
    boundaries = boundaries or {}
    out = complete.copy()
    out["dm_score"] = factor_scores(dm, dm_model)
    out["hc_score"] = factor_scores(hc, hc_model)
    out["dm_class"] = assign_tertiles(out["dm_score"].to_numpy(), waves, boundaries.get("dm"))
    out["hc_class"] = assign_tertiles(out["hc_score"].to_numpy(), waves, boundaries.get("hc"))
    return IndexResult(out, dm_model, hc_model, n_dropped)


def distribution_table(indexed: pd.DataFrame) -> pd.DataFrame:
    """Counts and percentages by wave and by empowerment class."""
    n = len(indexed)
    rows = []
    for wave, cnt in indexed["survey_year"].value_counts().sort_index().items():
        rows.append(("Year", str(wave), int(cnt)))
    for dim, col in (("Decision-making", "dm_class"), ("Healthcare utilization", "hc_class")):
        counts = indexed[col].value_counts()
        for k, label in enumerate(CLASS_LABELS):
            rows.append((dim, label, int(counts.get(k, 0))))
    rows.append(("Total", "", n))
    table = pd.DataFrame(rows, columns=["variable", "level", "count"])
    table["percent"] = (100.0 * table["count"] / max(n, 1)).round(2)
    return table
