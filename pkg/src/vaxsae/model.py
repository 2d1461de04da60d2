"""Bernoulli-logit observation model with empowerment-specific space-time effects.

For child ``i`` in unit ``j`` and wave ``t``::

    eta = alpha[j, t] + sum_k gamma_k[j, t] * delta_k
    y ~ Bernoulli(1 / (1 + exp(-eta)))

where ``delta`` flags moderate/high empowerment in decision-making (DM)
and healthcare utilization (HC), with the not-empowered class as reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .fields import FieldHyper
from .graph import AdjacencyGraph

FIELDS = ("m_d", "h_d", "m_hc", "h_hc")
VACCINES = ("bcg", "dpt_complete", "mcv1", "all_basic", "zero_dose")
RECORD_COLUMNS = (
    "child_id", "lga", "year", *VACCINES, "dm_class", "hc_class",
)
AGE_RANGE = (12, 23)
# (dm_class, hc_class) pairs
PROFILES = tuple((d, h) for d in range(3) for h in range(3))


class RecordError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SurveyData:
    """Child-level records aligned to a graph and an ordered list of waves.

    ``lga`` and ``time`` are integer indices; ``years`` maps time index to
    wave label. ``y`` holds one 0/1 array per vaccine indicator.
    """

    lga: np.ndarray
    time: np.ndarray
    dm_class: np.ndarray
    hc_class: np.ndarray
    y: dict[str, np.ndarray]
    n_units: int
    years: tuple
    child_id: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.lga)
        for name in ("time", "dm_class", "hc_class"):
            if len(getattr(self, name)) != n:
                raise RecordError(f"{name} has wrong length")
        for k, v in self.y.items():
            if len(v) != n:
                raise RecordError(f"outcome {k} has wrong length")
        if n:
            if self.lga.min() < 0 or self.lga.max() >= self.n_units:
                raise RecordError("lga index out of range")
            if self.time.min() < 0 or self.time.max() >= self.T:
                raise RecordError("time index out of range")
        for name in ("dm_class", "hc_class"):
            bad = ~np.isin(getattr(self, name), (0, 1, 2))
            if bad.any():
                raise RecordError(f"{name} outside {{0,1,2}}")

    @property
    def T(self) -> int:
        return len(self.years)

    @property
    def n_records(self) -> int:
        return len(self.lga)

    @property
    def cell(self) -> np.ndarray:
        """Flat time-major cell index ``t * n + j``."""
        return self.time * self.n_units + self.lga

    def outcome(self, vaccine: str) -> np.ndarray:
        try:
            return self.y[vaccine]
        except KeyError:
            raise RecordError(f"unknown vaccine {vaccine!r}; have {sorted(self.y)}") from None

    def subset(self, mask) -> "SurveyData":
        mask = np.asarray(mask)
        return replace(
            self,
            lga=self.lga[mask],
            time=self.time[mask],
            dm_class=self.dm_class[mask],
            hc_class=self.hc_class[mask],
            y={k: v[mask] for k, v in self.y.items()},
            child_id=None if self.child_id is None else self.child_id[mask],
        )

    @classmethod
    def empty(cls, n_units: int, years: Sequence) -> "SurveyData":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, {v: z for v in VACCINES}, n_units, tuple(years))


def check_record_consistency(y: dict[str, np.ndarray]) -> None:
    """Logical couplings between indicators; raises :class:`RecordError`."""
    if {"all_basic", "bcg", "dpt_complete"} <= y.keys():
        bad = (y["all_basic"] == 1) & ((y["bcg"] == 0) | (y["dpt_complete"] == 0))
        if bad.any():
            raise RecordError(f"{int(bad.sum())} record(s) with all_basic=1 but missing BCG or DPT3")
    if {"zero_dose", "dpt_complete"} <= y.keys():
        bad = (y["zero_dose"] == 1) & (y["dpt_complete"] == 1)
        if bad.any():
            raise RecordError(f"{int(bad.sum())} record(s) with zero_dose=1 and dpt_complete=1")


def records_from_frame(
    df: pd.DataFrame, graph: AdjacencyGraph, years: Sequence | None = None
) -> SurveyData:
    """Validate a records table and convert it to :class:`SurveyData`.

    Rows with missing values are dropped (complete cases). If an
    ``age_months`` column is present, only ages 12-23 are kept.
    """
    missing = [c for c in RECORD_COLUMNS if c not in df.columns]
    if missing:
        raise RecordError(f"missing column(s): {', '.join(missing)}")
    df = df.dropna(subset=list(RECORD_COLUMNS))
    if "age_months" in df.columns:
        lo, hi = AGE_RANGE
        df = df[(df["age_months"] >= lo) & (df["age_months"] <= hi)]
    lga_ids = df["lga"].astype(str).to_numpy()
    try:
        lga = np.array([graph.index_of(u) for u in lga_ids], dtype=np.int64)
    except ValueError as exc:
        raise RecordError(str(exc)) from None
    if years is None:
        years = sorted(pd.unique(df["year"]).tolist())
    years = tuple(years)
    ymap = {y: t for t, y in enumerate(years)}
    try:
        time = np.array([ymap[v] for v in df["year"].tolist()], dtype=np.int64)
    except KeyError as exc:
        raise RecordError(f"record year {exc.args[0]!r} not among waves {years}") from None
    y = {}
    for v in VACCINES:
        arr = df[v].to_numpy()
        if not np.isin(arr, (0, 1)).all():
            raise RecordError(f"{v} must be 0/1")
        y[v] = arr.astype(np.int64)
    check_record_consistency(y)
    return SurveyData(
        lga=lga,
        time=time,
        dm_class=df["dm_class"].to_numpy().astype(np.int64),
        hc_class=df["hc_class"].to_numpy().astype(np.int64),
        y=y,
        n_units=graph.n_units,
        years=years,
        child_id=df["child_id"].astype(str).to_numpy(),
    )


def records_to_frame(data: SurveyData, graph: AdjacencyGraph) -> pd.DataFrame:
    ids = data.child_id if data.child_id is not None else np.arange(data.n_records).astype(str)
    cols = {
        "child_id": ids,
        "lga": np.asarray(graph.unit_ids, dtype=object)[data.lga],
        "year": np.asarray(data.years, dtype=object)[data.time],
    }
    for v in VACCINES:
        cols[v] = data.y[v]
    cols["dm_class"] = data.dm_class
    cols["hc_class"] = data.hc_class
    return pd.DataFrame(cols, columns=list(RECORD_COLUMNS))


# ------------------------------------------------------------------- design


def build_design(dm_class, hc_class=None) -> np.ndarray:
    """Indicator columns ``(delta_m_d, delta_h_d, delta_m_hc, delta_h_hc)``.

    Accepts two class arrays, or a :class:`SurveyData` as the first argument.
    """
    if isinstance(dm_class, SurveyData):
        dm_class, hc_class = dm_class.dm_class, dm_class.hc_class
    dm = np.atleast_1d(np.asarray(dm_class))
    hc = np.atleast_1d(np.asarray(hc_class))
    for name, c in (("dm_class", dm), ("hc_class", hc)):
        if not np.isin(c, (0, 1, 2)).all():
            raise RecordError(f"{name} outside {{0,1,2}}")
    return np.column_stack([dm == 1, dm == 2, hc == 1, hc == 2]).astype(np.int64)


@dataclass
class ModelState:
    """Current values of every latent quantity in the model.

    ``theta`` holds the internal hyperparameters ``(theta1, theta2)`` of each
    field, in the order of :data:`FIELDS`.
    """

    alpha: np.ndarray  # (n, T)
    gamma: np.ndarray  # (4, n, T)
    theta: np.ndarray  # (4, 2)
    omega: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def zeros(cls, n: int, T: int, n_records: int = 0) -> "ModelState":
        return cls(np.zeros((n, T)), np.zeros((4, n, T)), np.zeros((4, 2)), np.ones(n_records))

    def copy(self) -> "ModelState":
        return ModelState(self.alpha.copy(), self.gamma.copy(), self.theta.copy(), self.omega.copy())

    @property
    def hyper(self) -> dict[str, FieldHyper]:
        return {k: FieldHyper.from_internal(*self.theta[i]) for i, k in enumerate(FIELDS)}


def linear_predictor(state: ModelState, lga, time, design) -> np.ndarray:
    """``eta`` for each record; scalar inputs give a length-1 array."""
    lga = np.atleast_1d(np.asarray(lga, dtype=np.int64))
    time = np.atleast_1d(np.asarray(time, dtype=np.int64))
    design = np.atleast_2d(np.asarray(design))
    n, T = state.alpha.shape
    if np.any((lga < 0) | (lga >= n)) or np.any((time < 0) | (time >= T)):
        raise IndexError("lga/time index out of range")
    eta = state.alpha[lga, time].astype(float)
    for k in range(4):
        eta = eta + state.gamma[k, lga, time] * design[:, k]
    return eta


def inverse_logit(eta):
    """Logistic function, stable for large ``|eta|``."""
    return np.exp(-np.logaddexp(0.0, -np.asarray(eta, dtype=float)))


def log_likelihood(state: ModelState, data: SurveyData, vaccine: str, design=None) -> float:
    """Bernoulli-logit log likelihood of one vaccine indicator."""
    if design is None:
        design = build_design(data)
    eta = linear_predictor(state, data.lga, data.time, design)
    return bernoulli_logit_loglik(data.outcome(vaccine), eta)


def bernoulli_logit_loglik(y, eta) -> float:
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    # y log(pi) + (1-y) log(1-pi) = y*eta - log(1 + e^eta)
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

