"""Run configuration and on-disk artifacts.

Every CSV written here starts with one comment line carrying the config
hash, ``# config_hash=<hex>``, so downstream stages can detect that they
are reading the output of a different configuration. Floats are written
with a fixed format so identical runs give identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .inference.gibbs import FitConfig, PosteriorDraws
from .model import FIELDS, VACCINES

FLOAT_FORMAT = "%.10g"
DRAW_BLOCKS = ("alpha",) + tuple(f"gamma_{f}" for f in FIELDS) + ("theta",)


class ArtifactError(ValueError):
    pass


class ConfigHashMismatch(ArtifactError):
    pass


# ------------------------------------------------------------------- config


@dataclass(frozen=True)
class MapConfig:
    """Bin edges of the two choropleth scales."""

    gamma_bins: tuple = (-1.5, -1.0, -0.5, -0.1, 0.1, 0.5, 1.0, 1.5)
    pi_bins: tuple = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)

    def __post_init__(self):
        for name in ("gamma_bins", "pi_bins"):
            b = np.asarray(getattr(self, name), dtype=float)
            if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
                raise ArtifactError(f"{name} must be strictly increasing with at least 2 edges")
            object.__setattr__(self, name, tuple(float(v) for v in b))


@dataclass(frozen=True)
class RunConfig:
    """Everything that shapes fit, predict and validate outputs."""

    fit: FitConfig = field(default_factory=FitConfig)
    vaccines: tuple = VACCINES
    maps: MapConfig = field(default_factory=MapConfig)

    def __post_init__(self):
        bad = [v for v in self.vaccines if v not in VACCINES]
        if bad:
            raise ArtifactError(f"unknown vaccine(s) {bad}; choose from {list(VACCINES)}")
        if not self.vaccines:
            raise ArtifactError("at least one vaccine is required")
        object.__setattr__(self, "vaccines", tuple(self.vaccines))

    def to_dict(self) -> dict:
        return {
            "fit": self.fit.to_dict(),
            "vaccines": list(self.vaccines),
            "maps": {"gamma_bins": list(self.maps.gamma_bins), "pi_bins": list(self.maps.pi_bins)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - {"fit", "vaccines", "maps"}
        if unknown:
            raise ArtifactError(f"unknown config key(s): {sorted(unknown)}")
        try:
            fit = FitConfig.from_dict(d.get("fit", {}))
            maps = MapConfig(**d.get("maps", {}))
        except (TypeError, ValueError) as exc:
            raise ArtifactError(str(exc)) from None
        return cls(fit=fit, vaccines=tuple(d.get("vaccines", VACCINES)), maps=maps)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_run_config(path=None, **overrides) -> RunConfig:
    """Read a JSON run config (defaults when ``path`` is None).

    ``overrides`` replace top-level fit settings, e.g. ``chains=2``.
    """
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{path}: invalid JSON ({exc})") from None
    if overrides:
        d = dict(d)
        d["fit"] = {**d.get("fit", {}), **{k: v for k, v in overrides.items() if v is not None}}
    return RunConfig.from_dict(d)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------- headed CSV


def write_csv(df: pd.DataFrame, path, config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        df.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_header(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            out[key.strip()] = value.strip()
    return out


def read_csv(path, expect_hash: str | None = None, **kwargs) -> pd.DataFrame:
    """Read a CSV written by :func:`write_csv`, optionally checking its hash."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing file {path}")
    if expect_hash is not None:
        found = read_header(path).get("config_hash")
        if found != expect_hash:
            raise ConfigHashMismatch(f"{path.name}: config hash {found} does not match {expect_hash}")
    return pd.read_csv(path, comment="#", **kwargs)


# -------------------------------------------------------------------- draws


def draws_to_frame(draws: PosteriorDraws) -> pd.DataFrame:
    """One row per (chain, draw, block); values in columns ``v0, v1, ...``.

    Field blocks hold the ``n * T`` cells in time-major order (``t * n + j``);
    the ``theta`` block holds ``(theta1, theta2)`` of each field in turn.
    """
    C, S = draws.n_chains, draws.n_draws
    n, T = draws.shape
    width = max(n * T, 8)
    blocks = [np.swapaxes(draws.alpha, 2, 3).reshape(C, S, n * T)]
    for k in range(4):
        blocks.append(np.swapaxes(draws.gamma[:, :, k], 2, 3).reshape(C, S, n * T))
    blocks.append(draws.theta.reshape(C, S, 8))
    B = len(blocks)
    vals = np.full((C, S, B, width), np.nan)
    for b, arr in enumerate(blocks):
        vals[:, :, b, : arr.shape[2]] = arr
    df = pd.DataFrame(vals.reshape(-1, width), columns=[f"v{i}" for i in range(width)])
    df.insert(0, "block", np.tile(np.asarray(DRAW_BLOCKS, dtype=object), C * S))
    df.insert(0, "draw", np.tile(np.repeat(np.arange(S), B), C))
    df.insert(0, "chain", np.repeat(np.arange(C), S * B))
    return df


def draws_from_frame(df: pd.DataFrame, n: int, T: int, meta: dict) -> PosteriorDraws:
    C = int(df["chain"].max()) + 1
    S = int(df["draw"].max()) + 1
    B = len(DRAW_BLOCKS)
    if len(df) != C * S * B or list(df["block"].iloc[:B]) != list(DRAW_BLOCKS):
        raise ArtifactError("draws table is incomplete or out of order")
    vals = df[[c for c in df.columns if c.startswith("v")]].to_numpy(dtype=float).reshape(C, S, B, -1)
    cells = vals[..., : n * T].reshape(C, S, B, T, n)
    alpha = np.swapaxes(cells[:, :, 0], 2, 3)
    gamma = np.swapaxes(cells[:, :, 1:5], 3, 4)
    theta = vals[:, :, 5, :8].reshape(C, S, 4, 2)
    return PosteriorDraws(alpha=alpha.copy(), gamma=gamma.copy(), theta=theta.copy(), meta=meta)


def write_draws(draws: PosteriorDraws, out_dir, config_hash: str) -> tuple[Path, Path]:
    """``draws_<vaccine>.csv`` plus ``draws_<vaccine>.json`` (meta, R-hat table)."""
    out_dir = Path(out_dir)
    vaccine = draws.meta["vaccine"]
    csv_path = out_dir / f"draws_{vaccine}.csv"
    meta_path = out_dir / f"draws_{vaccine}.json"
    write_csv(draws_to_frame(draws), csv_path, config_hash)
    n, T = draws.shape
    meta = {**draws.meta, "config_hash": config_hash, "n_units": n, "n_waves": T}
    write_json(_jsonable(meta), meta_path)
    return csv_path, meta_path


def read_draws(out_dir, vaccine: str, expect_hash: str | None = None) -> PosteriorDraws:
    out_dir = Path(out_dir)
    meta_path = out_dir / f"draws_{vaccine}.json"
    if not meta_path.exists():
        raise ArtifactError(f"missing fit artifact {meta_path}; run fit first")
    meta = json.loads(meta_path.read_text())
    if expect_hash is not None and meta.get("config_hash") != expect_hash:
        raise ConfigHashMismatch(
            f"{meta_path.name}: fitted with config {meta.get('config_hash')}, current config is {expect_hash}"
        )
    df = read_csv(out_dir / f"draws_{vaccine}.csv", expect_hash)
    return draws_from_frame(df, meta["n_units"], meta["n_waves"], meta)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def vaccine_list(value: str | Sequence[str] | None, config: RunConfig) -> tuple[str, ...]:
    """Vaccines named on the command line, or the config's list."""
    if value is None:
        return config.vaccines
    names = value.split(",") if isinstance(value, str) else list(value)
    bad = [v for v in names if v not in VACCINES]
    if bad:
        raise ArtifactError(f"unknown vaccine(s) {bad}; choose from {list(VACCINES)}")
    return tuple(names)
