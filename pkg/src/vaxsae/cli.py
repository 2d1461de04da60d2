"""Command-line pipeline: simulate -> index -> fit -> predict -> validate.

Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure,
4 non-convergence (draws are still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .empowerment import ResponseError, build_index, distribution_table
from .fields import FactorizationError
from .graph import GraphError, load_adjacency, write_adjacency
from .inference.gibbs import fit
from .inference.summaries import cell_prevalence, conditional_coverage, profile_weights, summarize
from .io import (
    ArtifactError,
    load_run_config,
    read_draws,
    vaccine_list,
    write_csv,
    write_draws,
    write_json,
)
from .maps import MapError, join_geojson, render_svg
from .model import FIELDS, RecordError, records_from_frame, records_to_frame
from .simulate import (
    SimulationError,
    TruthConfig,
    default_years,
    grid_geojson,
    simulate_geography,
    simulate_responses,
    simulate_survey,
)
from .validate import ValidationError, correlation_table, validation_table

logger = logging.getLogger("vaxsae")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 2, 3, 4
INPUT_ERRORS = (ArtifactError, GraphError, RecordError, ResponseError, SimulationError,
                ValidationError, MapError, FileNotFoundError, KeyError, ValueError)
NUMERIC_ERRORS = (FactorizationError, np.linalg.LinAlgError, FloatingPointError)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _hash_of(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _out_dir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {p}: {exc.strerror}") from None
    probe = p / ".write-test"
    try:
        probe.write_text("")
        probe.unlink()
    except OSError:
        raise CliError(f"output directory {p} is not writable") from None
    return p


def _load_inputs(args):
    d = Path(args.data_dir)
    graph = load_adjacency(d / "adjacency.csv", d / "states.csv")
    path = Path(args.records) if getattr(args, "records", None) else d / "records.csv"
    if not path.exists():
        raise CliError(f"missing records file {path}")
    frame = pd.read_csv(path, comment="#", dtype={"child_id": str, "lga": str})
    return graph, records_from_frame(frame, graph)


def _run_config(args):
    return load_run_config(getattr(args, "config", None), chains=getattr(args, "chains", None),
                           seed=getattr(args, "seed", None))


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    if args.units < 1 or args.states < 1 or args.units < args.states:
        raise CliError(f"infeasible geography: {args.units} unit(s) cannot form {args.states} state(s)")
    if args.waves < 1 or args.children_per_cell < 1:
        raise CliError("--waves and --children-per-cell must be positive")
    truth_cfg = TruthConfig()
    if args.truth_config:
        truth_cfg = TruthConfig.from_dict(json.loads(Path(args.truth_config).read_text()))
    settings = {
        "units": args.units, "states": args.states, "waves": args.waves,
        "children_per_cell": args.children_per_cell, "seed": args.seed,
        "truth": truth_cfg.to_dict(),
    }
    h = _hash_of(settings)
    out = _out_dir(args.out_dir)
    geo_ss, survey_ss, resp_ss = np.random.SeedSequence(args.seed).spawn(3)
    graph = simulate_geography(args.units, args.states, np.random.default_rng(geo_ss))
    years = default_years(args.waves)
    data, truth = simulate_survey(graph, args.waves, truth_cfg, args.children_per_cell,
                                  np.random.default_rng(survey_ss), years)
    write_adjacency(graph, out / "adjacency.csv", out / "states.csv", header=f"config_hash={h}")
    write_csv(records_to_frame(data, graph), out / "records.csv", h)
    write_json({"config_hash": h, "settings": settings, **truth.to_dict()}, out / "truth.json")
    if args.responses:
        survey_year = np.asarray(years)[data.time]
        raw, _ = simulate_responses(survey_year, np.random.default_rng(resp_ss),
                                    missing_rate=args.missing_rate)
        raw["respondent_id"] = data.child_id
        write_csv(raw, out / "responses.csv", h)
    if args.geojson:
        write_json(grid_geojson(graph), out / "units.geojson")
    print(f"simulated {graph.n_units} units in {len(graph.states)} states, {args.waves} waves, "
          f"{data.n_records} children -> {out}")
    return EXIT_OK


def cmd_index(args) -> int:
    path = Path(args.responses)
    if not path.exists():
        raise CliError(f"missing responses file {path}")
    raw = pd.read_csv(path, comment="#")
    boundaries = json.loads(Path(args.boundaries).read_text()) if args.boundaries else None
    res = build_index(raw, boundaries)
    h = _hash_of({"input": hashlib.sha256(path.read_bytes()).hexdigest(), "boundaries": boundaries})
    out = _out_dir(args.out_dir)
    write_csv(res.table, out / "indexed.csv", h)
    write_csv(distribution_table(res.table), out / "distribution.csv", h)
    if args.records:
        rec = pd.read_csv(args.records, comment="#", dtype={"child_id": str, "lga": str})
        if "respondent_id" not in res.table.columns:
            raise CliError("responses need a respondent_id column to join onto records")
        cls = res.table.set_index(res.table["respondent_id"].astype(str))[["dm_class", "hc_class"]]
        rec = rec.drop(columns=[c for c in ("dm_class", "hc_class") if c in rec.columns])
        rec = rec.join(cls, on="child_id", how="inner")
        write_csv(rec, out / "records.csv", h)
    shares = res.table.groupby("survey_year")[["dm_class", "hc_class"]].agg(
        lambda s: "/".join(f"{v:.2f}" for v in np.bincount(s, minlength=3) / len(s)))
    print(f"indexed {len(res.table)} respondents ({res.n_dropped} dropped as incomplete)")
    for wave, row in shares.iterrows():
        print(f"  {wave}: dm {row['dm_class']}  hc {row['hc_class']}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    graph, data = _load_inputs(args)
    vaccines = vaccine_list(args.vaccine, cfg)
    out = _out_dir(args.out_dir)
    h = cfg.hash()
    write_json({"config_hash": h, **cfg.to_dict()}, out / "run_config.json")
    code = EXIT_OK
    for v in vaccines:
        draws = fit(data, graph, cfg.fit, v, n_jobs=args.jobs)
        write_draws(draws, out, h)
        names = sorted(draws.meta.get("rhat", {}))
        diag = pd.DataFrame({
            "parameter": names,
            "rhat": [draws.meta["rhat"][k] for k in names],
            "ess": [draws.meta["ess"][k] for k in names],
        })
        write_csv(diag, out / f"diagnostics_{v}.csv", h)
        ok = draws.meta.get("converged", True)
        print(f"{v}: {draws.n_chains} chains x {draws.n_draws} draws, "
              f"max R-hat {draws.meta.get('max_rhat', float('nan')):.3f}"
              f"{'' if ok else '  (NOT CONVERGED)'}")
        if not ok:
            code = EXIT_NONCONVERGED
    return code


def cmd_predict(args) -> int:
    cfg = _run_config(args)
    h = cfg.hash()
    graph, data = _load_inputs(args)
    vaccines = vaccine_list(args.vaccine, cfg)
    out = _out_dir(args.out_dir)
    weights = profile_weights(data)
    geo = json.loads(Path(args.geojson).read_text()) if args.geojson else None
    for v in vaccines:
        draws = read_draws(args.fit_dir, v, expect_hash=h)
        if draws.shape != (graph.n_units, data.T):
            raise CliError(f"draws for {v} do not match the graph/records shape")
        table = summarize(draws, graph).to_frame()
        pop_mean, pop_sd = cell_prevalence(draws, weights)
        table.insert(2, "pi_population_mean", pop_mean.T.ravel())
        table.insert(3, "pi_population_sd", pop_sd.T.ravel())
        write_csv(table, out / f"predictions_{v}.csv", h)
        cc = pd.concat([conditional_coverage(draws, data, dim).assign(dimension=dim) for dim in ("dm", "hc")])
        write_csv(cc[["dimension", "level", "year", "coverage", "n_records"]], out / f"conditional_{v}.csv", h)
        if geo is not None:
            write_json(join_geojson(geo, table, id_property=args.id_property), out / f"predictions_{v}.geojson")
            if args.svg:
                _write_maps(geo, table, v, cfg, out / "maps", args.id_property)
        print(f"{v}: predictions for {graph.n_units} units x {data.T} waves")
    return EXIT_OK


def _write_maps(geo, table, vaccine, cfg, out: Path, id_property: str) -> None:
    out.mkdir(exist_ok=True)
    stats = [("pi_population_mean", "sequential", cfg.maps.pi_bins)]
    stats += [(f"gamma_{f}_mean", "diverging", cfg.maps.gamma_bins) for f in FIELDS]
    for year, g in table.groupby("year", sort=False):
        for col, kind, bins in stats:
            values = dict(zip(g["lga"].astype(str), g[col]))
            svg = render_svg(geo, values, bins, kind, title=f"{vaccine} {year} {col}", id_property=id_property)
            (out / f"{vaccine}_{year}_{col}.svg").write_text(svg)


def cmd_validate(args) -> int:
    cfg = _run_config(args)
    h = cfg.hash()
    graph, data = _load_inputs(args)
    vaccines = vaccine_list(args.vaccine, cfg)
    out = _out_dir(args.out_dir)
    tables = [validation_table(read_draws(args.fit_dir, v, expect_hash=h), data, graph, v) for v in vaccines]
    val = pd.concat(tables, ignore_index=True)
    corr = correlation_table(val)
    write_csv(val, out / "validation.csv", h)
    write_csv(corr, out / "correlation.csv", h)
    for _, row in corr[corr["year"] == "all"].iterrows():
        print(f"{row['vaccine']}: r = {row['r']:.3f} over {row['n_pairs']} state-waves")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_fit_overrides(p) -> None:
    p.add_argument("--config", help="JSON run config (defaults when omitted)")
    p.add_argument("--chains", type=int, help="override fit.chains")
    p.add_argument("--seed", type=int, help="override fit.seed")
    p.add_argument("--vaccine", help="comma-separated vaccines (default: all in the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vaxsae", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthetic geography, survey and truth")
    p.add_argument("--units", type=int, default=50)
    p.add_argument("--states", type=int, default=5)
    p.add_argument("--waves", type=int, default=4)
    p.add_argument("--children-per-cell", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="data")
    p.add_argument("--truth-config", help="JSON overriding the generating values")
    p.add_argument("--responses", action="store_true", help="also write raw questionnaire responses")
    p.add_argument("--missing-rate", type=float, default=0.0, help="share of missing raw items")
    p.add_argument("--geojson", action="store_true", help="also write square unit polygons")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("index", help="empowerment classes from raw responses")
    p.add_argument("--responses", required=True)
    p.add_argument("--records", help="records CSV whose classes are replaced by the index")
    p.add_argument("--boundaries", help="JSON tertile boundary overrides")
    p.add_argument("--out-dir", default="index")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("fit", help="posterior draws per vaccine")
    p.add_argument("--data-dir", default="data")
    p.add_argument("--records", help="records CSV (default: <data-dir>/records.csv)")
    p.add_argument("--out-dir", default="fit")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for chains")
    _add_fit_overrides(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="coverage and effect maps from fitted draws")
    p.add_argument("--data-dir", default="data")
    p.add_argument("--records")
    p.add_argument("--fit-dir", default="fit")
    p.add_argument("--out-dir", default="predict")
    p.add_argument("--geojson", help="unit polygons to join predictions onto")
    p.add_argument("--id-property", default="unit", help="GeoJSON property holding the unit id")
    p.add_argument("--svg", action="store_true", help="render choropleths (needs --geojson)")
    _add_fit_overrides(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate", help="state-level predicted vs empirical prevalence")
    p.add_argument("--data-dir", default="data")
    p.add_argument("--records")
    p.add_argument("--fit-dir", default="fit")
    p.add_argument("--out-dir", default="validate")
    _add_fit_overrides(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "svg", False) and not getattr(args, "geojson", None):
        print("error: --svg needs --geojson", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
