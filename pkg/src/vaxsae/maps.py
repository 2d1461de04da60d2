"""Map-ready outputs: GeoJSON joins and static SVG choropleths.

Effects are drawn on a diverging scale centred at 0 and coverage on a
sequential scale over [0, 1]; both use fixed bin edges so maps from
different runs are comparable.
"""

from __future__ import annotations

import copy
import html
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

# brown -> white -> teal, and pale yellow -> dark green
_DIVERGING_ENDS = ((140, 81, 10), (245, 245, 245), (1, 102, 94))
_SEQUENTIAL_ENDS = ((255, 255, 204), (0, 104, 55))
_MISSING = "#cccccc"


class MapError(ValueError):
    pass


def _hex(rgb) -> str:
    return "#" + "".join(f"{int(round(c)):02x}" for c in rgb)


def _lerp(a, b, t):
    return tuple(x + (y - x) * t for x, y in zip(a, b))


def palette(n_classes: int, kind: str = "sequential") -> list[str]:
    """``n_classes`` colours interpolated along a fixed ramp."""
    if n_classes < 1:
        raise MapError("need at least one class")
    if kind == "sequential":
        lo, hi = _SEQUENTIAL_ENDS
        ts = np.linspace(0.0, 1.0, n_classes) if n_classes > 1 else [0.5]
        return [_hex(_lerp(lo, hi, t)) for t in ts]
    if kind == "diverging":
        lo, mid, hi = _DIVERGING_ENDS
        ts = np.linspace(-1.0, 1.0, n_classes) if n_classes > 1 else [0.0]
        return [_hex(_lerp(mid, lo, -t) if t < 0 else _lerp(mid, hi, t)) for t in ts]
    raise MapError("kind must be 'sequential' or 'diverging'")


def classify(values, bins: Sequence[float]) -> np.ndarray:
    """Class index per value; values beyond the outer edges go to the end
    classes and NaN gives -1."""
    v = np.asarray(values, dtype=float)
    edges = np.asarray(bins, dtype=float)
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, len(edges) - 2)
    return np.where(np.isnan(v), -1, idx)


def join_geojson(geojson: Mapping, table: pd.DataFrame, id_property: str = "unit",
                 id_column: str = "lga", suffix_column: str | None = "year") -> dict:
    """Copy of ``geojson`` with each row of ``table`` merged into the
    properties of the feature whose ``id_property`` equals the row's
    ``id_column``.

    With ``suffix_column`` set, property names get ``_<value>`` appended so
    several waves fit on one feature. Features without rows are left as is.
    """
    out = copy.deepcopy(dict(geojson))
    by_id: dict[str, dict] = {}
    value_cols = [c for c in table.columns if c not in (id_column, suffix_column)]
    for row in table.to_dict("records"):
        key = str(row[id_column])
        tag = f"_{row[suffix_column]}" if suffix_column else ""
        props = by_id.setdefault(key, {})
        for c in value_cols:
            v = row[c]
            props[f"{c}{tag}"] = None if isinstance(v, float) and np.isnan(v) else v
    ids = set()
    for feat in out.get("features", []):
        fid = str(feat.get("properties", {}).get(id_property))
        ids.add(fid)
        if fid in by_id:
            feat.setdefault("properties", {}).update(by_id[fid])
    unknown = set(by_id) - ids
    if unknown:
        raise MapError(f"{len(unknown)} unit(s) have no polygon, e.g. {sorted(unknown)[0]!r}")
    return out


def _rings(geometry: Mapping) -> list:
    kind = geometry.get("type")
    if kind == "Polygon":
        return list(geometry["coordinates"])
    if kind == "MultiPolygon":
        return [ring for poly in geometry["coordinates"] for ring in poly]
    raise MapError(f"unsupported geometry type {kind!r}")


def render_svg(geojson: Mapping, values: Mapping[str, float], bins: Sequence[float],
               kind: str = "sequential", title: str = "", id_property: str = "unit",
               width: int = 480) -> str:
    """Choropleth of ``values`` (unit id -> number) as an SVG document.

    Coordinates are scaled linearly into the canvas (no projection) with
    north up. A legend lists the bin edges.
    """
    feats = list(geojson.get("features", []))
    if not feats:
        raise MapError("no features to draw")
    rings = [[np.asarray(r, dtype=float)[:, :2] for r in _rings(f["geometry"])] for f in feats]
    pts = np.concatenate([r for rs in rings for r in rs])
    (x0, y0), (x1, y1) = pts.min(axis=0), pts.max(axis=0)
    span = max(x1 - x0, y1 - y0, 1e-12)
    pad, legend_h, title_h = 10.0, 24.0, 22.0 if title else 0.0
    scale = (width - 2 * pad) / span
    map_h = (y1 - y0) * scale
    height = int(np.ceil(title_h + map_h + 2 * pad + legend_h))
    colors = palette(len(bins) - 1, kind)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    if title:
        lines.append(f'<text x="{pad}" y="16" font-family="sans-serif" font-size="13">{html.escape(title)}</text>')
    for feat, rs in zip(feats, rings):
        uid = str(feat.get("properties", {}).get(id_property))
        v = values.get(uid, np.nan)
        v = np.nan if v is None else float(v)
        c = int(classify([v], bins)[0])
        fill = _MISSING if c < 0 else colors[c]
        d = []
        for r in rs:
            xs = pad + (r[:, 0] - x0) * scale
            ys = title_h + pad + (y1 - r[:, 1]) * scale
            d.append("M" + " L".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys)) + " Z")
        label = "NA" if np.isnan(v) else f"{v:.3f}"
        lines.append(
            f'<path d="{" ".join(d)}" fill="{fill}" stroke="#555555" stroke-width="0.5" '
            f'fill-rule="evenodd"><title>{html.escape(uid)}: {label}</title></path>'
        )
    ly = title_h + map_h + 2 * pad
    box = (width - 2 * pad) / len(colors)
    for i, col in enumerate(colors):
        x = pad + i * box
        lines.append(f'<rect x="{x:.2f}" y="{ly:.2f}" width="{box:.2f}" height="8" fill="{col}"/>')
        lines.append(
            f'<text x="{x:.2f}" y="{ly + 20:.2f}" font-family="sans-serif" font-size="9">{bins[i]:g}</text>'
        )
    lines.append(
        f'<text x="{width - pad:.2f}" y="{ly + 20:.2f}" font-family="sans-serif" font-size="9" '
        f'text-anchor="end">{bins[-1]:g}</text>'
    )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
