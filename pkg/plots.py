"""
Plot data for every diagnostic figure, with lossless CSV/JSON dumps and a
deterministic static SVG rendering.
"""
import io
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from data_pipeline import ols_fit
from errors import DataError, ValidationError
from models import Dataset
from ppc_diagnostics import CurveRole, DensityCurve, StatCheck, kde
from prior_pred import FlipBook
from psis_loo import KHAT_BAD, KHAT_GOOD, KHAT_OK, LooComparison, LooResult, khat_bands
from sampler import Draws

WIDTH, HEIGHT = 800, 600
MARGIN = 60

COLORS = {
    "divergent": "#2ca02c",
    "draw": "#3b4a6b",
    "observed": "#08306b",
    "replicate": "#c6dbef",
    "uniform-reference": "#d9d9d9",
    "reference": "#999999",
}
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


class PlotKind(str, Enum):
    SCATTER_DIVERGENCES = "scatter-divergences"
    PARALLEL_COORDINATES = "parallel-coordinates"
    DENSITY_OVERLAY = "density-overlay"
    STAT_HISTOGRAM = "stat-histogram"
    GROUPED_STAT_HISTOGRAM = "grouped-stat-histogram"
    KHAT_SCATTER = "khat-scatter"
    ELPD_DIFF_SCATTER = "elpd-diff-scatter"
    PIT_OVERLAY = "pit-overlay"
    FLIPBOOK_PAGE = "flipbook-page"
    EDA_SCATTER = "eda-scatter"
    PRIOR_COMPARE = "prior-compare"


REQUIRED_SERIES: Dict[PlotKind, Tuple[str, ...]] = {
    PlotKind.SCATTER_DIVERGENCES: ("x", "y", "divergent"),
    PlotKind.PARALLEL_COORDINATES: ("line", "axis", "position", "value", "divergent"),
    PlotKind.DENSITY_OVERLAY: ("curve", "role", "x", "density"),
    PlotKind.STAT_HISTOGRAM: ("replicated",),
    PlotKind.GROUPED_STAT_HISTOGRAM: ("group", "replicated"),
    PlotKind.KHAT_SCATTER: ("index", "khat", "band"),
    PlotKind.ELPD_DIFF_SCATTER: ("index", "elpd_diff", "group"),
    PlotKind.PIT_OVERLAY: ("curve", "role", "x", "density"),
    PlotKind.FLIPBOOK_PAGE: ("x", "y", "group"),
    PlotKind.EDA_SCATTER: ("x", "y", "group"),
    PlotKind.PRIOR_COMPARE: ("book", "page", "x", "y"),
}


def _series_type(values: np.ndarray) -> str:
    if values.dtype == bool:
        return "bool"
    if np.issubdtype(values.dtype, np.integer):
        return "int"
    if np.issubdtype(values.dtype, np.floating):
        return "float"
    return "str"


def _as_series(values) -> np.ndarray:
    array = np.asarray(values)
    if array.dtype.kind in "USO":
        return np.asarray([str(v) for v in array], dtype=object)
    return array


@dataclass(frozen=True, eq=False)
class PlotData:
    kind: PlotKind
    series: Dict[str, np.ndarray]
    annotations: List[Tuple[str, float]] = field(default_factory=list)
    title: str = ""
    axes: Tuple[str, str] = ("", "")

    def __post_init__(self):
        object.__setattr__(self, "kind", PlotKind(self.kind))
        object.__setattr__(self, "series", {name: _as_series(v) for name, v in self.series.items()})
        object.__setattr__(self, "annotations", [(str(r), float(v)) for r, v in self.annotations])
        object.__setattr__(self, "axes", tuple(str(a) for a in self.axes))
        lengths = {name: len(values) for name, values in self.series.items()}
        if len(set(lengths.values())) > 1:
            raise ValidationError(f"plot series have unequal lengths: {lengths}")
        missing = [name for name in REQUIRED_SERIES[self.kind] if name not in self.series]
        if missing:
            raise ValidationError(f"{self.kind.value} plot is missing series {missing}")
        if len(self.axes) != 2:
            raise ValidationError("axes must hold an x and a y label")
        if "\n" in self.title:
            raise ValidationError("plot titles must be a single line")

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.series.values()))) if self.series else 0

    def annotation(self, role: str) -> Optional[float]:
        for name, value in self.annotations:
            if name == role:
                return value
        return None

    def equals(self, other: "PlotData") -> bool:
        if (self.kind != other.kind or self.title != other.title or self.axes != other.axes
                or list(self.series) != list(other.series)):
            return False
        if len(self.annotations) != len(other.annotations):
            return False
        for (r1, v1), (r2, v2) in zip(self.annotations, other.annotations):
            if r1 != r2 or not (v1 == v2 or (math.isnan(v1) and math.isnan(v2))):
                return False
        for name, values in self.series.items():
            theirs = other.series[name]
            if _series_type(values) != _series_type(theirs):
                return False
            if _series_type(values) == "float":
                if not np.array_equal(values, theirs, equal_nan=True):
                    return False
            elif list(values) != list(theirs):
                return False
        return True


# --- lossless dumps -------------------------------------------------------

def _cell(value, kind: str) -> str:
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "true" if value else "false"
    if kind == "int":
        return str(int(value))
    return str(value)


def _parse_cells(cells: List[str], kind: str) -> np.ndarray:
    if kind == "float":
        return np.array([float(c) for c in cells], dtype=float)
    if kind == "bool":
        return np.array([c == "true" for c in cells], dtype=bool)
    if kind == "int":
        return np.array([int(c) for c in cells], dtype=np.int64)
    return np.asarray(cells, dtype=object)


def to_csv_text(plot: PlotData) -> str:
    types = {name: _series_type(values) for name, values in plot.series.items()}
    out = io.StringIO()
    out.write(f"# kind: {plot.kind.value}\n")
    out.write(f"# title: {json.dumps(plot.title)}\n")
    out.write(f"# axes: {json.dumps(list(plot.axes))}\n")
    out.write(f"# annotations: {json.dumps([[r, v] for r, v in plot.annotations])}\n")
    out.write(f"# types: {json.dumps(types)}\n")
    frame = pd.DataFrame({name: [_cell(v, types[name]) for v in values] for name, values in plot.series.items()},
                         columns=list(plot.series))
    frame.to_csv(out, index=False, lineterminator="\n")
    return out.getvalue()


def from_csv_text(text: str) -> PlotData:
    lines = text.splitlines()
    meta = {}
    body_start = 0
    for body_start, line in enumerate(lines):
        if not line.startswith("# "):
            break
        key, _, value = line[2:].partition(": ")
        meta[key] = value
    else:
        body_start = len(lines)
    try:
        kind = PlotKind(meta["kind"])
        title = json.loads(meta["title"])
        annotations = [(r, float(v)) for r, v in json.loads(meta["annotations"])]
        types = json.loads(meta["types"])
        axes = tuple(json.loads(meta.get("axes", "[\"\", \"\"]")))
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed plot CSV metadata: {exc}") from exc
    body = "\n".join(lines[body_start:])
    if not body.strip():
        raise DataError("plot CSV has no header row")
    try:
        # cells stay strings; _parse_cells restores the recorded types
        frame = pd.read_csv(io.StringIO(body), dtype=str, na_filter=False)
        series = {name: _parse_cells(frame[name].tolist(), types[name]) for name in frame.columns}
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed plot CSV body: {exc}") from exc
    return PlotData(kind, series, annotations, title, axes)


def to_json_text(plot: PlotData) -> str:
    def plain(values: np.ndarray):
        kind = _series_type(values)
        if kind == "float":
            return [float(v) for v in values]
        if kind == "int":
            return [int(v) for v in values]
        if kind == "bool":
            return [bool(v) for v in values]
        return [str(v) for v in values]

    payload = {
        "kind": plot.kind.value,
        "title": plot.title,
        "axes": list(plot.axes),
        "annotations": [[r, v] for r, v in plot.annotations],
        "types": {name: _series_type(values) for name, values in plot.series.items()},
        "series": {name: plain(values) for name, values in plot.series.items()},
    }
    return json.dumps(payload, indent=1) + "\n"


def from_json_text(text: str) -> PlotData:
    payload = json.loads(text)
    types = payload["types"]
    series = {}
    for name, values in payload["series"].items():
        if types[name] == "float":
            series[name] = np.array(values, dtype=float)
        elif types[name] == "int":
            series[name] = np.array(values, dtype=np.int64)
        elif types[name] == "bool":
            series[name] = np.array(values, dtype=bool)
        else:
            series[name] = np.asarray(values, dtype=object)
    return PlotData(payload["kind"], series, [(r, v) for r, v in payload["annotations"]], payload["title"],
                    tuple(payload.get("axes", ("", ""))))


# --- SVG ------------------------------------------------------------------

def _fmt(value: float) -> str:
    return f"{value:.2f}"


class _Frame:
    """Affine map from data coordinates to the plotting area."""

    def __init__(self, xs: np.ndarray, ys: np.ndarray):
        xs = xs[np.isfinite(xs)]
        ys = ys[np.isfinite(ys)]
        self.x0, self.x1 = self._limits(xs)
        self.y0, self.y1 = self._limits(ys)

    @staticmethod
    def _limits(values: np.ndarray) -> Tuple[float, float]:
        if values.size == 0:
            return 0.0, 1.0
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            return lo - 0.5, hi + 0.5
        pad = 0.04 * (hi - lo)
        return lo - pad, hi + pad

    def px(self, x: float) -> float:
        return MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * MARGIN)

    def py(self, y: float) -> float:
        return HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * MARGIN)


def _axes(frame: _Frame, title: str, x_label: str, y_label: str) -> List[str]:
    bottom, left = HEIGHT - MARGIN, MARGIN
    return [
        f'<line x1="{left}" y1="{bottom}" x2="{WIDTH - MARGIN}" y2="{bottom}" stroke="#000000" />',
        f'<line x1="{left}" y1="{MARGIN}" x2="{left}" y2="{bottom}" stroke="#000000" />',
        f'<text x="{WIDTH / 2:.0f}" y="{MARGIN / 2:.0f}" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 15}" text-anchor="middle" font-size="12">{escape(x_label)}</text>',
        f'<text x="15" y="{HEIGHT / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {HEIGHT / 2:.0f})">{escape(y_label)}</text>',
        f'<text x="{left}" y="{bottom + 15}" font-size="10">{frame.x0:.3g}</text>',
        f'<text x="{WIDTH - MARGIN}" y="{bottom + 15}" text-anchor="end" font-size="10">{frame.x1:.3g}</text>',
        f'<text x="{left - 5}" y="{bottom}" text-anchor="end" font-size="10">{frame.y0:.3g}</text>',
        f'<text x="{left - 5}" y="{MARGIN + 10}" text-anchor="end" font-size="10">{frame.y1:.3g}</text>',
    ]


def _circles(frame: _Frame, xs, ys, colors) -> List[str]:
    out = []
    for x, y, color in zip(xs, ys, colors):
        if math.isfinite(x) and math.isfinite(y):
            out.append(f'<circle cx="{_fmt(frame.px(x))}" cy="{_fmt(frame.py(y))}" r="3" fill="{color}" />')
    return out


def _hline(frame: _Frame, y: float, color: str) -> str:
    return (f'<line x1="{MARGIN}" y1="{_fmt(frame.py(y))}" x2="{WIDTH - MARGIN}" y2="{_fmt(frame.py(y))}" '
            f'stroke="{color}" stroke-dasharray="4 4" />')


def _vline(frame: _Frame, x: float, color: str) -> str:
    return (f'<line x1="{_fmt(frame.px(x))}" y1="{MARGIN}" x2="{_fmt(frame.px(x))}" y2="{HEIGHT - MARGIN}" '
            f'stroke="{color}" stroke-width="2" />')


def _group_colors(labels: Sequence[str]) -> List[str]:
    order = {label: i for i, label in enumerate(dict.fromkeys(labels))}
    return [PALETTE[order[label] % len(PALETTE)] for label in labels]


def _render_curves(plot: PlotData) -> List[str]:
    s = plot.series
    frame = _Frame(s["x"].astype(float), s["density"].astype(float))
    parts = _axes(frame, plot.title, "value", "density")
    curves: Dict[int, List[int]] = {}
    for row, curve in enumerate(s["curve"]):
        curves.setdefault(int(curve), []).append(row)
    # observed last so it is drawn on top
    ordered = sorted(curves.items(), key=lambda item: (s["role"][item[1][0]] == CurveRole.OBSERVED.value, item[0]))
    for _, rows in ordered:
        role = str(s["role"][rows[0]])
        points = " L ".join(f"{_fmt(frame.px(s['x'][r]))} {_fmt(frame.py(s['density'][r]))}" for r in rows)
        width = 2 if role == CurveRole.OBSERVED.value else 1
        parts.append(f'<path d="M {points}" fill="none" stroke="{COLORS[role]}" stroke-width="{width}" />')
    return parts


def _render_histogram(values: np.ndarray, observed: Optional[float], title: str, color: str) -> List[str]:
    values = values[np.isfinite(values)]
    counts, edges = np.histogram(values, bins=30) if values.size else (np.zeros(1), np.array([0.0, 1.0]))
    xs = np.append(edges, observed) if observed is not None and math.isfinite(observed) else edges
    frame = _Frame(xs, np.append(counts, 0.0))
    parts = _axes(frame, title, "statistic", "count")
    base = frame.py(0.0)
    for count, lo, hi in zip(counts, edges[:-1], edges[1:]):
        top = frame.py(float(count))
        parts.append(f'<rect x="{_fmt(frame.px(lo))}" y="{_fmt(top)}" width="{_fmt(frame.px(hi) - frame.px(lo))}" '
                     f'height="{_fmt(base - top)}" fill="{color}" stroke="#ffffff" />')
    if observed is not None and math.isfinite(observed):
        parts.append(_vline(frame, observed, COLORS["observed"]))
    return parts


def render_svg(plot: PlotData) -> str:
    """Static 800x600 rendering; identical PlotData gives identical text."""
    s = plot.series
    kind = plot.kind
    parts: List[str]

    if kind == PlotKind.SCATTER_DIVERGENCES:
        frame = _Frame(s["x"].astype(float), s["y"].astype(float))
        parts = _axes(frame, plot.title, plot.axes[0] or "x", plot.axes[1] or "y")
        colors = [COLORS["divergent"] if d else COLORS["draw"] for d in s["divergent"]]
        parts += _circles(frame, s["x"], s["y"], colors)
    elif kind == PlotKind.PARALLEL_COORDINATES:
        frame = _Frame(s["position"].astype(float), s["value"].astype(float))
        parts = _axes(frame, plot.title, "parameter", "value")
        lines: Dict[int, List[int]] = {}
        for row, line in enumerate(s["line"]):
            lines.setdefault(int(line), []).append(row)
        ordered = sorted(lines.items(), key=lambda item: (bool(s["divergent"][item[1][0]]), item[0]))
        for _, rows in ordered:
            color = COLORS["divergent"] if s["divergent"][rows[0]] else COLORS["replicate"]
            points = " ".join(f"{_fmt(frame.px(s['position'][r]))},{_fmt(frame.py(s['value'][r]))}" for r in rows)
            parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" />')
    elif kind in (PlotKind.DENSITY_OVERLAY, PlotKind.PIT_OVERLAY):
        parts = _render_curves(plot)
    elif kind == PlotKind.STAT_HISTOGRAM:
        parts = _render_histogram(s["replicated"].astype(float), plot.annotation("observed"),
                                  plot.title, COLORS["replicate"])
    elif kind == PlotKind.GROUPED_STAT_HISTOGRAM:
        groups = list(dict.fromkeys(str(g) for g in s["group"]))
        parts = [f'<text x="{WIDTH / 2:.0f}" y="20" text-anchor="middle" font-size="16">{escape(plot.title)}</text>']
        cols = max(1, math.ceil(math.sqrt(len(groups))))
        rows = max(1, math.ceil(len(groups) / cols))
        for i, group in enumerate(groups):
            values = s["replicated"][np.asarray([str(g) == group for g in s["group"]])].astype(float)
            panel = _render_histogram(values, plot.annotation(f"observed:{group}"), group, COLORS["replicate"])
            sx, sy = 1.0 / cols, 1.0 / rows
            tx, ty = (i % cols) * WIDTH * sx, 30 + (i // cols) * (HEIGHT - 30) * sy
            parts.append(f'<g transform="translate({_fmt(tx)} {_fmt(ty)}) scale({sx:.4f} {sy * (HEIGHT - 30) / HEIGHT:.4f})">')
            parts += panel
            parts.append("</g>")
    elif kind == PlotKind.KHAT_SCATTER:
        khat = s["khat"].astype(float)
        frame = _Frame(s["index"].astype(float), np.append(khat[np.isfinite(khat)], [0.0, KHAT_BAD]))
        parts = _axes(frame, plot.title, "data point", "k-hat")
        for level in (KHAT_GOOD, KHAT_OK, KHAT_BAD):
            parts.append(_hline(frame, level, COLORS["reference"]))
        colors = [COLORS["divergent"] if band in ("bad", "very bad") else COLORS["draw"] for band in s["band"]]
        parts += _circles(frame, s["index"].astype(float), khat, colors)
    elif kind == PlotKind.ELPD_DIFF_SCATTER:
        diff = s["elpd_diff"].astype(float)
        frame = _Frame(s["index"].astype(float), np.append(diff, 0.0))
        parts = _axes(frame, plot.title, "data point", "ELPD difference")
        parts.append(_hline(frame, 0.0, COLORS["reference"]))
        parts += _circles(frame, s["index"].astype(float), diff, _group_colors([str(g) for g in s["group"]]))
    elif kind == PlotKind.PRIOR_COMPARE:
        frame = _Frame(s["x"].astype(float), s["y"].astype(float))
        parts = _axes(frame, plot.title, "x", "simulated y")
        parts += _circles(frame, s["x"], s["y"], _group_colors([str(b) for b in s["book"]]))
    else:
        frame = _Frame(s["x"].astype(float), s["y"].astype(float))
        parts = _axes(frame, plot.title, "log satellite estimate", "log PM2.5")
        parts += _circles(frame, s["x"], s["y"], _group_colors([str(g) for g in s["group"]]))
        intercept, slope = plot.annotation("intercept"), plot.annotation("slope")
        if intercept is not None and slope is not None:
            x0, x1 = frame.x0, frame.x1
            parts.append(f'<line x1="{_fmt(frame.px(x0))}" y1="{_fmt(frame.py(intercept + slope * x0))}" '
                         f'x2="{_fmt(frame.px(x1))}" y2="{_fmt(frame.py(intercept + slope * x1))}" '
                         f'stroke="{COLORS["observed"]}" stroke-width="2" />')

    body = "\n".join(parts)
    return (f'<svg width="{WIDTH}" height="{HEIGHT}" xmlns="http://www.w3.org/2000/svg">\n'
            f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff" />\n{body}\n</svg>\n')


def emit_plot(plot: PlotData, format: str, path: str) -> str:
    """Write `plot` as svg, csv or json; returns the path written."""
    writers = {"svg": render_svg, "csv": to_csv_text, "json": to_json_text}
    if format not in writers:
        raise ValidationError(f"unknown plot format {format!r}; expected one of {sorted(writers)}")
    text = writers[format](plot)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    except OSError as exc:
        raise DataError(f"cannot write plot to {path}: {exc}") from exc
    return path


def read_plot(path: str) -> PlotData:
    """Parse a plot written by emit_plot in csv or json form."""
    with open(path, encoding="utf-8") as handle:
        text = handle.read()
    if path.endswith(".json"):
        return from_json_text(text)
    return from_csv_text(text)


# --- data builders --------------------------------------------------------

def _column(draws: Draws, name: str) -> np.ndarray:
    try:
        return draws.column(name)
    except KeyError:
        raise ValidationError(f"unknown parameter {name!r}; draws have {list(draws.names)}") from None


def divergence_scatter_data(draws: Draws, param_x: str, param_y: str) -> PlotData:
    """Every draw of (param_x, param_y) with divergent draws ordered last."""
    x, y = _column(draws, param_x), _column(draws, param_y)
    order = np.argsort(draws.divergent, kind="stable")
    return PlotData(
        PlotKind.SCATTER_DIVERGENCES,
        {"x": x[order], "y": y[order], "divergent": draws.divergent[order]},
        [],
        f"{param_y} vs {param_x} (divergent transitions in green)",
        (param_x, param_y),
    )


def parcoord_data(draws: Draws, params: Sequence[str], standardize: bool = False) -> PlotData:
    """One polyline per draw across the parameter axes, long format."""
    if len(params) < 2:
        raise ValidationError("parallel coordinates need at least two parameters")
    values = np.column_stack([_column(draws, name) for name in params])
    if standardize:
        mean = values.mean(axis=0)
        sd = values.std(axis=0)
        values = (values - mean) / np.where(sd > 0, sd, 1.0)
    n_draws, n_axes = values.shape
    return PlotData(
        PlotKind.PARALLEL_COORDINATES,
        {
            "line": np.repeat(np.arange(n_draws), n_axes),
            "axis": np.tile(np.asarray(list(params), dtype=object), n_draws),
            "position": np.tile(np.arange(n_axes), n_draws),
            "value": values.ravel(),
            "divergent": np.repeat(draws.divergent, n_axes),
        },
        [("standardized", 1.0 if standardize else 0.0)],
        "parallel coordinates" + (" (standardized)" if standardize else ""),
    )


def _curve_series(curves: Sequence[DensityCurve]) -> Dict[str, np.ndarray]:
    return {
        "curve": np.concatenate([np.full(c.grid.size, i) for i, c in enumerate(curves)]),
        "role": np.concatenate([np.full(c.grid.size, c.label.value, dtype=object) for c in curves]),
        "x": np.concatenate([c.grid for c in curves]),
        "density": np.concatenate([c.density for c in curves]),
    }


def density_overlay_data(curves: Sequence[DensityCurve], title: str = "posterior predictive density") -> PlotData:
    if not curves:
        raise ValidationError("no density curves to plot")
    return PlotData(PlotKind.DENSITY_OVERLAY, _curve_series(curves), [], title)


def pit_overlay_data(pits: Sequence[float], references: Sequence[DensityCurve],
                     title: str = "LOO-PIT") -> PlotData:
    """Density of the LOO-PIT values over uniform reference curves on [0, 1]."""
    grid = references[0].grid if references else np.linspace(0.0, 1.0, 512)
    observed = kde(pits, grid=grid, label=CurveRole.OBSERVED)
    return PlotData(PlotKind.PIT_OVERLAY, _curve_series(list(references) + [observed]), [], title)


def stat_histogram_data(check: StatCheck) -> PlotData:
    return PlotData(
        PlotKind.STAT_HISTOGRAM,
        {"replicated": check.replicated},
        [("observed", check.observed), ("p_upper", check.p_upper), ("p_lower", check.p_lower)],
        f"{check.stat_name.value}(y_rep)",
    )


def grouped_stat_data(checks: Sequence[StatCheck]) -> PlotData:
    if not checks:
        raise ValidationError("no grouped checks to plot")
    groups = np.concatenate([np.full(c.replicated.size, str(c.group), dtype=object) for c in checks])
    annotations = []
    for check in checks:
        annotations += [(f"observed:{check.group}", check.observed),
                        (f"p_upper:{check.group}", check.p_upper),
                        (f"p_lower:{check.group}", check.p_lower)]
    return PlotData(
        PlotKind.GROUPED_STAT_HISTOGRAM,
        {"group": groups, "replicated": np.concatenate([c.replicated for c in checks])},
        annotations,
        f"{checks[0].stat_name.value}(y_rep) by group",
    )


def khat_scatter_data(loo: LooResult, title: str = "PSIS k-hat") -> PlotData:
    return PlotData(
        PlotKind.KHAT_SCATTER,
        {"index": np.arange(loo.n), "khat": loo.khat,
         "band": np.asarray(khat_bands(loo.khat), dtype=object)},
        [("good", KHAT_GOOD), ("ok", KHAT_OK), ("bad", KHAT_BAD)],
        title,
    )


def elpd_diff_data(comparison: LooComparison, title: str = "pointwise ELPD difference") -> PlotData:
    n = comparison.pointwise_diff.size
    groups = comparison.group if comparison.group is not None else ("",) * n
    return PlotData(
        PlotKind.ELPD_DIFF_SCATTER,
        {"index": np.arange(n), "elpd_diff": comparison.pointwise_diff,
         "group": np.asarray(groups, dtype=object)},
        [("diff_total", comparison.diff_total), ("diff_se", comparison.diff_se)],
        title,
    )


def flipbook_page_data(book: FlipBook, template: Dataset, page: int) -> PlotData:
    """One simulated dataset of a flip-book at the template's x values."""
    if not 0 <= page < book.n_datasets:
        raise ValidationError(f"page {page} outside flip-book of {book.n_datasets} datasets")
    return PlotData(
        PlotKind.FLIPBOOK_PAGE,
        {"x": template.x, "y": book.page(page),
         "group": np.asarray([template.group_names[g] for g in template.group], dtype=object)},
        [("page", float(page))],
        f"prior predictive dataset {page + 1} ({book.prior_label} priors)",
    )


def prior_compare_data(books: Sequence[FlipBook], template: Dataset, n_pages: int = 1) -> PlotData:
    """Several books' first pages on a shared axis."""
    book_col, page_col, xs, ys = [], [], [], []
    for book in books:
        for page in range(min(n_pages, book.n_datasets)):
            book_col += [book.prior_label] * template.n
            page_col.append(np.full(template.n, page))
            xs.append(template.x)
            ys.append(book.page(page))
    if not xs:
        raise ValidationError("no flip-book pages to compare")
    return PlotData(
        PlotKind.PRIOR_COMPARE,
        {"book": np.asarray(book_col, dtype=object), "page": np.concatenate(page_col),
         "x": np.concatenate(xs), "y": np.concatenate(ys)},
        [],
        "prior predictive datasets: " + " vs ".join(book.prior_label for book in books),
    )


def eda_scatter_data(dataset: Dataset) -> PlotData:
    """Observations coloured by region with the pooled least-squares line."""
    fit = ols_fit(dataset.x, dataset.y)
    return PlotData(
        PlotKind.EDA_SCATTER,
        {"x": dataset.x, "y": dataset.y,
         "group": np.asarray([dataset.group_names[g] for g in dataset.group], dtype=object)},
        [("intercept", fit.intercept), ("slope", fit.slope), ("r_squared", fit.r_squared)],
        f"log PM2.5 vs log satellite estimate (R^2 = {fit.r_squared:.2f})",
    )
