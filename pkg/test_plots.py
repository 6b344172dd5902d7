"""
Plot data builders, lossless dumps and the SVG renderer.
"""
import math

import numpy as np
import pytest

from data_pipeline import load_eight_schools
from distributions import RngStream
from errors import DataError, ValidationError
from metrics import WorkflowMetrics
from models import Dataset, make_model
from plots import (COLORS, HEIGHT, WIDTH, PlotData, PlotKind, density_overlay_data, divergence_scatter_data,
                   elpd_diff_data, emit_plot, flipbook_page_data, from_csv_text, from_json_text, grouped_stat_data,
                   khat_scatter_data, parcoord_data, pit_overlay_data, read_plot, render_svg, stat_histogram_data,
                   to_csv_text, to_json_text)
from ppc_diagnostics import CurveRole, StatCheck, StatKind, density_overlay, uniform_reference_curves
from prior_pred import FlipBook
from psis_loo import LooResult, loo_compare
from sampler import Draws, SamplerConfig, run_chains


@pytest.fixture
def draws():
    rng = np.random.default_rng(0)
    n = 40
    divergent = np.zeros(n, dtype=bool)
    divergent[[3, 17, 25]] = True
    params = np.column_stack([rng.normal(size=n), rng.normal(size=n), np.exp(rng.normal(size=n))])
    return Draws(params, ("mu", "theta[1]", "tau"), np.repeat([0, 1], n // 2), np.tile(np.arange(n // 2), 2),
                 divergent, rng.normal(size=n), rng.uniform(size=n))


@pytest.fixture
def template():
    return Dataset(x=[0.1, 0.5, 1.2], y=[1.0, 2.0, 3.0], group=[0, 1, 1], group_names=("a", "b"),
                   monitor_id=("m1", "m2", "m3"), country=("c1", "c2", "c2"))


def mixed_plot():
    return PlotData(
        PlotKind.KHAT_SCATTER,
        {"index": np.arange(4), "khat": np.array([0.1, math.nan, 1.0 / 3.0, math.inf]),
         "band": np.array(["good", "insufficient", "good", "very, bad"], dtype=object),
         "flag": np.array([True, False, True, False])},
        [("good", 0.5), ("missing", math.nan)],
        'k-hat "values"',
        ("data point", "k"),
    )


def test_series_must_have_equal_lengths():
    with pytest.raises(ValidationError):
        PlotData(PlotKind.SCATTER_DIVERGENCES, {"x": [1.0, 2.0], "y": [1.0], "divergent": [False, True]})


def test_kind_determines_required_series():
    with pytest.raises(ValidationError, match="missing series"):
        PlotData(PlotKind.SCATTER_DIVERGENCES, {"x": [1.0], "y": [1.0]})
    with pytest.raises(ValueError):
        PlotData("histogram", {"replicated": [1.0]})


def test_csv_dump_is_lossless():
    plot = mixed_plot()
    text = to_csv_text(plot)
    assert text.startswith("# kind: khat-scatter\n")
    assert from_csv_text(text).equals(plot)


def test_json_dump_is_lossless():
    plot = mixed_plot()
    assert from_json_text(to_json_text(plot)).equals(plot)


def test_malformed_csv_metadata():
    with pytest.raises(DataError):
        from_csv_text("# kind: khat-scatter\nindex,khat,band\n")


def test_csv_dump_keeps_empty_strings_and_empty_plots():
    plot = PlotData(PlotKind.ELPD_DIFF_SCATTER,
                    {"index": [0, 1], "elpd_diff": [0.5, -1.0], "group": np.array(["", "a,b"], dtype=object)})
    back = from_csv_text(to_csv_text(plot))
    assert list(back.series["group"]) == ["", "a,b"]
    assert back.equals(plot)
    empty = PlotData(PlotKind.STAT_HISTOGRAM, {"replicated": np.array([], dtype=float)})
    assert from_csv_text(to_csv_text(empty)).n_rows == 0


def test_malformed_csv_body():
    header = to_csv_text(mixed_plot()).split("index,")[0]
    with pytest.raises(DataError):
        from_csv_text(header + "index,khat,band,flag\nx,0.1,good,true\n")
    with pytest.raises(DataError):
        from_csv_text(header)


def test_scatter_orders_divergent_points_last(draws):
    plot = divergence_scatter_data(draws, "theta[1]", "log(tau)")
    assert plot.n_rows == 40
    assert list(plot.series["divergent"][-3:]) == [True, True, True]
    assert not plot.series["divergent"][:-3].any()
    assert plot.series["y"][-1] == draws.column("log(tau)")[25]
    assert plot.axes == ("theta[1]", "log(tau)")


def test_scatter_without_divergences(draws):
    clean = Draws.from_mapping({"a": [1.0, 2.0], "b": [3.0, 4.0]})
    plot = divergence_scatter_data(clean, "a", "b")
    assert not plot.series["divergent"].any()


def test_scatter_rejects_unknown_parameter(draws):
    with pytest.raises(ValidationError, match="unknown parameter"):
        divergence_scatter_data(draws, "mu", "sigma")


def test_scatter_svg_colors_divergent_points(draws):
    svg = render_svg(divergence_scatter_data(draws, "mu", "log(tau)"))
    assert svg.count("<circle") == 40
    assert svg.count(f'fill="{COLORS["divergent"]}"') == 3
    assert f'width="{WIDTH}" height="{HEIGHT}"' in svg


def test_parcoord_layout(draws):
    plot = parcoord_data(draws, ["mu", "theta[1]", "log(tau)"])
    assert plot.n_rows == 120
    assert list(plot.series["axis"][:3]) == ["mu", "theta[1]", "log(tau)"]
    assert render_svg(plot).count("<polyline") == 40


def test_parcoord_single_draw():
    single = Draws.from_mapping({"a": [1.0], "b": [2.0], "c": [3.0]})
    plot = parcoord_data(single, ["a", "b", "c"])
    assert list(plot.series["value"]) == [1.0, 2.0, 3.0]
    assert render_svg(plot).count("<polyline") == 1


def test_parcoord_standardizes_axes(draws):
    plot = parcoord_data(draws, ["mu", "log(tau)"], standardize=True)
    values = plot.series["value"].reshape(-1, 2)
    np.testing.assert_allclose(values.mean(axis=0), 0.0, atol=1e-10)
    assert plot.annotation("standardized") == 1.0


def test_parcoord_preconditions(draws):
    with pytest.raises(ValidationError):
        parcoord_data(draws, ["mu"])
    with pytest.raises(ValidationError):
        parcoord_data(draws, ["mu", "nope"])


def test_density_overlay_svg_has_one_path_per_curve():
    rng = np.random.default_rng(1)
    curves = density_overlay(rng.normal(size=30), rng.normal(size=(200, 30)), n_curves=100, n_grid=64)
    svg = render_svg(density_overlay_data(curves))
    assert svg.count("<path") == 101
    last_path = svg[svg.rfind("<path"):]
    assert COLORS["observed"] in last_path


def test_svg_is_deterministic(draws):
    plot = divergence_scatter_data(draws, "mu", "theta[1]")
    assert render_svg(plot) == render_svg(from_csv_text(to_csv_text(plot)))


def test_pit_overlay_puts_observed_last():
    pits = np.random.default_rng(2).uniform(size=60)
    references = uniform_reference_curves(60, RngStream(3), n_sims=5, n_grid=64)
    plot = pit_overlay_data(pits, references)
    assert plot.series["role"][-1] == CurveRole.OBSERVED.value
    assert set(plot.series["curve"]) == set(range(6))
    assert render_svg(plot).count("<path") == 6


def test_stat_histograms():
    check = StatCheck(StatKind.SKEW, 0.4, np.linspace(-1.0, 1.0, 50))
    plot = stat_histogram_data(check)
    assert plot.annotation("observed") == 0.4
    assert plot.annotation("p_upper") == check.p_upper
    assert "<rect" in render_svg(plot)

    grouped = grouped_stat_data([StatCheck(StatKind.SKEW, 0.1, [0.0, 0.2], "r1"),
                                 StatCheck(StatKind.SKEW, -0.5, [0.3, 0.4, 0.5], "r2")])
    assert list(grouped.series["group"]) == ["r1", "r1", "r2", "r2", "r2"]
    assert grouped.annotation("observed:r2") == -0.5
    assert grouped.annotation("p_lower:r2") == 0.0
    assert render_svg(grouped).count("<g ") == 2
    with pytest.raises(ValidationError):
        grouped_stat_data([])


def test_loo_plots():
    a = LooResult.from_pointwise(np.array([-1.0, -2.0, -3.0]), np.array([0.2, 1.0, math.nan]))
    b = LooResult.from_pointwise(np.array([-1.5, -1.0, -2.0]), np.zeros(3))
    khat = khat_scatter_data(a)
    assert list(khat.series["band"]) == ["good", "very bad", "insufficient"]
    assert render_svg(khat).count("<circle") == 2

    diff = elpd_diff_data(loo_compare(a, b, groups=["g1", "g1", "g2"]))
    assert diff.annotation("diff_total") == pytest.approx(1.5)
    assert list(diff.series["group"]) == ["g1", "g1", "g2"]


def test_flipbook_page(template):
    book = FlipBook(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), "weak", ({}, {}))
    plot = flipbook_page_data(book, template, 1)
    assert list(plot.series["y"]) == [4.0, 5.0, 6.0]
    assert list(plot.series["group"]) == ["a", "b", "b"]
    with pytest.raises(ValidationError):
        flipbook_page_data(book, template, 2)


def test_emit_and_read(tmp_path, draws):
    plot = divergence_scatter_data(draws, "mu", "theta[1]")
    for fmt in ("csv", "json"):
        path = emit_plot(plot, fmt, str(tmp_path / f"plot.{fmt}"))
        assert read_plot(path).equals(plot)
    emit_plot(plot, "svg", str(tmp_path / "plot.svg"))
    assert (tmp_path / "plot.svg").read_text() == render_svg(plot)


def test_emit_errors(tmp_path, draws):
    plot = divergence_scatter_data(draws, "mu", "theta[1]")
    with pytest.raises(ValidationError):
        emit_plot(plot, "png", str(tmp_path / "plot.png"))
    with pytest.raises(DataError):
        emit_plot(plot, "csv", str(tmp_path / "missing" / "plot.csv"))


@pytest.mark.slow
def test_centered_eight_schools_funnel_plots():
    draws = run_chains(make_model("8schools-c"), load_eight_schools(), SamplerConfig(seed=3), WorkflowMetrics())
    assert draws.divergent.any()

    scatter = divergence_scatter_data(draws, "theta[1]", "log(tau)")
    y, divergent = scatter.series["y"], scatter.series["divergent"]
    assert y[divergent].mean() <= y.mean() - 1.0

    axes = [f"theta[{j + 1}]" for j in range(8)]
    parcoord = parcoord_data(draws, axes)
    lines = parcoord.series["value"].reshape(-1, len(axes))
    flagged = parcoord.series["divergent"][::len(axes)]
    spread = lines.std(axis=1)
    assert np.median(spread[flagged]) < np.median(spread[~flagged])
