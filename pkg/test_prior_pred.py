"""
Prior predictive flip-books and their tail summaries.
"""
import math

import numpy as np
import pytest

from data_pipeline import SynthConfig, load_eight_schools, synth_generate
from distributions import RngStream
from errors import ValidationError
from models import make_model
from prior_pred import LOG_EXCEEDANCE, FlipBook, compare_books, prior_flipbook, prior_tail_summary


@pytest.fixture(scope="module")
def template():
    data, _ = synth_generate(SynthConfig(seed=0))
    return data


def test_book_shape_and_parameters(template):
    book = prior_flipbook(make_model("hier-who", "weak"), template, 5, RngStream(0, 1))
    assert book.datasets.shape == (5, template.n)
    assert book.n_datasets == 5
    assert book.prior_label == "weak"
    assert set(book.params[0]) >= {"beta0", "beta1", "sigma", "tau0", "tau1", "beta1_j[7]"}
    np.testing.assert_array_equal(book.page(2), book.datasets[2])


def test_pages_are_reproducible_per_index(template):
    model = make_model("pooled", "vague")
    small = prior_flipbook(model, template, 3, RngStream(9, 1))
    large = prior_flipbook(model, template, 6, RngStream(9, 1))
    np.testing.assert_array_equal(small.datasets, large.datasets[:3])


def test_pooled_pages_follow_their_parameters(template):
    book = prior_flipbook(make_model("pooled", "weak"), template, 200, RngStream(2, 1))
    residual_sd = []
    for d in range(book.n_datasets):
        p = book.params[d]
        resid = book.page(d) - (p["beta0"] + p["beta1"] * template.x)
        residual_sd.append(resid.std() / p["sigma"])
    assert np.median(residual_sd) == pytest.approx(1.0, abs=0.05)


@pytest.mark.slow
def test_weak_slope_draws_center_on_one(template):
    book = prior_flipbook(make_model("pooled", "weak"), template, 10_000, RngStream(4, 1))
    slopes = np.array([p["beta1"] for p in book.params])
    assert slopes.mean() == pytest.approx(1.0, abs=0.05)
    assert slopes.std() == pytest.approx(1.0, abs=0.05)


def test_eight_schools_book_uses_known_sds():
    data = load_eight_schools()
    book = prior_flipbook(make_model("8schools-nc"), data, 4, RngStream(0, 1))
    assert book.datasets.shape == (4, 8)
    assert "theta[8]" in book.params[0]


def test_invalid_book_size(template):
    with pytest.raises(ValidationError):
        prior_flipbook(make_model("pooled"), template, 0, RngStream(0))


def test_weak_priors_still_reach_implausible_values(template):
    weak = prior_flipbook(make_model("pooled", "weak"), template, 1000, RngStream(0, 1))
    vague = prior_flipbook(make_model("pooled", "vague"), template, 1000, RngStream(0, 1))
    weak_summary = prior_tail_summary(weak)
    vague_summary = prior_tail_summary(vague)
    assert weak_summary.n_exceeding >= 1
    assert weak.datasets.max() > LOG_EXCEEDANCE
    assert vague_summary.max_abs_quantiles[50] >= 10 * weak_summary.max_abs_quantiles[50]


def test_tail_summary_fields():
    book = FlipBook(np.array([[1.0, -2.0], [11.0, 0.0]]), "weak", ({}, {}))
    summary = prior_tail_summary(book)
    np.testing.assert_array_equal(summary.max_abs, [2.0, 11.0])
    np.testing.assert_array_equal(summary.y_min, [-2.0, 0.0])
    assert summary.n_exceeding == 1
    assert math.log(22000.0) < 11.0
    assert summary.to_dict()["n_datasets"] == 2


def test_compare_keys_by_label(template):
    books = [prior_flipbook(make_model("pooled", label), template, 10, RngStream(0, 1)) for label in ("vague", "weak")]
    assert set(compare_books(books)) == {"vague", "weak"}


def test_json_round_trip(tmp_path, template):
    book = prior_flipbook(make_model("hier-who", "vague"), template, 3, RngStream(1, 1))
    path = str(tmp_path / "flipbook.json")
    book.to_json(path)
    back = FlipBook.from_json(path)
    np.testing.assert_array_equal(back.datasets, book.datasets)
    assert back.params == book.params
    assert back.model == "hier-who"


def test_parameter_records_must_match_pages():
    with pytest.raises(ValidationError):
        FlipBook(np.zeros((2, 3)), "weak", ({},))
