"""
Prior predictive flip-books: datasets simulated from the joint prior
data-generating process at a template's x values and groups.
"""
import json
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from distributions import RngStream, sample
from errors import DataError, ValidationError
from models import N_SCHOOLS, Dataset, ModelSpec, grouping

logger = logging.getLogger(__name__)

# 22,000 ug/m3 on the log scale
EXCEEDANCE_LEVEL = 22000.0
LOG_EXCEEDANCE = math.log(EXCEEDANCE_LEVEL)


@dataclass(frozen=True, eq=False)
class FlipBook:
    """Simulated y vectors, one page per dataset, with their generating parameters."""

    datasets: np.ndarray
    prior_label: str
    params: Tuple[Dict[str, float], ...]
    model: str = ""

    def __post_init__(self):
        object.__setattr__(self, "datasets", np.atleast_2d(np.asarray(self.datasets, dtype=float)))
        object.__setattr__(self, "params", tuple(self.params))
        if len(self.params) != self.datasets.shape[0]:
            raise ValidationError("one parameter record per simulated dataset is required")

    @property
    def n_datasets(self) -> int:
        return int(self.datasets.shape[0])

    def page(self, index: int) -> np.ndarray:
        return self.datasets[index]

    def to_json(self, path: str):
        payload = {
            "model": self.model,
            "prior_label": self.prior_label,
            "datasets": self.datasets.tolist(),
            "params": list(self.params),
        }
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=1)
            handle.write("\n")

    @classmethod
    def from_json(cls, path: str) -> "FlipBook":
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
        try:
            return cls(np.asarray(payload["datasets"], dtype=float), payload["prior_label"],
                       tuple(payload["params"]), payload.get("model", ""))
        except KeyError as exc:
            raise DataError(f"{path}: flip-book is missing {exc}") from exc


def _scale(dist, rng: RngStream, on_variance: bool = False) -> float:
    value = sample(dist, rng)
    return math.sqrt(value) if on_variance else value


def _simulate_one(model: ModelSpec, template: Dataset, rng: RngStream) -> Tuple[np.ndarray, Dict[str, float]]:
    priors = model.priors
    if model.kind.is_eight_schools:
        if template.obs_sd is None:
            raise DataError("8-schools prior simulation needs per-observation standard deviations")
        mu = sample(priors.beta0, rng)
        tau = _scale(priors.tau, rng, priors.tau_on_variance)
        theta = mu + tau * rng.standard_normal(N_SCHOOLS)
        y = theta[template.group] + template.obs_sd * rng.standard_normal(template.n)
        params = {"mu": mu, "tau": tau}
        params.update({f"theta[{j + 1}]": float(v) for j, v in enumerate(theta)})
        return y, params

    beta0 = sample(priors.beta0, rng)
    beta1 = sample(priors.beta1, rng)
    sigma = _scale(priors.sigma, rng)
    params = {"beta0": beta0, "beta1": beta1, "sigma": sigma}
    mean = beta0 + beta1 * template.x
    if model.kind.is_hierarchical:
        labels, names = grouping(model, template)
        tau0 = _scale(priors.tau, rng, priors.tau_on_variance)
        tau1 = _scale(priors.tau, rng, priors.tau_on_variance)
        offset0 = tau0 * rng.standard_normal(len(names))
        offset1 = tau1 * rng.standard_normal(len(names))
        mean = mean + offset0[labels] + offset1[labels] * template.x
        params.update({"tau0": tau0, "tau1": tau1})
        params.update({f"beta0_j[{j + 1}]": float(v) for j, v in enumerate(offset0)})
        params.update({f"beta1_j[{j + 1}]": float(v) for j, v in enumerate(offset1)})
    return mean + sigma * rng.standard_normal(template.n), params


def prior_flipbook(model: ModelSpec, template: Dataset, n_datasets: int, rng: RngStream) -> FlipBook:
    """Simulate `n_datasets` pages; page d uses the stream derived with index d."""
    if n_datasets < 1:
        raise ValidationError(f"n_datasets must be >= 1, got {n_datasets}")
    pages, params = [], []
    for d in range(n_datasets):
        y, record = _simulate_one(model, template, rng.derive(d))
        pages.append(y)
        params.append(record)
    book = FlipBook(np.vstack(pages) if template.n else np.empty((n_datasets, 0)),
                    model.priors.label, tuple(params), model.label)
    logger.info("simulated %d prior predictive datasets (%s priors, %s)",
                n_datasets, model.priors.label, model.label)
    return book


@dataclass(frozen=True, eq=False)
class TailSummary:
    max_abs: np.ndarray
    y_min: np.ndarray
    y_max: np.ndarray
    y_sd: np.ndarray
    max_abs_quantiles: Dict[int, float]
    n_exceeding: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "max_abs_quantiles": {str(q): v for q, v in self.max_abs_quantiles.items()},
            "n_datasets": int(self.max_abs.size),
            "n_exceeding": self.n_exceeding,
            "exceedance_level": EXCEEDANCE_LEVEL,
        }


def prior_tail_summary(book: FlipBook) -> TailSummary:
    """Per-dataset spread and the 5/50/95% quantiles of max|y| across datasets."""
    data = book.datasets
    if data.shape[0] == 0 or data.shape[1] == 0:
        raise ValidationError("cannot summarize an empty flip-book")
    max_abs = np.abs(data).max(axis=1)
    quantiles = np.quantile(max_abs, [0.05, 0.5, 0.95])
    return TailSummary(
        max_abs=max_abs,
        y_min=data.min(axis=1),
        y_max=data.max(axis=1),
        y_sd=data.std(axis=1),
        max_abs_quantiles={5: float(quantiles[0]), 50: float(quantiles[1]), 95: float(quantiles[2])},
        n_exceeding=int(np.sum(data.max(axis=1) > LOG_EXCEEDANCE)),
    )


def compare_books(books: List[FlipBook]) -> Dict[str, Dict[str, object]]:
    """Tail summaries keyed by prior label."""
    return {book.prior_label: prior_tail_summary(book).to_dict() for book in books}
