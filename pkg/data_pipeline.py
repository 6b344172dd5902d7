"""
Dataset ingestion, synthetic data with known ground truth, Ward clustering
into data-driven super-regions and exploratory least-squares fits.
"""
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from distributions import RngStream
from errors import ConfigError, DataError, ValidationError
from models import Dataset

logger = logging.getLogger(__name__)

CSV_HEADER = ("monitor_id", "x_log_sat", "y_log_pm25", "region_who", "region_cluster", "country")
EIGHT_SCHOOLS_PATH = Path(__file__).resolve().parent / "data" / "eight_schools.csv"
NO_DATA_CLUSTER = "no_data"


def _natural_key(label: str):
    return [int(part) if part.isdigit() else part for part in re.split(r"(\d+)", label)]


def _lossless(values: Sequence[float]) -> List[str]:
    return [repr(float(v)) for v in values]


def write_csv(dataset: Dataset, path: str):
    """Write `dataset` with the fixed six-column header."""
    n = dataset.n
    clusters = (
        [dataset.cluster_names[c] for c in dataset.cluster] if dataset.cluster is not None else [""] * n
    )
    frame = pd.DataFrame({
        "monitor_id": list(dataset.monitor_id) if dataset.monitor_id else [f"m{i + 1}" for i in range(n)],
        "x_log_sat": _lossless(dataset.x),
        "y_log_pm25": _lossless(dataset.y),
        "region_who": [dataset.group_names[g] for g in dataset.group],
        "region_cluster": clusters,
        "country": list(dataset.country) if dataset.country else [""] * n,
    }, columns=list(CSV_HEADER))
    frame.to_csv(path, index=False, lineterminator="\n")


def _parse_float(text: str, column: str, line: int) -> float:
    if text.strip() == "":
        raise DataError(f"missing {column}", line=line)
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{column} is not a number: {text!r}", line=line) from None
    if not math.isfinite(value):
        raise DataError(f"{column} is not finite: {text!r}", line=line)
    return value


def _index_labels(labels: List[str], known: Optional[Sequence[str]], column: str) -> Tuple[np.ndarray, Tuple[str, ...]]:
    names = tuple(known) if known is not None else tuple(sorted(set(labels), key=_natural_key))
    lookup = {name: index for index, name in enumerate(names)}
    indices = np.empty(len(labels), dtype=np.int64)
    for row, label in enumerate(labels):
        if label not in lookup:
            raise DataError(f"unknown {column} label {label!r}", line=row + 2)
        indices[row] = lookup[label]
    return indices, names


def load_csv(path: str, group_names: Optional[Sequence[str]] = None,
             cluster_names: Optional[Sequence[str]] = None) -> Dataset:
    """Parse a monitor CSV.

    Group and cluster label sets default to the labels present, in natural
    order; pass them explicitly to keep empty regions or to reject unknown ones.
    Reported line numbers count the header as line 1.
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: no observations") from None
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: malformed CSV: {exc}") from None
    if tuple(frame.columns) != CSV_HEADER:
        raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}", line=1)
    if frame.empty:
        raise DataError(f"{path}: no observations")

    xs, ys = [], []
    for row, (x_text, y_text) in enumerate(zip(frame["x_log_sat"], frame["y_log_pm25"])):
        xs.append(_parse_float(x_text, "x_log_sat", row + 2))
        ys.append(_parse_float(y_text, "y_log_pm25", row + 2))
    group, names = _index_labels(list(frame["region_who"]), group_names, "region_who")

    cluster_labels = list(frame["region_cluster"])
    cluster, clusters = None, None
    if any(cluster_labels):
        cluster, clusters = _index_labels(cluster_labels, cluster_names, "region_cluster")
        if cluster_names is None and NO_DATA_CLUSTER not in clusters:
            clusters = clusters + (NO_DATA_CLUSTER,)

    countries = list(frame["country"])
    return Dataset(
        x=np.array(xs), y=np.array(ys), group=group, group_names=names,
        country=tuple(countries) if any(countries) else None,
        monitor_id=tuple(frame["monitor_id"]),
        cluster=cluster, cluster_names=clusters,
    )


def load_eight_schools(path: Optional[str] = None) -> Dataset:
    """The bundled 8-schools effects with their known standard errors."""
    frame = pd.read_csv(path or EIGHT_SCHOOLS_PATH, comment="#")
    if list(frame.columns) != ["school", "effect", "sd"] or len(frame) != 8:
        raise DataError("8-schools file must have columns school,effect,sd and eight rows")
    return Dataset(
        x=np.zeros(8), y=frame["effect"].to_numpy(dtype=float), group=np.arange(8),
        group_names=tuple(frame["school"].astype(str)), obs_sd=frame["sd"].to_numpy(dtype=float),
    )


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; defaults give a pooled log-log R^2 near 0.6."""

    n_groups: int = 7
    points_per_group: Tuple[int, ...] = (150, 120, 90, 60, 35, 20, 0)
    true_beta0: float = 0.3
    true_beta1: float = 1.0
    tau0: float = 0.3
    tau1: float = 0.1
    sigma: float = 0.62
    x_ranges: Tuple[Tuple[float, float], ...] = (
        (1.0, 2.5), (2.0, 3.5), (3.0, 4.8), (2.5, 4.0), (1.5, 3.5), (3.5, 5.0), (2.0, 4.0),
    )
    discretize_low: bool = True
    discretize_cutoff: float = 1.5
    countries_per_group: int = 3
    offsets: Optional[Tuple[Tuple[float, float], ...]] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "points_per_group", tuple(int(n) for n in self.points_per_group))
        object.__setattr__(self, "x_ranges", tuple(tuple(float(v) for v in r) for r in self.x_ranges))
        if self.offsets is not None:
            object.__setattr__(self, "offsets", tuple(tuple(float(v) for v in o) for o in self.offsets))
        if self.n_groups < 1:
            raise ConfigError("n_groups must be >= 1")
        if len(self.points_per_group) != self.n_groups or len(self.x_ranges) != self.n_groups:
            raise ConfigError("points_per_group and x_ranges need one entry per group")
        if self.offsets is not None and len(self.offsets) != self.n_groups:
            raise ConfigError("offsets need one (intercept, slope) pair per group")
        if min(self.points_per_group) < 0:
            raise ConfigError("points_per_group must be non-negative")
        if max(self.points_per_group) < 5 or min(self.points_per_group) > 25:
            raise ConfigError("need one group with >= 5 points and one with <= 25 points")
        if self.sigma < 0 or self.tau0 < 0 or self.tau1 < 0:
            raise ConfigError("sigma, tau0 and tau1 must be non-negative")
        if any(lo > hi for lo, hi in self.x_ranges):
            raise ConfigError("each x range needs low <= high")
        if self.countries_per_group < 1:
            raise ConfigError("countries_per_group must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def group_names(self) -> Tuple[str, ...]:
        return tuple(f"super_region_{j + 1}" for j in range(self.n_groups))


@dataclass(frozen=True, eq=False)
class SynthTruth:
    """Generating parameters; `column` lets it stand in for a one-draw posterior."""

    beta0: float
    beta1: float
    tau0: float
    tau1: float
    sigma: float
    offset0: np.ndarray
    offset1: np.ndarray
    group_names: Tuple[str, ...]
    seed: int
    discretized: bool = False

    def values(self) -> Dict[str, float]:
        values = {"beta0": self.beta0, "beta1": self.beta1, "sigma": self.sigma,
                  "tau0": self.tau0, "tau1": self.tau1}
        values.update({f"beta0_j[{j + 1}]": float(v) for j, v in enumerate(self.offset0)})
        values.update({f"beta1_j[{j + 1}]": float(v) for j, v in enumerate(self.offset1)})
        return values

    def column(self, name: str) -> np.ndarray:
        values = self.values()
        if name not in values:
            raise KeyError(f"unknown parameter {name!r}")
        return np.array([values[name]])

    def to_dict(self) -> Dict[str, object]:
        return {
            "beta0": self.beta0, "beta1": self.beta1, "tau0": self.tau0, "tau1": self.tau1,
            "sigma": self.sigma, "offset0": self.offset0.tolist(), "offset1": self.offset1.tolist(),
            "group_names": list(self.group_names), "seed": self.seed, "discretized": self.discretized,
        }

    def to_json(self, path: str):
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_dict(), handle, indent=2)
            handle.write("\n")

    @classmethod
    def from_json(cls, path: str) -> "SynthTruth":
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
        return cls(
            payload["beta0"], payload["beta1"], payload["tau0"], payload["tau1"], payload["sigma"],
            np.asarray(payload["offset0"]), np.asarray(payload["offset1"]),
            tuple(payload["group_names"]), payload["seed"], payload.get("discretized", False),
        )


def synth_generate(cfg: SynthConfig) -> Tuple[Dataset, SynthTruth]:
    """Simulate monitors from the varying-intercept, varying-slope model."""
    rng = RngStream(cfg.seed)
    if cfg.offsets is not None:
        offset0 = np.array([o[0] for o in cfg.offsets])
        offset1 = np.array([o[1] for o in cfg.offsets])
    else:
        offset0 = cfg.tau0 * rng.standard_normal(cfg.n_groups)
        offset1 = cfg.tau1 * rng.standard_normal(cfg.n_groups)

    xs, groups, countries = [], [], []
    for j, (count, (lo, hi)) in enumerate(zip(cfg.points_per_group, cfg.x_ranges)):
        xs.append(rng.uniform(lo, hi, count))
        groups.append(np.full(count, j, dtype=np.int64))
        picks = rng.integers(0, cfg.countries_per_group, count)
        countries.extend(f"country_{j + 1}_{c + 1}" for c in picks)
    x = np.concatenate(xs)
    group = np.concatenate(groups)
    mean = cfg.true_beta0 + offset0[group] + (cfg.true_beta1 + offset1[group]) * x
    y = mean + cfg.sigma * rng.standard_normal(x.size)
    if cfg.discretize_low:
        low = y < cfg.discretize_cutoff
        y[low] = np.round(y[low], 1)

    dataset = Dataset(
        x=x, y=y, group=group, group_names=cfg.group_names, country=tuple(countries),
        monitor_id=tuple(f"m{i + 1}" for i in range(x.size)),
    )
    truth = SynthTruth(cfg.true_beta0, cfg.true_beta1, cfg.tau0, cfg.tau1, cfg.sigma,
                       offset0, offset1, cfg.group_names, cfg.seed, cfg.discretize_low)
    logger.info("generated %d synthetic monitors in %d groups", dataset.n, cfg.n_groups)
    return dataset, truth


class Merge(NamedTuple):
    first: int
    second: int
    distance: float


@dataclass(frozen=True, eq=False)
class ClusterResult:
    labels: np.ndarray
    k: int
    merge_history: List[Merge] = field(default_factory=list)


def ward_cluster(features: np.ndarray, k: int) -> ClusterResult:
    """Agglomerative Ward clustering cut at k clusters.

    Lance-Williams updates run on squared Euclidean distances; merge
    distances are reported on the same scale as scipy's linkage. Merged
    clusters get ids n, n+1, ... and labels are numbered by first appearance.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    n = features.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k must lie in [1, {n}], got {k}")
    if not np.all(np.isfinite(features)):
        raise ValidationError("cluster features must be finite")

    diff = features[:, None, :] - features[None, :, :]
    dist2 = np.sum(diff * diff, axis=2)
    np.fill_diagonal(dist2, np.inf)
    sizes = np.ones(n)
    ids = np.arange(n)
    slot_of_unit = np.arange(n)
    active = np.ones(n, dtype=bool)
    history: List[Merge] = []

    for step in range(n - k):
        flat = int(np.argmin(dist2))
        i, j = divmod(flat, n)
        if i > j:
            i, j = j, i
        d_ij = dist2[i, j]
        history.append(Merge(int(min(ids[i], ids[j])), int(max(ids[i], ids[j])), math.sqrt(d_ij)))

        others = np.flatnonzero(active)
        others = others[(others != i) & (others != j)]
        total = sizes[i] + sizes[j] + sizes[others]
        updated = ((sizes[i] + sizes[others]) * dist2[i, others]
                   + (sizes[j] + sizes[others]) * dist2[j, others]
                   - sizes[others] * d_ij) / total
        dist2[i, others] = updated
        dist2[others, i] = updated
        dist2[j, :] = np.inf
        dist2[:, j] = np.inf
        active[j] = False
        sizes[i] += sizes[j]
        ids[i] = n + step
        slot_of_unit[slot_of_unit == j] = i

    labels = np.empty(n, dtype=np.int64)
    seen: Dict[int, int] = {}
    for unit, slot in enumerate(slot_of_unit):
        labels[unit] = seen.setdefault(int(slot), len(seen))
    return ClusterResult(labels, k, history)


class OlsFit(NamedTuple):
    intercept: float
    slope: float
    r_squared: float


def ols_fit(x: Sequence[float], y: Sequence[float]) -> OlsFit:
    """Least-squares line with R^2 = 1 - SS_res / SS_tot."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ValidationError("OLS needs at least 3 paired observations")
    if np.var(x) == 0:
        raise ValidationError("OLS needs non-constant x")
    fit = stats.linregress(x, y)
    return OlsFit(float(fit.intercept), float(fit.slope), float(fit.rvalue ** 2))


class GroupFit(NamedTuple):
    intercept: float
    slope: float
    r_squared: float
    n: int


def ols_by_group(dataset: Dataset) -> Dict[str, GroupFit]:
    """Independent per-region fits; regions that cannot be fit are left out."""
    fits = {}
    for j, name in enumerate(dataset.group_names):
        members = dataset.group == j
        count = int(members.sum())
        if count < 3 or np.var(dataset.x[members]) == 0:
            logger.info("no OLS fit for %s (%d observations)", name, count)
            continue
        fit = ols_fit(dataset.x[members], dataset.y[members])
        fits[name] = GroupFit(fit.intercept, fit.slope, fit.r_squared, count)
    return fits


def unit_features(dataset: Dataset) -> Tuple[List[str], np.ndarray, np.ndarray]:
    """(units, [median y, IQR y] per unit, unit index per observation).

    Units are countries when the dataset has them, regions otherwise.
    """
    if dataset.country is not None:
        keys = list(dataset.country)
    else:
        keys = [dataset.group_names[g] for g in dataset.group]
    units = sorted(set(keys), key=_natural_key)
    index = {unit: u for u, unit in enumerate(units)}
    membership = np.array([index[key] for key in keys], dtype=np.int64)
    features = np.empty((len(units), 2))
    for u in range(len(units)):
        values = dataset.y[membership == u]
        q25, q50, q75 = np.percentile(values, [25, 50, 75])
        features[u] = (q50, q75 - q25)
    return units, features, membership


def cluster_regions(dataset: Dataset, k: int = 6) -> Dataset:
    """Relabel observations into k data-driven super-regions plus a no-data region."""
    if dataset.n == 0:
        raise DataError("cannot cluster an empty dataset")
    units, features, membership = unit_features(dataset)
    if k > len(units):
        logger.warning("only %d units to cluster; using k=%d", len(units), len(units))
        k = len(units)
    result = ward_cluster(features, k)
    names = tuple(f"cluster_{c + 1}" for c in range(k)) + (NO_DATA_CLUSTER,)
    logger.info("clustered %d units into %d super-regions", len(units), k)
    return dataset.with_clusters(result.labels[membership], names)
