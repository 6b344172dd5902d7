"""
Posterior predictive checks: density overlays, test statistics with tail
fractions, and LOO-PIT calibration.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from scipy import integrate, stats

from distributions import RngStream
from errors import KdeError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_GRID = 512
DEFAULT_CURVES = 100


class CurveRole(str, Enum):
    OBSERVED = "observed"
    REPLICATE = "replicate"
    UNIFORM_REFERENCE = "uniform-reference"


@dataclass(frozen=True, eq=False)
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray
    label: CurveRole = CurveRole.OBSERVED
    bandwidth: float = math.nan

    def __post_init__(self):
        object.__setattr__(self, "grid", np.asarray(self.grid, dtype=float))
        object.__setattr__(self, "density", np.asarray(self.density, dtype=float))
        object.__setattr__(self, "label", CurveRole(self.label))
        if self.grid.shape != self.density.shape:
            raise ValidationError("grid and density must have equal length")
        if np.any(self.density < 0):
            raise ValidationError("density must be non-negative")

    def integral(self) -> float:
        return float(integrate.trapezoid(self.density, self.grid))


def silverman_bandwidth(values: np.ndarray) -> float:
    """h = 0.9 * min(sd, IQR / 1.34) * n^(-1/5); zero spread gives 0."""
    sd = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * values.size ** (-0.2)


def kde(values: Sequence[float], n_grid: int = DEFAULT_GRID, grid: Optional[Sequence[float]] = None,
        label: CurveRole = CurveRole.OBSERVED) -> DensityCurve:
    """Gaussian kernel density estimate.

    Without an explicit grid the curve covers [min - 3h, max + 3h].
    """
    values = np.asarray(values, dtype=float).ravel()
    if values.size < 2 or not np.all(np.isfinite(values)):
        raise KdeError("kernel density needs at least two finite values")
    h = silverman_bandwidth(values)
    if not h > 0:
        raise KdeError("kernel density bandwidth is zero (constant input)")
    if grid is None:
        if n_grid < 2:
            raise ValidationError(f"n_grid must be >= 2, got {n_grid}")
        grid = np.linspace(values.min() - 3.0 * h, values.max() + 3.0 * h, n_grid)
    grid = np.asarray(grid, dtype=float)
    # kernel sd = bw_method * sd(ddof=1) = h
    estimator = stats.gaussian_kde(values, bw_method=h / np.std(values, ddof=1))
    return DensityCurve(grid, estimator(grid), label, h)


class StatKind(str, Enum):
    SKEW = "skew"
    MEDIAN = "median"
    MEAN = "mean"
    SD = "sd"


def _stat_rows(values: np.ndarray, kind: StatKind) -> np.ndarray:
    """Statistic along the last axis."""
    if kind == StatKind.SKEW:
        centered = values - values.mean(axis=-1, keepdims=True)
        m2 = np.mean(centered ** 2, axis=-1)
        if np.any(m2 == 0):
            raise ValidationError("skewness undefined for zero-variance values")
        return stats.skew(values, axis=-1, bias=True)
    if kind == StatKind.MEDIAN:
        return np.quantile(values, 0.5, axis=-1, method="lower")
    if kind == StatKind.MEAN:
        return values.mean(axis=-1)
    return values.std(axis=-1)


def test_stat(values: Sequence[float], kind: StatKind) -> float:
    """Skew (m3 / m2^1.5), lower median, mean or population sd."""
    kind = StatKind(kind)
    values = np.asarray(values, dtype=float)
    minimum = 3 if kind == StatKind.SKEW else 1
    if values.ndim != 1 or values.size < minimum:
        raise ValidationError(f"{kind.value} needs at least {minimum} values")
    return float(_stat_rows(values, kind))


# not a pytest test function
test_stat.__test__ = False


@dataclass(frozen=True, eq=False)
class StatCheck:
    stat_name: StatKind
    observed: float
    replicated: np.ndarray
    group: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "replicated", np.asarray(self.replicated, dtype=float))
        if self.replicated.size == 0:
            raise ValidationError("a stat check needs at least one replicate")

    @property
    def p_upper(self) -> float:
        """P(stat_rep >= stat_obs)."""
        return float(np.mean(self.replicated >= self.observed))

    @property
    def p_lower(self) -> float:
        """P(stat_rep <= stat_obs)."""
        return float(np.mean(self.replicated <= self.observed))

    @property
    def min_tail(self) -> float:
        return min(self.p_upper, self.p_lower)


def ppc_stat_check(y: Sequence[float], yrep: np.ndarray, kind: StatKind,
                   groups: Optional[Sequence[int]] = None,
                   group_names: Optional[Sequence[str]] = None) -> List[StatCheck]:
    """One check per group (or one global check) of a test statistic."""
    kind = StatKind(kind)
    y = np.asarray(y, dtype=float)
    yrep = np.atleast_2d(np.asarray(yrep, dtype=float))
    if yrep.shape[1] != y.size:
        raise ValidationError(f"replicates have {yrep.shape[1]} columns for {y.size} observations")
    if groups is None:
        return [StatCheck(kind, test_stat(y, kind), _stat_rows(yrep, kind))]

    groups = np.asarray(groups)
    if groups.shape != y.shape:
        raise ValidationError("one group label per observation is required")
    labels = np.unique(groups)
    names = list(group_names) if group_names is not None else [str(g) for g in range(int(labels.max()) + 1)]
    minimum = 3 if kind == StatKind.SKEW else 1
    checks = []
    for label in labels:
        members = groups == label
        if members.sum() < minimum:
            logger.warning("skipping %s check for group %s: %d observations",
                           kind.value, names[label], int(members.sum()))
            continue
        checks.append(StatCheck(kind, test_stat(y[members], kind), _stat_rows(yrep[:, members], kind),
                                group=names[label]))
    return checks


def loo_pit(y: Sequence[float], yrep: np.ndarray, log_weights: np.ndarray) -> np.ndarray:
    """Weighted fraction of replicates at or below each observation."""
    y = np.asarray(y, dtype=float)
    yrep = np.asarray(yrep, dtype=float)
    log_weights = np.asarray(log_weights, dtype=float)
    if yrep.ndim != 2 or yrep.shape[1] != y.size or log_weights.shape != yrep.shape:
        raise ValidationError(
            f"shape mismatch: y {y.shape}, replicates {yrep.shape}, log weights {log_weights.shape}"
        )
    weights = np.exp(log_weights - log_weights.max(axis=0, keepdims=True))
    below = (yrep <= y[None, :]).astype(float)
    pit = np.sum(weights * below, axis=0) / np.sum(weights, axis=0)
    return np.clip(pit, 0.0, 1.0)


@dataclass(frozen=True)
class UniformityCheck:
    ks_distance: float
    critical_value: float
    passed: bool


def pit_uniformity(pits: Sequence[float]) -> UniformityCheck:
    """Kolmogorov-Smirnov distance from Uniform(0, 1) against the 1% critical value."""
    pits = np.asarray(pits, dtype=float)
    if pits.size == 0:
        raise ValidationError("no PIT values")
    distance = float(stats.kstest(pits, "uniform").statistic)
    critical = 1.63 / math.sqrt(pits.size)
    return UniformityCheck(distance, critical, distance < critical)


def uniform_reference_curves(n: int, rng: RngStream, n_sims: int = DEFAULT_CURVES,
                             grid: Optional[Sequence[float]] = None,
                             n_grid: int = DEFAULT_GRID) -> List[DensityCurve]:
    """Density curves of `n_sims` uniform samples of size n."""
    if n < 2:
        raise ValidationError("reference curves need n >= 2")
    grid = np.linspace(0.0, 1.0, n_grid) if grid is None else np.asarray(grid, dtype=float)
    return [kde(rng.uniform(0.0, 1.0, n), grid=grid, label=CurveRole.UNIFORM_REFERENCE)
            for _ in range(n_sims)]


def replicate_rows(n_draws: int, n_curves: int = DEFAULT_CURVES) -> np.ndarray:
    """Evenly spaced replicate rows used for overlays."""
    if n_draws <= n_curves:
        return np.arange(n_draws)
    return np.linspace(0, n_draws - 1, n_curves).round().astype(int)


def density_overlay(y: Sequence[float], yrep: np.ndarray, n_curves: int = DEFAULT_CURVES,
                    n_grid: int = DEFAULT_GRID) -> List[DensityCurve]:
    """Observed density followed by `n_curves` replicate densities on a shared grid."""
    y = np.asarray(y, dtype=float)
    yrep = np.atleast_2d(np.asarray(yrep, dtype=float))
    if yrep.shape[1] != y.size:
        raise ValidationError(f"replicates have {yrep.shape[1]} columns for {y.size} observations")
    rows = yrep[replicate_rows(yrep.shape[0], n_curves)]
    h = silverman_bandwidth(y)
    grid = np.linspace(min(y.min(), rows.min()) - 3.0 * h, max(y.max(), rows.max()) + 3.0 * h, n_grid)
    curves = [kde(y, grid=grid, label=CurveRole.OBSERVED)]
    curves.extend(kde(row, grid=grid, label=CurveRole.REPLICATE) for row in rows)
    return curves
