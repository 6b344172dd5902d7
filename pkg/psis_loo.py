"""
Pareto-smoothed importance sampling leave-one-out cross-validation.

Tail fitting uses the Zhang-Stephens profile construction with a weak prior
pulling the shape toward 0.5; the largest importance ratios of each column
are replaced by expected order statistics of the fitted generalized Pareto
distribution and truncated at the raw maximum.
"""
import logging
import math
from concurrent import futures
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from distributions import gpd_inv_cdf
from errors import DataError, EvaluationError, ValidationError
from metrics import WorkflowMetrics

logger = logging.getLogger(__name__)

MIN_DRAWS = 25
MIN_TAIL = 5

# k-hat reliability bands
KHAT_GOOD = 0.5
KHAT_OK = 0.7
KHAT_BAD = 1.0

BAND_NAMES = ("good", "ok", "bad", "very bad", "insufficient")


def tail_length(n_draws: int) -> int:
    return int(math.ceil(min(0.2 * n_draws, 3.0 * math.sqrt(n_draws))))


def gpd_fit_tail(tail: Sequence[float]) -> Tuple[float, float]:
    """Generalized Pareto fit to ascending exceedances.

    Returns (khat, sigma); khat is already regularised toward 0.5. An
    all-equal tail is degenerate and reported as (inf, nan).
    """
    x = np.asarray(tail, dtype=float)
    n = x.size
    if x.ndim != 1 or n < MIN_TAIL:
        raise ValidationError(f"GPD tail fit needs at least {MIN_TAIL} exceedances, got {n}")
    if not np.all(np.isfinite(x)) or x[0] < 0:
        raise ValidationError("GPD tail values must be finite and non-negative")
    if np.any(np.diff(x) < 0):
        raise ValidationError("GPD tail values must be sorted ascending")
    if x[0] == x[-1]:
        return math.inf, math.nan

    prior_bs = 3.0
    prior_k = 10.0
    m_est = 30 + int(math.sqrt(n))

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        b_grid = 1.0 - np.sqrt(m_est / (np.arange(1, m_est + 1) - 0.5))
        b_grid /= prior_bs * x[int(n / 4 + 0.5) - 1]
        b_grid += 1.0 / x[-1]

        k_grid = np.mean(np.log1p(-b_grid[:, None] * x), axis=1)
        profile = n * (np.log(-b_grid / k_grid) - k_grid - 1.0)
        weights = 1.0 / np.sum(np.exp(profile - profile[:, None]), axis=1)

    keep = np.isfinite(weights) & (weights >= 10 * np.finfo(float).eps)
    if not np.any(keep):
        return math.inf, math.nan
    weights = weights[keep] / np.sum(weights[keep])
    b_post = float(np.sum(b_grid[keep] * weights))
    k_post = float(np.mean(np.log1p(-b_post * x)))
    sigma = -k_post / b_post
    if not (math.isfinite(k_post) and math.isfinite(sigma) and sigma > 0):
        return math.inf, math.nan
    k_post = (n * k_post + prior_k * 0.5) / (n + prior_k)
    return k_post, sigma


def psis_smooth(log_ratios: Sequence[float]) -> Tuple[np.ndarray, float]:
    """Smoothed log weights and khat for one column of log importance ratios.

    The weights are returned on the frame where the largest raw ratio is 0;
    no smoothed weight exceeds it. Columns with fewer than 25 draws are left
    unsmoothed with khat NaN.
    """
    raw = np.asarray(log_ratios, dtype=float)
    if raw.ndim != 1:
        raise ValidationError("psis_smooth expects a single column of log ratios")
    bad = np.flatnonzero(~np.isfinite(raw))
    if bad.size:
        raise EvaluationError(f"non-finite log ratio {raw[bad[0]]}", coordinate=(int(bad[0]),))

    n_draws = raw.size
    shifted = raw - raw.max()
    if n_draws < MIN_DRAWS:
        return shifted, math.nan

    n_tail = tail_length(n_draws)
    order = np.argsort(shifted, kind="stable")
    threshold = shifted[order[n_draws - n_tail - 1]]
    in_tail = shifted > threshold
    if np.count_nonzero(in_tail) < MIN_TAIL:
        return shifted, math.inf

    tail_index = np.flatnonzero(in_tail)
    tail_index = tail_index[np.argsort(shifted[tail_index], kind="stable")]
    exp_threshold = math.exp(threshold)
    exceedances = np.exp(shifted[tail_index]) - exp_threshold
    khat, sigma = gpd_fit_tail(exceedances)
    if not math.isfinite(khat):
        return shifted, khat

    m = tail_index.size
    probs = (np.arange(1, m + 1) - 0.5) / m
    smoothed_tail = np.log(gpd_inv_cdf(khat, sigma, 0.0, probs) + exp_threshold)
    smoothed = shifted.copy()
    smoothed[tail_index] = np.minimum(smoothed_tail, 0.0)
    return smoothed, khat


def khat_band(khat: float) -> str:
    if math.isnan(khat):
        return "insufficient"
    if khat < KHAT_GOOD:
        return "good"
    if khat < KHAT_OK:
        return "ok"
    if khat < KHAT_BAD:
        return "bad"
    return "very bad"


def khat_bands(khat: Sequence[float]) -> List[str]:
    """Reliability label per point: good / ok / bad / very bad."""
    return [khat_band(float(k)) for k in khat]


@dataclass(frozen=True, eq=False)
class LooResult:
    pointwise_elpd: np.ndarray
    khat: np.ndarray
    smoothed_log_weights: Optional[np.ndarray]
    elpd_total: float
    elpd_se: float
    pointwise_lpd: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.pointwise_elpd.size)

    @property
    def p_loo(self) -> Optional[np.ndarray]:
        """Pointwise influence: full-data log predictive density minus LOO."""
        if self.pointwise_lpd is None:
            return None
        return self.pointwise_lpd - self.pointwise_elpd

    @classmethod
    def from_pointwise(cls, elpd: np.ndarray, khat: np.ndarray, weights: Optional[np.ndarray] = None,
                       lpd: Optional[np.ndarray] = None) -> "LooResult":
        elpd = np.asarray(elpd, dtype=float)
        total, se = _total_and_se(elpd)
        return cls(elpd, np.asarray(khat, dtype=float), weights, total, se, lpd)

    def to_csv(self, path: str):
        frame = pd.DataFrame({"index": np.arange(self.n), "elpd": self.pointwise_elpd, "khat": self.khat})
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path: str) -> "LooResult":
        frame = pd.read_csv(path, float_precision="round_trip")
        if list(frame.columns) != ["index", "elpd", "khat"]:
            raise DataError(f"{path}: expected header index,elpd,khat")
        frame = frame.sort_values("index")
        return cls.from_pointwise(frame["elpd"].to_numpy(), frame["khat"].to_numpy())


@dataclass(frozen=True, eq=False)
class LooComparison:
    pointwise_diff: np.ndarray
    diff_total: float
    diff_se: float
    group: Optional[Tuple[str, ...]] = None

    def to_csv(self, path: str):
        n = self.pointwise_diff.size
        frame = pd.DataFrame({
            "index": np.arange(n),
            "elpd_diff": self.pointwise_diff,
            "group": list(self.group) if self.group is not None else [""] * n,
        })
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path: str) -> "LooComparison":
        frame = pd.read_csv(path, float_precision="round_trip", keep_default_na=False,
                            dtype={"group": str})
        if list(frame.columns) != ["index", "elpd_diff", "group"]:
            raise DataError(f"{path}: expected header index,elpd_diff,group")
        frame = frame.sort_values("index")
        diff = frame["elpd_diff"].to_numpy(dtype=float)
        total, se = _total_and_se(diff)
        groups = tuple(frame["group"])
        return cls(diff, total, se, groups if any(groups) else None)


def _total_and_se(pointwise: np.ndarray) -> Tuple[float, float]:
    n = pointwise.size
    se = math.sqrt(n * pointwise.var(ddof=1)) if n > 1 else 0.0
    return float(pointwise.sum()), se


def _loo_column(column: np.ndarray) -> Tuple[float, float, np.ndarray, float]:
    log_weights, khat = psis_smooth(-column)
    elpd = float(logsumexp(log_weights + column) - logsumexp(log_weights))
    lpd = float(logsumexp(column) - math.log(column.size))
    return elpd, khat, log_weights, lpd


def elpd_loo(log_lik: np.ndarray, max_workers: Optional[int] = None,
             metrics: Optional[WorkflowMetrics] = None) -> LooResult:
    """PSIS-LOO estimate from an [S x n] pointwise log-likelihood matrix."""
    log_lik = np.asarray(log_lik, dtype=float)
    if log_lik.ndim != 2 or log_lik.shape[0] == 0 or log_lik.shape[1] == 0:
        raise ValidationError(f"log-likelihood must be a non-empty S x n matrix, got shape {log_lik.shape}")
    bad = np.argwhere(~np.isfinite(log_lik))
    if bad.size:
        s, i = (int(v) for v in bad[0])
        raise EvaluationError(f"non-finite log-likelihood {log_lik[s, i]}", coordinate=(s, i))
    n_draws, n = log_lik.shape
    if n_draws < 100:
        logger.warning("only %d draws; PSIS-LOO estimates will be noisy", n_draws)

    columns = [log_lik[:, i] for i in range(n)]
    if max_workers and max_workers > 1:
        with futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(_loo_column, columns))
    else:
        results = [_loo_column(column) for column in columns]

    elpd = np.array([r[0] for r in results])
    khat = np.array([r[1] for r in results])
    weights = np.column_stack([r[2] for r in results])
    lpd = np.array([r[3] for r in results])

    bands = khat_bands(khat)
    if metrics is not None:
        for band in BAND_NAMES:
            metrics.record_khat(band, bands.count(band))
    flagged = [i for i, band in enumerate(bands) if band in ("bad", "very bad")]
    if flagged:
        logger.warning("%d of %d points have khat >= %.1f: %s", len(flagged), n, KHAT_OK, flagged[:10])
    return LooResult.from_pointwise(elpd, khat, weights, lpd)


def loo_compare(a: LooResult, b: LooResult, groups: Optional[Sequence[str]] = None) -> LooComparison:
    """Pointwise ELPD difference b - a (positive favours b)."""
    if a.n != b.n:
        raise ValidationError(f"cannot compare LOO results of {a.n} and {b.n} points")
    if groups is not None and len(groups) != a.n:
        raise ValidationError("one group label per point is required")
    diff = b.pointwise_elpd - a.pointwise_elpd
    total, se = _total_and_se(diff)
    return LooComparison(diff, total, se, None if groups is None else tuple(str(g) for g in groups))
