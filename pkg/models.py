"""
Model family: pooled regression, two multilevel regressions and the
8-schools model in centered and non-centered form.

Every model exposes the unnormalized log posterior on the unconstrained
scale with its analytic gradient, pointwise log-likelihoods over a set of
draws, and posterior predictive replicates.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from distributions import DistKind, DistSpec, RngStream, log_density_scalar
from errors import DataError, EvaluationError, ValidationError

logger = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_2 = math.log(2.0)


class ModelKind(str, Enum):
    POOLED = "pooled"
    HIER_WHO = "hier-who"
    HIER_CLUSTER = "hier-cluster"
    EIGHT_SCHOOLS_CENTERED = "8schools-c"
    EIGHT_SCHOOLS_NONCENTERED = "8schools-nc"

    @property
    def is_hierarchical(self) -> bool:
        return self in (ModelKind.HIER_WHO, ModelKind.HIER_CLUSTER)

    @property
    def is_eight_schools(self) -> bool:
        return self in (ModelKind.EIGHT_SCHOOLS_CENTERED, ModelKind.EIGHT_SCHOOLS_NONCENTERED)


class Parameterization(str, Enum):
    CENTERED = "centered"
    NONCENTERED = "noncentered"


def _frozen(values, dtype) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observation table: log satellite x, log PM2.5 y, super-region labels.

    `cluster`/`cluster_names` hold the data-driven super-regions used by the
    cluster model; `obs_sd` holds known per-observation standard deviations
    (8-schools).
    """

    x: np.ndarray
    y: np.ndarray
    group: np.ndarray
    group_names: Tuple[str, ...]
    country: Optional[Tuple[str, ...]] = None
    monitor_id: Optional[Tuple[str, ...]] = None
    cluster: Optional[np.ndarray] = None
    cluster_names: Optional[Tuple[str, ...]] = None
    obs_sd: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, float))
        object.__setattr__(self, "y", _frozen(self.y, float))
        object.__setattr__(self, "group", _frozen(self.group, np.int64))
        object.__setattr__(self, "group_names", tuple(self.group_names))
        n = self.x.shape[0]
        if self.x.ndim != 1 or self.y.shape != (n,) or self.group.shape != (n,):
            raise DataError("x, y and group must be 1-d and of equal length")
        if not self.group_names:
            raise DataError("at least one group name is required")
        if n and (self.group.min() < 0 or self.group.max() >= len(self.group_names)):
            raise DataError(f"group index outside [0, {len(self.group_names)})")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise DataError("x and y must be finite")
        for name in ("country", "monitor_id"):
            value = getattr(self, name)
            if value is not None:
                value = tuple(str(v) for v in value)
                if len(value) != n:
                    raise DataError(f"{name} must have one entry per observation")
                object.__setattr__(self, name, value)
        if self.cluster is not None:
            object.__setattr__(self, "cluster", _frozen(self.cluster, np.int64))
            names = tuple(self.cluster_names or ())
            object.__setattr__(self, "cluster_names", names)
            if self.cluster.shape != (n,):
                raise DataError("cluster must have one entry per observation")
            if n and (self.cluster.min() < 0 or self.cluster.max() >= len(names)):
                raise DataError(f"cluster index outside [0, {len(names)})")
        if self.obs_sd is not None:
            object.__setattr__(self, "obs_sd", _frozen(self.obs_sd, float))
            if self.obs_sd.shape != (n,) or np.any(self.obs_sd <= 0):
                raise DataError("obs_sd must be positive with one entry per observation")

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def n_groups(self) -> int:
        return len(self.group_names)

    def with_clusters(self, labels: Sequence[int], names: Sequence[str]) -> "Dataset":
        """Copy carrying data-driven super-region labels."""
        return Dataset(
            x=self.x, y=self.y, group=self.group, group_names=self.group_names,
            country=self.country, monitor_id=self.monitor_id,
            cluster=np.asarray(labels), cluster_names=tuple(names), obs_sd=self.obs_sd,
        )

    def subset(self, mask: np.ndarray) -> "Dataset":
        """Rows selected by a boolean mask, keeping every group label."""
        mask = np.asarray(mask, dtype=bool)
        pick = lambda values: None if values is None else tuple(np.asarray(values, dtype=object)[mask])
        return Dataset(
            x=self.x[mask], y=self.y[mask], group=self.group[mask], group_names=self.group_names,
            country=pick(self.country), monitor_id=pick(self.monitor_id),
            cluster=None if self.cluster is None else self.cluster[mask],
            cluster_names=self.cluster_names,
            obs_sd=None if self.obs_sd is None else self.obs_sd[mask],
        )

    def equals(self, other: "Dataset") -> bool:
        """Field-by-field equality (arrays compared exactly)."""
        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(np.asarray(a), np.asarray(b))

        return (
            same(self.x, other.x) and same(self.y, other.y) and same(self.group, other.group)
            and self.group_names == other.group_names
            and self.country == other.country and self.monitor_id == other.monitor_id
            and same(self.cluster, other.cluster) and self.cluster_names == other.cluster_names
            and same(self.obs_sd, other.obs_sd)
        )


@dataclass(frozen=True)
class PriorConfig:
    """Priors for (beta0, beta1, tau, sigma).

    `tau` is shared by tau0 and tau1 and is read on the variance scale when it
    is an inverse-gamma, on the standard-deviation scale otherwise. For the
    8-schools kinds the `beta0` slot is the prior on mu and `tau` the prior on tau.
    """

    beta0: DistSpec
    beta1: DistSpec
    tau: DistSpec
    sigma: DistSpec
    label: str = "custom"

    @property
    def tau_on_variance(self) -> bool:
        return self.tau.kind == DistKind.INV_GAMMA

    @classmethod
    def vague(cls) -> "PriorConfig":
        return cls(
            beta0=DistSpec.normal(0.0, 100.0),
            beta1=DistSpec.normal(0.0, 100.0),
            tau=DistSpec.inv_gamma(1.0, 100.0),
            sigma=DistSpec.half_normal(1.0),
            label="vague",
        )

    @classmethod
    def weak(cls) -> "PriorConfig":
        return cls(
            beta0=DistSpec.normal(0.0, 1.0),
            beta1=DistSpec.normal(1.0, 1.0),
            tau=DistSpec.half_normal(1.0),
            sigma=DistSpec.half_normal(1.0),
            label="weak",
        )

    @classmethod
    def eight_schools(cls) -> "PriorConfig":
        return cls(
            beta0=DistSpec.normal(0.0, 5.0),
            beta1=DistSpec.normal(0.0, 1.0),
            tau=DistSpec.half_normal(5.0),
            sigma=DistSpec.half_normal(1.0),
            label="eight-schools",
        )

    @classmethod
    def preset(cls, name: str) -> "PriorConfig":
        presets = {"vague": cls.vague, "weak": cls.weak, "eight-schools": cls.eight_schools}
        if name not in presets:
            raise ValidationError(f"unknown prior preset {name!r}; expected one of {sorted(presets)}")
        return presets[name]()

    def to_dict(self) -> Dict[str, object]:
        return {
            "label": self.label,
            "beta0": self.beta0.to_dict(),
            "beta1": self.beta1.to_dict(),
            "tau": self.tau.to_dict(),
            "sigma": self.sigma.to_dict(),
        }


@dataclass(frozen=True)
class ModelSpec:
    """One model kind with its priors and parameterization."""

    kind: ModelKind
    priors: PriorConfig = field(default_factory=PriorConfig.weak)
    parameterization: Parameterization = Parameterization.NONCENTERED

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        object.__setattr__(self, "parameterization", Parameterization(self.parameterization))

    @property
    def noncentered(self) -> bool:
        if self.kind.is_eight_schools:
            return self.kind == ModelKind.EIGHT_SCHOOLS_NONCENTERED
        return self.kind.is_hierarchical and self.parameterization == Parameterization.NONCENTERED

    @property
    def label(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class ParamVector:
    """A point on the unconstrained scale (scales stored as logs)."""

    unconstrained: np.ndarray
    names: Tuple[str, ...]


Theta = Union[ParamVector, np.ndarray, Sequence[float]]

N_SCHOOLS = 8


def grouping(model: ModelSpec, data: Dataset) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """Observation-to-group labels the model stratifies by."""
    if model.kind == ModelKind.HIER_CLUSTER:
        if data.cluster is None:
            raise DataError("dataset has no cluster super-regions; run cluster_regions first")
        return data.cluster, data.cluster_names
    return data.group, data.group_names


def _n_groups(model: ModelSpec, data: Dataset) -> int:
    return len(grouping(model, data)[1])


def dimension(model: ModelSpec, data: Dataset) -> int:
    """Length of the unconstrained parameter vector."""
    if model.kind == ModelKind.POOLED:
        return 3
    if model.kind.is_hierarchical:
        return 5 + 2 * _n_groups(model, data)
    return 2 + N_SCHOOLS


def unconstrained_names(model: ModelSpec, data: Dataset) -> Tuple[str, ...]:
    if model.kind == ModelKind.POOLED:
        return ("beta0", "beta1", "log_sigma")
    if model.kind.is_hierarchical:
        n_groups = _n_groups(model, data)
        first, second = ("z0", "z1") if model.noncentered else ("beta0_j", "beta1_j")
        return (
            ("beta0", "beta1", "log_sigma", "log_tau0", "log_tau1")
            + tuple(f"{first}[{j + 1}]" for j in range(n_groups))
            + tuple(f"{second}[{j + 1}]" for j in range(n_groups))
        )
    raw = "theta_tilde" if model.noncentered else "theta"
    return ("mu", "log_tau") + tuple(f"{raw}[{j + 1}]" for j in range(N_SCHOOLS))


def constrained_names(model: ModelSpec, data: Dataset) -> Tuple[str, ...]:
    if model.kind == ModelKind.POOLED:
        return ("beta0", "beta1", "sigma")
    if model.kind.is_hierarchical:
        n_groups = _n_groups(model, data)
        derived = tuple(f"beta0_j[{j + 1}]" for j in range(n_groups)) + tuple(
            f"beta1_j[{j + 1}]" for j in range(n_groups)
        )
        raw = ()
        if model.noncentered:
            raw = tuple(f"z0[{j + 1}]" for j in range(n_groups)) + tuple(
                f"z1[{j + 1}]" for j in range(n_groups)
            )
        return ("beta0", "beta1", "sigma", "tau0", "tau1") + raw + derived
    raw = tuple(f"theta_tilde[{j + 1}]" for j in range(N_SCHOOLS)) if model.noncentered else ()
    return ("mu", "tau") + raw + tuple(f"theta[{j + 1}]" for j in range(N_SCHOOLS))


def _as_array(model: ModelSpec, data: Dataset, theta: Theta) -> np.ndarray:
    q = np.asarray(theta.unconstrained if isinstance(theta, ParamVector) else theta, dtype=float)
    dim = dimension(model, data)
    if q.ndim != 1 or q.shape[0] != dim:
        raise ValidationError(f"{model.label} expects {dim} unconstrained values, got shape {q.shape}")
    return q


def constrain_matrix(model: ModelSpec, data: Dataset, q: np.ndarray) -> np.ndarray:
    """Row-wise map from unconstrained [S x dim] to constrained [S x P]."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if model.kind == ModelKind.POOLED:
        return np.column_stack([q[:, 0], q[:, 1], np.exp(q[:, 2])])
    if model.kind.is_hierarchical:
        n_groups = _n_groups(model, data)
        tau0, tau1 = np.exp(q[:, 3]), np.exp(q[:, 4])
        raw0, raw1 = q[:, 5:5 + n_groups], q[:, 5 + n_groups:5 + 2 * n_groups]
        head = [q[:, 0:1], q[:, 1:2], np.exp(q[:, 2:3]), tau0[:, None], tau1[:, None]]
        if model.noncentered:
            return np.hstack(head + [raw0, raw1, tau0[:, None] * raw0, tau1[:, None] * raw1])
        return np.hstack(head + [raw0, raw1])
    mu, tau, raw = q[:, 0:1], np.exp(q[:, 1:2]), q[:, 2:]
    if model.noncentered:
        return np.hstack([mu, tau, raw, mu + tau * raw])
    return np.hstack([mu, tau, raw])


def constrain(model: ModelSpec, data: Dataset, theta: Theta) -> Dict[str, float]:
    """Named constrained values, including derived centered quantities."""
    q = _as_array(model, data, theta)
    values = constrain_matrix(model, data, q)[0]
    return dict(zip(constrained_names(model, data), (float(v) for v in values)))


def unconstrain(model: ModelSpec, data: Dataset, values: Mapping[str, float]) -> ParamVector:
    """Inverse of `constrain` (derived quantities are ignored)."""
    names = unconstrained_names(model, data)
    q = np.empty(len(names))
    for i, name in enumerate(names):
        if name.startswith("log_"):
            q[i] = math.log(values[name[4:]])
        else:
            q[i] = values[name]
    return ParamVector(q, names)


def _log_scale_prior(dist: DistSpec, log_scale: float, on_variance: bool) -> Tuple[float, float]:
    """Prior on a positive scale s = exp(u), with the change-of-variable Jacobian.

    On the variance scale the prior is on v = s^2 = exp(2u), so the Jacobian
    is log 2 + 2u.
    """
    if on_variance:
        variance = math.exp(2.0 * log_scale)
        value, slope = log_density_scalar(dist, variance)
        return value + _LOG_2 + 2.0 * log_scale, slope * 2.0 * variance + 2.0
    scale = math.exp(log_scale)
    value, slope = log_density_scalar(dist, scale)
    return value + log_scale, slope * scale + 1.0


def _regression_terms(model: ModelSpec, data: Dataset, q: np.ndarray, with_prior: bool):
    priors = model.priors
    grad = np.zeros_like(q)
    lp = 0.0
    beta0, beta1, log_sigma = q[0], q[1], q[2]
    sigma = math.exp(log_sigma)

    if with_prior:
        value, slope = log_density_scalar(priors.beta0, beta0)
        lp += value
        grad[0] += slope
        value, slope = log_density_scalar(priors.beta1, beta1)
        lp += value
        grad[1] += slope
        value, slope = _log_scale_prior(priors.sigma, log_sigma, on_variance=False)
        lp += value
        grad[2] += slope

    x, y = data.x, data.y
    if model.kind.is_hierarchical:
        labels, names = grouping(model, data)
        n_groups = len(names)
        log_tau0, log_tau1 = q[3], q[4]
        tau0, tau1 = math.exp(log_tau0), math.exp(log_tau1)
        raw0, raw1 = q[5:5 + n_groups], q[5 + n_groups:5 + 2 * n_groups]
        if with_prior:
            for index, log_tau in ((3, log_tau0), (4, log_tau1)):
                value, slope = _log_scale_prior(priors.tau, log_tau, priors.tau_on_variance)
                lp += value
                grad[index] += slope
        if model.noncentered:
            offset0, offset1 = tau0 * raw0, tau1 * raw1
            if with_prior:
                lp += -2 * n_groups * _LOG_SQRT_2PI - 0.5 * (raw0 @ raw0 + raw1 @ raw1)
                grad[5:5 + n_groups] -= raw0
                grad[5 + n_groups:] -= raw1
        else:
            offset0, offset1 = raw0, raw1
            if with_prior:
                for index, log_tau, tau, offset, start in (
                    (3, log_tau0, tau0, offset0, 5),
                    (4, log_tau1, tau1, offset1, 5 + n_groups),
                ):
                    ratio = offset / tau
                    lp += -n_groups * (_LOG_SQRT_2PI + log_tau) - 0.5 * (ratio @ ratio)
                    grad[start:start + n_groups] -= ratio / tau
                    grad[index] += -n_groups + ratio @ ratio
        mean = beta0 + offset0[labels] + (beta1 + offset1[labels]) * x
    else:
        mean = beta0 + beta1 * x

    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        resid = y - mean
        inv_var = np.exp(-2.0 * log_sigma)
        sq = resid @ resid
        n = data.n
        lik = -n * (_LOG_SQRT_2PI + log_sigma) - 0.5 * sq * inv_var
        dmean = resid * inv_var
        grad[0] += dmean.sum()
        grad[1] += dmean @ x
        grad[2] += -n + sq * inv_var
        if model.kind.is_hierarchical:
            g_offset0 = np.bincount(labels, weights=dmean, minlength=n_groups)
            g_offset1 = np.bincount(labels, weights=dmean * x, minlength=n_groups)
            if model.noncentered:
                grad[5:5 + n_groups] += tau0 * g_offset0
                grad[5 + n_groups:] += tau1 * g_offset1
                grad[3] += g_offset0 @ offset0
                grad[4] += g_offset1 @ offset1
            else:
                grad[5:5 + n_groups] += g_offset0
                grad[5 + n_groups:] += g_offset1
    return lp, lik, grad


def _schools_terms(model: ModelSpec, data: Dataset, q: np.ndarray, with_prior: bool):
    if data.obs_sd is None:
        raise DataError("8-schools models need per-observation standard deviations")
    priors = model.priors
    grad = np.zeros_like(q)
    lp = 0.0
    mu, log_tau = q[0], q[1]
    tau = math.exp(log_tau)
    raw = q[2:]

    if with_prior:
        value, slope = log_density_scalar(priors.beta0, mu)
        lp += value
        grad[0] += slope
        value, slope = _log_scale_prior(priors.tau, log_tau, priors.tau_on_variance)
        lp += value
        grad[1] += slope

    if model.noncentered:
        theta = mu + tau * raw
        if with_prior:
            lp += -N_SCHOOLS * _LOG_SQRT_2PI - 0.5 * (raw @ raw)
            grad[2:] -= raw
    else:
        theta = raw
        if with_prior:
            ratio = (theta - mu) / tau
            lp += -N_SCHOOLS * (_LOG_SQRT_2PI + log_tau) - 0.5 * (ratio @ ratio)
            grad[0] += ratio.sum() / tau
            grad[1] += -N_SCHOOLS + ratio @ ratio
            grad[2:] -= ratio / tau

    labels = data.group
    sd = data.obs_sd
    resid = (data.y - theta[labels]) / sd
    lik = -np.sum(np.log(sd)) - data.n * _LOG_SQRT_2PI - 0.5 * (resid @ resid)
    g_theta = np.bincount(labels, weights=resid / sd, minlength=N_SCHOOLS)
    if model.noncentered:
        grad[0] += g_theta.sum()
        grad[1] += g_theta @ (tau * raw)
        grad[2:] += tau * g_theta
    else:
        grad[2:] += g_theta
    return lp, lik, grad


def _terms(model: ModelSpec, data: Dataset, theta: Theta, with_prior: bool = True):
    q = _as_array(model, data, theta)
    bad = np.flatnonzero(~np.isfinite(q))
    if bad.size:
        raise EvaluationError(f"non-finite parameter value {q[bad[0]]}", coordinate=(int(bad[0]),))
    if model.kind.is_eight_schools:
        return _schools_terms(model, data, q, with_prior)
    return _regression_terms(model, data, q, with_prior)


def log_posterior_grad(model: ModelSpec, data: Dataset, theta: Theta) -> Tuple[float, np.ndarray]:
    """Unnormalized log posterior on the unconstrained scale and its gradient."""
    prior, lik, grad = _terms(model, data, theta)
    return float(prior + lik), grad


def log_likelihood(model: ModelSpec, data: Dataset, theta: Theta) -> float:
    """Likelihood portion of the log posterior."""
    return float(_terms(model, data, theta, with_prior=False)[1])


def fitted_means(model: ModelSpec, data: Dataset, draws) -> Tuple[np.ndarray, np.ndarray]:
    """Per-draw predictive means and sds, each [S x n].

    `draws` is anything exposing `column(name)` over constrained names.
    """
    if model.kind.is_eight_schools and data.obs_sd is None:
        raise DataError("8-schools models need per-observation standard deviations")
    try:
        return _fitted_means(model, data, draws)
    except KeyError as exc:
        raise DataError(f"draws do not match {model.label} on this dataset: {exc}") from exc


def _fitted_means(model: ModelSpec, data: Dataset, draws) -> Tuple[np.ndarray, np.ndarray]:
    if model.kind.is_eight_schools:
        theta = np.column_stack([draws.column(f"theta[{j + 1}]") for j in range(N_SCHOOLS)])
        means = theta[:, data.group]
        return means, np.broadcast_to(data.obs_sd, means.shape)

    beta0 = np.asarray(draws.column("beta0"))
    beta1 = np.asarray(draws.column("beta1"))
    sigma = np.asarray(draws.column("sigma"))
    x = data.x[None, :]
    if model.kind.is_hierarchical:
        labels, names = grouping(model, data)
        offset0 = np.column_stack([draws.column(f"beta0_j[{j + 1}]") for j in range(len(names))])
        offset1 = np.column_stack([draws.column(f"beta1_j[{j + 1}]") for j in range(len(names))])
        means = beta0[:, None] + offset0[:, labels] + (beta1[:, None] + offset1[:, labels]) * x
    else:
        means = beta0[:, None] + beta1[:, None] * x
    return means, np.broadcast_to(sigma[:, None], means.shape)


def pointwise_log_lik(model: ModelSpec, data: Dataset, draws) -> np.ndarray:
    """log N(y_i | mean_i(theta_s), sd_i(theta_s)) as an [S x n] matrix."""
    means, sds = fitted_means(model, data, draws)
    if means.shape[0] == 0:
        raise ValidationError("pointwise log-likelihood needs at least one draw")
    with np.errstate(divide="ignore"):
        z = (data.y[None, :] - means) / sds
        return -_LOG_SQRT_2PI - np.log(sds) - 0.5 * z * z


def simulate_replicates(model: ModelSpec, data: Dataset, draws, rng: RngStream) -> np.ndarray:
    """One posterior predictive dataset per draw, [S x n]."""
    means, sds = fitted_means(model, data, draws)
    return means + sds * rng.standard_normal(means.shape)


class BoundPosterior:
    """A model bound to its dataset, in the shape the sampler consumes."""

    def __init__(self, model: ModelSpec, data: Dataset):
        self.model = model
        self.data = data
        self.dim = dimension(model, data)
        self.names: Tuple[str, ...] = constrained_names(model, data)
        self.label = model.label

    def log_density_grad(self, q: np.ndarray) -> Tuple[float, np.ndarray]:
        return log_posterior_grad(self.model, self.data, q)

    def constrain_matrix(self, q: np.ndarray) -> np.ndarray:
        return constrain_matrix(self.model, self.data, q)

    def initial_point(self, rng: RngStream) -> np.ndarray:
        return rng.uniform(-2.0, 2.0, self.dim)


def make_model(kind: str, priors: Optional[str] = None,
               parameterization: Union[str, Parameterization] = Parameterization.NONCENTERED) -> ModelSpec:
    """ModelSpec from CLI-style names; 8-schools kinds use their own priors."""
    model_kind = ModelKind(kind)
    if model_kind.is_eight_schools:
        if priors not in (None, "eight-schools"):
            logger.info("8-schools models use the eight-schools priors; ignoring %r", priors)
        return ModelSpec(model_kind, PriorConfig.eight_schools())
    return ModelSpec(model_kind, PriorConfig.preset(priors or "weak"), Parameterization(parameterization))


def model_names() -> List[str]:
    return [kind.value for kind in ModelKind]
