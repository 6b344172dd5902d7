"""
Seedable random streams plus densities, samplers and quantiles for the
five distribution kinds the workflow needs.
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import gammaln

from errors import ParameterDomainError

ArrayLike = Union[float, np.ndarray]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_UINT64 = 2 ** 64


class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Backed by numpy's Philox bit generator: the 128-bit key is built from the
    seed and the stream id, so distinct stream ids give independent streams
    from one seed and equal pairs replay the same sequence.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if not 0 <= int(seed) < _UINT64:
            raise ParameterDomainError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if not 0 <= int(stream_id) < _UINT64:
            raise ParameterDomainError(f"stream_id must be a 64-bit unsigned integer, got {stream_id}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.generator = np.random.Generator(
            np.random.Philox(key=(self.stream_id << 64) | self.seed)
        )

    def derive(self, child: int) -> "RngStream":
        """Child stream for a task (chain, dataset, ...) of this stream."""
        mixed = np.random.SeedSequence(self.stream_id, spawn_key=(int(child),))
        return RngStream(self.seed, int(mixed.generate_state(1, dtype=np.uint64)[0]))

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def gamma(self, shape, size=None):
        return self.generator.gamma(shape, 1.0, size)

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


class DistKind(str, Enum):
    NORMAL = "normal"
    HALF_NORMAL = "half_normal"
    INV_GAMMA = "inv_gamma"
    UNIFORM = "uniform"
    GEN_PARETO = "gen_pareto"


_ARITY = {
    DistKind.NORMAL: 2,
    DistKind.HALF_NORMAL: 1,
    DistKind.INV_GAMMA: 2,
    DistKind.UNIFORM: 2,
    DistKind.GEN_PARETO: 3,
}


@dataclass(frozen=True)
class DistSpec:
    """A distribution kind with its parameter tuple.

    Parameter order: Normal (mu, sigma); HalfNormal (sigma); InvGamma
    (shape, scale); Uniform (a, b); GenPareto (location, scale, k).
    Zero scales are accepted for Normal/HalfNormal and a == b for Uniform:
    these are point masses that can be sampled but have no density.
    """

    kind: DistKind
    params: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", DistKind(self.kind))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if len(self.params) != _ARITY[self.kind]:
            raise ParameterDomainError(
                f"{self.kind.value} takes {_ARITY[self.kind]} parameters, got {len(self.params)}"
            )
        if not all(math.isfinite(p) for p in self.params):
            raise ParameterDomainError(f"non-finite parameter in {self}")

        kind, params = self.kind, self.params
        if kind == DistKind.NORMAL and params[1] < 0:
            raise ParameterDomainError(f"normal sigma must be >= 0, got {params[1]}")
        if kind == DistKind.HALF_NORMAL and params[0] < 0:
            raise ParameterDomainError(f"half-normal sigma must be >= 0, got {params[0]}")
        if kind == DistKind.INV_GAMMA and (params[0] <= 0 or params[1] <= 0):
            raise ParameterDomainError(f"inv-gamma shape and scale must be > 0, got {params}")
        if kind == DistKind.UNIFORM and params[0] > params[1]:
            raise ParameterDomainError(f"uniform needs a <= b, got {params}")
        if kind == DistKind.GEN_PARETO and params[1] <= 0:
            raise ParameterDomainError(f"generalized Pareto scale must be > 0, got {params[1]}")

    @classmethod
    def normal(cls, mu: float, sigma: float) -> "DistSpec":
        return cls(DistKind.NORMAL, (mu, sigma))

    @classmethod
    def half_normal(cls, sigma: float) -> "DistSpec":
        return cls(DistKind.HALF_NORMAL, (sigma,))

    @classmethod
    def inv_gamma(cls, shape: float, scale: float) -> "DistSpec":
        return cls(DistKind.INV_GAMMA, (shape, scale))

    @classmethod
    def uniform(cls, a: float, b: float) -> "DistSpec":
        return cls(DistKind.UNIFORM, (a, b))

    @classmethod
    def gen_pareto(cls, location: float, scale: float, k: float) -> "DistSpec":
        return cls(DistKind.GEN_PARETO, (location, scale, k))

    @property
    def is_point_mass(self) -> bool:
        if self.kind in (DistKind.NORMAL, DistKind.HALF_NORMAL):
            return self.params[-1] == 0.0
        if self.kind == DistKind.UNIFORM:
            return self.params[0] == self.params[1]
        return False

    def support(self) -> Tuple[float, float]:
        """Closed support bounds (may be infinite)."""
        kind, params = self.kind, self.params
        if kind == DistKind.NORMAL:
            return (-math.inf, math.inf)
        if kind == DistKind.HALF_NORMAL:
            return (0.0, math.inf)
        if kind == DistKind.INV_GAMMA:
            return (0.0, math.inf)
        if kind == DistKind.UNIFORM:
            return (params[0], params[1])
        location, scale, k = params
        upper = location - scale / k if k < 0 else math.inf
        return (location, upper)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind.value, "params": list(self.params)}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DistSpec":
        return cls(DistKind(payload["kind"]), tuple(payload["params"]))

    def __str__(self) -> str:
        args = ", ".join(f"{p:g}" for p in self.params)
        return f"{self.kind.value}({args})"


def _scalar_or_array(values: np.ndarray, like) -> ArrayLike:
    return float(values) if np.ndim(like) == 0 else values


def logpdf(dist: DistSpec, x: ArrayLike) -> ArrayLike:
    """Natural-log density; -inf outside the support."""
    if dist.is_point_mass:
        raise ParameterDomainError(f"{dist} is a point mass and has no density")
    xs = np.asarray(x, dtype=float)
    kind, params = dist.kind, dist.params

    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == DistKind.NORMAL:
            mu, sigma = params
            z = (xs - mu) / sigma
            out = -_LOG_SQRT_2PI - math.log(sigma) - 0.5 * z * z
        elif kind == DistKind.HALF_NORMAL:
            (sigma,) = params
            z = xs / sigma
            out = np.where(xs >= 0, math.log(2.0) - _LOG_SQRT_2PI - math.log(sigma) - 0.5 * z * z, -np.inf)
        elif kind == DistKind.INV_GAMMA:
            shape, scale = params
            safe = np.where(xs > 0, xs, 1.0)
            dens = shape * math.log(scale) - gammaln(shape) - (shape + 1.0) * np.log(safe) - scale / safe
            out = np.where(xs > 0, dens, -np.inf)
        elif kind == DistKind.UNIFORM:
            a, b = params
            out = np.where((xs >= a) & (xs <= b), -math.log(b - a), -np.inf)
        else:
            location, scale, k = params
            z = (xs - location) / scale
            lo, hi = dist.support()
            inside = (xs >= lo) & (xs <= hi)
            if k == 0.0:
                dens = -math.log(scale) - z
            else:
                dens = -math.log(scale) - (1.0 + 1.0 / k) * np.log1p(k * np.where(inside, z, 0.0))
            out = np.where(inside, dens, -np.inf)

    return _scalar_or_array(np.asarray(out, dtype=float), x)


def grad_logpdf(dist: DistSpec, x: ArrayLike) -> ArrayLike:
    """Derivative of logpdf with respect to x (0 outside the support)."""
    if dist.is_point_mass:
        raise ParameterDomainError(f"{dist} is a point mass and has no density")
    xs = np.asarray(x, dtype=float)
    kind, params = dist.kind, dist.params

    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == DistKind.NORMAL:
            mu, sigma = params
            out = -(xs - mu) / (sigma * sigma)
        elif kind == DistKind.HALF_NORMAL:
            (sigma,) = params
            out = np.where(xs >= 0, -xs / (sigma * sigma), 0.0)
        elif kind == DistKind.INV_GAMMA:
            shape, scale = params
            safe = np.where(xs > 0, xs, 1.0)
            out = np.where(xs > 0, -(shape + 1.0) / safe + scale / (safe * safe), 0.0)
        elif kind == DistKind.UNIFORM:
            out = np.zeros_like(xs)
        else:
            location, scale, k = params
            z = (xs - location) / scale
            lo, hi = dist.support()
            inside = (xs >= lo) & (xs <= hi)
            out = np.where(inside, -(1.0 + k) / (scale * (1.0 + k * np.where(inside, z, 0.0))), 0.0)

    return _scalar_or_array(np.asarray(out, dtype=float), x)


def gpd_inv_cdf(k: float, sigma: float, location: float, p: ArrayLike) -> ArrayLike:
    """Generalized Pareto quantile; k > 0 is the heavy-tailed side."""
    if not sigma > 0:
        raise ParameterDomainError(f"generalized Pareto scale must be > 0, got {sigma}")
    ps = np.asarray(p, dtype=float)
    if np.any(ps >= 1.0) or np.any(ps < 0.0) or np.any(np.isnan(ps)):
        raise ParameterDomainError("generalized Pareto quantile needs 0 <= p < 1")
    if k == 0.0:
        out = location - sigma * np.log1p(-ps)
    else:
        out = location + sigma * np.expm1(-k * np.log1p(-ps)) / k
    return _scalar_or_array(np.asarray(out, dtype=float), p)


def sample_n(dist: DistSpec, rng: RngStream, size: Optional[int] = None) -> ArrayLike:
    """Draw `size` values (a float when size is None)."""
    kind, params = dist.kind, dist.params
    if kind == DistKind.NORMAL:
        mu, sigma = params
        draws = rng.normal(mu, sigma, size)
    elif kind == DistKind.HALF_NORMAL:
        draws = np.abs(rng.normal(0.0, params[0], size))
    elif kind == DistKind.INV_GAMMA:
        shape, scale = params
        draws = scale / rng.gamma(shape, size)
    elif kind == DistKind.UNIFORM:
        a, b = params
        draws = rng.uniform(a, b, size)
    else:
        location, scale, k = params
        draws = gpd_inv_cdf(k, scale, location, rng.uniform(0.0, 1.0, size))
    return float(draws) if size is None else np.asarray(draws, dtype=float)


def sample(dist: DistSpec, rng: RngStream) -> float:
    """One draw from `dist`."""
    return sample_n(dist, rng)


def log_density_scalar(dist: DistSpec, x: float) -> Tuple[float, float]:
    """(logpdf, d logpdf / dx) for one float, without array overhead."""
    kind, params = dist.kind, dist.params
    if dist.is_point_mass:
        raise ParameterDomainError(f"{dist} is a point mass and has no density")
    if kind == DistKind.NORMAL:
        mu, sigma = params
        z = (x - mu) / sigma
        return -_LOG_SQRT_2PI - math.log(sigma) - 0.5 * z * z, -z / sigma
    if kind == DistKind.HALF_NORMAL:
        (sigma,) = params
        if x < 0:
            return -math.inf, 0.0
        z = x / sigma
        return math.log(2.0) - _LOG_SQRT_2PI - math.log(sigma) - 0.5 * z * z, -z / sigma
    if kind == DistKind.INV_GAMMA:
        shape, scale = params
        if x <= 0:
            return -math.inf, 0.0
        value = shape * math.log(scale) - math.lgamma(shape) - (shape + 1.0) * math.log(x) - scale / x
        return value, -(shape + 1.0) / x + scale / (x * x)
    value = logpdf(dist, x)
    return value, grad_logpdf(dist, x)
