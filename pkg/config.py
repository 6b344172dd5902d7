"""
Workflow configuration: defaults, an optional TOML file of flat
`key = value` pairs, then command-line overrides.
"""
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Optional

from errors import ConfigError
from models import Parameterization, PriorConfig, model_names
from sampler import SamplerConfig

STAT_NAMES = ("skew", "median", "mean", "sd")


@dataclass(frozen=True)
class WorkflowConfig:
    model: str = "hier-who"
    priors: str = "weak"
    parameterization: str = "noncentered"
    seed: int = 0
    chains: int = 4
    iter: int = 1000
    warmup: int = 1000
    target_accept: float = 0.8
    max_leapfrog: int = 1024
    divergence_threshold: float = 1000.0
    out: str = "out"
    n_datasets: int = 100
    n_pages: int = 3
    n_curves: int = 100
    stat: str = "skew"
    grouped_stat: str = "median"
    clusters: int = 6
    log_level: str = "INFO"

    def __post_init__(self):
        if self.model not in model_names():
            raise ConfigError(f"unknown model {self.model!r}; expected one of {model_names()}")
        try:
            PriorConfig.preset(self.priors)
            Parameterization(self.parameterization)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for name in ("stat", "grouped_stat"):
            if getattr(self, name) not in STAT_NAMES:
                raise ConfigError(f"{name} must be one of {STAT_NAMES}")
        for name in ("n_datasets", "n_pages", "n_curves", "clusters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        # surfaces sampler range errors at load time
        self.sampler_config()

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            n_chains=self.chains,
            n_warmup=self.warmup,
            n_keep=self.iter,
            target_accept=self.target_accept,
            max_leapfrog=self.max_leapfrog,
            divergence_threshold=self.divergence_threshold,
            seed=self.seed,
        )

    def with_overrides(self, **overrides: Any) -> "WorkflowConfig":
        """Copy with every non-None override applied."""
        known = {f.name for f in fields(self)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys {unknown}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _coerce(name: str, value: Any, target: type) -> Any:
    if target is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, target) or (target is int and isinstance(value, bool)):
        raise ConfigError(f"{name} must be {target.__name__}, got {value!r}")
    return value


def load_config(path: Optional[str] = None, **overrides: Any) -> WorkflowConfig:
    """Defaults, then the TOML file at `path`, then `overrides`."""
    values: Dict[str, Any] = {}
    if path:
        try:
            with open(path, "rb") as handle:
                raw = tomllib.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        types = {f.name: f.type for f in fields(WorkflowConfig)}
        for key, value in raw.items():
            if key not in types:
                raise ConfigError(f"{path}: unknown configuration key {key!r}")
            values[key] = _coerce(key, value, types[key])
    return WorkflowConfig(**values).with_overrides(**overrides)
