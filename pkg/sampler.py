"""
Hamiltonian Monte Carlo with dual-averaging step size adaptation, a diagonal
metric estimated during warmup, divergence detection, multi-chain execution
and split-R-hat.
"""
import json
import logging
import math
from concurrent import futures
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, NamedTuple, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd

from distributions import RngStream
from errors import ComputationError, ConfigError, DataError, SamplingError, ValidationError
from metrics import WorkflowMetrics, metrics as default_metrics
from models import BoundPosterior, Dataset, ModelSpec

logger = logging.getLogger(__name__)

GradFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]

META_COLUMNS = ("chain", "iteration", "divergent", "energy", "accept_stat")


class Target(Protocol):
    """What the sampler needs from a posterior."""

    dim: int
    names: Tuple[str, ...]
    label: str

    def log_density_grad(self, q: np.ndarray) -> Tuple[float, np.ndarray]: ...

    def constrain_matrix(self, q: np.ndarray) -> np.ndarray: ...

    def initial_point(self, rng: RngStream) -> np.ndarray: ...


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_warmup: int = 1000
    n_keep: int = 1000
    target_accept: float = 0.8
    max_leapfrog: int = 1024
    divergence_threshold: float = 1000.0
    seed: int = 0
    trajectory_length: float = 2.0 * math.pi
    max_workers: Optional[int] = None

    def __post_init__(self):
        if self.n_chains < 1:
            raise ConfigError(f"n_chains must be >= 1, got {self.n_chains}")
        if self.n_warmup < 0 or self.n_keep < 1:
            raise ConfigError("n_warmup must be >= 0 and n_keep >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError(f"target_accept must lie in (0, 1), got {self.target_accept}")
        if self.max_leapfrog < 1:
            raise ConfigError(f"max_leapfrog must be >= 1, got {self.max_leapfrog}")
        if not self.divergence_threshold > 0:
            raise ConfigError(f"divergence_threshold must be > 0, got {self.divergence_threshold}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not self.trajectory_length > 0:
            raise ConfigError("trajectory_length must be > 0")

    def to_dict(self) -> Dict[str, object]:
        return {
            "n_chains": self.n_chains,
            "n_warmup": self.n_warmup,
            "n_keep": self.n_keep,
            "target_accept": self.target_accept,
            "max_leapfrog": self.max_leapfrog,
            "divergence_threshold": self.divergence_threshold,
            "seed": self.seed,
            "trajectory_length": self.trajectory_length,
        }


@dataclass(frozen=True, eq=False)
class TransitionLog:
    """Per-iteration integrator bookkeeping kept alongside the draws (not serialized)."""

    energy_error: np.ndarray
    n_leapfrog: np.ndarray
    step_size: np.ndarray


@dataclass(frozen=True, eq=False)
class Draws:
    """Post-warmup constrained draws with HMC metadata, ordered by (chain, iteration)."""

    params: np.ndarray
    names: Tuple[str, ...]
    chain: np.ndarray
    iteration: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    accept_stat: np.ndarray
    log: Optional[TransitionLog] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "params", np.atleast_2d(np.asarray(self.params, dtype=float)))
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "chain", np.asarray(self.chain, dtype=np.int64))
        object.__setattr__(self, "iteration", np.asarray(self.iteration, dtype=np.int64))
        object.__setattr__(self, "divergent", np.asarray(self.divergent, dtype=bool))
        object.__setattr__(self, "energy", np.asarray(self.energy, dtype=float))
        object.__setattr__(self, "accept_stat", np.asarray(self.accept_stat, dtype=float))
        n = self.params.shape[0]
        if self.params.shape[1] != len(self.names):
            raise ValidationError("one parameter name per draws column is required")
        for name in ("chain", "iteration", "divergent", "energy", "accept_stat"):
            if getattr(self, name).shape != (n,):
                raise ValidationError(f"draws field {name!r} must have length {n}")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("duplicate parameter names in draws")

    @classmethod
    def from_mapping(cls, columns: Mapping[str, Sequence[float]], chain: Optional[Sequence[int]] = None) -> "Draws":
        """Draws built from named columns, with neutral metadata."""
        names = tuple(columns)
        params = np.column_stack([np.asarray(columns[name], dtype=float) for name in names])
        n = params.shape[0]
        chain = np.zeros(n, dtype=np.int64) if chain is None else np.asarray(chain)
        iteration = np.zeros(n, dtype=np.int64)
        for c in np.unique(chain):
            iteration[chain == c] = np.arange(np.sum(chain == c))
        return cls(params, names, chain, iteration, np.zeros(n, bool), np.zeros(n), np.ones(n))

    @property
    def n_draws(self) -> int:
        return int(self.params.shape[0])

    @property
    def n_chains(self) -> int:
        return int(np.unique(self.chain).size)

    @property
    def divergent_fraction(self) -> float:
        return float(self.divergent.mean()) if self.n_draws else 0.0

    def column(self, name: str) -> np.ndarray:
        """Values of one parameter; `log(name)` returns its natural log."""
        if name.startswith("log(") and name.endswith(")"):
            return np.log(self.column(name[4:-1]))
        try:
            index = self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter {name!r}") from None
        return self.params[:, index]

    def by_chain(self, name: str) -> np.ndarray:
        """[n_chains x n_keep] view of one parameter."""
        values = self.column(name)
        chains = np.unique(self.chain)
        rows = [values[self.chain == c][np.argsort(self.iteration[self.chain == c], kind="stable")] for c in chains]
        lengths = {len(row) for row in rows}
        if len(lengths) != 1:
            raise ValidationError("chains have unequal numbers of draws")
        return np.vstack(rows)

    def equals(self, other: "Draws") -> bool:
        return (
            self.names == other.names
            and np.array_equal(self.params, other.params)
            and np.array_equal(self.chain, other.chain)
            and np.array_equal(self.iteration, other.iteration)
            and np.array_equal(self.divergent, other.divergent)
            and np.array_equal(self.energy, other.energy)
            and np.array_equal(self.accept_stat, other.accept_stat)
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "chain": self.chain,
            "iteration": self.iteration,
            "divergent": self.divergent.astype(np.int64),
            "energy": self.energy,
            "accept_stat": self.accept_stat,
        })
        params = pd.DataFrame(self.params, columns=list(self.names))
        return pd.concat([frame, params], axis=1)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "Draws":
        missing = [c for c in META_COLUMNS if c not in frame.columns]
        if missing:
            raise DataError(f"draws table is missing columns {missing}")
        names = tuple(c for c in frame.columns if c not in META_COLUMNS)
        return cls(
            params=frame[list(names)].to_numpy(dtype=float) if names else np.empty((len(frame), 0)),
            names=names,
            chain=frame["chain"].to_numpy(),
            iteration=frame["iteration"].to_numpy(),
            divergent=frame["divergent"].to_numpy().astype(bool),
            energy=frame["energy"].to_numpy(dtype=float),
            accept_stat=frame["accept_stat"].to_numpy(dtype=float),
        )

    def to_csv(self, path: str):
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path: str) -> "Draws":
        return cls.from_frame(pd.read_csv(path, float_precision="round_trip"))

    def to_jsonl(self, path: str):
        with open(path, "w", encoding="utf-8") as handle:
            for s in range(self.n_draws):
                record = {
                    "chain": int(self.chain[s]),
                    "iteration": int(self.iteration[s]),
                    "divergent": bool(self.divergent[s]),
                    "energy": float(self.energy[s]),
                    "accept_stat": float(self.accept_stat[s]),
                }
                record.update(zip(self.names, (float(v) for v in self.params[s])))
                handle.write(json.dumps(record) + "\n")

    @classmethod
    def from_jsonl(cls, path: str) -> "Draws":
        with open(path, encoding="utf-8") as handle:
            records = [json.loads(line) for line in handle if line.strip()]
        if not records:
            raise DataError(f"{path}: no draws")
        return cls.from_frame(pd.DataFrame.from_records(records))


class LeapfrogStep(NamedTuple):
    q: np.ndarray
    p: np.ndarray
    n_evals: int
    logp: float
    grad: np.ndarray


def _safe_eval(gradfn: GradFn, q: np.ndarray) -> Tuple[float, np.ndarray]:
    """Evaluate the target; numerical failures become a non-finite state."""
    try:
        with np.errstate(all="ignore"):
            logp, grad = gradfn(q)
    except (ComputationError, OverflowError, FloatingPointError, ZeroDivisionError):
        return -math.inf, np.full_like(q, np.nan)
    if math.isnan(logp):
        logp = -math.inf
    return float(logp), grad


def leapfrog(gradfn: GradFn, q: np.ndarray, p: np.ndarray, eps: float, inv_mass: np.ndarray,
             grad: Optional[np.ndarray] = None) -> LeapfrogStep:
    """One half-kick / drift / half-kick step.

    Pass the gradient at `q` to save an evaluation when chaining steps.
    """
    if not eps > 0:
        raise ValidationError(f"leapfrog step size must be > 0, got {eps}")
    n_evals = 0
    if grad is None:
        _, grad = _safe_eval(gradfn, q)
        n_evals += 1
    with np.errstate(all="ignore"):
        p_half = p + 0.5 * eps * grad
        q_new = q + eps * inv_mass * p_half
    logp, grad_new = _safe_eval(gradfn, q_new)
    with np.errstate(all="ignore"):
        p_new = p_half + 0.5 * eps * grad_new
    return LeapfrogStep(q_new, p_new, n_evals + 1, logp, grad_new)


def hamiltonian(logp: float, p: np.ndarray, inv_mass: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        return float(-logp + 0.5 * np.sum(inv_mass * p * p))


@dataclass(frozen=True)
class ChainState:
    q: np.ndarray
    logp: float
    grad: np.ndarray


class Transition(NamedTuple):
    state: ChainState
    divergent: bool
    energy: float
    accept_stat: float
    n_leapfrog: int
    energy_error: float


def max_steps(config: SamplerConfig, step_size: float) -> int:
    """Upper end of the jittered trajectory length for this step size."""
    return int(max(1, min(config.max_leapfrog, math.ceil(config.trajectory_length / step_size))))


def hmc_transition(state: ChainState, target: Target, config: SamplerConfig, rng: RngStream,
                   step_size: float, inv_mass: np.ndarray, n_steps: Optional[int] = None) -> Transition:
    """One static-length HMC transition with a Metropolis correction.

    The number of leapfrog steps is uniform on [1, L_max] unless given. A
    trajectory whose energy error exceeds the divergence threshold stops early
    and is rejected, so a divergent iteration records its starting point.
    """
    p0 = rng.standard_normal(state.q.shape[0]) / np.sqrt(inv_mass)
    h0 = hamiltonian(state.logp, p0, inv_mass)
    n_steps = n_steps or int(rng.integers(1, max_steps(config, step_size) + 1))

    q, p, grad, logp = state.q, p0, state.grad, state.logp
    worst = 0.0
    steps = 0
    divergent = False
    for _ in range(n_steps):
        step = leapfrog(target.log_density_grad, q, p, step_size, inv_mass, grad)
        q, p, grad, logp = step.q, step.p, step.grad, step.logp
        steps += 1
        error = hamiltonian(logp, p, inv_mass) - h0
        if not math.isfinite(error):
            error = math.inf
        worst = max(worst, abs(error))
        if abs(error) > config.divergence_threshold:
            divergent = True
            break

    u = rng.uniform()
    if divergent:
        return Transition(state, True, h0, 0.0, steps, worst)

    h_end = hamiltonian(logp, p, inv_mass)
    accept_stat = 1.0 if h_end <= h0 else (math.exp(h0 - h_end) if math.isfinite(h_end) else 0.0)
    if u < accept_stat:
        return Transition(ChainState(q, logp, grad), False, h_end, accept_stat, steps, worst)
    return Transition(state, False, h0, accept_stat, steps, worst)


class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance rate."""

    gamma = 0.05
    t0 = 10.0
    kappa = 0.75

    def __init__(self, step_size: float, target_accept: float):
        self.target_accept = target_accept
        self.restart(step_size)

    def restart(self, step_size: float):
        self.mu = math.log(10.0 * step_size)
        self.iteration = 0
        self.h_bar = 0.0
        self.log_step = math.log(step_size)
        self.log_step_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.iteration += 1
        m = self.iteration
        weight = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - weight) * self.h_bar + weight * (self.target_accept - accept_stat)
        self.log_step = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        eta = m ** (-self.kappa)
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar
        return math.exp(self.log_step)

    def final_step_size(self) -> float:
        return math.exp(self.log_step_bar)


def find_reasonable_step_size(target: Target, state: ChainState, inv_mass: np.ndarray,
                              rng: RngStream, step_size: float = 1.0) -> float:
    """Double or halve the step size until one-step acceptance crosses 1/2."""
    def log_ratio(eps: float) -> float:
        p0 = rng.standard_normal(state.q.shape[0]) / np.sqrt(inv_mass)
        step = leapfrog(target.log_density_grad, state.q, p0, eps, inv_mass, state.grad)
        value = hamiltonian(state.logp, p0, inv_mass) - hamiltonian(step.logp, step.p, inv_mass)
        return value if math.isfinite(value) else -math.inf

    direction = 1.0 if log_ratio(step_size) > math.log(0.5) else -1.0
    for _ in range(100):
        if direction * log_ratio(step_size) <= -direction * math.log(2.0):
            break
        step_size *= 2.0 ** direction
    return float(min(max(step_size, 1e-8), 1e3))


def _initial_state(target: Target, rng: RngStream) -> ChainState:
    for _ in range(100):
        q = target.initial_point(rng)
        logp, grad = _safe_eval(target.log_density_grad, q)
        if math.isfinite(logp) and np.all(np.isfinite(grad)):
            return ChainState(q, logp, grad)
    raise SamplingError(f"no finite initial point found for {target.label}")


@dataclass
class ChainResult:
    q: np.ndarray
    divergent: np.ndarray
    energy: np.ndarray
    accept_stat: np.ndarray
    energy_error: np.ndarray
    n_leapfrog: np.ndarray
    step_size: float
    inv_mass: np.ndarray


def _run_chain(target: Target, config: SamplerConfig, chain_id: int, rng: RngStream,
               metrics: WorkflowMetrics) -> ChainResult:
    state = _initial_state(target, rng)
    inv_mass = np.ones(target.dim)
    step_size = find_reasonable_step_size(target, state, inv_mass, rng)
    adapter = DualAveraging(step_size, config.target_accept)

    n_warmup = config.n_warmup
    slow_start, slow_end = n_warmup // 2, int(0.85 * n_warmup)
    window: List[np.ndarray] = []
    warmup_divergent = 0
    warmup_steps = 0

    for it in range(n_warmup):
        result = hmc_transition(state, target, config, rng, step_size, inv_mass)
        state = result.state
        warmup_divergent += result.divergent
        warmup_steps += result.n_leapfrog
        step_size = adapter.update(result.accept_stat)
        if slow_start <= it < slow_end:
            window.append(state.q)
        if it == slow_end - 1 and len(window) >= 10:
            samples = np.asarray(window)
            n = samples.shape[0]
            inv_mass = (n / (n + 5.0)) * samples.var(axis=0, ddof=1) + 1e-3 * 5.0 / (n + 5.0)
            step_size = find_reasonable_step_size(target, state, inv_mass, rng, step_size)
            adapter.restart(step_size)
    if n_warmup:
        step_size = adapter.final_step_size()
        if warmup_divergent == n_warmup:
            raise SamplingError(
                f"every warmup transition diverged for model {target.label} (step size {step_size:.3g})"
            )

    n_keep = config.n_keep
    q = np.empty((n_keep, target.dim))
    divergent = np.zeros(n_keep, dtype=bool)
    energy = np.empty(n_keep)
    accept = np.empty(n_keep)
    energy_error = np.empty(n_keep)
    n_leapfrog = np.empty(n_keep, dtype=np.int64)
    for it in range(n_keep):
        result = hmc_transition(state, target, config, rng, step_size, inv_mass)
        state = result.state
        q[it] = state.q
        divergent[it] = result.divergent
        energy[it] = result.energy
        accept[it] = result.accept_stat
        energy_error[it] = result.energy_error
        n_leapfrog[it] = result.n_leapfrog

    metrics.record_transitions(target.label, "warmup", n_warmup, warmup_divergent)
    metrics.record_transitions(target.label, "sampling", n_keep, int(divergent.sum()))
    metrics.record_leapfrog(target.label, warmup_steps + int(n_leapfrog.sum()))
    metrics.set_step_size(target.label, chain_id, step_size)

    logger.info("chain %d of %s: step size %.4g, %d divergent of %d kept",
                chain_id, target.label, step_size, int(divergent.sum()), n_keep)
    return ChainResult(q, divergent, energy, accept, energy_error, n_leapfrog, step_size, inv_mass)


def sample_target(target: Target, config: SamplerConfig, metrics: Optional[WorkflowMetrics] = None) -> Draws:
    """Run `config.n_chains` independent chains and merge them by chain index."""
    metrics = metrics or default_metrics
    root = RngStream(config.seed)
    streams = [root.derive(chain) for chain in range(config.n_chains)]

    with futures.ThreadPoolExecutor(max_workers=config.max_workers or config.n_chains) as pool:
        jobs = [pool.submit(_run_chain, target, config, chain, streams[chain], metrics)
                for chain in range(config.n_chains)]
        results = [job.result() for job in jobs]

    n_keep = config.n_keep
    draws = Draws(
        params=np.vstack([target.constrain_matrix(r.q) for r in results]),
        names=target.names,
        chain=np.repeat(np.arange(config.n_chains), n_keep),
        iteration=np.tile(np.arange(n_keep), config.n_chains),
        divergent=np.concatenate([r.divergent for r in results]),
        energy=np.concatenate([r.energy for r in results]),
        accept_stat=np.concatenate([r.accept_stat for r in results]),
        log=TransitionLog(
            energy_error=np.concatenate([r.energy_error for r in results]),
            n_leapfrog=np.concatenate([r.n_leapfrog for r in results]),
            step_size=np.repeat([r.step_size for r in results], n_keep),
        ),
    )
    n_divergent = int(draws.divergent.sum())
    if n_divergent:
        logger.warning("%s: %d of %d post-warmup transitions diverged",
                       target.label, n_divergent, draws.n_draws)
    return draws


def run_chains(model: ModelSpec, data: Dataset, config: SamplerConfig,
               metrics: Optional[WorkflowMetrics] = None) -> Draws:
    """Fit `model` to `data` with multi-chain HMC."""
    return sample_target(BoundPosterior(model, data), config, metrics)


def split_rhat(draws: Draws, param: str) -> float:
    """Split-R-hat over the 2 * n_chains half-chains of one parameter."""
    chains = draws.by_chain(param)
    n_keep = chains.shape[1]
    if n_keep < 4:
        raise ValidationError(f"split-R-hat needs at least 4 draws per chain, got {n_keep}")
    half = n_keep // 2
    halves = np.vstack([chains[:, :half], chains[:, n_keep - half:]])
    within = halves.var(axis=1, ddof=1).mean()
    if within == 0:
        logger.warning("split-R-hat for %s undefined: zero within-chain variance", param)
        return math.nan
    between = half * halves.mean(axis=1).var(ddof=1)
    return float(math.sqrt(((half - 1) / half * within + between / half) / within))


def summarize(draws: Draws) -> List[Dict[str, float]]:
    """Per-parameter mean, sd, 5/50/95% quantiles and split-R-hat."""
    rows = []
    for name in draws.names:
        values = draws.column(name)
        q5, q50, q95 = np.quantile(values, [0.05, 0.5, 0.95])
        rows.append({
            "name": name,
            "mean": float(values.mean()),
            "sd": float(values.std(ddof=1)) if values.size > 1 else 0.0,
            "q5": float(q5),
            "q50": float(q50),
            "q95": float(q95),
            "rhat": split_rhat(draws, name) if draws.by_chain(name).shape[1] >= 4 else math.nan,
        })
    return rows
