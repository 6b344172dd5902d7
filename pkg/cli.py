"""
Command-line entry point chaining the workflow stages through files.

Each subcommand reads its inputs, writes outputs under --out and records a
manifest-<subcommand>.json with the resolved config and sha256 hashes.
"""
import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import plots
from config import WorkflowConfig, load_config
from data_pipeline import SynthConfig, cluster_regions, load_csv, load_eight_schools, ols_by_group, synth_generate, write_csv
from distributions import RngStream
from errors import DataError, WorkflowError
from metrics import StageTracker, WorkflowMetrics, metrics as default_metrics
from models import Dataset, ModelKind, ModelSpec, make_model, model_names, pointwise_log_lik, simulate_replicates
from ppc_diagnostics import density_overlay, loo_pit, pit_uniformity, ppc_stat_check, uniform_reference_curves
from prior_pred import FlipBook, compare_books, prior_flipbook, prior_tail_summary
from psis_loo import LooResult, elpd_loo, khat_bands, loo_compare
from sampler import Draws, run_chains, summarize

logger = logging.getLogger(__name__)

# stream ids keep each stage's randomness independent of the others
STREAM_PRIOR = 1
STREAM_PPC = 2
STREAM_PIT_REFERENCE = 3


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


class WorkflowRunner:
    """Runs one subcommand and tracks its inputs and outputs."""

    def __init__(self, cfg: WorkflowConfig, subcommand: str, metrics: Optional[WorkflowMetrics] = None):
        self.cfg = cfg
        self.subcommand = subcommand
        self.metrics = metrics or default_metrics
        self.out = Path(cfg.out)
        self.inputs: Dict[str, str] = {}
        self.outputs: List[Path] = []
        self.out.mkdir(parents=True, exist_ok=True)

    @property
    def model(self) -> ModelSpec:
        return make_model(self.cfg.model, self.cfg.priors, self.cfg.parameterization)

    def use_input(self, path: str) -> str:
        if not Path(path).is_file():
            raise DataError(f"input file not found: {path}")
        self.inputs[str(path)] = sha256_file(path)
        return path

    def output(self, name: str) -> str:
        path = self.out / name
        if path not in self.outputs:
            self.outputs.append(path)
        return str(path)

    def emit(self, plot: plots.PlotData, stem: str, formats: Sequence[str] = ("csv", "svg")):
        for fmt in formats:
            plots.emit_plot(plot, fmt, self.output(f"{stem}.{fmt}"))

    def write_json(self, name: str, payload) -> str:
        path = self.output(name)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)
            handle.write("\n")
        return path

    def write_frame(self, name: str, frame: pd.DataFrame) -> str:
        path = self.output(name)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path

    def write_manifest(self) -> str:
        manifest = {
            "subcommand": self.subcommand,
            "config": self.cfg.to_dict(),
            "seed": self.cfg.seed,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {path.name: sha256_file(str(path)) for path in self.outputs},
        }
        path = self.out / f"manifest-{self.subcommand}.json"
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(manifest, handle, indent=2, sort_keys=True)
            handle.write("\n")
        return str(path)

    # --- inputs -------------------------------------------------------------

    def load_dataset(self, path: Optional[str], model: Optional[ModelSpec] = None) -> Dataset:
        model = model or self.model
        if path is None:
            if model.kind.is_eight_schools:
                return load_eight_schools()
            data, _ = synth_generate(SynthConfig(seed=self.cfg.seed))
            return cluster_regions(data, self.cfg.clusters)
        if model.kind.is_eight_schools:
            return load_eight_schools(self.use_input(path))
        data = load_csv(self.use_input(path))
        if model.kind == ModelKind.HIER_CLUSTER and data.cluster is None:
            data = cluster_regions(data, self.cfg.clusters)
        return data

    def load_draws(self, path: str) -> Draws:
        self.use_input(path)
        return Draws.from_jsonl(path) if path.endswith(".jsonl") else Draws.from_csv(path)

    def pointwise(self, data: Dataset, draws: Draws) -> Tuple[np.ndarray, LooResult]:
        log_lik = pointwise_log_lik(self.model, data, draws)
        with StageTracker(self.metrics, "psis"):
            loo = elpd_loo(log_lik, metrics=self.metrics)
        return log_lik, loo

    # --- subcommands ------------------------------------------------------

    def simulate_data(self, args: argparse.Namespace):
        synth = SynthConfig(seed=self.cfg.seed, discretize_low=not args.no_discretize)
        data, truth = synth_generate(synth)
        data = cluster_regions(data, self.cfg.clusters)
        write_csv(data, self.output("data.csv"))
        truth.to_json(self.output("truth.json"))
        fits = ols_by_group(data)
        self.write_frame("group_ols.csv", pd.DataFrame(
            [{"group": name, **fit._asdict()} for name, fit in fits.items()],
            columns=["group", "intercept", "slope", "r_squared", "n"],
        ))
        eda = plots.eda_scatter_data(data)
        self.emit(eda, "eda-scatter")
        print(f"simulate-data: {data.n} monitors in {self.out / 'data.csv'} "
              f"(pooled R^2 = {eda.annotation('r_squared'):.2f})")

    def prior_predictive(self, args: argparse.Namespace):
        model = self.model
        template = self.load_dataset(args.data, model)
        rng = RngStream(self.cfg.seed, STREAM_PRIOR)
        book = prior_flipbook(model, template, self.cfg.n_datasets, rng)
        book.to_json(self.output("flipbook.json"))
        books = [book]
        if not model.kind.is_eight_schools:
            other = "vague" if model.priors.label == "weak" else "weak"
            alt_model = make_model(self.cfg.model, other, self.cfg.parameterization)
            books.append(prior_flipbook(alt_model, template, self.cfg.n_datasets,
                                        RngStream(self.cfg.seed, STREAM_PRIOR)))
            self.emit(plots.prior_compare_data(books, template), "prior-compare")
        self.write_json("prior_summary.json", compare_books(books))
        for page in range(min(self.cfg.n_pages, book.n_datasets)):
            self.emit(plots.flipbook_page_data(book, template, page), f"flipbook-page-{page + 1}")
        summary = prior_tail_summary(book)
        print(f"prior-predictive: {book.n_datasets} datasets, median max|y| = "
              f"{summary.max_abs_quantiles[50]:.3g}, {summary.n_exceeding} above 22000 ug/m3")

    def fit(self, args: argparse.Namespace):
        model = self.model
        data = self.load_dataset(args.data, model)
        with StageTracker(self.metrics, "sampling"):
            draws = run_chains(model, data, self.cfg.sampler_config(), self.metrics)
        draws.to_csv(self.output("draws.csv"))
        draws.to_jsonl(self.output("draws.jsonl"))
        self.write_frame("summary.csv", pd.DataFrame(summarize(draws)))
        print(f"fit: {draws.n_draws} draws of {model.label}, "
              f"{int(draws.divergent.sum())} divergent, written to {self.out / 'draws.csv'}")

    def diagnose(self, args: argparse.Namespace):
        draws = self.load_draws(args.draws)
        summary = pd.DataFrame(summarize(draws))
        self.write_frame("summary.csv", summary)
        param_x, param_y = default_scatter_pair(draws.names)
        self.emit(plots.divergence_scatter_data(draws, args.param_x or param_x, args.param_y or param_y),
                  "scatter-divergences")
        axes = args.params.split(",") if args.params else default_parcoord_axes(draws.names)
        self.emit(plots.parcoord_data(draws, axes, standardize=args.standardize), "parallel-coordinates")
        worst = summary["rhat"].max()
        print(f"diagnose: divergent fraction {draws.divergent_fraction:.4f}, max split-R-hat {worst:.4f}")

    def ppc(self, args: argparse.Namespace):
        model = self.model
        data = self.load_dataset(args.data, model)
        draws = self.load_draws(args.draws)
        rng = RngStream(self.cfg.seed, STREAM_PPC)
        yrep = simulate_replicates(model, data, draws, rng)

        self.emit(plots.density_overlay_data(density_overlay(data.y, yrep, self.cfg.n_curves)), "density-overlay")
        rows = []
        (global_check,) = ppc_stat_check(data.y, yrep, self.cfg.stat)
        self.emit(plots.stat_histogram_data(global_check), f"stat-{self.cfg.stat}")
        rows.append(global_check)
        labels, names = _model_groups(model, data)
        grouped = ppc_stat_check(data.y, yrep, self.cfg.grouped_stat, labels, names)
        if grouped:
            self.emit(plots.grouped_stat_data(grouped), f"stat-{self.cfg.grouped_stat}-by-group")
        rows.extend(grouped)
        self.write_frame("ppc_checks.csv", pd.DataFrame([
            {"stat": c.stat_name.value, "group": c.group or "", "observed": c.observed,
             "p_upper": c.p_upper, "p_lower": c.p_lower} for c in rows
        ]))

        _, loo = self.pointwise(data, draws)
        pits = loo_pit(data.y, yrep, loo.smoothed_log_weights)
        uniformity = pit_uniformity(pits)
        self.write_frame("loo_pit.csv", pd.DataFrame({"index": np.arange(pits.size), "pit": pits}))
        references = uniform_reference_curves(data.n, RngStream(self.cfg.seed, STREAM_PIT_REFERENCE),
                                              n_sims=self.cfg.n_curves)
        self.emit(plots.pit_overlay_data(pits, references), "loo-pit")
        print(f"ppc: {self.cfg.stat} tails {global_check.p_lower:.3f}/{global_check.p_upper:.3f}, "
              f"LOO-PIT KS {uniformity.ks_distance:.3f} "
              f"({'pass' if uniformity.passed else 'fail'} at {uniformity.critical_value:.3f})")

    def loo(self, args: argparse.Namespace):
        data = self.load_dataset(args.data)
        draws = self.load_draws(args.draws)
        _, loo = self.pointwise(data, draws)
        loo.to_csv(self.output("loo.csv"))
        bands = khat_bands(loo.khat)
        self.write_json("loo_summary.json", {
            "elpd_loo": loo.elpd_total,
            "se": loo.elpd_se,
            "p_loo": float(np.sum(loo.p_loo)),
            "khat_bands": {band: bands.count(band) for band in sorted(set(bands))},
        })
        self.emit(plots.khat_scatter_data(loo), "khat-scatter")
        print(f"loo: elpd_loo = {loo.elpd_total:.2f} (se {loo.elpd_se:.2f}), "
              f"{sum(b in ('bad', 'very bad') for b in bands)} points with k-hat >= 0.7")

    def compare(self, args: argparse.Namespace):
        a = LooResult.from_csv(self.use_input(args.a))
        b = LooResult.from_csv(self.use_input(args.b))
        groups = None
        if args.data:
            data = self.load_dataset(args.data)
            groups = [data.group_names[g] for g in data.group]
        comparison = loo_compare(a, b, groups)
        comparison.to_csv(self.output("compare.csv"))
        self.emit(plots.elpd_diff_data(comparison), "elpd-diff")
        print(f"compare: elpd difference (b - a) = {comparison.diff_total:.2f} (se {comparison.diff_se:.2f})")

    def render(self, args: argparse.Namespace):
        plot = plots.read_plot(self.use_input(args.plot))
        stem = Path(args.plot).stem
        plots.emit_plot(plot, args.format, self.output(f"{stem}.{args.format}"))
        print(f"render: {self.out / f'{stem}.{args.format}'}")


def _model_groups(model: ModelSpec, data: Dataset):
    if model.kind == ModelKind.HIER_CLUSTER and data.cluster is not None:
        return data.cluster, data.cluster_names
    return data.group, data.group_names


def default_scatter_pair(names: Sequence[str]) -> Tuple[str, str]:
    """(x, y) parameters for the divergence scatter: a group effect against its log scale."""
    if "tau" in names and "theta[1]" in names:
        return "theta[1]", "log(tau)"
    if "tau1" in names and "beta1_j[1]" in names:
        return "beta1_j[1]", "log(tau1)"
    return names[0], names[1]


def default_parcoord_axes(names: Sequence[str]) -> List[str]:
    for prefix in ("theta[", "beta1_j["):
        axes = [n for n in names if n.startswith(prefix)]
        if len(axes) >= 2:
            return axes
    return list(names)


HANDLERS: Dict[str, Callable[[WorkflowRunner, argparse.Namespace], None]] = {
    "simulate-data": WorkflowRunner.simulate_data,
    "prior-predictive": WorkflowRunner.prior_predictive,
    "fit": WorkflowRunner.fit,
    "diagnose": WorkflowRunner.diagnose,
    "ppc": WorkflowRunner.ppc,
    "loo": WorkflowRunner.loo,
    "compare": WorkflowRunner.compare,
    "render": WorkflowRunner.render,
}

OVERRIDE_FLAGS = ("model", "priors", "parameterization", "seed", "chains", "iter", "warmup", "out", "log_level")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file of key = value settings")
    common.add_argument("--model", choices=model_names())
    common.add_argument("--priors", choices=["vague", "weak"])
    common.add_argument("--parameterization", choices=["centered", "noncentered"])
    common.add_argument("--seed", type=int)
    common.add_argument("--chains", type=int)
    common.add_argument("--iter", type=int, help="post-warmup draws per chain")
    common.add_argument("--warmup", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--metrics-file", help="write Prometheus exposition text here")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="bayes-workflow", description="Visual Bayesian workflow")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate-data", parents=[common], help="generate synthetic monitor data")
    simulate.add_argument("--no-discretize", action="store_true", help="skip low-end rounding")

    prior = sub.add_parser("prior-predictive", parents=[common], help="prior predictive flip-book")
    prior.add_argument("--data", help="template dataset CSV (default: synthetic)")

    fit = sub.add_parser("fit", parents=[common], help="run HMC")
    fit.add_argument("--data", help="dataset CSV (8-schools models default to the bundled data)")

    diagnose = sub.add_parser("diagnose", parents=[common], help="R-hat summary and divergence plots")
    diagnose.add_argument("--draws", required=True)
    diagnose.add_argument("--param-x")
    diagnose.add_argument("--param-y", help="may use log(name)")
    diagnose.add_argument("--params", help="comma-separated parallel-coordinate axes")
    diagnose.add_argument("--standardize", action="store_true")

    for name, help_text in (("ppc", "posterior predictive checks and LOO-PIT"), ("loo", "PSIS-LOO")):
        stage = sub.add_parser(name, parents=[common], help=help_text)
        stage.add_argument("--data")
        stage.add_argument("--draws", required=True)

    compare = sub.add_parser("compare", parents=[common], help="pointwise ELPD difference b - a")
    compare.add_argument("--a", required=True, help="loo.csv of the reference model")
    compare.add_argument("--b", required=True, help="loo.csv of the alternative model")
    compare.add_argument("--data", help="dataset CSV supplying group labels")

    render = sub.add_parser("render", parents=[common], help="re-render plot data")
    render.add_argument("--plot", required=True, help="plot CSV or JSON")
    render.add_argument("--format", choices=["svg", "csv", "json"], default="svg")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level or "INFO"),
        format="%(levelname)s %(name)s: %(message)s",
    )
    metrics = default_metrics
    code = 0
    try:
        overrides = {flag: getattr(args, flag) for flag in OVERRIDE_FLAGS}
        cfg = load_config(args.config, **overrides)
        logging.getLogger().setLevel(cfg.log_level)
        runner = WorkflowRunner(cfg, args.command, metrics)
        if args.config:
            runner.use_input(args.config)
        with StageTracker(metrics, args.command):
            HANDLERS[args.command](runner, args)
        runner.write_manifest()
    except WorkflowError as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        code = exc.exit_code
    finally:
        if args.metrics_file:
            metrics.write(args.metrics_file)
    return code


if __name__ == "__main__":
    sys.exit(main())
