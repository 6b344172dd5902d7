"""
Subcommands chained through files, manifests and exit codes.
"""
import json

import pytest

import cli
from errors import SamplingError
from plots import read_plot
from sampler import Draws

EIGHT_SCHOOLS = ["--model", "8schools-nc", "--seed", "5", "--chains", "2", "--iter", "200", "--warmup", "200"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def fitted(tmp_path_factory):
    out = tmp_path_factory.mktemp("eight-schools")
    assert run("fit", *EIGHT_SCHOOLS, "--out", out) == 0
    return out


def read_manifest(out, subcommand):
    return json.loads((out / f"manifest-{subcommand}.json").read_text())


def test_fit_writes_draws_and_manifest(fitted):
    draws = Draws.from_csv(str(fitted / "draws.csv"))
    assert draws.n_draws == 400
    assert "theta[8]" in draws.names
    manifest = read_manifest(fitted, "fit")
    assert manifest["subcommand"] == "fit"
    assert manifest["seed"] == 5
    assert manifest["config"]["model"] == "8schools-nc"
    assert set(manifest["outputs"]) == {"draws.csv", "draws.jsonl", "summary.csv"}
    assert manifest["outputs"]["draws.csv"] == cli.sha256_file(str(fitted / "draws.csv"))


def test_fit_is_reproducible(fitted, tmp_path):
    assert run("fit", *EIGHT_SCHOOLS, "--out", tmp_path) == 0
    for name in ("draws.csv", "draws.jsonl", "summary.csv"):
        assert (tmp_path / name).read_bytes() == (fitted / name).read_bytes()


def run_downstream(fitted, out, config):
    assert run("prior-predictive", "--config", config, *EIGHT_SCHOOLS, "--out", out) == 0
    assert run("diagnose", *EIGHT_SCHOOLS, "--draws", fitted / "draws.csv", "--out", out) == 0
    assert run("ppc", *EIGHT_SCHOOLS, "--draws", fitted / "draws.csv", "--out", out) == 0
    assert run("loo", *EIGHT_SCHOOLS, "--draws", fitted / "draws.csv", "--out", out) == 0
    assert run("compare", "--a", out / "loo.csv", "--b", out / "loo.csv", "--out", out) == 0
    assert run("render", "--plot", out / "khat-scatter.csv", "--format", "svg", "--out", out / "rendered") == 0


def test_downstream_outputs_are_reproducible(fitted, tmp_path):
    config = tmp_path / "workflow.toml"
    config.write_text("n_datasets = 20\nn_pages = 2\n")
    first, second = tmp_path / "first", tmp_path / "second"
    run_downstream(fitted, first, config)
    run_downstream(fitted, second, config)
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(second) for p in second.rglob("*") if p.is_file())
    assert any(p.suffix == ".svg" for p in files)
    for name in files:
        if name.name.startswith("manifest-"):
            assert json.loads((first / name).read_text())["outputs"] == \
                json.loads((second / name).read_text())["outputs"]
        else:
            assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_diagnose(fitted, tmp_path):
    assert run("diagnose", *EIGHT_SCHOOLS, "--draws", fitted / "draws.jsonl", "--out", tmp_path) == 0
    scatter = read_plot(str(tmp_path / "scatter-divergences.csv"))
    assert scatter.axes == ("theta[1]", "log(tau)")
    assert scatter.n_rows == 400
    parcoord = read_plot(str(tmp_path / "parallel-coordinates.csv"))
    assert parcoord.n_rows == 400 * 8
    assert (tmp_path / "parallel-coordinates.svg").read_text().count("<polyline") == 400
    inputs = read_manifest(tmp_path, "diagnose")["inputs"]
    assert list(inputs.values()) == [cli.sha256_file(str(fitted / "draws.jsonl"))]


def test_ppc_and_loo(fitted, tmp_path):
    assert run("ppc", *EIGHT_SCHOOLS, "--draws", fitted / "draws.csv", "--out", tmp_path) == 0
    assert (tmp_path / "density-overlay.svg").read_text().count("<path") == 101
    assert (tmp_path / "stat-skew.csv").exists()
    assert len((tmp_path / "loo_pit.csv").read_text().splitlines()) == 9

    assert run("loo", *EIGHT_SCHOOLS, "--draws", fitted / "draws.csv", "--out", tmp_path) == 0
    summary = json.loads((tmp_path / "loo_summary.json").read_text())
    assert sum(summary["khat_bands"].values()) == 8
    khat = read_plot(str(tmp_path / "khat-scatter.csv"))
    assert khat.n_rows == 8


def test_compare_and_render(fitted, tmp_path):
    assert run("loo", *EIGHT_SCHOOLS, "--draws", fitted / "draws.csv", "--out", tmp_path) == 0
    loo = tmp_path / "loo.csv"
    assert run("compare", "--a", loo, "--b", loo, "--out", tmp_path) == 0
    diff = read_plot(str(tmp_path / "elpd-diff.csv"))
    assert diff.annotation("diff_total") == 0.0

    rendered = tmp_path / "rendered"
    assert run("render", "--plot", tmp_path / "elpd-diff.csv", "--format", "json", "--out", rendered) == 0
    assert read_plot(str(rendered / "elpd-diff.json")).equals(diff)


def test_prior_predictive_for_eight_schools(tmp_path):
    config = tmp_path / "workflow.toml"
    config.write_text("n_datasets = 10\nn_pages = 2\n")
    assert run("prior-predictive", "--config", config, "--model", "8schools-c", "--out", tmp_path) == 0
    assert sorted(p.name for p in tmp_path.glob("flipbook-page-*.csv")) == ["flipbook-page-1.csv",
                                                                            "flipbook-page-2.csv"]
    summary = json.loads((tmp_path / "prior_summary.json").read_text())
    assert list(summary) == ["eight-schools"]
    assert str(config) in read_manifest(tmp_path, "prior-predictive")["inputs"]


def test_simulate_data(tmp_path):
    assert run("simulate-data", "--seed", "3", "--out", tmp_path) == 0
    header = (tmp_path / "data.csv").read_text().splitlines()[0]
    assert header == "monitor_id,x_log_sat,y_log_pm25,region_who,region_cluster,country"
    assert (tmp_path / "eda-scatter.svg").exists()
    assert "super_region_1" in (tmp_path / "group_ols.csv").read_text()
    first = (tmp_path / "data.csv").read_bytes()
    assert run("simulate-data", "--seed", "3", "--out", tmp_path) == 0
    assert (tmp_path / "data.csv").read_bytes() == first


def test_validation_failures_exit_with_two(tmp_path, capsys):
    assert run("fit", "--model", "pooled", "--data", tmp_path / "missing.csv", "--out", tmp_path) == 2
    assert "input file not found" in capsys.readouterr().err
    bad = tmp_path / "bad.toml"
    bad.write_text("colour = 1\n")
    assert run("fit", "--config", bad, "--out", tmp_path) == 2
    assert run("fit", *EIGHT_SCHOOLS, "--chains", "0", "--out", tmp_path) == 2
    assert not (tmp_path / "manifest-fit.json").exists()


def test_draws_from_another_model_exit_with_two(fitted, tmp_path, capsys):
    assert run("loo", "--model", "pooled", "--draws", fitted / "draws.csv", "--out", tmp_path) == 2
    assert "draws do not match pooled" in capsys.readouterr().err
    assert not (tmp_path / "manifest-loo.json").exists()


def test_bad_arguments_are_rejected_by_the_parser(tmp_path):
    with pytest.raises(SystemExit) as info:
        run("fit", "--model", "funnel", "--out", tmp_path)
    assert info.value.code == 2


def test_sampling_failure_exits_with_three(tmp_path, monkeypatch):
    def fail(*args, **kwargs):
        raise SamplingError("every warmup transition diverged")

    monkeypatch.setattr(cli, "run_chains", fail)
    assert run("fit", *EIGHT_SCHOOLS, "--out", tmp_path) == 3


def test_metrics_file(tmp_path):
    metrics_file = tmp_path / "metrics.prom"
    assert run("simulate-data", "--out", tmp_path, "--metrics-file", metrics_file) == 0
    assert 'stage="simulate-data"' in metrics_file.read_text()


def test_default_plot_axes():
    assert cli.default_scatter_pair(["mu", "tau", "theta[1]"]) == ("theta[1]", "log(tau)")
    assert cli.default_scatter_pair(["beta0", "beta1", "tau1", "beta1_j[1]"]) == ("beta1_j[1]", "log(tau1)")
    assert cli.default_scatter_pair(["beta0", "beta1", "sigma"]) == ("beta0", "beta1")
    assert cli.default_parcoord_axes(["mu", "theta[1]", "theta[2]"]) == ["theta[1]", "theta[2]"]
    assert cli.default_parcoord_axes(["beta0", "beta1"]) == ["beta0", "beta1"]


@pytest.mark.slow
def test_synthetic_pipeline(tmp_path):
    common = ["--model", "hier-who", "--seed", "2", "--chains", "2", "--iter", "300", "--warmup", "300",
              "--out", tmp_path]
    assert run("simulate-data", *common) == 0
    data = tmp_path / "data.csv"
    assert run("fit", *common, "--data", data) == 0
    assert run("diagnose", *common, "--draws", tmp_path / "draws.csv") == 0
    assert run("ppc", *common, "--data", data, "--draws", tmp_path / "draws.csv") == 0
    assert (tmp_path / "stat-median-by-group.svg").exists()
    assert run("loo", *common, "--data", data, "--draws", tmp_path / "draws.csv") == 0
    assert read_plot(str(tmp_path / "khat-scatter.csv")).n_rows == len(data.read_text().splitlines()) - 1
