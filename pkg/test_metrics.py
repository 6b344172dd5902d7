"""
Checks that workflow metrics are collected and exported.
"""
import pytest

from errors import SamplingError
from metrics import StageTracker, WorkflowMetrics


def sample_value(m: WorkflowMetrics, name: str, labels: dict) -> float:
    value = m.registry.get_sample_value(name, labels)
    return 0.0 if value is None else value


def test_exposition_lists_all_collectors(fresh_metrics):
    """The exposition text carries every declared metric family."""
    text = fresh_metrics.get_metrics()
    for family in ("workflow_stage_runs_total", "workflow_stage_duration_seconds", "workflow_errors_total",
                   "sampler_transitions_total", "sampler_divergences_total", "sampler_leapfrog_steps_total",
                   "sampler_step_size", "psis_khat_points_total", "workflow_info"):
        assert family in text


def test_stage_tracker_records_success(fresh_metrics):
    with StageTracker(fresh_metrics, "fit"):
        pass
    assert sample_value(fresh_metrics, "workflow_stage_runs_total", {"stage": "fit", "status": "success"}) == 1
    assert sample_value(fresh_metrics, "workflow_stage_duration_seconds_count", {"stage": "fit"}) == 1


def test_stage_tracker_records_error_and_reraises(fresh_metrics):
    with pytest.raises(SamplingError):
        with StageTracker(fresh_metrics, "sampling"):
            raise SamplingError("every warmup transition diverged")
    assert sample_value(fresh_metrics, "workflow_errors_total",
                        {"stage": "sampling", "error_type": "SamplingError"}) == 1
    assert sample_value(fresh_metrics, "workflow_stage_runs_total", {"stage": "sampling", "status": "error"}) == 1


def test_sampler_counters(fresh_metrics):
    fresh_metrics.record_transitions("pooled", "warmup", 100, 3)
    fresh_metrics.record_transitions("pooled", "sampling", 50, 0)
    fresh_metrics.record_leapfrog("pooled", 640)
    fresh_metrics.set_step_size("pooled", 0, 0.25)
    assert sample_value(fresh_metrics, "sampler_transitions_total", {"model": "pooled", "phase": "warmup"}) == 100
    assert sample_value(fresh_metrics, "sampler_divergences_total", {"model": "pooled", "phase": "warmup"}) == 3
    assert sample_value(fresh_metrics, "sampler_divergences_total", {"model": "pooled", "phase": "sampling"}) == 0
    assert sample_value(fresh_metrics, "sampler_leapfrog_steps_total", {"model": "pooled"}) == 640
    assert sample_value(fresh_metrics, "sampler_step_size", {"model": "pooled", "chain": "0"}) == 0.25


def test_khat_band_counts(fresh_metrics):
    fresh_metrics.record_khat("good", 7)
    fresh_metrics.record_khat("bad", 0)
    assert sample_value(fresh_metrics, "psis_khat_points_total", {"band": "good"}) == 7
    assert sample_value(fresh_metrics, "psis_khat_points_total", {"band": "bad"}) == 0


def test_write_exposition_file(fresh_metrics, tmp_path):
    fresh_metrics.record_stage("loo", "success", 0.2)
    path = tmp_path / "metrics.prom"
    fresh_metrics.write(str(path))
    assert 'workflow_stage_runs_total{stage="loo",status="success"} 1.0' in path.read_text()
