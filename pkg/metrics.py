"""
Prometheus metrics collection for workflow stages, the HMC sampler and PSIS.
"""
import time
from typing import Optional

from prometheus_client import Counter, Histogram, Gauge, Info, CollectorRegistry, generate_latest


class WorkflowMetrics:
    """Prometheus metrics collector for the Bayesian workflow."""

    def __init__(self, registry: CollectorRegistry = None):
        self.registry = registry or CollectorRegistry()

        # Stage metrics
        self.stage_runs = Counter(
            'workflow_stage_runs_total',
            'Total number of workflow stage runs',
            ['stage', 'status'],
            registry=self.registry
        )

        self.stage_duration = Histogram(
            'workflow_stage_duration_seconds',
            'Duration of workflow stages in seconds',
            ['stage'],
            buckets=(0.01, 0.1, 0.5, 1.0, 5.0, 15.0, 60.0, 300.0, 900.0),
            registry=self.registry
        )

        # Error metrics
        self.error_count = Counter(
            'workflow_errors_total',
            'Total number of workflow stage errors',
            ['stage', 'error_type'],
            registry=self.registry
        )

        # Sampler metrics
        self.transitions = Counter(
            'sampler_transitions_total',
            'Total number of HMC transitions',
            ['model', 'phase'],
            registry=self.registry
        )

        self.divergences = Counter(
            'sampler_divergences_total',
            'Total number of divergent HMC transitions',
            ['model', 'phase'],
            registry=self.registry
        )

        self.leapfrog_steps = Counter(
            'sampler_leapfrog_steps_total',
            'Total number of leapfrog steps taken',
            ['model'],
            registry=self.registry
        )

        self.step_size = Gauge(
            'sampler_step_size',
            'Adapted leapfrog step size per chain',
            ['model', 'chain'],
            registry=self.registry
        )

        # PSIS metrics
        self.khat_points = Counter(
            'psis_khat_points_total',
            'Pointwise k-hat diagnostics by reliability band',
            ['band'],
            registry=self.registry
        )

        # Workflow info
        self.workflow_info = Info(
            'workflow',
            'Information about the workflow engine',
            registry=self.registry
        )

        self.workflow_info.info({
            'engine': 'bayes-workflow',
            'version': '1.0.0'
        })

    def record_stage(self, stage: str, status: str, duration: float):
        """Record a completed stage."""
        self.stage_runs.labels(stage=stage, status=status).inc()
        self.stage_duration.labels(stage=stage).observe(duration)

    def record_error(self, stage: str, error_type: str):
        """Record an error."""
        self.error_count.labels(stage=stage, error_type=error_type).inc()

    def record_transitions(self, model: str, phase: str, count: int, divergent: int):
        """Record a batch of HMC transitions."""
        self.transitions.labels(model=model, phase=phase).inc(count)
        if divergent:
            self.divergences.labels(model=model, phase=phase).inc(divergent)

    def record_leapfrog(self, model: str, steps: int):
        """Record leapfrog steps."""
        self.leapfrog_steps.labels(model=model).inc(steps)

    def set_step_size(self, model: str, chain: int, step_size: float):
        """Publish the adapted step size of a chain."""
        self.step_size.labels(model=model, chain=str(chain)).set(step_size)

    def record_khat(self, band: str, count: int = 1):
        """Record k-hat points falling in a band."""
        if count:
            self.khat_points.labels(band=band).inc(count)

    def get_metrics(self) -> str:
        """Get metrics in Prometheus format."""
        return generate_latest(self.registry).decode('utf-8')

    def write(self, path: str):
        """Write the exposition text to a file."""
        with open(path, 'w', encoding='utf-8') as handle:
            handle.write(self.get_metrics())


class StageTracker:
    """Context manager timing one workflow stage and recording its outcome."""

    def __init__(self, metrics: WorkflowMetrics, stage: str):
        self.metrics = metrics
        self.stage = stage
        self.start_time: Optional[float] = None

    def __enter__(self):
        self.start_time = time.time()
        return self

    def __exit__(self, exc_type, exc, tb):
        duration = time.time() - self.start_time
        if exc_type is None:
            self.metrics.record_stage(self.stage, 'success', duration)
        else:
            self.metrics.record_error(self.stage, exc_type.__name__)
            self.metrics.record_stage(self.stage, 'error', duration)
        # never swallow the exception
        return False


# Global metrics instance
metrics = WorkflowMetrics()
