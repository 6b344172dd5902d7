"""
Shared pytest configuration.
"""
import pytest

from metrics import WorkflowMetrics


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end statistical acceptance runs (HMC fits over many seeds)")


@pytest.fixture
def fresh_metrics():
    """Metrics on a private registry so counts start at zero."""
    return WorkflowMetrics()
