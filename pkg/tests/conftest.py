"""Shared fixtures: a tiny configuration that keeps simulation tests fast."""

from __future__ import annotations

import pytest

from ttl_lab.config import ExperimentConfig, build_config

TINY_OVERRIDES = {
    "workload.record_count": "300",
    "workload.query_count": "60",
    "workload.duration": "30",
    "workload.target_throughput": "120",
    "cache.capacity": "48",
    "bench.runs": "1",
    "naf.explore_steps": "50",
    "naf.noise_decay_steps": "500",
    "naf.ttl_max": "60",
}


@pytest.fixture
def tiny_cfg() -> ExperimentConfig:
    """A sub-second simulation config for wiring-level tests."""
    return build_config(overrides=dict(TINY_OVERRIDES))
