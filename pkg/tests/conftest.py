import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the oracles module

from clusterlens.lifecycle import build_lifecycles
from clusterlens.synth import Burst, SynthConfig, generate_synthetic


@pytest.fixture(scope="session")
def small_bundle():
    cfg = SynthConfig(
        task_count=300,
        duration_s=3600,
        seed=7,
        bursts=(Burst(1200.0, 40, 2.0), Burst(2400.0, 40, 2.0)),
        pending_death_prob=0.05,
    )
    bundle, truth = generate_synthetic(cfg)
    return cfg, bundle, truth


@pytest.fixture(scope="session")
def small_lifecycles(small_bundle):
    _, bundle, _ = small_bundle
    return list(build_lifecycles(iter(bundle.task_events)))


def random_trace_config(seed: int) -> SynthConfig:
    """Varied desk-scale configs for oracle-equivalence sweeps."""
    import numpy as np

    rng = np.random.default_rng(seed)
    task_count = int(rng.integers(20, 400))
    duration_s = int(rng.integers(600, 7200))
    bursts = ()
    if rng.random() < 0.5:
        n = int(rng.integers(1, 3))
        bursts = tuple(
            Burst(float(rng.uniform(0.2, 0.9) * duration_s), int(rng.integers(5, 30)), 2.0)
            for _ in range(n)
        )
    return SynthConfig(
        task_count=task_count,
        duration_s=duration_s,
        seed=seed,
        bursts=bursts,
        pending_death_prob=float(rng.uniform(0, 0.15)),
        finish_prob=float(rng.uniform(0.5, 0.95)),
        update_prob=float(rng.uniform(0, 0.3)),
        exec_short_fraction=float(rng.uniform(0.5, 1.0)),
        emit_usage=False,
    )
