import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from clusterlens.ingest import UsageSample
from clusterlens.model import PriorityTier, TaskKey
from clusterlens.synth import SynthConfig, generate_synthetic
from clusterlens.utilization import (
    ChangeDistribution,
    InsufficientDataError,
    ResolutionError,
    change_distribution,
    resample,
    util_series,
)

US = 1_000_000


def sample(start_s, end_s, cpu, job=1, machine=0, mem=None):
    return UsageSample(
        window_start=start_s * US,
        window_end=end_s * US,
        key=TaskKey(job, 0),
        machine_id=machine,
        cpu_usage=cpu,
        mem_usage=cpu if mem is None else mem,
    )


def test_full_period_value():
    series = util_series([sample(0, 300, 0.5)], period_s=300)
    assert list(series.values) == [0.5]


def test_cluster_additivity():
    series = util_series(
        [sample(0, 300, 0.5, job=1, machine=0), sample(0, 300, 0.25, job=2, machine=1)],
        period_s=300,
    )
    assert list(series.values) == [0.75]


def test_tier_series_sum_to_cluster():
    cfg = SynthConfig(task_count=200, duration_s=3600, seed=13)
    bundle, truth = generate_synthetic(cfg)
    priority_of = {k: t.priority for k, t in truth.tasks.items()}
    cluster = util_series(bundle.usage, period_s=300)
    parts = [
        util_series(bundle.usage, period_s=300, scope="tier", tier=tier,
                    priority_of=priority_of)
        for tier in PriorityTier
    ]
    total = {}
    for p in parts:
        for t, v in zip(p.times, p.values):
            total[t] = total.get(t, 0.0) + v
    assert set(total) == set(cluster.times.tolist())
    for t, v in zip(cluster.times, cluster.values):
        assert total[int(t)] == pytest.approx(v, rel=1e-12)


def test_production_share_of_usage():
    cfg = SynthConfig(task_count=2000, duration_s=3600, seed=17)
    bundle, truth = generate_synthetic(cfg)
    priority_of = {k: t.priority for k, t in truth.tasks.items()}
    cluster = util_series(bundle.usage, period_s=300)
    prod = util_series(bundle.usage, period_s=300, scope="tier",
                       tier=PriorityTier.PRODUCTION, priority_of=priority_of)
    share = prod.values.sum() / cluster.values.sum()
    assert share >= 0.78


def test_period_below_sample_resolution_rejected():
    with pytest.raises(ResolutionError):
        util_series([sample(0, 300, 0.5)], period_s=30)


def test_constant_utilization_zero_changes():
    samples = [sample(i * 300, (i + 1) * 300, 0.5) for i in range(5)]
    dist = change_distribution(samples, period_s=300)
    assert dist.quantile(0.9) == 0.0


def test_alternating_utilization_changes():
    samples = [
        sample(i * 300, (i + 1) * 300, 0.4 if i % 2 == 0 else 0.5) for i in range(6)
    ]
    dist = change_distribution(samples, period_s=300)
    assert sorted(set(dist.samples.tolist())) == pytest.approx([0.2, 0.25])
    xs, fs = dist.cdf_points()
    assert list(xs) == pytest.approx([0.2, 0.25])
    assert fs[-1] == 1.0


def test_insufficient_periods_rejected():
    with pytest.raises(InsufficientDataError):
        change_distribution([sample(0, 300, 0.5)], period_s=300)


def test_exclude_churn_drops_start_stop_pairs():
    # task 2 appears only in the second period: that pair is churn
    samples = [
        sample(0, 300, 0.4, job=1),
        sample(300, 600, 0.4, job=1),
        sample(300, 600, 0.3, job=2),
        sample(600, 900, 0.4, job=1),
        sample(600, 900, 0.3, job=2),
    ]
    with_churn = change_distribution(samples, period_s=300)
    solid = change_distribution(samples, period_s=300, exclude_churn=True)
    assert len(solid.samples) < len(with_churn.samples)
    assert np.all(solid.samples == 0.0)


def test_quantile_monotone_and_max():
    dist = ChangeDistribution("cpu", 300, np.sort(np.random.default_rng(0).uniform(0, 1, 100)))
    qs = [dist.quantile(q) for q in (0.1, 0.5, 0.9, 0.99, 1.0)]
    assert qs == sorted(qs)
    assert qs[-1] == dist.samples.max()


@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=50),
       st.floats(0.01, 1.0))
def test_quantile_is_order_statistic(values, q):
    dist = ChangeDistribution("cpu", 300, np.sort(np.array(values)))
    v = dist.quantile(q)
    assert v in dist.samples
    assert (dist.samples <= v).mean() >= q - 1e-12


def test_resample_mean_of_base_periods():
    samples = [sample(i, i + 1, float(i % 60), job=1) for i in range(120)]
    series = resample(samples, 60)
    assert len(series.values) == 2
    assert series.values[0] == pytest.approx(np.mean([i % 60 for i in range(60)]))


def test_resample_identity_at_native_period():
    samples = [sample(i * 300, (i + 1) * 300, 0.5 + 0.1 * i) for i in range(4)]
    series = resample(samples, 300)
    assert list(series.values) == pytest.approx([0.5, 0.6, 0.7, 0.8])


def test_resample_finer_than_native_rejected():
    with pytest.raises(ResolutionError):
        resample([sample(0, 300, 0.5)], 30)


def test_resample_warns_below_8s():
    samples = [sample(i, i + 1, 0.5) for i in range(20)]
    with pytest.warns(UserWarning):
        resample(samples, 4)


def test_resample_conserves_integral():
    rng = np.random.default_rng(5)
    samples = [sample(i * 60, (i + 1) * 60, float(rng.uniform(0, 1)), job=1)
               for i in range(30)]
    fine = resample(samples, 60)
    coarse = resample(samples, 300)
    assert fine.values.sum() * 60 == pytest.approx(coarse.values.sum() * 300, rel=1e-9)
