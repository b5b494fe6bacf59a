"""Page-Hinkley estimator pinned by recurrence replay."""

import math

import numpy as np
import pytest

from le3d.errors import ConfigError, InputError
from le3d.estimators import PageHinkley
from oracles import PageHinkleyOracle


def test_constant_stream_never_flags():
    est = PageHinkley()
    assert not any(est.update(5.0) for _ in range(5000))


def test_warmup_gate():
    est = PageHinkley(min_instances=30)
    # huge immediate excursion is ignored until 30 samples are in
    values = [0.0] * 5 + [1000.0] * 24
    assert not any(est.update(v) for v in values)


def test_step_flag_index_pinned_by_replay():
    values = [0.0] * 100 + [10.0] * 100
    impl, oracle = PageHinkley(), PageHinkleyOracle()
    impl_flags = [i for i, v in enumerate(values) if impl.update(v)]
    oracle_flags = [i for i, v in enumerate(values) if oracle.update(v)]
    assert impl_flags == oracle_flags
    assert impl_flags, "step was not detected"
    assert impl_flags[0] - 100 + 1 <= 15


def test_noisy_traces_match_replay():
    rng = np.random.default_rng(11)
    values = rng.normal(0.0, 0.13, size=4000)
    values[2000:] += 1.0
    impl, oracle = PageHinkley(), PageHinkleyOracle()
    for i, v in enumerate(values):
        assert impl.update(v) == oracle.update(v), f"divergence at sample {i}"


def test_extrema_bracket_statistic():
    rng = np.random.default_rng(3)
    est = PageHinkley()
    for v in rng.normal(0.0, 0.1, size=2000):
        est.update(v)
        snap = est.snapshot()
        assert snap.version == 1
        # payload packs (seen, mean, m_t, min, max)
        import struct

        seen, _, m_t, lo, hi = struct.unpack("<Qdddd", snap.payload)
        if seen >= 1:
            assert lo <= m_t <= hi


def test_state_size_constant():
    est = PageHinkley()
    est.update(1.0)
    size_early = len(est.snapshot().payload)
    for v in range(100_000):
        est.update(math.sin(v * 0.01) * 0.01)
    assert len(est.snapshot().payload) == size_early


def test_reset_on_flag():
    est = PageHinkley(min_instances=5, threshold=10.0)
    values = [0.0] * 20 + [100.0] * 20
    for v in values:
        if est.update(v):
            break
    assert est.samples_seen == 0
    assert est.cumulative == 0.0


def test_non_finite_rejected_state_unchanged():
    est = PageHinkley()
    for v in [1.0, 2.0]:
        est.update(v)
    before = est.snapshot()
    with pytest.raises(InputError):
        est.update(math.nan)
    assert est.snapshot() == before


def test_config_validation():
    with pytest.raises(ConfigError):
        PageHinkley(delta=-0.1)
    with pytest.raises(ConfigError):
        PageHinkley(threshold=0.0)
    with pytest.raises(ConfigError):
        PageHinkley(alpha=0.0)
    with pytest.raises(ConfigError):
        PageHinkley(alpha=1.5)
    with pytest.raises(ConfigError):
        PageHinkley(min_instances=0)
