"""随机化性质测试，种子固定"""

import numpy as np
import pytest

from avband.core.estimators import (
    affine_fit,
    available_bandwidth_two_point,
    capacity_from_dmin,
    capacity_two_point,
    dmin_two_point,
    estimate_path,
)
from avband.core.pathsim import Hop, PathSpec, ground_truth, run_experiment
from avband.core.ripe_ingest import RcdpRecord, SndpRecord, match_pairs
from avband.core.samples import Direction, ProbeSample, SampleSet, aggregate

CASES = 1000


def _random_pair(rng):
    """由已知直线生成一对 (W, D)，截距与斜率均为正"""
    w1 = int(rng.integers(1, 1001))
    w2 = w1 + int(rng.integers(500, 1501))
    intercept = float(rng.uniform(5e-3, 0.05))
    slope = float(rng.uniform(1e-7, 1e-5))
    return w1, intercept + slope * w1, w2, intercept + slope * w2


def test_translation_invariance():
    rng = np.random.default_rng(1)
    for _ in range(CASES):
        w1, d1, w2, d2 = _random_pair(rng)
        c = float(rng.uniform(0, 1))
        assert available_bandwidth_two_point(w1, d1 + c, w2, d2 + c) == pytest.approx(
            available_bandwidth_two_point(w1, d1, w2, d2), rel=1e-8
        )
        assert capacity_two_point(w1, d1 + c, w2, d2 + c) == pytest.approx(
            capacity_two_point(w1, d1, w2, d2), rel=1e-8
        )
        assert dmin_two_point(w1, d1 + c, w2, d2 + c) == pytest.approx(
            dmin_two_point(w1, d1, w2, d2) + c, abs=1e-9
        )

        slope = float(rng.uniform(1e-7, 1e-5))
        intercept = float(rng.uniform(5e-3, 0.05))
        sizes = rng.choice(np.arange(1, 1501), size=int(rng.integers(3, 9)), replace=False)
        noise = rng.normal(0.0, 1e-6, size=sizes.size)
        points = [(int(w), intercept + slope * w + e) for w, e in zip(sizes, noise)]
        shifted = [(w, d + c) for w, d in points]
        assert affine_fit(shifted).slope == pytest.approx(affine_fit(points).slope, rel=1e-6)


def test_scale_covariance():
    """尺寸差放大 k 倍、时延不变时，两点法结果放大 k 倍"""
    rng = np.random.default_rng(7)
    for _ in range(CASES):
        w1, d1, w2, d2 = _random_pair(rng)
        k = int(rng.integers(2, 11))
        scaled_w2 = w1 + k * (w2 - w1)
        assert available_bandwidth_two_point(w1, d1, scaled_w2, d2) == pytest.approx(
            k * available_bandwidth_two_point(w1, d1, w2, d2), rel=1e-12
        )
        assert capacity_two_point(w1, d1, scaled_w2, d2) == pytest.approx(
            k * capacity_two_point(w1, d1, w2, d2), rel=1e-12
        )


def test_two_point_equals_two_point_fit():
    rng = np.random.default_rng(2)
    for _ in range(CASES):
        w1, d1, w2, d2 = _random_pair(rng)
        fit = affine_fit([(w1, d1), (w2, d2)])
        assert fit.capacity == pytest.approx(
            available_bandwidth_two_point(w1, d1, w2, d2), rel=1e-12
        )
        assert fit.intercept == pytest.approx(dmin_two_point(w1, d1, w2, d2), rel=1e-12)


def test_capacity_from_dmin_consistent_with_two_point():
    rng = np.random.default_rng(3)
    for _ in range(CASES):
        w1, d1, w2, d2 = _random_pair(rng)
        d_min = dmin_two_point(w1, d1, w2, d2)
        assert capacity_from_dmin(w2, d2, d_min) == pytest.approx(
            capacity_two_point(w1, d1, w2, d2), rel=1e-9
        )


def test_aggregate_bounds():
    rng = np.random.default_rng(4)

    for _ in range(CASES):
        count = int(rng.integers(1, 20))
        delays = rng.exponential(0.01, size=count) + 1e-4
        sample_set = SampleSet(
            samples=[ProbeSample(size=64, delay=float(d), seq=i) for i, d in enumerate(delays)]
        )
        stats = aggregate(sample_set)[0]
        assert stats.d_min <= stats.d_mean <= stats.d_max
        assert stats.count == count


def _brute_force_join(send, recv):
    pairs = []
    for s in send:
        for r in recv:
            if s.seq == r.seq:
                pairs.append((s.seq, s.size, r.delay))
    return sorted(pairs)


def _sndp(seq, size, t):
    return SndpRecord(version=9, unix_time=t, target_host="tt01", port=6000, size=size, seq=seq)


def _rcdp(seq, delay, t):
    return RcdpRecord(
        field1=12,
        field2=2,
        src_addr="10.0.0.1",
        src_port=6000,
        dst_addr="10.0.0.2",
        dst_port=6000,
        arrival_time=t,
        delay=delay,
        flags1="0X2107",
        flags2="0X2107",
        seq=seq,
        precision1=2e-6,
        precision2=8e-6,
    )


def test_match_pairs_against_brute_force():
    rng = np.random.default_rng(5)
    for _ in range(CASES):
        n_send = int(rng.integers(0, 201))
        seqs = rng.choice(10_000, size=n_send, replace=False)
        send = [_sndp(int(q), int(rng.choice([100, 1024])), float(i)) for i, q in enumerate(seqs)]
        received = [q for q in seqs if rng.random() < 0.7]
        strays = rng.choice(np.arange(10_000, 10_050), size=int(rng.integers(0, 5)), replace=False)
        recv = [
            _rcdp(int(q), float(rng.uniform(0.01, 0.1)), float(i))
            for i, q in enumerate(list(received) + list(strays))
        ]
        rng.shuffle(send)
        rng.shuffle(recv)

        report = match_pairs(send, recv)
        assert [(p.seq, p.size, p.delay) for p in report.pairs] == _brute_force_join(send, recv)
        assert report.unmatched_send == n_send - len(received)
        assert report.unmatched_recv == len(strays)
        assert [p.seq for p in report.pairs] == sorted(p.seq for p in report.pairs)


def test_no_cross_traffic_paths_match_fluid_oracle():
    """无交叉流量的随机路径: 估计值与解析真值一致"""
    rng = np.random.default_rng(6)
    for case in range(100):
        hops = [
            Hop(capacity=float(rng.uniform(1e6, 1e9)), propagation=float(rng.uniform(0, 0.01)))
            for _ in range(int(rng.integers(1, 6)))
        ]
        path = PathSpec(hops=hops, name=f"random-{case}")
        sample_set, truth = run_experiment(path, [100, 1024], 10, 0.1, seed=case)
        estimate = estimate_path(aggregate(sample_set, direction=Direction.ONE_WAY_FORWARD))

        assert truth == ground_truth(path)
        assert estimate.capacity == pytest.approx(truth.composite_rate, rel=1e-6)
        assert estimate.b_av == pytest.approx(truth.composite_rate, rel=1e-6)
        assert estimate.d_min == pytest.approx(truth.d_min_zero_size, rel=1e-6)
