"""样本集、聚合、离群过滤与 CSV 交换格式"""

import numpy as np
import pytest
from pydantic import ValidationError

from avband.core.samples import (
    Direction,
    EmptySet,
    ProbeSample,
    SampleFormatError,
    SampleSet,
    adjacent_differences,
    aggregate,
    filter_outliers,
    read_samples_csv,
    samples_to_csv_text,
    write_samples_csv,
)


def _make_set(rows, direction=Direction.ROUND_TRIP):
    return SampleSet(
        samples=[
            ProbeSample(size=size, delay=delay, direction=direction, seq=i, sent_at=float(i))
            for i, (size, delay) in enumerate(rows)
        ]
    )


def test_aggregate_min_and_mean():
    sample_set = _make_set([(64, 0.010), (64, 0.012), (1064, 0.020), (1064, 0.024)])
    stats = aggregate(sample_set)

    assert [s.size for s in stats] == [64, 1064]
    assert stats[0].d_min == 0.010
    assert stats[0].d_mean == pytest.approx(0.011)
    assert stats[0].count == 2
    assert stats[1].d_min == 0.020
    assert stats[1].d_mean == pytest.approx(0.022)
    assert stats[1].d_max == 0.024


def test_aggregate_singleton():
    stats = aggregate(_make_set([(64, 0.010)]))
    assert len(stats) == 1
    assert stats[0].d_min == stats[0].d_mean == stats[0].d_max == 0.010
    assert stats[0].d_stddev == 0.0


def test_aggregate_empty_raises():
    with pytest.raises(EmptySet):
        aggregate(SampleSet())


def test_aggregate_partitions_directions_and_warns():
    samples = [
        ProbeSample(size=100, delay=0.04, direction=Direction.ONE_WAY_FORWARD, seq=1),
        ProbeSample(size=100, delay=0.05, direction=Direction.ONE_WAY_REVERSE, seq=1),
    ]
    warnings = []
    stats = aggregate(SampleSet(samples=samples), warnings=warnings)

    assert len(stats) == 2
    assert {s.direction for s in stats} == {
        Direction.ONE_WAY_FORWARD,
        Direction.ONE_WAY_REVERSE,
    }
    assert any("多个方向" in w for w in warnings)

    parts = SampleSet(samples=samples).by_direction()
    assert sorted(len(p) for p in parts.values()) == [1, 1]
    assert parts[Direction.ONE_WAY_REVERSE].samples[0].delay == 0.05


def test_aggregate_direction_filter():
    samples = [
        ProbeSample(size=100, delay=0.04, direction=Direction.ONE_WAY_FORWARD, seq=1),
        ProbeSample(size=100, delay=0.05, direction=Direction.ONE_WAY_REVERSE, seq=1),
    ]
    stats = aggregate(SampleSet(samples=samples), direction=Direction.ONE_WAY_REVERSE)
    assert len(stats) == 1
    assert stats[0].d_min == 0.05


def test_aggregate_warns_on_few_samples():
    warnings = []
    aggregate(_make_set([(64, 0.01), (64, 0.02)]), warnings=warnings)
    assert any("64B" in w for w in warnings)


def test_aggregate_matches_streaming_oracle():
    """与逐个累加的最小值/平均值一致"""
    rng = np.random.default_rng(7)
    delays = rng.uniform(0.001, 0.2, size=1000)
    stats = aggregate(_make_set([(512, float(d)) for d in delays]))[0]

    running_min, running_sum = float("inf"), 0.0
    for d in delays:
        running_min = min(running_min, float(d))
        running_sum += float(d)

    assert stats.d_min == running_min
    assert stats.d_mean == pytest.approx(running_sum / len(delays), rel=1e-12)
    assert stats.d_min <= stats.d_mean <= stats.d_max


def test_aggregate_is_order_independent():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        rows = [(int(rng.choice([64, 1064])), float(rng.uniform(0.001, 0.1))) for _ in range(40)]
        shuffled = [rows[i] for i in rng.permutation(len(rows))]
        a = aggregate(_make_set(rows))
        b = aggregate(_make_set(shuffled))
        assert [(s.size, s.count, s.d_min, s.d_max) for s in a] == [
            (s.size, s.count, s.d_min, s.d_max) for s in b
        ]
        for x, y in zip(a, b):
            assert x.d_mean == pytest.approx(y.d_mean, rel=1e-12)


def test_duplicate_seq_rejected():
    with pytest.raises(ValidationError):
        SampleSet(
            samples=[
                ProbeSample(size=64, delay=0.01, seq="1"),
                ProbeSample(size=64, delay=0.02, seq="1"),
            ]
        )


def test_same_seq_different_size_allowed():
    sample_set = SampleSet(
        samples=[ProbeSample(size=64, delay=0.01, seq=1), ProbeSample(size=1064, delay=0.02, seq=1)]
    )
    assert len(sample_set) == 2


def test_invalid_sample_rejected():
    with pytest.raises(ValidationError):
        ProbeSample(size=0, delay=0.01, seq=1)
    with pytest.raises(ValidationError):
        ProbeSample(size=64, delay=-0.01, seq=1)


def test_filter_outliers_keeps_identical_samples():
    sample_set = _make_set([(64, 0.01)] * 20)
    assert len(filter_outliers(sample_set, 3)) == 20


def test_filter_outliers_removes_isolated_spike():
    sample_set = _make_set([(64, 0.01)] * 99 + [(64, 5.0)])
    filtered = filter_outliers(sample_set, 3)

    assert len(filtered) == 99
    assert max(s.delay for s in filtered.samples) == 0.01
    assert filtered.meta["outlier_k"] == 3


def test_filter_outliers_zero_iqr_threshold():
    """IQR 为 0 时只剔除高出中位数 k 倍分辨率以上的样本"""
    near = _make_set([(64, 0.01)] * 99 + [(64, 0.010002)])
    assert len(filter_outliers(near, 3)) == 100

    far = _make_set([(64, 0.01)] * 99 + [(64, 0.0101)])
    assert len(filter_outliers(far, 3)) == 99


def test_filter_outliers_preserves_minimum():
    rng = np.random.default_rng(3)
    for _ in range(100):
        rows = [(64, float(d)) for d in rng.exponential(0.01, size=30)]
        rows += [(1064, float(d)) for d in rng.exponential(0.02, size=30)]
        sample_set = _make_set(rows)
        filtered = filter_outliers(sample_set, float(rng.uniform(0.5, 5)))
        before = {s.size: s.d_min for s in aggregate(sample_set)}
        after = {s.size: s.d_min for s in aggregate(filtered)}
        assert before == after


def test_filter_outliers_empty_and_invalid_k():
    assert len(filter_outliers(SampleSet(), 3)) == 0
    with pytest.raises(ValueError):
        filter_outliers(_make_set([(64, 0.01)]), 0)


def test_adjacent_differences_pairs_nearest_small():
    samples = [
        ProbeSample(size=100, delay=0.040, seq=1, sent_at=0.0),
        ProbeSample(size=100, delay=0.050, seq=2, sent_at=10.0),
        ProbeSample(size=1024, delay=0.041, seq=3, sent_at=0.5),
        ProbeSample(size=1024, delay=0.052, seq=4, sent_at=9.0),
    ]
    differences = adjacent_differences(SampleSet(samples=samples), 100, 1024)
    assert differences == pytest.approx([0.001, 0.002])


def test_csv_write_then_read(tmp_path):
    sample_set = _make_set([(64, 0.0123456789), (1064, 0.1)], Direction.ONE_WAY_FORWARD)
    target = tmp_path / "samples.csv"
    write_samples_csv(sample_set, target)

    text = target.read_text(encoding="utf-8")
    assert text.splitlines()[0] == "size_bytes,delay_s,direction,seq,sent_at"
    assert text == samples_to_csv_text(sample_set)

    loaded = read_samples_csv(target)
    assert loaded.samples == sample_set.samples


def test_read_ripe_fixture(ripe_forward_csv):
    sample_set = read_samples_csv(ripe_forward_csv)
    assert len(sample_set) == 10
    assert sample_set.directions == [Direction.ONE_WAY_FORWARD]
    assert sample_set.sizes == [100, 1024]


def test_read_empty_file(tmp_path):
    target = tmp_path / "empty.csv"
    target.write_text("", encoding="utf-8")
    with pytest.raises(SampleFormatError):
        read_samples_csv(target)


def test_read_bad_header(tmp_path):
    target = tmp_path / "bad.csv"
    target.write_text("size,delay\n64,0.01\n", encoding="utf-8")
    with pytest.raises(SampleFormatError) as exc:
        read_samples_csv(target)
    assert exc.value.row == 1


def test_read_bad_row_reports_line_number(tmp_path):
    target = tmp_path / "bad.csv"
    target.write_text(
        "# 注释\n"
        "size_bytes,delay_s,direction,seq,sent_at\n"
        "64,0.01,round_trip,1,0\n"
        "\n"
        "64,abc,round_trip,2,0\n",
        encoding="utf-8",
    )
    with pytest.raises(SampleFormatError) as exc:
        read_samples_csv(target)
    assert exc.value.row == 5
    assert "第5行" in str(exc.value)
