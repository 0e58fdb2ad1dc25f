"""带宽、容量、D_min 估计器"""

import warnings

import numpy as np
import pytest

from avband.core.estimators import (
    AffineFit,
    DegenerateInput,
    EmptyPath,
    InsufficientData,
    InterceptExceedsDelay,
    InvalidSize,
    NegativeDminWarning,
    NegativeResidual,
    NonIncreasingDelay,
    NonPositiveDelay,
    NonPositiveDenominator,
    RankDeficient,
    SizeOrder,
    affine_fit,
    available_bandwidth_two_point,
    bandwidth_from_intercept,
    capacity_from_dmin,
    capacity_two_point,
    direction_label,
    dmin_two_point,
    estimate_from_differences,
    estimate_path,
    fit_intercept_model,
    fixed_delay_model,
    single_hop_throughput,
    variable_component,
)
from avband.core.pathsim import Hop, PathSpec
from avband.core.samples import Direction, SizeDelayStats, aggregate, read_samples_csv

TWO_HOPS = PathSpec(
    hops=[
        Hop(capacity="10Mbps", propagation="1ms"),
        Hop(capacity="100Mbps", propagation="2ms"),
    ]
)


def _stats(size, d_min, d_mean, direction=Direction.ONE_WAY_FORWARD):
    return SizeDelayStats(
        size=size, count=5, d_min=d_min, d_mean=d_mean, d_max=d_mean * 2, direction=direction
    )


class TestSingleHop:
    def test_throughput(self):
        assert single_hop_throughput(1000, 0.001) == pytest.approx(8e6)
        assert single_hop_throughput(100, 0.043591) == pytest.approx(18352, abs=1)
        assert single_hop_throughput(1, 8) == pytest.approx(1.0)

    def test_rejects_bad_input(self):
        with pytest.raises(NonPositiveDelay):
            single_hop_throughput(100, 0.0)
        with pytest.raises(InvalidSize):
            single_hop_throughput(0, 0.01)


class TestFixedDelay:
    def test_two_hops(self):
        assert fixed_delay_model(TWO_HOPS, 1024) == pytest.approx(0.00390112, rel=1e-12)

    def test_zero_size_is_propagation(self):
        assert fixed_delay_model(TWO_HOPS, 0) == pytest.approx(0.003, abs=1e-15)

    def test_hop_list_accepted(self):
        assert fixed_delay_model(TWO_HOPS.hops, 1024) == fixed_delay_model(TWO_HOPS, 1024)

    def test_empty_path(self):
        with pytest.raises(EmptyPath):
            fixed_delay_model([], 100)

    def test_variable_component(self):
        assert variable_component(0.045, 0.044) == pytest.approx(0.001)
        assert variable_component(0.044, 0.044) == 0.0
        with pytest.raises(NegativeResidual):
            variable_component(0.043, 0.044)


class TestTwoPoint:
    def test_adsl_example(self):
        b_av = available_bandwidth_two_point(32, 0.018, 1032, 0.042)
        assert b_av == pytest.approx(333333.33, abs=10)

    def test_ripe_reverse_link(self, ripe_reverse_csv):
        stats = aggregate(read_samples_csv(ripe_reverse_csv))
        small, large = stats
        b_av = available_bandwidth_two_point(small.size, small.d_mean, large.size, large.d_mean)
        capacity = capacity_two_point(small.size, small.d_min, large.size, large.d_min)
        assert b_av == pytest.approx(14.466e6, abs=5e3)
        assert capacity == pytest.approx(15.024e6, abs=5e3)

    def test_equal_delays_rejected(self):
        with pytest.raises(NonIncreasingDelay):
            capacity_two_point(100, 0.01, 1000, 0.01)
        with pytest.raises(NonIncreasingDelay):
            available_bandwidth_two_point(100, 0.02, 1000, 0.01)

    def test_size_order(self):
        with pytest.raises(SizeOrder):
            available_bandwidth_two_point(1000, 0.01, 100, 0.02)

    def test_non_positive_delay(self):
        with pytest.raises(NonPositiveDelay):
            available_bandwidth_two_point(100, 0.0, 1000, 0.01)

    def test_capacity_from_dmin(self):
        composite = 1 / (1 / 10e6 + 1 / 100e6)
        assert capacity_from_dmin(1024, 0.00390112, 0.003) == pytest.approx(composite, rel=1e-9)
        with pytest.raises(NonPositiveDenominator):
            capacity_from_dmin(1024, 0.003, 0.003)

    def test_bandwidth_from_intercept(self):
        assert bandwidth_from_intercept(1024, 0.044084, 0.043506) == pytest.approx(
            8192 / 0.000578, rel=1e-9
        )
        assert bandwidth_from_intercept(1024, 0.044084, 0.0) == single_hop_throughput(
            1024, 0.044084
        )
        with pytest.raises(InterceptExceedsDelay):
            bandwidth_from_intercept(100, 0.5, 0.5)


class TestDmin:
    def test_simple(self):
        assert dmin_two_point(100, 0.002, 200, 0.003) == pytest.approx(0.001)

    def test_equal_delays(self):
        assert dmin_two_point(100, 0.01, 1000, 0.01) == pytest.approx(0.01)

    def test_negative_warns(self):
        with pytest.warns(NegativeDminWarning):
            value = dmin_two_point(100, 0.0001, 1024, 0.01)
        assert value < 0

    def test_matches_fit_intercept(self):
        d_min = dmin_two_point(100, 0.0435, 1024, 0.043992)
        fit = affine_fit([(100, 0.0435), (1024, 0.043992)])
        assert d_min == pytest.approx(fit.intercept, rel=1e-12)

    def test_size_order(self):
        with pytest.raises(SizeOrder):
            dmin_two_point(100, 0.01, 100, 0.02)


class TestAffineFit:
    def test_exact_line(self):
        fit = affine_fit([(64, 0.0011), (512, 0.0018), (1064, 0.0026625)])
        assert fit.slope == pytest.approx(1.5625e-6, rel=1e-9)
        assert fit.intercept == pytest.approx(0.001, rel=1e-9)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-9)
        assert fit.capacity == pytest.approx(5.12e6, rel=1e-9)
        assert fit.n_points == 3

    def test_min_mode_reduces_per_size(self):
        points = [(100, 0.010), (100, 0.013), (1000, 0.020), (1000, 0.029)]
        fit = affine_fit(points, use_min=True)
        assert fit.mode == "min"
        assert fit.n_points == 2
        assert fit.slope == pytest.approx(0.010 / 900)

    def test_single_size_degenerate(self):
        with pytest.raises(DegenerateInput):
            affine_fit([(100, 0.01), (100, 0.02)])

    def test_capacity_decreases_with_slope(self):
        capacities = [
            AffineFit(slope=s, intercept=0.0, r_squared=1.0, n_points=2).capacity
            for s in (1e-7, 1e-6, 1e-5)
        ]
        assert capacities[0] > capacities[1] > capacities[2]
        assert AffineFit(slope=0.0, intercept=0.0, r_squared=1.0, n_points=2).capacity is None


class TestInterceptModel:
    def test_noiseless_recovery(self):
        rng = np.random.default_rng(5)
        alpha, beta = 1e-4, 5e-6
        rows = []
        for _ in range(30):
            n = int(rng.integers(1, 21))
            length = float(rng.uniform(10, 5000))
            rows.append((n, length, alpha * n + beta * length))
        model = fit_intercept_model(rows)
        assert model.alpha == pytest.approx(alpha, abs=1e-12)
        assert model.beta == pytest.approx(beta, abs=1e-12)
        assert model.residual_norm == pytest.approx(0.0, abs=1e-12)
        assert not model.rank_deficient

    def test_noisy_within_three_stderr(self):
        rng = np.random.default_rng(2024)
        alpha, beta = 1e-4, 5e-6
        rows = []
        for _ in range(50):
            n = int(rng.integers(1, 21))
            length = float(rng.uniform(10, 5000))
            rows.append((n, length, alpha * n + beta * length + rng.normal(0, 1e-5)))
        model = fit_intercept_model(rows)
        assert abs(model.alpha - alpha) <= 3 * model.alpha_stderr
        assert abs(model.beta - beta) <= 3 * model.beta_stderr

    def test_zero_length_column(self):
        rows = [(n, 0.0, 2e-4 * n) for n in (1, 2, 3, 5)]
        model = fit_intercept_model(rows)
        assert model.rank_deficient
        assert model.beta == 0.0
        assert model.alpha == pytest.approx(2e-4)
        assert model.warnings

    def test_collinear_columns(self):
        rows = [(n, 10.0 * n, 1e-4 * n + 5e-6 * 10.0 * n) for n in (1, 2, 3, 4)]
        with pytest.raises(RankDeficient) as exc:
            fit_intercept_model(rows)
        assert exc.value.combined_alpha == pytest.approx(1e-4 + 10 * 5e-6)

    def test_too_few_observations(self):
        with pytest.raises(DegenerateInput):
            fit_intercept_model([(1, 10.0, 0.001)])


class TestEstimatePath:
    def test_ripe_forward(self, ripe_forward_csv):
        stats = aggregate(read_samples_csv(ripe_forward_csv))
        estimate = estimate_path(stats)
        assert estimate.method == "two_point"
        assert estimate.b_av == pytest.approx(12.946e6, abs=5e3)
        assert estimate.capacity >= estimate.b_av
        assert estimate.d_min > 0

    def test_no_cross_traffic_recovers_truth(self):
        sizes = [100, 1024]
        stats = [
            _stats(w, fixed_delay_model(TWO_HOPS, w), fixed_delay_model(TWO_HOPS, w))
            for w in sizes
        ]
        estimate = estimate_path(stats)
        composite = 1 / (1 / 10e6 + 1 / 100e6)
        assert estimate.b_av == pytest.approx(composite, rel=1e-9)
        assert estimate.capacity == pytest.approx(composite, rel=1e-9)
        assert estimate.d_min == pytest.approx(0.003, rel=1e-9)

    def test_fit_with_three_sizes(self):
        stats = [_stats(w, 0.001 + 1.5625e-6 * w, 0.002 + 2e-6 * w) for w in (64, 512, 1064)]
        estimate = estimate_path(stats)
        assert estimate.method == "fit"
        assert estimate.b_av == pytest.approx(8 / 2e-6, rel=1e-6)
        assert estimate.capacity == pytest.approx(8 / 1.5625e-6, rel=1e-6)
        assert estimate.d_min == pytest.approx(0.001, rel=1e-6)
        assert estimate.mean_fit is not None and estimate.min_fit is not None

    def test_soft_check_warns(self):
        stats = [_stats(100, 0.0430, 0.0436), _stats(1024, 0.0440, 0.0440)]
        estimate = estimate_path(stats)
        assert estimate.b_av is not None and estimate.capacity is not None
        assert estimate.b_av > estimate.capacity
        assert any("容差" in w for w in estimate.warnings)

    def test_negative_dmin_absent(self):
        stats = [_stats(100, 0.0001, 0.0002), _stats(1024, 0.01, 0.02)]
        with warnings.catch_warnings():
            warnings.simplefilter("error", NegativeDminWarning)
            estimate = estimate_path(stats)
        assert estimate.d_min is None
        assert estimate.intercept_a is None
        assert estimate.capacity is not None
        assert estimate.warnings

    def test_non_increasing_mean(self):
        stats = [_stats(100, 0.01, 0.03), _stats(1024, 0.02, 0.025)]
        estimate = estimate_path(stats)
        assert estimate.b_av is None
        assert estimate.capacity is not None
        assert estimate.produced

    def test_single_size(self):
        with pytest.raises(InsufficientData):
            estimate_path([_stats(100, 0.01, 0.02)])

    def test_mixed_directions(self):
        with pytest.raises(DegenerateInput):
            estimate_path(
                [
                    _stats(100, 0.01, 0.02),
                    _stats(1024, 0.02, 0.03, direction=Direction.ONE_WAY_REVERSE),
                ]
            )

    def test_label(self):
        stats = [_stats(64, 0.01, 0.02), _stats(1064, 0.02, 0.03)]
        label = direction_label(Direction.ROUND_TRIP)
        assert estimate_path(stats, label=label).label == label
        assert "RTT" in label


def test_estimate_from_differences():
    estimate = estimate_from_differences(924, 0.000571, 0.000504)
    assert estimate.method == "adjacent"
    assert estimate.b_av == pytest.approx(8 * 924 / 0.000571)
    assert estimate.capacity == pytest.approx(8 * 924 / 0.000504)

    empty = estimate_from_differences(924, -0.0001)
    assert empty.b_av is None and empty.capacity is None
    assert empty.warnings
