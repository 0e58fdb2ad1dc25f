"""
吞吐量 / 时延估计器

全部为纯函数。对外尺寸单位为字节，在每个公式内部统一乘 8 转换为比特，
结果统一为 bits/s 与秒。
"""

import logging
import math
import warnings
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from avband.core.config import config
from avband.core.pathsim import Hop, PathSpec
from avband.core.samples import AvbandError, Direction, SizeDelayStats

# 获取当前模块的日志记录器
logger = logging.getLogger(__name__)

BITS_PER_BYTE = 8


class EstimatorError(AvbandError, ValueError):
    """估计器输入非法"""

    exit_code = 2


class NonPositiveDelay(EstimatorError):
    """时延必须为正"""


class InvalidSize(EstimatorError):
    """报文大小必须 >= 1"""


class EmptyPath(EstimatorError):
    """路径没有任何一跳"""


class NegativeResidual(EstimatorError):
    """观测时延小于固定时延，D^fixed 错误或时钟异常"""


class InterceptExceedsDelay(EstimatorError):
    """截距 a 不小于平均时延"""


class NonIncreasingDelay(EstimatorError):
    """大包时延不大于小包时延，噪声占主导，需要更多样本"""


class SizeOrder(EstimatorError):
    """要求 w2 > w1"""


class NonPositiveDenominator(EstimatorError):
    """分母 D^fixed - D_min 不为正"""


class DegenerateInput(EstimatorError):
    """拟合输入退化(不同尺寸少于两个等)"""


class RankDeficient(EstimatorError):
    """截距模型的 n 与 l 共线"""

    def __init__(self, message: str, combined_alpha: Optional[float] = None):
        super().__init__(message)
        self.combined_alpha = combined_alpha


class InsufficientData(EstimatorError):
    """有样本的尺寸少于两个"""


class NegativeDminWarning(UserWarning):
    """两点法得到负的 D_min，物理上不可能，通常意味着输入噪声过大"""


class AffineFit(BaseModel):
    """时延-尺寸线性拟合结果 D(W) = intercept + slope·W"""

    slope: float = Field(..., description="斜率(秒/字节)")
    intercept: float = Field(..., description="截距(秒)")
    r_squared: float = Field(..., ge=0, le=1, description="决定系数")
    n_points: int = Field(..., description="参与拟合的点数")
    mode: str = Field("mean", description="mean: 平均时延; min: 各尺寸最小时延")
    residual_norm: float = Field(0.0, description="残差 2-范数(秒)")
    slope_stderr: Optional[float] = Field(None, description="斜率标准误")
    intercept_stderr: Optional[float] = Field(None, description="截距标准误")

    @property
    def capacity(self) -> Optional[float]:
        """8/slope (bits/s)，斜率非正时无意义"""
        if self.slope <= 0:
            return None
        return BITS_PER_BYTE / self.slope


class InterceptModel(BaseModel):
    """截距模型 a ≈ α·n + β·l"""

    alpha: float = Field(..., description="每跳时延(秒/跳)")
    beta: float = Field(..., description="单位长度时延(秒/单位长度)")
    residual_norm: float = Field(..., description="残差 2-范数(秒)")
    n_observations: int
    alpha_stderr: Optional[float] = None
    beta_stderr: Optional[float] = None
    rank_deficient: bool = False
    warnings: List[str] = Field(default_factory=list)


class PathEstimate(BaseModel):
    """路径估计结果，无法得到的字段为 None，绝不伪造"""

    b_av: Optional[float] = Field(None, description="可用带宽(bits/s)")
    capacity: Optional[float] = Field(None, description="容量(bits/s)")
    d_min: Optional[float] = Field(None, description="最小时延 D_min(秒)")
    intercept_a: Optional[float] = Field(None, description="截距 a(秒)")
    method: str = Field("two_point", description="two_point 或 fit")
    label: Optional[str] = Field(None, description="测量语义说明")
    mean_fit: Optional[AffineFit] = None
    min_fit: Optional[AffineFit] = None
    warnings: List[str] = Field(default_factory=list)

    @property
    def produced(self) -> bool:
        return any(v is not None for v in (self.b_av, self.capacity, self.d_min))


def _check_size(w: int) -> None:
    if w < 1:
        raise InvalidSize(f"报文大小必须 >= 1: {w}")


def _check_pair(w1: int, d1: float, w2: int, d2: float) -> None:
    _check_size(w1)
    if w2 <= w1:
        raise SizeOrder(f"要求 w2 > w1，实际 w1={w1}, w2={w2}")
    if d1 <= 0:
        raise NonPositiveDelay(f"时延必须为正: {d1}")
    if d2 <= d1:
        raise NonIncreasingDelay(f"大包时延 {d2} 不大于小包时延 {d1}")


def single_hop_throughput(w: int, d: float) -> float:
    """单跳吞吐量 8W/D (Little 定律的一个版本)"""
    _check_size(w)
    if d <= 0:
        raise NonPositiveDelay(f"时延必须为正: {d}")
    return BITS_PER_BYTE * w / d


def fixed_delay_model(path: Union[PathSpec, Sequence[Hop]], w: int) -> float:
    """
    固定时延模型 D^fixed(W) = 8W·Σ(1/C_i) + Σδ_i

    w=0 时返回 Σδ_i，即 D_min。
    """
    hops = path.hops if isinstance(path, PathSpec) else list(path)
    if not hops:
        raise EmptyPath("路径至少需要一跳")
    if w < 0:
        raise InvalidSize(f"报文大小不能为负: {w}")
    inverse_rates = np.array([1.0 / hop.capacity for hop in hops])
    propagation = np.array([hop.propagation for hop in hops])
    return BITS_PER_BYTE * w * float(np.sum(inverse_rates)) + float(np.sum(propagation))


def variable_component(d: float, d_fixed: float, tolerance: float = 1e-12) -> float:
    """时延的可变部分(排队残差) d - d_fixed"""
    if d < d_fixed - tolerance:
        raise NegativeResidual(f"观测时延 {d} 小于固定时延 {d_fixed}")
    return max(d - d_fixed, 0.0)


def bandwidth_from_intercept(w: int, d_av: float, a: float) -> float:
    """截距修正后的带宽 8W/(D_av - a)"""
    _check_size(w)
    if d_av <= a:
        raise InterceptExceedsDelay(f"平均时延 {d_av} 不大于截距 {a}")
    return BITS_PER_BYTE * w / (d_av - a)


def available_bandwidth_two_point(w1: int, d1: float, w2: int, d2: float) -> float:
    """两点法可用带宽 8(W2-W1)/(D2-D1)，D 为各尺寸平均时延"""
    _check_pair(w1, d1, w2, d2)
    return BITS_PER_BYTE * (w2 - w1) / (d2 - d1)


def capacity_two_point(w1: int, d1_min: float, w2: int, d2_min: float) -> float:
    """两点法容量 8(W2-W1)/(D^fixed(W2)-D^fixed(W1))，D 为各尺寸最小时延"""
    _check_pair(w1, d1_min, w2, d2_min)
    return BITS_PER_BYTE * (w2 - w1) / (d2_min - d1_min)


def capacity_from_dmin(w: int, d_fixed: float, d_min: float) -> float:
    """单点容量 8W/(D^fixed(W) - D_min)"""
    _check_size(w)
    if d_fixed <= d_min:
        raise NonPositiveDenominator(f"D^fixed={d_fixed} 不大于 D_min={d_min}")
    return BITS_PER_BYTE * w / (d_fixed - d_min)


def dmin_two_point(w1: int, d1: float, w2: int, d2: float) -> float:
    """
    两点法最小时延 D_min = (W2·D1 - W1·D2)/(W2 - W1)

    结果为负时照常返回，并发出 NegativeDminWarning。
    """
    if w2 <= w1:
        raise SizeOrder(f"要求 w2 > w1，实际 w1={w1}, w2={w2}")
    if d2 < d1:
        raise NonIncreasingDelay(f"大包时延 {d2} 小于小包时延 {d1}")
    d_min = (w2 * d1 - w1 * d2) / (w2 - w1)
    if d_min < 0:
        warnings.warn(f"D_min 为负: {d_min}", NegativeDminWarning, stacklevel=2)
    return d_min


def affine_fit(points: Iterable[Tuple[int, float]], use_min: bool = False) -> AffineFit:
    """
    时延对尺寸的普通最小二乘拟合

    Args:
        points: (尺寸, 时延) 序列
        use_min: True 时先把每个尺寸归约为最小时延(截距对应 Σδ_i)，
            否则直接拟合全部点(截距对应 a)

    Raises:
        DegenerateInput: 不同尺寸少于两个
    """
    pairs = [(int(w), float(d)) for w, d in points]
    if use_min:
        reduced = {}
        for w, d in pairs:
            reduced[w] = min(d, reduced.get(w, math.inf))
        pairs = sorted(reduced.items())

    if len({w for w, _ in pairs}) < 2:
        raise DegenerateInput("拟合至少需要两个不同的尺寸")

    x = np.array([w for w, _ in pairs], dtype=np.float64)
    y = np.array([d for _, d in pairs], dtype=np.float64)
    n = x.size

    # 中心化后求解
    x_mean = np.sum(x) / n
    y_mean = np.sum(y) / n
    dx = x - x_mean
    dy = y - y_mean
    sxx = float(np.sum(dx * dx))
    sxy = float(np.sum(dx * dy))
    syy = float(np.sum(dy * dy))

    slope = sxy / sxx
    intercept = float(y_mean - slope * x_mean)
    residuals = y - (intercept + slope * x)
    ss_res = float(np.sum(residuals * residuals))
    r_squared = 1.0 if syy == 0 else min(max(1.0 - ss_res / syy, 0.0), 1.0)

    slope_stderr = intercept_stderr = None
    if n > 2:
        s2 = ss_res / (n - 2)
        slope_stderr = math.sqrt(s2 / sxx)
        intercept_stderr = math.sqrt(s2 * (1.0 / n + x_mean * x_mean / sxx))

    return AffineFit(
        slope=slope,
        intercept=intercept,
        r_squared=r_squared,
        n_points=n,
        mode="min" if use_min else "mean",
        residual_norm=math.sqrt(ss_res),
        slope_stderr=slope_stderr,
        intercept_stderr=intercept_stderr,
    )


def fit_intercept_model(observations: Iterable[Tuple[float, float, float]]) -> InterceptModel:
    """
    拟合截距模型 a ≈ α·n + β·l (无常数项)

    Args:
        observations: (跳数 n, 路径长度 l, 截距 a) 序列，l 的单位由调用方约定

    Raises:
        DegenerateInput: 观测少于两个或 (n, l) 全部相同
        RankDeficient: n 与 l 两列非零且共线，异常中携带合并回归量的系数
    """
    rows = [(float(n), float(l), float(a)) for n, l, a in observations]
    if len(rows) < 2 or len({(n, l) for n, l, _ in rows}) < 2:
        raise DegenerateInput("截距模型至少需要两个不同的 (n, l) 观测")

    design = np.array([[n, l] for n, l, _ in rows], dtype=np.float64)
    target = np.array([a for _, _, a in rows], dtype=np.float64)
    m = len(rows)

    coef, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < 2:
        return _fit_single_regressor(design, target, m)

    residuals = target - design @ coef
    rss = float(residuals @ residuals)
    alpha_stderr = beta_stderr = None
    if m > 2:
        covariance = rss / (m - 2) * np.linalg.inv(design.T @ design)
        alpha_stderr = math.sqrt(covariance[0, 0])
        beta_stderr = math.sqrt(covariance[1, 1])

    return InterceptModel(
        alpha=float(coef[0]),
        beta=float(coef[1]),
        residual_norm=math.sqrt(rss),
        n_observations=m,
        alpha_stderr=alpha_stderr,
        beta_stderr=beta_stderr,
    )


def _fit_single_regressor(design: np.ndarray, target: np.ndarray, m: int) -> InterceptModel:
    n_col, l_col = design[:, 0], design[:, 1]
    n_zero = not np.any(n_col)
    l_zero = not np.any(l_col)

    if not n_zero and not l_zero:
        # 两列非零且共线，只能给出合并回归量 n 的系数
        combined = float((n_col @ target) / (n_col @ n_col))
        raise RankDeficient(
            f"n 与 l 共线，无法分别识别 α 与 β；合并回归量系数为 {combined}",
            combined_alpha=combined,
        )

    column = l_col if n_zero else n_col
    coef = float((column @ target) / (column @ column))
    residuals = target - coef * column
    rss = float(residuals @ residuals)
    stderr = math.sqrt(rss / (m - 1) / float(column @ column)) if m > 1 else None

    message = "l 全为 0，β 不可识别，记为 0" if l_zero else "n 全为 0，α 不可识别，记为 0"
    logger.warning(message)
    return InterceptModel(
        alpha=0.0 if n_zero else coef,
        beta=coef if n_zero else 0.0,
        residual_norm=math.sqrt(rss),
        n_observations=m,
        alpha_stderr=None if n_zero else stderr,
        beta_stderr=stderr if n_zero else None,
        rank_deficient=True,
        warnings=[message],
    )


def _warn(collected: List[str], message: str) -> None:
    logger.warning(message)
    collected.append(message)


def _positive_or_absent(value: Optional[float], name: str, collected: List[str]) -> Optional[float]:
    if value is None:
        return None
    if not math.isfinite(value) or value <= 0:
        _warn(collected, f"{name} = {value} 非正，已舍弃")
        return None
    return value


def estimate_path(
    stats: Sequence[SizeDelayStats],
    method: str = "auto",
    label: Optional[str] = None,
) -> PathEstimate:
    """
    由各尺寸统计量估计路径参数

    平均时延 → 可用带宽，最小时延 → 容量与 D_min。两个尺寸时使用两点法
    (取最小与最大尺寸)，多于两个尺寸时使用两种模式的线性拟合。
    任何字段计算失败都记为缺失并给出警告。

    Args:
        stats: 单一方向的尺寸统计
        method: auto / two_point / fit
        label: 测量语义说明，写入结果

    Raises:
        InsufficientData: 有样本的尺寸少于两个
    """
    usable = sorted((s for s in stats if s.count >= 1), key=lambda s: s.size)
    if len({s.direction for s in usable}) > 1:
        raise DegenerateInput("估计只能针对单一方向的统计量")
    if len(usable) < 2:
        raise InsufficientData(f"至少需要两个有样本的尺寸，实际 {len(usable)} 个")
    if method not in ("auto", "two_point", "fit"):
        raise ValueError(f"未知的估计方法: {method}")
    if method == "auto":
        method = "two_point" if len(usable) == 2 else "fit"

    collected: List[str] = []
    b_av = capacity = d_min = None
    mean_fit = min_fit = None

    if method == "two_point":
        small, large = usable[0], usable[-1]
        try:
            b_av = available_bandwidth_two_point(small.size, small.d_mean, large.size, large.d_mean)
        except EstimatorError as e:
            _warn(collected, f"可用带宽无法计算: {e}")
        try:
            capacity = capacity_two_point(small.size, small.d_min, large.size, large.d_min)
        except EstimatorError as e:
            _warn(collected, f"容量无法计算: {e}")
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NegativeDminWarning)
                d_min = dmin_two_point(small.size, small.d_min, large.size, large.d_min)
        except EstimatorError as e:
            _warn(collected, f"D_min 无法计算: {e}")
    else:
        mean_fit = affine_fit([(s.size, s.d_mean) for s in usable])
        min_fit = affine_fit([(s.size, s.d_min) for s in usable], use_min=True)
        b_av = mean_fit.capacity
        capacity = min_fit.capacity
        d_min = min_fit.intercept
        if b_av is None:
            _warn(collected, f"平均时延拟合斜率非正({mean_fit.slope})，可用带宽无法计算")
        if capacity is None:
            _warn(collected, f"最小时延拟合斜率非正({min_fit.slope})，容量无法计算")

    b_av = _positive_or_absent(b_av, "可用带宽", collected)
    capacity = _positive_or_absent(capacity, "容量", collected)
    d_min = _positive_or_absent(d_min, "D_min", collected)

    if b_av is not None and capacity is not None:
        if b_av > capacity * (1 + config.estimator.soft_tolerance):
            _warn(collected, f"可用带宽 {b_av:.0f} 超过容量 {capacity:.0f} 的容差范围")

    return PathEstimate(
        b_av=b_av,
        capacity=capacity,
        d_min=d_min,
        intercept_a=d_min,
        method=method,
        label=label,
        mean_fit=mean_fit,
        min_fit=min_fit,
        warnings=collected,
    )


def estimate_from_differences(
    delta_w: int,
    delta_mean: float,
    delta_min: Optional[float] = None,
    label: Optional[str] = None,
) -> PathEstimate:
    """
    仅知道逐对时延差时的估计(相邻配对模式)

    Args:
        delta_w: 尺寸差(字节)
        delta_mean: 时延差的平均值(秒)
        delta_min: 时延差的最小值(秒)，可选
    """
    collected: List[str] = []
    b_av = capacity = None
    if delta_w < 1:
        raise SizeOrder(f"尺寸差必须 >= 1: {delta_w}")
    if delta_mean > 0:
        b_av = BITS_PER_BYTE * delta_w / delta_mean
    else:
        _warn(collected, f"平均时延差 {delta_mean} 非正，可用带宽无法计算")
    if delta_min is not None:
        if delta_min > 0:
            capacity = BITS_PER_BYTE * delta_w / delta_min
        else:
            _warn(collected, f"最小时延差 {delta_min} 非正，容量无法计算")
    return PathEstimate(
        b_av=b_av, capacity=capacity, method="adjacent", label=label, warnings=collected
    )


def direction_label(direction: Direction) -> str:
    """结果标注: RTT 模式按出方向信道标注"""
    labels = {
        Direction.ROUND_TRIP: "outgoing channel (RTT based)",
        Direction.ONE_WAY_FORWARD: "one-way forward",
        Direction.ONE_WAY_REVERSE: "one-way reverse",
    }
    return labels[direction]
