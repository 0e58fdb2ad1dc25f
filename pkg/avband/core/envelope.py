"""
命令输出信封

JSON 输出中每个数值字段的名字都带单位后缀: _bps 为 bits/s，_s 为秒，
_bytes 为字节。人类可读输出中带宽统一以 Mbps 三位有效数字显示。
"""

import json
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from avband import __version__
from avband.core.estimators import AffineFit, PathEstimate
from avband.core.pathsim import GroundTruth
from avband.core.samples import SizeDelayStats
from avband.utils import format_bandwidth, format_delay


class StatsRow(BaseModel):
    size_bytes: int
    count: int
    d_min_s: float
    d_mean_s: float
    d_max_s: float
    d_stddev_s: float
    direction: str

    @classmethod
    def from_stats(cls, stats: SizeDelayStats) -> "StatsRow":
        return cls(
            size_bytes=stats.size,
            count=stats.count,
            d_min_s=stats.d_min,
            d_mean_s=stats.d_mean,
            d_max_s=stats.d_max,
            d_stddev_s=stats.d_stddev,
            direction=stats.direction.value,
        )


class FitBlock(BaseModel):
    mode: str
    slope_s_per_byte: float
    intercept_s: float
    r_squared: float
    n_points: int
    capacity_bps: Optional[float] = None
    residual_norm_s: float = 0.0
    slope_stderr_s_per_byte: Optional[float] = None
    intercept_stderr_s: Optional[float] = None

    @classmethod
    def from_fit(cls, fit: AffineFit) -> "FitBlock":
        return cls(
            mode=fit.mode,
            slope_s_per_byte=fit.slope,
            intercept_s=fit.intercept,
            r_squared=fit.r_squared,
            n_points=fit.n_points,
            capacity_bps=fit.capacity,
            residual_norm_s=fit.residual_norm,
            slope_stderr_s_per_byte=fit.slope_stderr,
            intercept_stderr_s=fit.intercept_stderr,
        )


def _fit_block(fit: Optional[AffineFit]) -> Optional[FitBlock]:
    return FitBlock.from_fit(fit) if fit is not None else None


class EstimateBlock(BaseModel):
    b_av_bps: Optional[float] = None
    capacity_bps: Optional[float] = None
    d_min_s: Optional[float] = None
    intercept_a_s: Optional[float] = None
    method: str
    label: Optional[str] = None
    mean_fit: Optional[FitBlock] = None
    min_fit: Optional[FitBlock] = None

    @classmethod
    def from_estimate(cls, estimate: PathEstimate, stat: str = "both") -> "EstimateBlock":
        """stat: both / mean(只输出可用带宽) / min(只输出容量与 D_min)"""
        keep_mean = stat in ("both", "mean")
        keep_min = stat in ("both", "min")
        return cls(
            b_av_bps=estimate.b_av if keep_mean else None,
            capacity_bps=estimate.capacity if keep_min else None,
            d_min_s=estimate.d_min if keep_min else None,
            intercept_a_s=estimate.intercept_a if keep_min else None,
            method=estimate.method,
            label=estimate.label,
            mean_fit=_fit_block(estimate.mean_fit) if keep_mean else None,
            min_fit=_fit_block(estimate.min_fit) if keep_min else None,
        )


class TruthBlock(BaseModel):
    capacity_bps: float
    available_bandwidth_bps: float
    composite_rate_bps: float
    d_min_zero_size_s: float
    utilizations: List[float] = Field(default_factory=list)

    @classmethod
    def from_truth(cls, truth: GroundTruth) -> "TruthBlock":
        return cls(
            capacity_bps=truth.capacity,
            available_bandwidth_bps=truth.available_bandwidth,
            composite_rate_bps=truth.composite_rate,
            d_min_zero_size_s=truth.d_min_zero_size,
            utilizations=truth.utilizations,
        )


class Comparison(BaseModel):
    """估计值与真值的对照，单位见 unit 字段"""

    name: str
    unit: str
    estimate: Optional[float] = None
    truth: float
    relative_error: Optional[float] = None

    @classmethod
    def build(cls, name: str, unit: str, estimate: Optional[float], truth: float) -> "Comparison":
        error = None
        if estimate is not None and truth != 0:
            error = abs(estimate - truth) / abs(truth)
        return cls(name=name, unit=unit, estimate=estimate, truth=truth, relative_error=error)


class OutputEnvelope(BaseModel):
    """所有子命令共用的输出结构"""

    command: str
    version: str = __version__
    inputs: Dict[str, Any] = Field(default_factory=dict)
    stats: List[StatsRow] = Field(default_factory=list)
    estimate: Optional[EstimateBlock] = None
    fit: Optional[FitBlock] = None
    ground_truth: Optional[TruthBlock] = None
    comparison: List[Comparison] = Field(default_factory=list)
    counts: Dict[str, Any] = Field(default_factory=dict, description="探测收发或配对计数")
    points: Optional[List[Tuple[int, float]]] = Field(None, description="(尺寸字节, 时延秒)")
    warnings: List[str] = Field(default_factory=list)

    def with_stats(self, stats: List[SizeDelayStats]) -> "OutputEnvelope":
        self.stats = [StatsRow.from_stats(s) for s in stats]
        return self

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), ensure_ascii=False, indent=2)

    def to_human(self) -> str:
        return render_human(self)


def render_human(envelope: OutputEnvelope) -> str:
    """渲染为终端表格"""
    lines = [f"avband {envelope.command}"]
    for key, value in envelope.inputs.items():
        lines.append(f"  {key}: {value}")

    if envelope.counts:
        lines.append("")
        for key, value in envelope.counts.items():
            lines.append(f"  {key}: {value}")

    if envelope.stats:
        lines.append("")
        lines.append(
            f"{'size(B)':>8} {'count':>6} {'min(s)':>10} {'mean(s)':>10} {'max(s)':>10}  direction"
        )
        for row in envelope.stats:
            lines.append(
                f"{row.size_bytes:>8} {row.count:>6} {row.d_min_s:>10.6f} {row.d_mean_s:>10.6f} "
                f"{row.d_max_s:>10.6f}  {row.direction}"
            )

    if envelope.estimate:
        est = envelope.estimate
        lines.append("")
        lines.append(f"method: {est.method}" + (f" ({est.label})" if est.label else ""))
        lines.append(f"available bandwidth: {format_bandwidth(est.b_av_bps)}")
        lines.append(f"capacity:            {format_bandwidth(est.capacity_bps)}")
        lines.append(f"D_min:               {format_delay(est.d_min_s)}")

    if envelope.fit:
        fit = envelope.fit
        lines.append("")
        lines.append(
            f"fit ({fit.mode}): slope {fit.slope_s_per_byte:.6g} s/B, "
            f"intercept {format_delay(fit.intercept_s)}"
        )
        lines.append(f"r²: {fit.r_squared:.6f}, points: {fit.n_points}")
        lines.append(f"capacity (8/slope): {format_bandwidth(fit.capacity_bps)}")

    if envelope.comparison:
        lines.append("")
        lines.append(f"{'quantity':<22} {'estimate':>14} {'truth':>14} {'rel.err':>10}")
        for item in envelope.comparison:
            if item.unit == "bps":
                estimate, truth = format_bandwidth(item.estimate), format_bandwidth(item.truth)
            else:
                estimate, truth = format_delay(item.estimate), format_delay(item.truth)
            error = "-" if item.relative_error is None else f"{item.relative_error:.2e}"
            lines.append(f"{item.name:<22} {estimate:>14} {truth:>14} {error:>10}")

    if envelope.points is not None:
        lines.append("")
        lines.append("size_bytes,delay_s")
        lines.extend(f"{size},{delay!r}" for size, delay in envelope.points)

    if envelope.warnings:
        lines.append("")
        lines.extend(f"warning: {w}" for w in envelope.warnings)
    return "\n".join(lines) + "\n"
