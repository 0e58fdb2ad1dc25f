"""
时延样本的统一表示与按尺寸聚合

probe、ripe_ingest、pathsim 三个来源都产出 SampleSet，
estimators 只消费聚合后的 SizeDelayStats。
"""

import bisect
import csv
import io
import logging
from collections import defaultdict
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from avband.core.config import config

# 获取当前模块的日志记录器
logger = logging.getLogger(__name__)

CSV_HEADER = ["size_bytes", "delay_s", "direction", "seq", "sent_at"]


class AvbandError(Exception):
    """avband 异常基类，exit_code 供命令行映射退出码"""

    exit_code = 1


class EmptySet(AvbandError, ValueError):
    """样本集为空"""

    exit_code = 2


class SampleFormatError(AvbandError):
    """CSV 样本文件格式错误"""

    exit_code = 1

    def __init__(self, message: str, row: Optional[int] = None, source: Optional[str] = None):
        self.row = row
        self.source = source
        location = ""
        if source:
            location += f"{source}:"
        if row is not None:
            location += f"第{row}行: "
        super().__init__(f"{location}{message}")


class Direction(str, Enum):
    """时延方向"""

    ROUND_TRIP = "round_trip"
    ONE_WAY_FORWARD = "one_way_forward"
    ONE_WAY_REVERSE = "one_way_reverse"


class ProbeSample(BaseModel):
    """单次时延观测"""

    size: int = Field(..., ge=1, description="报文大小(字节)")
    delay: float = Field(..., ge=0, description="时延(秒)")
    direction: Direction = Field(Direction.ROUND_TRIP, description="时延方向")
    seq: str = Field(..., description="序号(不透明标识)")
    sent_at: float = Field(0.0, description="发送时刻(epoch 秒)")

    model_config = {"frozen": True}

    @field_validator("seq", mode="before")
    @classmethod
    def _coerce_seq(cls, value: Any) -> str:
        return str(value)


class SampleSet(BaseModel):
    """样本集合"""

    samples: List[ProbeSample] = Field(default_factory=list)
    meta: Dict[str, Any] = Field(default_factory=dict, description="来源描述")

    @model_validator(mode="after")
    def _check_unique_seq(self) -> "SampleSet":
        seen = set()
        for sample in self.samples:
            key = (sample.size, sample.direction, sample.seq)
            if key in seen:
                raise ValueError(
                    f"序号重复: size={sample.size} direction={sample.direction.value} "
                    f"seq={sample.seq}"
                )
            seen.add(key)
        return self

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def directions(self) -> List[Direction]:
        return sorted({s.direction for s in self.samples}, key=lambda d: d.value)

    @property
    def sizes(self) -> List[int]:
        return sorted({s.size for s in self.samples})

    def by_direction(self) -> Dict[Direction, "SampleSet"]:
        """按方向拆分样本集"""
        groups: Dict[Direction, List[ProbeSample]] = defaultdict(list)
        for sample in self.samples:
            groups[sample.direction].append(sample)
        return {
            direction: SampleSet(samples=items, meta=dict(self.meta))
            for direction, items in groups.items()
        }


class SizeDelayStats(BaseModel):
    """单一尺寸的时延统计"""

    size: int = Field(..., ge=1, description="报文大小(字节)")
    count: int = Field(..., ge=0, description="样本数")
    d_min: float = Field(..., description="最小时延(秒)，即 D^fixed(W) 的估计")
    d_mean: float = Field(..., description="平均时延(秒)")
    d_max: float = Field(..., description="最大时延(秒)")
    d_stddev: float = Field(0.0, description="样本标准差(秒)")
    direction: Direction = Direction.ROUND_TRIP


def _group(samples: List[ProbeSample]) -> Dict[Tuple[Direction, int], np.ndarray]:
    groups: Dict[Tuple[Direction, int], List[float]] = defaultdict(list)
    for sample in samples:
        groups[(sample.direction, sample.size)].append(sample.delay)
    return {key: np.asarray(values, dtype=np.float64) for key, values in groups.items()}


def aggregate(
    sample_set: SampleSet,
    direction: Optional[Direction] = None,
    warnings: Optional[List[str]] = None,
) -> List[SizeDelayStats]:
    """
    按尺寸聚合样本，得到最小值与平均值

    Args:
        sample_set: 样本集
        direction: 只聚合该方向的样本；None 表示全部方向分别聚合
        warnings: 可选的警告收集列表

    Returns:
        List[SizeDelayStats]: 按 (方向, 尺寸) 排序的统计结果

    Raises:
        EmptySet: 没有可聚合的样本
    """
    samples = sample_set.samples
    if direction is not None:
        samples = [s for s in samples if s.direction == direction]
    if not samples:
        raise EmptySet("样本集为空，无法聚合")

    if direction is None and len({s.direction for s in samples}) > 1:
        _warn(warnings, "样本集包含多个方向，已按方向分别聚合")

    groups = _group(samples)
    stats = []
    for dir_, size in sorted(groups, key=lambda key: (key[0].value, key[1])):
        delays = groups[(dir_, size)]
        d_min = float(np.min(delays))
        d_max = float(np.max(delays))
        # 均值的舍入误差不能越过极值
        d_mean = min(max(float(np.mean(delays)), d_min), d_max)
        d_stddev = float(np.std(delays, ddof=1)) if delays.size > 1 else 0.0
        if delays.size < config.estimator.min_samples_per_size:
            _warn(
                warnings,
                f"尺寸 {size}B 仅有 {delays.size} 个样本(建议不少于 "
                f"{config.estimator.min_samples_per_size} 个)",
            )
        stats.append(
            SizeDelayStats(
                size=size,
                count=int(delays.size),
                d_min=d_min,
                d_mean=d_mean,
                d_max=d_max,
                d_stddev=d_stddev,
                direction=dir_,
            )
        )
    return stats


def filter_outliers(sample_set: SampleSet, k: float) -> SampleSet:
    """
    按尺寸剔除离群样本: delay > median + k * IQR

    IQR 以时延测量分辨率 r (默认 1 µs) 为下限。IQR 为 0 时阈值为 median + k·r:
    全部相等的样本、以及高出中位数不超过 k·r 的样本都不会被剔除，
    只有远离主体的孤立大值会被剔除。每个尺寸的最小值永远保留。
    """
    if k <= 0:
        raise ValueError(f"k 必须为正数: {k}")
    if not sample_set.samples:
        return SampleSet(samples=[], meta=dict(sample_set.meta))

    thresholds = {}
    for key, delays in _group(sample_set.samples).items():
        q1, median, q3 = np.percentile(delays, [25, 50, 75])
        spread = max(float(q3 - q1), config.estimator.delay_resolution)
        thresholds[key] = float(median) + k * spread

    kept = [s for s in sample_set.samples if s.delay <= thresholds[(s.direction, s.size)]]
    removed = len(sample_set.samples) - len(kept)
    if removed:
        logger.info(f"离群过滤: 剔除 {removed} 个样本 (k={k})")
    meta = dict(sample_set.meta)
    meta["outlier_k"] = k
    return SampleSet(samples=kept, meta=meta)


def adjacent_differences(
    sample_set: SampleSet, small_size: int, large_size: int
) -> List[float]:
    """
    相邻配对模式: 每个大包与发送时间最近的小包配对，返回逐对时延差

    Returns:
        List[float]: D(large) - D(small) 序列，按大包发送时间排序
    """
    small = sorted((s for s in sample_set.samples if s.size == small_size), key=lambda s: s.sent_at)
    large = sorted((s for s in sample_set.samples if s.size == large_size), key=lambda s: s.sent_at)
    if not small or not large:
        return []

    small_times = [s.sent_at for s in small]
    differences = []
    for sample in large:
        index = bisect.bisect_left(small_times, sample.sent_at)
        candidates = [i for i in (index - 1, index) if 0 <= i < len(small)]
        nearest = min(candidates, key=lambda i: abs(small_times[i] - sample.sent_at))
        differences.append(sample.delay - small[nearest].delay)
    return differences


def write_samples_csv(sample_set: SampleSet, target: Union[str, Path, TextIO]) -> None:
    """按交换格式写出样本 CSV (UTF-8, LF)"""
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="") as f:
            _write_rows(sample_set, f)
    else:
        _write_rows(sample_set, target)


def _write_rows(sample_set: SampleSet, stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for s in sample_set.samples:
        writer.writerow([s.size, repr(s.delay), s.direction.value, s.seq, repr(s.sent_at)])


def samples_to_csv_text(sample_set: SampleSet) -> str:
    buffer = io.StringIO()
    _write_rows(sample_set, buffer)
    return buffer.getvalue()


def read_samples_csv(path: Union[str, Path]) -> SampleSet:
    """
    读取交换格式的样本 CSV

    Raises:
        SampleFormatError: 表头不符或行内容非法，携带行号
    """
    source = str(path)
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            # 保留原始行号，跳过空行和注释行
            lines = [
                (line_no, line)
                for line_no, line in enumerate(f, start=1)
                if line.strip() and not line.lstrip().startswith("#")
            ]
    except OSError as e:
        raise SampleFormatError(f"读取样本文件失败: {e}", source=source) from e

    if not lines:
        raise SampleFormatError("样本文件为空", source=source)

    header_no, header_line = lines[0]
    header = [h.strip() for h in next(csv.reader([header_line]))]
    if header != CSV_HEADER:
        raise SampleFormatError(
            f"表头应为 {','.join(CSV_HEADER)}，实际为 {','.join(header)}", header_no, source
        )

    samples = []
    for row_no, line in lines[1:]:
        row = next(csv.reader([line]))
        if len(row) != len(CSV_HEADER):
            raise SampleFormatError(f"字段数应为 {len(CSV_HEADER)}，实际为 {len(row)}", row_no, source)
        size, delay, direction, seq, sent_at = (cell.strip() for cell in row)
        try:
            samples.append(
                ProbeSample(
                    size=int(size),
                    delay=float(delay),
                    direction=Direction(direction),
                    seq=seq,
                    sent_at=float(sent_at) if sent_at else 0.0,
                )
            )
        except (ValueError, ValidationError) as e:
            raise SampleFormatError(f"无法解析样本: {e}", row_no, source) from e

    try:
        return SampleSet(samples=samples, meta={"source": "csv", "path": source})
    except ValidationError as e:
        raise SampleFormatError(f"样本集校验失败: {e}", source=source) from e


def _warn(warnings: Optional[List[str]], message: str) -> None:
    logger.warning(message)
    if warnings is not None:
        warnings.append(message)
