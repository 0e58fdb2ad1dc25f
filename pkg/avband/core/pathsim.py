"""
多跳存储转发路径的离散事件仿真器

每一跳是单服务台 FIFO 队列(无限缓存)，探测包依次经历排队、发送(8W/C_i)
和传播(δ_i)。交叉流量按跳独立生成，随机数流按跳序号派生。
仿真结果带有解析真值，用作各估计器的对照。
"""

import logging
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import simpy
from pydantic import BaseModel, Field, field_validator

from avband.core.config import config
from avband.core.samples import AvbandError, Direction, ProbeSample, SampleSet
from avband.utils import load_structured_file, parse_duration, parse_rate

# 获取当前模块的日志记录器
logger = logging.getLogger(__name__)


class UnstableHop(AvbandError):
    """某一跳的利用率 >= 1，队列不稳定"""

    exit_code = 1


class CrossKind(str, Enum):
    """交叉流量生成方式"""

    POISSON = "poisson"
    PERIODIC = "periodic"  # 确定性周期发送，可选 on/off
    FLUID = "fluid"  # 细粒度交织，探测包只获得剩余速率 C(1-u)


class CrossTraffic(BaseModel):
    """单跳交叉流量"""

    enabled: bool = Field(False, description="是否启用")
    kind: CrossKind = Field(CrossKind.POISSON, description="生成方式")
    arrival_rate: float = Field(0.0, ge=0, description="到达率(包/秒)")
    packet_size: Union[int, List[int]] = Field(1500, description="包大小(字节)，列表表示均匀抽取")
    offset: float = Field(0.0, ge=0, description="periodic: 首包时刻(秒)")
    on_time: Optional[float] = Field(None, gt=0, description="periodic: 开启时长(秒)")
    off_time: float = Field(0.0, ge=0, description="periodic: 关闭时长(秒)")

    @field_validator("packet_size")
    @classmethod
    def _check_packet_size(cls, value: Union[int, List[int]]) -> Union[int, List[int]]:
        sizes = value if isinstance(value, list) else [value]
        if not sizes or any(size < 1 for size in sizes):
            raise ValueError(f"交叉流量包大小必须 >= 1: {value}")
        return value

    @property
    def mean_packet_size(self) -> float:
        if isinstance(self.packet_size, list):
            return float(np.mean(self.packet_size))
        return float(self.packet_size)

    @property
    def duty_cycle(self) -> float:
        if self.kind != CrossKind.PERIODIC or self.on_time is None:
            return 1.0
        return self.on_time / (self.on_time + self.off_time)

    @property
    def bit_rate(self) -> float:
        """平均比特率(bits/s)"""
        if not self.enabled:
            return 0.0
        return self.arrival_rate * self.mean_packet_size * 8 * self.duty_cycle

    def in_on_phase(self, t: float) -> bool:
        if self.on_time is None:
            return True
        cycle = self.on_time + self.off_time
        return (t - self.offset) % cycle < self.on_time


class Hop(BaseModel):
    """路径上的一跳"""

    capacity: float = Field(..., gt=0, description="链路容量 C_i (bits/s)")
    propagation: float = Field(0.0, ge=0, description="传播时延 δ_i (秒)")
    cross: CrossTraffic = Field(default_factory=CrossTraffic)

    @field_validator("capacity", mode="before")
    @classmethod
    def _parse_capacity(cls, value):
        return parse_rate(value)

    @field_validator("propagation", mode="before")
    @classmethod
    def _parse_propagation(cls, value):
        return parse_duration(value)

    @property
    def utilization(self) -> float:
        return self.cross.bit_rate / self.capacity


class PathSpec(BaseModel):
    """仿真路径(真值)"""

    hops: List[Hop] = Field(..., min_length=1)
    name: Optional[str] = None

    @property
    def hop_count(self) -> int:
        return len(self.hops)


class GroundTruth(BaseModel):
    """路径的解析真值"""

    capacity: float = Field(..., description="min C_i (bits/s)")
    available_bandwidth: float = Field(..., description="min C_i(1-u_i) (bits/s)")
    d_min_zero_size: float = Field(..., description="Σδ_i (秒)")
    composite_rate: float = Field(..., description="1/Σ(1/C_i)，变尺寸估计器得到的等效速率 (bits/s)")
    utilizations: List[float] = Field(default_factory=list)
    hop_capacities: List[float] = Field(default_factory=list)

    def fixed_delay(self, w: int) -> float:
        """D^fixed(W) = 8W·Σ(1/C_i) + Σδ_i"""
        return 8 * w * float(np.sum(1.0 / np.asarray(self.hop_capacities))) + self.d_min_zero_size


def load_path_spec(path: Union[str, Path]) -> PathSpec:
    """从 YAML/JSON 文件加载路径描述"""
    data = load_structured_file(path)
    path_spec = PathSpec.model_validate(data)
    logger.info(f"已加载路径描述: {path} ({path_spec.hop_count} 跳)")
    return path_spec


def ground_truth(path: PathSpec) -> GroundTruth:
    """
    计算路径真值

    容量由最慢链路决定，可用带宽由剩余容量最小的链路决定。
    """
    capacities = np.array([hop.capacity for hop in path.hops], dtype=np.float64)
    utilizations = [hop.utilization for hop in path.hops]
    residual = capacities * (1.0 - np.array(utilizations))
    if np.any(residual <= 0):
        logger.warning("存在利用率 >= 1 的跳，可用带宽记为 0")
    return GroundTruth(
        capacity=float(np.min(capacities)),
        available_bandwidth=float(max(np.min(residual), 0.0)),
        d_min_zero_size=float(np.sum([hop.propagation for hop in path.hops])),
        composite_rate=float(1.0 / np.sum(1.0 / capacities)),
        utilizations=utilizations,
        hop_capacities=capacities.tolist(),
    )


def _check_stability(path: PathSpec) -> None:
    for index, hop in enumerate(path.hops):
        if hop.utilization >= 1.0:
            raise UnstableHop(f"第 {index + 1} 跳利用率 {hop.utilization:.3f} >= 1")


class PathSimulator:
    """基于 simpy 的路径仿真器"""

    def __init__(self, path: PathSpec, seed: int = 0):
        """
        初始化仿真器并启动各跳交叉流量

        Args:
            path: 路径描述
            seed: 随机种子，各跳随机流由 (seed, 跳序号) 派生
        """
        _check_stability(path)
        self.path = path
        self.env = simpy.Environment()
        self.links = [simpy.Resource(self.env, capacity=1) for _ in path.hops]
        self.rngs = [np.random.default_rng([seed, index]) for index in range(path.hop_count)]
        self.cross_packets = [0] * path.hop_count

        for index, hop in enumerate(path.hops):
            cross = hop.cross
            if not cross.enabled or cross.arrival_rate <= 0:
                continue
            if cross.kind == CrossKind.POISSON:
                self.env.process(self._poisson_source(index))
            elif cross.kind == CrossKind.PERIODIC:
                self.env.process(self._periodic_source(index))

    def _cross_size(self, index: int) -> int:
        size = self.path.hops[index].cross.packet_size
        if isinstance(size, list):
            return int(self.rngs[index].choice(size))
        return size

    def _poisson_source(self, index: int):
        rate = self.path.hops[index].cross.arrival_rate
        rng = self.rngs[index]
        while True:
            yield self.env.timeout(rng.exponential(1.0 / rate))
            self.env.process(self._transmit_cross(index, self._cross_size(index)))

    def _periodic_source(self, index: int):
        cross = self.path.hops[index].cross
        period = 1.0 / cross.arrival_rate
        k = 0
        while True:
            t = cross.offset + k * period
            k += 1
            if t > self.env.now:
                yield self.env.timeout(t - self.env.now)
            if cross.in_on_phase(t):
                self.env.process(self._transmit_cross(index, self._cross_size(index)))

    def _transmit_cross(self, index: int, size: int):
        with self.links[index].request() as request:
            yield request
            yield self.env.timeout(8 * size / self.path.hops[index].capacity)
        self.cross_packets[index] += 1

    def transmission_time(self, index: int, w: int) -> float:
        hop = self.path.hops[index]
        rate = hop.capacity
        if hop.cross.enabled and hop.cross.kind == CrossKind.FLUID:
            rate *= 1.0 - hop.utilization
        return 8 * w / rate

    def _probe(self, w: int, send_time: float):
        if send_time > self.env.now:
            yield self.env.timeout(send_time - self.env.now)
        for index, hop in enumerate(self.path.hops):
            with self.links[index].request() as request:
                yield request
                yield self.env.timeout(self.transmission_time(index, w))
            if hop.propagation > 0:
                yield self.env.timeout(hop.propagation)
        return self.env.now - send_time

    def send_probes(self, schedule: List[Tuple[int, float]]) -> List[float]:
        """
        按 (尺寸, 发送时刻) 列表发送探测包并运行到全部到达

        Returns:
            List[float]: 与 schedule 一一对应的时延
        """
        processes = [self.env.process(self._probe(w, t)) for w, t in schedule]
        self.env.run(until=self.env.all_of(processes))
        return [process.value for process in processes]


def simulate_probe(path: PathSpec, w: int, seed: int = 0, start_time: float = 0.0) -> float:
    """
    仿真单个探测包的端到端时延

    Args:
        path: 路径描述
        w: 探测包大小(字节)
        seed: 随机种子
        start_time: 发送时刻，此前交叉流量已从 0 时刻开始运行

    Returns:
        float: 时延(秒)
    """
    if w < 1:
        raise ValueError(f"探测包大小必须 >= 1: {w}")
    simulator = PathSimulator(path, seed)
    return simulator.send_probes([(w, start_time)])[0]


def run_experiment(
    path: PathSpec,
    sizes: List[int],
    probes_per_size: int,
    pacing: float,
    seed: int = 0,
    warmup: Optional[float] = None,
) -> Tuple[SampleSet, GroundTruth]:
    """
    按尺寸升序、等间隔发送探测包，整个实验共享同一交叉流量过程

    Returns:
        Tuple[SampleSet, GroundTruth]: 单向前向时延样本与解析真值
    """
    if probes_per_size < 1:
        raise ValueError(f"每种尺寸的探测数必须 >= 1: {probes_per_size}")
    if pacing < 0:
        raise ValueError(f"探测间隔不能为负: {pacing}")
    if not sizes or any(size < 1 for size in sizes):
        raise ValueError(f"探测尺寸非法: {sizes}")
    warmup = config.simulator.warmup if warmup is None else warmup

    simulator = PathSimulator(path, seed)
    schedule = []
    for size in sorted(sizes):
        for _ in range(probes_per_size):
            schedule.append((size, warmup + len(schedule) * pacing))

    logger.info(
        f"开始仿真: {path.hop_count} 跳, 尺寸 {sorted(sizes)}, 每种 {probes_per_size} 个, "
        f"间隔 {pacing}s, 种子 {seed}"
    )
    delays = simulator.send_probes(schedule)
    samples = [
        ProbeSample(
            size=size,
            delay=delay,
            direction=Direction.ONE_WAY_FORWARD,
            seq=index,
            sent_at=send_time,
        )
        for index, ((size, send_time), delay) in enumerate(zip(schedule, delays))
    ]
    logger.info(f"仿真完成: 交叉流量包数 {simulator.cross_packets}")
    meta = {"source": "simulation", "seed": seed, "path": path.name or "", "hops": path.hop_count}
    return SampleSet(samples=samples, meta=meta), ground_truth(path)
