"""
主动探测引擎

按尺寸升序、逐个发送 echo 探测包并测量 RTT，一次只有一个在途探测。
ICMP 模式优先使用原始套接字，其次使用 Linux 非特权 ICMP 数据报套接字；
UDP 模式面向标准 echo 服务，无需特权。
"""

import errno
import logging
import secrets
import socket
import struct
import threading
import time
from datetime import datetime
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from avband.core.config import config
from avband.core.estimators import (
    InsufficientData,
    PathEstimate,
    direction_label,
    estimate_path,
)
from avband.core.samples import AvbandError, Direction, ProbeSample, SampleSet, aggregate

# 获取当前模块的日志记录器
logger = logging.getLogger(__name__)

ICMP_ECHO_REQUEST = 8
ICMP_ECHO_REPLY = 0
ICMP_DEST_UNREACHABLE = 3
ICMP_TIME_EXCEEDED = 11

ICMP_HEADER = 8
UDP_HEADER = 8
IPV4_HEADER = 20

# UDP 探测负载头: run_id + seq
UDP_PROBE_HEADER = struct.Struct("!II")

_UNREACHABLE_ERRNOS = {errno.EHOSTUNREACH, errno.ENETUNREACH, errno.ECONNREFUSED}


class ProbeError(AvbandError):
    """探测过程中的运行错误"""

    exit_code = 1


class ResolveFailure(ProbeError):
    """目标主机名无法解析"""


class PermissionDenied(ProbeError):
    """无权创建 ICMP 套接字"""


class Unreachable(ProbeError):
    """收到 ICMP 不可达 / 超时差错"""


class ProbeMode(str, Enum):
    """探测方式"""

    ICMP_ECHO = "icmp_echo"
    UDP_ECHO = "udp_echo"


class ProbeConfig(BaseModel):
    """单次探测任务配置"""

    target: str = Field(..., min_length=1, description="目标主机名或地址")
    sizes: List[int] = Field(
        default_factory=lambda: list(config.probe.sizes), description="负载大小(字节)"
    )
    retries: int = Field(
        default_factory=lambda: config.probe.retries, ge=1, description="每种尺寸的探测次数"
    )
    pacing: float = Field(default_factory=lambda: config.probe.pacing, ge=0, description="探测间隔(秒)")
    timeout: float = Field(
        default_factory=lambda: config.probe.timeout, gt=0, description="单次超时(秒)"
    )
    mode: ProbeMode = Field(default_factory=lambda: ProbeMode(config.probe.mode))
    port: int = Field(
        default_factory=lambda: config.probe.udp_port, ge=1, le=65535, description="UDP echo 端口"
    )
    dont_fragment: bool = Field(False, description="设置 DF 位，超过 MTU 的探测会丢失")

    @field_validator("sizes")
    @classmethod
    def _check_sizes(cls, sizes: List[int]) -> List[int]:
        if len(sizes) < 2:
            raise ValueError(f"至少需要两种探测尺寸: {sizes}")
        if any(size < 1 for size in sizes):
            raise ValueError(f"探测尺寸必须 >= 1: {sizes}")
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"探测尺寸必须严格递增: {sizes}")
        return sizes

    @model_validator(mode="after")
    def _check_udp_sizes(self) -> "ProbeConfig":
        if self.mode == ProbeMode.UDP_ECHO and self.sizes[0] < UDP_PROBE_HEADER.size:
            raise ValueError(f"udp_echo 模式的负载至少 {UDP_PROBE_HEADER.size} 字节")
        return self

    @property
    def header_overhead(self) -> int:
        """协议头 + IPv4 头"""
        transport = ICMP_HEADER if self.mode == ProbeMode.ICMP_ECHO else UDP_HEADER
        return transport + IPV4_HEADER


class SizeCounts(BaseModel):
    """单一尺寸的收发统计"""

    size: int
    wire_size: int = Field(..., description="线上大小: 负载 + 协议头 + IPv4 头(字节)")
    sent: int = 0
    received: int = 0
    lost: int = 0


class ProbeReport(BaseModel):
    """探测报告"""

    probe_config: ProbeConfig = Field(..., description="探测配置回显")
    address: str = Field(..., description="解析后的目标地址")
    counts: List[SizeCounts] = Field(default_factory=list)
    samples: SampleSet = Field(default_factory=SampleSet)
    stray: int = Field(0, description="被丢弃的不匹配回复数")
    duration: float = Field(0.0, description="总耗时(秒)")
    warnings: List[str] = Field(default_factory=list)

    @property
    def wire_sizes(self) -> Dict[int, int]:
        return {c.size: c.wire_size for c in self.counts}

    @property
    def total_sent(self) -> int:
        return sum(c.sent for c in self.counts)


def icmp_checksum(data: bytes) -> int:
    """RFC 1071 校验和"""
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    total = (total >> 16) + (total & 0xFFFF)
    total += total >> 16
    return ~total & 0xFFFF


def _marker(run_id: int, size: int) -> bytes:
    return (struct.pack("!I", run_id) + bytes(size))[:size]


class IcmpTransport:
    """ICMP echo 收发"""

    def __init__(self, address: str, run_id: int, dont_fragment: bool = False):
        self.address = address
        self.run_id = run_id
        self.ident = run_id & 0xFFFF
        self.stray = 0
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_RAW, socket.IPPROTO_ICMP)
            self.raw = True
        except PermissionError:
            try:
                self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM, socket.IPPROTO_ICMP)
                self.raw = False
            except OSError as e:
                raise PermissionDenied(
                    f"无法创建 ICMP 套接字({e})，请使用 --mode udp_echo 或提升权限"
                ) from e
        logger.debug(f"ICMP 套接字类型: {'raw' if self.raw else 'dgram'}")
        if dont_fragment:
            _set_dont_fragment(self.sock)

    def send(self, size: int, seq: int) -> None:
        payload = _marker(self.run_id, size)
        header = struct.pack("!BBHHH", ICMP_ECHO_REQUEST, 0, 0, self.ident, seq)
        checksum = icmp_checksum(header + payload)
        header = struct.pack("!BBHHH", ICMP_ECHO_REQUEST, 0, checksum, self.ident, seq)
        self.sock.sendto(header + payload, (self.address, 0))

    def receive(self, size: int, seq: int, deadline_ns: int) -> Optional[int]:
        """等待匹配的回复，返回收到时刻(perf_counter_ns)，超时返回 None"""
        expected = _marker(self.run_id, size)
        while True:
            remaining = (deadline_ns - time.perf_counter_ns()) / 1e9
            if remaining <= 0:
                return None
            self.sock.settimeout(remaining)
            try:
                data, _ = self.sock.recvfrom(65535)
            except socket.timeout:
                return None
            except OSError as e:
                if e.errno in _UNREACHABLE_ERRNOS:
                    raise Unreachable(f"{self.address} 不可达: {e}") from e
                raise
            received_ns = time.perf_counter_ns()

            packet = data[(data[0] & 0x0F) * 4 :] if self.raw else data
            if len(packet) < ICMP_HEADER:
                self.stray += 1
                continue
            icmp_type, code, _, ident, reply_seq = struct.unpack("!BBHHH", packet[:ICMP_HEADER])

            if icmp_type == ICMP_ECHO_REQUEST:
                # 原始套接字在回环上也会收到自己发出的请求
                continue
            if icmp_type in (ICMP_DEST_UNREACHABLE, ICMP_TIME_EXCEEDED):
                if self._quotes_probe(packet, seq):
                    raise Unreachable(f"{self.address} 返回 ICMP 差错 type={icmp_type} code={code}")
                continue
            if icmp_type != ICMP_ECHO_REPLY:
                continue

            # DGRAM 套接字的 identifier 由内核改写，只比较序号和负载
            ident_ok = ident == self.ident or not self.raw
            if ident_ok and reply_seq == seq and packet[ICMP_HEADER:].startswith(expected[:4]):
                return received_ns
            self.stray += 1

    def _quotes_probe(self, packet: bytes, seq: int) -> bool:
        inner = packet[ICMP_HEADER:]
        if len(inner) < IPV4_HEADER:
            return False
        quoted = inner[(inner[0] & 0x0F) * 4 :]
        if len(quoted) < ICMP_HEADER:
            return False
        q_type, _, _, q_ident, q_seq = struct.unpack("!BBHHH", quoted[:ICMP_HEADER])
        ident_ok = q_ident == self.ident or not self.raw
        return q_type == ICMP_ECHO_REQUEST and q_seq == seq and ident_ok

    def close(self) -> None:
        self.sock.close()


class UdpTransport:
    """UDP echo 收发，负载开头携带 run_id 与序号"""

    def __init__(self, address: str, port: int, run_id: int, dont_fragment: bool = False):
        self.address = address
        self.port = port
        self.run_id = run_id
        self.stray = 0
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        if dont_fragment:
            _set_dont_fragment(self.sock)
        self.sock.connect((address, port))

    def send(self, size: int, seq: int) -> None:
        header = UDP_PROBE_HEADER.pack(self.run_id, seq)
        self.sock.send(header + bytes(size - len(header)))

    def receive(self, size: int, seq: int, deadline_ns: int) -> Optional[int]:
        while True:
            remaining = (deadline_ns - time.perf_counter_ns()) / 1e9
            if remaining <= 0:
                return None
            self.sock.settimeout(remaining)
            try:
                data = self.sock.recv(65535)
            except socket.timeout:
                return None
            except ConnectionRefusedError as e:
                raise Unreachable(f"{self.address}:{self.port} 拒绝连接(端口不可达)") from e
            received_ns = time.perf_counter_ns()
            if len(data) >= UDP_PROBE_HEADER.size and UDP_PROBE_HEADER.unpack_from(data) == (
                self.run_id,
                seq,
            ):
                return received_ns
            self.stray += 1

    def close(self) -> None:
        self.sock.close()


def _set_dont_fragment(sock: socket.socket) -> None:
    option = getattr(socket, "IP_MTU_DISCOVER", None)
    value = getattr(socket, "IP_PMTUDISC_DO", None)
    if option is None or value is None:
        logger.warning("当前平台不支持设置 DF 位，忽略 --dont-fragment")
        return
    sock.setsockopt(socket.IPPROTO_IP, option, value)


def open_transport(probe_config: ProbeConfig, address: str, run_id: int):
    """按探测方式创建收发器"""
    if probe_config.mode == ProbeMode.ICMP_ECHO:
        return IcmpTransport(address, run_id, probe_config.dont_fragment)
    return UdpTransport(address, probe_config.port, run_id, probe_config.dont_fragment)


def resolve_target(target: str) -> str:
    try:
        return socket.gethostbyname(target)
    except (socket.gaierror, UnicodeError) as e:
        raise ResolveFailure(f"ResolveFailure: 无法解析目标 {target}: {e}") from e


def run_probe(
    probe_config: ProbeConfig,
    transport_factory: Callable[[ProbeConfig, str, int], object] = open_transport,
) -> ProbeReport:
    """
    执行一次探测

    每种尺寸依次发送 retries 个探测，发送前后使用单调时钟计时，
    丢失的探测只计数，不生成时延样本。

    Args:
        probe_config: 探测配置
        transport_factory: 收发器工厂

    Returns:
        ProbeReport: 探测报告

    Raises:
        ResolveFailure: 目标无法解析
        PermissionDenied: 无权创建 ICMP 套接字
        Unreachable: 收到 ICMP 差错
    """
    address = resolve_target(probe_config.target)
    run_id = secrets.randbits(32)
    transport = transport_factory(probe_config, address, run_id)

    logger.info(
        f"开始探测 {probe_config.target} ({address}), 方式 {probe_config.mode.value}, "
        f"尺寸 {probe_config.sizes}, 每种 {probe_config.retries} 次"
    )
    start_time = datetime.now()
    started_ns = time.perf_counter_ns()
    timeout_ns = int(probe_config.timeout * 1e9)

    samples: List[ProbeSample] = []
    counts: List[SizeCounts] = []
    warnings: List[str] = []
    sent_total = 0
    total = len(probe_config.sizes) * probe_config.retries

    try:
        for size in probe_config.sizes:
            size_counts = SizeCounts(size=size, wire_size=size + probe_config.header_overhead)
            for _ in range(probe_config.retries):
                # 样本序号不回绕，报文头只携带低 16 位
                wire_seq = sent_total & 0xFFFF
                sent_at = time.time()
                sent_ns = time.perf_counter_ns()
                transport.send(size, wire_seq)
                received_ns = transport.receive(size, wire_seq, sent_ns + timeout_ns)
                size_counts.sent += 1
                if received_ns is None:
                    size_counts.lost += 1
                    logger.debug(f"探测超时: size={size} seq={sent_total}")
                else:
                    size_counts.received += 1
                    samples.append(
                        ProbeSample(
                            size=size,
                            delay=(received_ns - sent_ns) / 1e9,
                            direction=Direction.ROUND_TRIP,
                            seq=sent_total,
                            sent_at=sent_at,
                        )
                    )
                sent_total += 1
                if sent_total < total and probe_config.pacing > 0:
                    time.sleep(probe_config.pacing)
            if size_counts.received == 0:
                message = f"尺寸 {size}B 的探测全部丢失，已从样本中排除"
                logger.warning(message)
                warnings.append(message)
            counts.append(size_counts)
    finally:
        transport.close()

    stray = getattr(transport, "stray", 0)
    if stray:
        message = f"丢弃 {stray} 个不匹配的回复"
        logger.warning(message)
        warnings.append(message)

    duration = (time.perf_counter_ns() - started_ns) / 1e9
    logger.info("-" * 50)
    logger.info("探测完成!")
    for c in counts:
        logger.info(f"尺寸 {c.size}B: 发送 {c.sent}, 收到 {c.received}, 丢失 {c.lost}")
    logger.info(f"执行时间: {datetime.now() - start_time}")
    logger.info("-" * 50)

    meta = {"source": "probe", "target": probe_config.target, "address": address}
    return ProbeReport(
        probe_config=probe_config,
        address=address,
        counts=counts,
        samples=SampleSet(samples=samples, meta=meta),
        stray=stray,
        duration=duration,
        warnings=warnings,
    )


def probe_and_estimate(
    probe_config: ProbeConfig,
    transport_factory: Callable[[ProbeConfig, str, int], object] = open_transport,
) -> Tuple[ProbeReport, PathEstimate]:
    """
    探测并估计

    RTT 样本按尺寸取平均与最小值后估计，结果标注为出方向信道估计。

    Raises:
        InsufficientData: 有样本的尺寸少于两个
    """
    report = run_probe(probe_config, transport_factory)
    answered = [c.size for c in report.counts if c.received > 0]
    if len(answered) < 2:
        raise InsufficientData(f"有回复的尺寸少于两个: {answered}")

    collected = list(report.warnings)
    stats = aggregate(report.samples, direction=Direction.ROUND_TRIP, warnings=collected)
    estimate = estimate_path(stats, label=direction_label(Direction.ROUND_TRIP))
    estimate.warnings = collected + estimate.warnings
    return report, estimate


class EchoResponder:
    """
    UDP echo 应答器，可按负载大小注入人工时延

    用于实验室脚本化测试，也通过 `avband responder` 对外提供。
    """

    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 0,
        delays: Optional[Dict[int, float]] = None,
        default_delay: float = 0.0,
    ):
        self.delays = dict(delays or {})
        self.default_delay = default_delay
        self.echoed = 0
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.05)
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> Tuple[str, int]:
        return self.sock.getsockname()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                data, peer = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            delay = self.delays.get(len(data), self.default_delay)
            if delay > 0:
                time.sleep(delay)
            self.sock.sendto(data, peer)
            self.echoed += 1

    def start(self) -> "EchoResponder":
        self._thread = threading.Thread(target=self._serve, name="echo-responder", daemon=True)
        self._thread.start()
        host, port = self.address
        logger.info(f"echo 应答器已启动: {host}:{port}, 时延表 {self.delays}")
        return self

    def serve_forever(self) -> None:
        """前台运行直到中断"""
        host, port = self.address
        logger.info(f"echo 应答器运行中: {host}:{port}, 时延表 {self.delays}")
        try:
            self._serve()
        finally:
            self.sock.close()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=1.0)
        self.sock.close()
        logger.info(f"echo 应答器已停止，共应答 {self.echoed} 个报文")

    def __enter__(self) -> "EchoResponder":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
