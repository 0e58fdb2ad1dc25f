"""
RIPE Test Box 日志解析

发送端 SNDP 行与接收端 RCDP 行按序号配对，得到单向时延样本。
时延字段直接取自 RCDP 记录，不做时钟校正。
"""

import logging
import math
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Tuple, TypeVar, Union

from pydantic import BaseModel, Field, ValidationError

from avband.core.samples import AvbandError, Direction, ProbeSample, SampleSet

# 获取当前模块的日志记录器
logger = logging.getLogger(__name__)

SNDP_TAG = "SNDP"
RCDP_TAG = "RCDP"
RCDP_FIELDS = 14  # 含标签
SNDP_KNOWN_FLAGS = ("-h", "-p", "-n", "-s")

T = TypeVar("T")


class MalformedLine(AvbandError, ValueError):
    """日志行格式错误，携带文件、行号与字段序号"""

    exit_code = 1

    def __init__(
        self,
        message: str,
        line_no: Optional[int] = None,
        source: Optional[str] = None,
        token_index: Optional[int] = None,
    ):
        self.line_no = line_no
        self.source = source
        self.token_index = token_index
        location = ""
        if source:
            location += f"{source}:"
        if line_no is not None:
            location += f"第{line_no}行: "
        if token_index is not None:
            location += f"第{token_index}个字段: "
        super().__init__(f"{location}{message}")


class SndpRecord(BaseModel):
    """发送端记录"""

    tag: Literal["SNDP"] = SNDP_TAG
    version: int
    unix_time: float = Field(..., description="发送时刻(epoch 秒)")
    target_host: Optional[str] = Field(None, description="-h 目标测试盒")
    port: Optional[int] = Field(None, description="-p 端口")
    size: int = Field(..., ge=1, description="-n 报文大小(字节)")
    seq: int = Field(..., ge=0, description="-s 序号")
    extra: Dict[str, str] = Field(default_factory=dict, description="未知标志原样保留")
    flag_order: List[str] = Field(default_factory=list)
    line_no: Optional[int] = None


class RcdpRecord(BaseModel):
    """接收端记录"""

    tag: Literal["RCDP"] = RCDP_TAG
    field1: int
    field2: int
    src_addr: str
    src_port: int
    dst_addr: str
    dst_port: int
    arrival_time: float = Field(..., description="到达时刻(epoch 秒)")
    delay: float = Field(..., ge=0, description="单向时延(秒)")
    flags1: str
    flags2: str
    seq: int = Field(..., ge=0)
    precision1: float
    precision2: float
    line_no: Optional[int] = None


class MatchedPair(BaseModel):
    """按序号配对的收发记录"""

    seq: int
    size: int
    delay: float
    send_time: float
    arrival_time: float
    direction: Direction = Direction.ONE_WAY_FORWARD


class MatchReport(BaseModel):
    """配对结果"""

    pairs: List[MatchedPair] = Field(default_factory=list)
    unmatched_send: int = 0
    unmatched_recv: int = 0
    duplicates: int = 0
    warnings: List[str] = Field(default_factory=list)


def _convert(
    tokens: List[str],
    index: int,
    parse: Callable[[str], T],
    name: str,
    line_no: Optional[int],
    source: Optional[str],
) -> T:
    try:
        return parse(tokens[index])
    except (ValueError, IndexError) as e:
        raw = tokens[index] if index < len(tokens) else "<缺失>"
        raise MalformedLine(f"{name} 非法: {raw!r}", line_no, source, index) from e


def _finite(token: str) -> float:
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(f"非有限数值: {token}")
    return value


def _hex(token: str) -> str:
    int(token, 16)
    return token


def parse_sndp(
    line: str, line_no: Optional[int] = None, source: Optional[str] = None
) -> SndpRecord:
    """
    解析一行 SNDP 记录

    格式: SNDP <版本> <时间> 后接任意顺序的 -h/-p/-n/-s 标志值对，
    未知标志保存在 extra 中。

    Raises:
        MalformedLine: 标签错误、缺少 -n/-s、数值非法
    """
    tokens = line.split()
    if not tokens or tokens[0] != SNDP_TAG:
        raise MalformedLine(f"不是 {SNDP_TAG} 行", line_no, source, 0)
    version = _convert(tokens, 1, int, "版本", line_no, source)
    unix_time = _convert(tokens, 2, _finite, "时间", line_no, source)

    flags: Dict[str, Tuple[int, str]] = {}
    order = []
    index = 3
    while index < len(tokens):
        flag = tokens[index]
        if not flag.startswith("-") or index + 1 >= len(tokens):
            raise MalformedLine(f"标志值对不完整: {flag!r}", line_no, source, index)
        flags[flag] = (index + 1, tokens[index + 1])
        order.append(flag)
        index += 2

    for required in ("-n", "-s"):
        if required not in flags:
            raise MalformedLine(f"缺少 {required}", line_no, source)

    def flag_value(flag: str, parse: Callable[[str], T], name: str) -> Optional[T]:
        if flag not in flags:
            return None
        position, _ = flags[flag]
        return _convert(tokens, position, parse, name, line_no, source)

    size = flag_value("-n", int, "-n 报文大小")
    seq = flag_value("-s", int, "-s 序号")
    if size < 1:
        raise MalformedLine(f"报文大小必须 >= 1: {size}", line_no, source, flags["-n"][0])
    if seq < 0:
        raise MalformedLine(f"序号不能为负: {seq}", line_no, source, flags["-s"][0])

    try:
        return SndpRecord(
            version=version,
            unix_time=unix_time,
            target_host=flags["-h"][1] if "-h" in flags else None,
            port=flag_value("-p", int, "-p 端口"),
            size=size,
            seq=seq,
            extra={f: v for f, (_, v) in flags.items() if f not in SNDP_KNOWN_FLAGS},
            flag_order=order,
            line_no=line_no,
        )
    except ValidationError as e:
        raise MalformedLine(f"SNDP 记录校验失败: {e}", line_no, source) from e


def format_sndp(record: SndpRecord) -> str:
    """按原始标志顺序重新序列化 SNDP 记录"""
    t = record.unix_time
    values = {
        "-h": record.target_host,
        "-p": None if record.port is None else str(record.port),
        "-n": str(record.size),
        "-s": str(record.seq),
        **record.extra,
    }
    order = record.flag_order or [flag for flag in values if values[flag] is not None]
    parts = [SNDP_TAG, str(record.version), str(int(t)) if t.is_integer() else repr(t)]
    for flag in order:
        parts.extend([flag, values[flag]])
    return " ".join(parts)


def parse_rcdp(
    line: str, line_no: Optional[int] = None, source: Optional[str] = None
) -> RcdpRecord:
    """
    按位置解析一行 RCDP 记录

    多余的尾部字段被忽略并记录警告。

    Raises:
        MalformedLine: 字段缺失或非法，携带出错字段序号
    """
    tokens = line.split()
    if not tokens or tokens[0] != RCDP_TAG:
        raise MalformedLine(f"不是 {RCDP_TAG} 行", line_no, source, 0)
    if len(tokens) < RCDP_FIELDS:
        raise MalformedLine(
            f"字段数不足: 需要 {RCDP_FIELDS}，实际 {len(tokens)}", line_no, source, len(tokens)
        )
    if len(tokens) > RCDP_FIELDS:
        logger.warning(f"{source or ''}:第{line_no}行 忽略 {len(tokens) - RCDP_FIELDS} 个多余字段")

    def field(index: int, parse: Callable[[str], T], name: str) -> T:
        return _convert(tokens, index, parse, name, line_no, source)

    delay = field(8, _finite, "时延")
    if delay < 0:
        raise MalformedLine(f"时延不能为负: {delay}", line_no, source, 8)
    seq = field(11, int, "序号")
    if seq < 0:
        raise MalformedLine(f"序号不能为负: {seq}", line_no, source, 11)

    try:
        return RcdpRecord(
            field1=field(1, int, "字段1"),
            field2=field(2, int, "字段2"),
            src_addr=tokens[3],
            src_port=field(4, int, "源端口"),
            dst_addr=tokens[5],
            dst_port=field(6, int, "目的端口"),
            arrival_time=field(7, _finite, "到达时刻"),
            delay=delay,
            flags1=field(9, _hex, "十六进制标志"),
            flags2=field(10, _hex, "十六进制标志"),
            seq=seq,
            precision1=field(12, _finite, "时钟精度"),
            precision2=field(13, _finite, "时钟精度"),
            line_no=line_no,
        )
    except ValidationError as e:
        raise MalformedLine(f"RCDP 记录校验失败: {e}", line_no, source) from e


def _read_records(
    path: Union[str, Path],
    tag: str,
    parse: Callable[[str, Optional[int], Optional[str]], T],
    lenient: bool,
    warnings: Optional[List[str]],
) -> List[T]:
    source = str(path)
    records: List[T] = []
    foreign = skipped = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if stripped.split()[0] != tag:
                # telnet 提示符或另一端的记录
                foreign += 1
                continue
            try:
                records.append(parse(stripped, line_no, source))
            except MalformedLine as e:
                if not lenient:
                    raise
                skipped += 1
                logger.debug(f"跳过格式错误的行: {e}")

    if foreign:
        _warn(warnings, f"{source}: {foreign} 行不是 {tag} 记录，已跳过")
    if skipped:
        _warn(warnings, f"{source}: 跳过 {skipped} 行格式错误的 {tag} 记录")
    logger.info(f"读取 {source}: {len(records)} 条 {tag} 记录")
    return records


def read_sndp_file(
    path: Union[str, Path], lenient: bool = False, warnings: Optional[List[str]] = None
) -> List[SndpRecord]:
    """读取发送端日志"""
    return _read_records(path, SNDP_TAG, parse_sndp, lenient, warnings)


def read_rcdp_file(
    path: Union[str, Path], lenient: bool = False, warnings: Optional[List[str]] = None
) -> List[RcdpRecord]:
    """读取接收端日志"""
    return _read_records(path, RCDP_TAG, parse_rcdp, lenient, warnings)


def _record_key(record: BaseModel) -> str:
    # 行号不参与比较，内容相同的重复记录可互换
    return record.model_dump_json(exclude={"line_no"})


def match_pairs(
    send: List[SndpRecord],
    recv: List[RcdpRecord],
    direction: Direction = Direction.ONE_WAY_FORWARD,
    target_host: Optional[str] = None,
) -> MatchReport:
    """
    按序号连接发送端与接收端记录

    同一序号出现多次时保留最早的记录并给出重复警告。结果按序号排序，
    与输入顺序无关。

    Args:
        send: SNDP 记录
        recv: RCDP 记录
        direction: 样本方向标注
        target_host: 只保留 -h 等于该值的发送记录
    """
    warnings: List[str] = []
    if target_host is not None:
        send = [r for r in send if r.target_host == target_host]

    duplicates = 0
    sent: Dict[int, SndpRecord] = {}
    for record in sorted(send, key=lambda r: (r.unix_time, r.size, _record_key(r))):
        if record.seq in sent:
            duplicates += 1
            continue
        sent[record.seq] = record
    received: Dict[int, RcdpRecord] = {}
    for record in sorted(recv, key=lambda r: (r.arrival_time, r.delay, _record_key(r))):
        if record.seq in received:
            duplicates += 1
            continue
        received[record.seq] = record
    if duplicates:
        _warn(warnings, f"发现 {duplicates} 条重复序号记录，已保留最早的一条")

    common = sorted(sent.keys() & received.keys())
    pairs = [
        MatchedPair(
            seq=seq,
            size=sent[seq].size,
            delay=received[seq].delay,
            send_time=sent[seq].unix_time,
            arrival_time=received[seq].arrival_time,
            direction=direction,
        )
        for seq in common
    ]
    unmatched_send = len(sent) - len(common)
    unmatched_recv = len(received) - len(common)
    if unmatched_send or unmatched_recv:
        _warn(warnings, f"未配对记录: 发送端 {unmatched_send} 条, 接收端 {unmatched_recv} 条")
    if not pairs:
        _warn(warnings, "没有任何记录配对成功，请检查文件顺序(发送端在前)与目标主机")

    logger.info(f"配对完成: {len(pairs)} 对")
    return MatchReport(
        pairs=pairs,
        unmatched_send=unmatched_send,
        unmatched_recv=unmatched_recv,
        duplicates=duplicates,
        warnings=warnings,
    )


def pairs_to_samples(pairs: List[MatchedPair], meta: Optional[Dict] = None) -> SampleSet:
    """配对结果转换为单向时延样本集"""
    samples = [
        ProbeSample(
            size=pair.size,
            delay=pair.delay,
            direction=pair.direction,
            seq=pair.seq,
            sent_at=pair.send_time,
        )
        for pair in pairs
    ]
    return SampleSet(samples=samples, meta=dict(meta or {"source": "ripe"}))


def _warn(warnings: Optional[List[str]], message: str) -> None:
    logger.warning(message)
    if warnings is not None:
        warnings.append(message)
