"""
通用工具函数模块
"""

import json
import logging
import os
import re
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml

# 设置日志记录器
logger = logging.getLogger(__name__)

_RATE_UNITS = {
    "": 1.0,
    "bps": 1.0,
    "k": 1e3,
    "kbps": 1e3,
    "m": 1e6,
    "mbps": 1e6,
    "g": 1e9,
    "gbps": 1e9,
}

_DURATION_UNITS = {
    "": 1.0,
    "s": 1.0,
    "ms": 1e-3,
    "us": 1e-6,
    "µs": 1e-6,
    "ns": 1e-9,
}

_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-zµ]*)\s*$")


def _parse_quantity(value: Union[str, int, float], units: Dict[str, float], kind: str) -> float:
    if isinstance(value, (int, float)):
        return float(value)
    match = _QUANTITY.match(str(value))
    if not match:
        raise ValueError(f"无法解析{kind}: {value!r}")
    number, unit = match.groups()
    factor = units.get(unit.lower())
    if factor is None:
        raise ValueError(f"未知的{kind}单位: {unit!r}")
    return float(number) * factor


def parse_rate(value: Union[str, int, float]) -> float:
    """
    解析速率，返回 bits/s

    支持纯数字以及 "10Mbps"、"100 M"、"1.5e6" 等写法
    """
    return _parse_quantity(value, _RATE_UNITS, "速率")


def parse_duration(value: Union[str, int, float]) -> float:
    """解析时长，返回秒，支持 "1ms"、"250us"、"0.002" 等写法"""
    return _parse_quantity(value, _DURATION_UNITS, "时长")


def format_bandwidth(bits_per_second: Optional[float]) -> str:
    """
    以 Mbps 三位有效数字格式化带宽

    Args:
        bits_per_second: 带宽(bits/s)，None 表示缺失

    Returns:
        str: 例如 "12.9 Mbps"
    """
    if bits_per_second is None:
        return "-"
    return f"{bits_per_second / 1e6:.3g} Mbps"


def format_delay(seconds: Optional[float]) -> str:
    """以微秒精度格式化时延"""
    if seconds is None:
        return "-"
    return f"{seconds:.6f} s"


def ensure_directory(directory: Union[str, Path]) -> None:
    """
    确保目录存在，不存在则创建

    Args:
        directory: 目录路径
    """
    os.makedirs(directory, exist_ok=True)


def load_structured_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    加载结构化配置文件
    支持 JSON 和 YAML 格式

    Args:
        path: 配置文件路径

    Returns:
        Dict: 配置数据
    """
    config_file = Path(path)

    if not config_file.exists():
        raise FileNotFoundError(f"配置文件不存在: {path}")

    with open(config_file, "r", encoding="utf-8") as f:
        if config_file.suffix == ".json":
            data = json.load(f)
        elif config_file.suffix in (".yml", ".yaml"):
            data = yaml.safe_load(f)
        else:
            raise ValueError(f"不支持的配置文件格式: {config_file.suffix}")

    if not isinstance(data, dict):
        raise ValueError(f"配置文件顶层必须是映射: {path}")
    return data
