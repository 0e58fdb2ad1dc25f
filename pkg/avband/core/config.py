import os
import platform
from typing import Any, List, Literal, Optional, Type, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

load_dotenv()

Section = TypeVar("Section", bound=BaseModel)


def _default_probe_sizes() -> List[int]:
    """Windows 下 ping 默认 32 字节，对应 32/1032；其他系统 64/1064"""
    if platform.system() == "Windows":
        return [32, 1032]
    return [64, 1064]


class ProbeDefaults(BaseModel):
    """探测默认配置"""

    sizes: List[int] = Field(default_factory=_default_probe_sizes)
    retries: int = 10  # 每种尺寸的探测次数
    pacing: float = 0.1  # 探测间隔(秒)
    timeout: float = 2.0  # 单次探测超时(秒)
    mode: Literal["icmp_echo", "udp_echo"] = "icmp_echo"
    udp_port: int = Field(7, ge=1, le=65535)  # 标准 echo 服务端口


class EstimatorConfig(BaseModel):
    """估计器配置"""

    soft_tolerance: float = 0.05  # b_av <= capacity * (1 + ε) 软校验
    min_samples_per_size: int = 5  # 少于该样本数给出警告
    outlier_k: Optional[float] = None  # None 表示不过滤离群点
    delay_resolution: float = 1e-6  # 时延测量分辨率(秒)，IQR 的下限


class SimulatorConfig(BaseModel):
    """仿真器配置"""

    probes_per_size: int = 10
    pacing: float = 0.1
    warmup: float = 1.0  # 交叉流量预热时间(秒)
    seed: int = 0


class OutputConfig(BaseModel):
    """输出配置"""

    format: Literal["human", "json"] = "human"
    log_dir: str = "logs-avband"
    callback_url: Optional[str] = None


class Config:
    """全局配置类"""

    def __init__(self):
        # 环境变量校验失败时回退默认值，错误留给命令行入口报告
        self.errors: List[str] = []
        self.probe = self._section(
            ProbeDefaults,
            mode=os.getenv("AVBAND_PROBE_MODE"),
            udp_port=os.getenv("AVBAND_UDP_PORT"),
        )
        self.estimator = EstimatorConfig()
        self.simulator = SimulatorConfig()
        self.output = self._section(
            OutputConfig,
            format=os.getenv("AVBAND_OUTPUT_FORMAT"),
            log_dir=os.getenv("AVBAND_LOG_DIR"),
            callback_url=os.getenv("AVBAND_CALLBACK_URL") or None,
        )

    def _section(self, model: Type[Section], **env: Any) -> Section:
        values = {key: value for key, value in env.items() if value is not None}
        try:
            return model(**values)
        except ValidationError as e:
            self.errors.append(f"{model.__name__}: {e}")
            return model()


# 全局配置实例
config = Config()
