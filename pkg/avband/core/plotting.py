"""
Packet Size vs Delay 图

matplotlib 为可选依赖(avband[plot])，只在调用时导入。
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np

from avband.core.estimators import affine_fit
from avband.core.samples import AvbandError, SampleSet

# 获取当前模块的日志记录器
logger = logging.getLogger(__name__)


class PlotUnavailable(AvbandError):
    """未安装 matplotlib"""

    exit_code = 1


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as e:
        raise PlotUnavailable("绘图需要 matplotlib，请安装 avband[plot]") from e
    return plt


def plot_size_delay(
    sample_set: SampleSet, output: Union[str, Path], title: Optional[str] = None
) -> Path:
    """
    绘制原始样本散点以及最小时延、平均时延两条拟合直线

    Args:
        sample_set: 样本集(单一方向)
        output: 输出图片路径，格式由后缀决定
        title: 图标题

    Returns:
        Path: 输出路径
    """
    plt = _pyplot()
    points = [(s.size, s.delay) for s in sample_set.samples]
    sizes = np.array([p[0] for p in points], dtype=np.float64)
    delays = np.array([p[1] for p in points], dtype=np.float64)

    mean_fit = affine_fit(points)
    min_fit = affine_fit(points, use_min=True)
    grid = np.linspace(0.0, float(sizes.max()) * 1.05, 50)

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.scatter(sizes, delays * 1e3, s=8, alpha=0.5, color="tab:gray", label="samples")
    ax.plot(
        grid,
        (mean_fit.intercept + mean_fit.slope * grid) * 1e3,
        color="tab:blue",
        label=f"mean fit (r²={mean_fit.r_squared:.3f})",
    )
    ax.plot(
        grid,
        (min_fit.intercept + min_fit.slope * grid) * 1e3,
        color="tab:red",
        linestyle="--",
        label="min fit",
    )
    ax.set_xlabel("Packet size (bytes)")
    ax.set_ylabel("Delay (ms)")
    ax.set_title(title or "Packet Size vs Delay")
    ax.set_xlim(left=0)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="upper left")
    fig.tight_layout()

    output = Path(output)
    fig.savefig(output)
    plt.close(fig)
    logger.info(f"已保存图像: {output}")
    return output
