"""
avband: 端到端可用带宽 / 路径容量估计工具包

基于不同尺寸报文的时延测量（Variable Packet Size），提供:
- 纯函数估计器（两点法、最小二乘拟合、截距模型）
- 主动探测引擎（ICMP / UDP echo）
- RIPE Test Box 日志解析与序号匹配
- 离散事件路径仿真器（作为真值对照）
"""

__version__ = "0.1.0"
