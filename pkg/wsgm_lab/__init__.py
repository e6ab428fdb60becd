"""
WSGM-lab
小波分数生成模型（WSGM）与普通分数生成模型（SGM）的数值实验库：
多尺度高斯场与 φ⁴ 场上的离散化误差分析、分数拟合与级联采样。
"""

__version__ = "0.1.0"
