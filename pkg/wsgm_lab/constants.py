# -*- coding: utf-8 -*-

"""
项目常量配置文件
该文件集中管理了数值实验所需的所有硬编码值，
包括数值容差、稠密矩阵上限、训练与采样默认参数、输出文件名和预览图布局等。
通过在此处修改值，可以统一调整各个子命令的行为。
"""

import math
import os

# ==============================================================================
# 1. 核心路径设置 (Core Paths)
# ==============================================================================

# 未指定 --out 时的默认输出目录（相对于当前工作目录）
DEFAULT_OUTPUT_DIR = os.path.join(os.getcwd(), 'wsgm_runs')

# 数据集检查点缓存目录名（位于输出目录之下）
CHECKPOINT_DIR_NAME = 'checkpoints'

# ==============================================================================
# 2. 数值容差 (Numerical Tolerances)
# ==============================================================================

FILTER_DC_TOLERANCE = 1e-12  # 低通滤波器系数之和与 √2 的允许偏差
SERIES_THRESHOLD = 1e-4  # |σ-1| 小于该值时使用级数展开计算 log σ/(σ-1)
BASIS_FD_TOLERANCE = 1e-7  # 标量基函数导数的有限差分校验容差（相对）
BASIS_FD_STEP = 1e-5  # 有限差分步长
GRAM_CONDITION_LIMIT = 1e12  # Gram 矩阵条件数超过该值时改用最小范数解
COVARIANCE_CONDITION_LIMIT = 1e12  # Var(x_1) 条件数超过该值视为奇异
EIGEN_FLOOR = 1e-12  # 条件协方差特征值的相对下限（消除舍入产生的负值）
LOSS_GAP_TOLERANCE = 0.01  # 梯度下降最终损失与最小二乘解之间允许的相对差距

# ==============================================================================
# 3. 资源上限 (Resource Caps)
# ==============================================================================

DENSE_DIM_CAP = 4096  # 稠密矩阵路径允许的最大维数 d = L^n
HESSIAN_SIDE_CAP = 32  # phi4 稠密 Hessian 允许的最大边长
STEP_SEARCH_CAP = 16384  # N(ε) 搜索的最大步数，超过后使用幂律外推

# ==============================================================================
# 4. 模型默认参数 (Model Defaults)
# ==============================================================================

# --- 扩散与离散化 ---
DEFAULT_HORIZON = 10.0  # N(ε) 搜索固定使用的时间范围 T
DEFAULT_EPSILON = 0.1  # N(ε) 的默认目标误差

# --- phi4 模型 ---
PHI4_CRITICAL_BETA = 0.68  # 临界耦合 β_c
TARGET_ACCEPTANCE = 0.4  # Metropolis 提议宽度调节的目标接受率
TUNE_INTERVAL = 10  # burn-in 期间每隔多少次 sweep 调整一次提议宽度

# --- 分数模型训练 ---
TRAIN_HORIZON = 5.0  # 训练时间范围 T
TRAIN_TIME_STEPS = 2000  # 训练时间网格步数 n_train
TRAIN_LEARNING_RATE = 0.01  # 学习率
TRAIN_INITIAL_ITERATIONS = 10000  # t = 0 时的下降迭代次数
TRAIN_WARM_ITERATIONS = 100  # 之后每个时间点热启动的迭代次数
DIVERGENCE_PATIENCE = 50  # 损失连续上升多少次视为发散

# --- 评价指标 ---
HISTOGRAM_RANGE = (-3.0, 3.0)  # 边缘分布直方图的取值范围
HISTOGRAM_BINS = 61  # 直方图分箱数
HESSIAN_HISTOGRAM_BINS = 30  # Hessian 统计直方图分箱数
KAPPA_TRIM_FRACTION = 0.1  # κ 截尾均值两端各去掉的比例

# --- 实验默认值 ---
DEFAULT_XI_FACTOR = 2 * math.pi  # ξ 未给出时取 2π/L
DEFAULT_COARSE_SIDE = 4  # 多尺度分解的最粗网格边长

# ==============================================================================
# 5. 命令行与输出 (CLI & Output)
# ==============================================================================

SEED_ENV_VAR = 'WSGM_SEED'  # 覆盖配置中种子的环境变量

# --- 退出码 ---
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGENCE = 3
EXIT_RESOURCE_CAP = 4

# --- 输出文件名 ---
MANIFEST_FILE = 'manifest.json'
LOG_FILE = 'run.log'
RESULTS_FILE = 'results.csv'
STEPS_FILE = 'n_eps.csv'
SUMMARY_FILE = 'summary.csv'
HISTOGRAM_FILE = 'histograms.csv'
REPORT_FILE = 'report.csv'
SCORE_TABLE_DIR = 'score_tables'

# --- 数据集文件 ---
DATASET_SUFFIX = '.f64'  # 原始小端 float64 数据
SIDECAR_SUFFIX = '.json'  # 元数据侧车文件
DATASET_DTYPE = '<f8'

USAGE = """wsgm <subcommand> --config path [--jobs n] [--out dir]

子命令:
  fig2 (fig2-gaussian)     高斯场上 SGM / WSGM 的离散化误差与 N(ε)
  fig3 (fig3-phi4)         phi4 数据集上的完整 SGM / WSGM 流程
  hessian-stats            像素域与小波域 Hessian 条件数统计
  wavelet-check            小波变换精确性自检
  schedule-sweep           离散化误差上界与一阶展开的残差扫描"""

# ==============================================================================
# 6. 预览图布局 (Preview Layout)
# ==============================================================================

PREVIEW_TILE_SCALE = 6  # 每个格点放大的像素数
PREVIEW_PADDING = 8  # 图块之间的间距
PREVIEW_TITLE_HEIGHT = 28  # 每行标题区域高度
PREVIEW_CREDIT_HEIGHT = 24  # 底部署名区域高度
PREVIEW_COLUMNS = 8  # 每行最多显示的样本数
PREVIEW_VALUE_RANGE = (-2.0, 2.0)  # 灰度映射的取值区间
PREVIEW_BACKGROUND_COLOR = (46, 33, 23, 255)  # 画布背景色
PREVIEW_TEXT_COLOR = (255, 255, 255, 255)  # 标题文字颜色
PREVIEW_CREDIT_COLOR = (200, 200, 200, 255)  # 署名文字颜色
PREVIEW_FONT_SIZE = 16
PREVIEW_CREDIT_TEXT = 'Generated by WSGM-lab'
