"""claims-vgnn - 理赔数据疾病风险预测流水线
基于变分图注意力网络（VGNN）的 ADRD 风险预测

流水线阶段：
- generate: 带植入信号的合成理赔数据
- ingest: 原始编码到分组的映射
- cohort: 按场景窗口构建带标签的队列
- match: 留出测试集与倾向评分 1:1 匹配
- train: VGNN、随机森林与梯度提升
- evaluate: 测试集 AUROC 与结果表
- explain: 病例与对照之间的关系重要性
"""

import os

# 设置编码环境，确保中文日志正确输出
os.environ["PYTHONIOENCODING"] = "utf-8"

__version__ = "0.1.0"

# 导入CLI功能
from .cli import create_pipeline, main

# 主要API导出
__all__ = [
    # 版本信息
    "__version__",
    # CLI功能
    "create_pipeline",
    "main",
]
