"""claims-vgnn 工具层
包含流水线各阶段的实现和注册逻辑
"""

from .core.cohort_tools import register_cohort_tools
from .core.evaluate_tools import register_evaluate_tools
from .core.explain_tools import register_explain_tools
from .core.generate_tools import register_generate_tools
from .core.ingest_tools import register_ingest_tools
from .core.match_tools import register_match_tools
from .core.run_all_tools import register_run_all_tools
from .core.train_tools import register_train_tools
from .registry import Middleware, StageContext, StageRegistry

__all__ = [
    # 注册表
    "Middleware",
    "StageContext",
    "StageRegistry",
    # 阶段注册函数
    "register_generate_tools",
    "register_ingest_tools",
    "register_cohort_tools",
    "register_match_tools",
    "register_train_tools",
    "register_evaluate_tools",
    "register_explain_tools",
    "register_run_all_tools",
]
