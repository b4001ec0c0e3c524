"""核心工具模块 - 每个流水线阶段一个工具"""

from .cohort_tools import register_cohort_tools
from .evaluate_tools import register_evaluate_tools
from .explain_tools import register_explain_tools
from .generate_tools import register_generate_tools
from .ingest_tools import register_ingest_tools
from .match_tools import register_match_tools
from .run_all_tools import register_run_all_tools
from .train_tools import register_train_tools

# 导出所有注册函数
__all__ = [
    "register_cohort_tools",
    "register_evaluate_tools",
    "register_explain_tools",
    "register_generate_tools",
    "register_ingest_tools",
    "register_match_tools",
    "register_run_all_tools",
    "register_train_tools",
]
