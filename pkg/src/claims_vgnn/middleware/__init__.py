"""流水线错误处理中间件"""

import logging as std_logging
import traceback
from collections.abc import Callable
from typing import Any

from ..services.error_utils import EXIT_OK, PipelineError, get_error_handler
from ..tools.registry import Middleware, StageContext

# 导入具体的中间件实现
from .logging import LoggingMiddleware, TimingMiddleware


class PipelineErrorHandlingMiddleware(Middleware):
    """把阶段异常转换为带退出码的标准错误响应"""

    def __init__(self, logger: std_logging.Logger | None = None):
        self.logger = logger or std_logging.getLogger(__name__)
        self.error_handler = get_error_handler(self.logger)

    def on_call(self, context: StageContext, call_next: Callable[[StageContext], Any]) -> Any:
        """处理所有阶段调用的错误"""
        try:
            result = call_next(context)
        except PipelineError as e:
            return self.error_handler.handle(context.stage, e, {"arguments": context.arguments})
        except Exception as e:
            # 非预期错误：保留堆栈便于排查，退出码 1
            self.logger.error(f"Error in {context.stage}: {type(e).__name__}: {e}")
            self.logger.debug(traceback.format_exc())
            return self.error_handler.handle(context.stage, e, {"arguments": context.arguments})
        if isinstance(result, dict):
            result.setdefault("exit_code", EXIT_OK)
        return result


__all__ = ["LoggingMiddleware", "PipelineErrorHandlingMiddleware", "TimingMiddleware"]
