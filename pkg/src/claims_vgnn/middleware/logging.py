"""日志和计时中间件"""

import logging
import time
from collections.abc import Callable
from typing import Any

from ..tools.registry import Middleware, StageContext


def _label(context: StageContext) -> str:
    model = context.arguments.get("model")
    return f"{context.stage} {model}" if model else context.stage


class LoggingMiddleware(Middleware):
    """日志中间件"""

    def __init__(self, logger: logging.Logger | None = None):
        self.logger = logger or logging.getLogger(__name__)

    def on_call(self, context: StageContext, call_next: Callable[[StageContext], Any]) -> Any:
        """记录阶段日志"""
        start_time = time.time()
        label = _label(context)

        self.logger.info(f"开始处理 {label}")

        try:
            result = call_next(context)
            processing_time = round(time.time() - start_time, 2)

            if isinstance(result, dict) and result.get("success") is False:
                self.logger.error(f"{label} 处理失败，耗时 {processing_time}s")
            else:
                self.logger.info(f"{label} 处理成功，耗时 {processing_time}s")
            return result

        except Exception as e:
            processing_time = round(time.time() - start_time, 2)
            self.logger.error(f"{label} 处理失败，耗时 {processing_time}s，错误: {e}")
            raise


class TimingMiddleware(Middleware):
    """计时中间件 - 自动添加性能统计"""

    def __init__(self) -> None:
        self.logger = logging.getLogger(__name__)

    def on_call(self, context: StageContext, call_next: Callable[[StageContext], Any]) -> Any:
        """自动添加计时信息"""
        start_time = time.time()

        result = call_next(context)

        processing_time = round(time.time() - start_time, 2)

        if isinstance(result, dict):
            result["processing_time"] = processing_time

        return result
