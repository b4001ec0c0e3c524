"""统一的错误处理工具 - 简单直接

所有流水线错误都是 PipelineError 的子类，按三大类映射到进程退出码：
- ConfigError   -> 2
- DataError     -> 3
- NumericalError -> 4
"""

import logging
import time
from typing import Any

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class PipelineError(Exception):
    """流水线错误基类"""

    exit_code = EXIT_UNEXPECTED

    def __init__(self, code: str, message: str = "", context: dict | None = None):
        self.code = code
        self.message = message or code
        self.context = context or {}
        super().__init__(f"{code}: {self.message}")


class ConfigError(PipelineError):
    """配置错误"""

    exit_code = EXIT_CONFIG


class ConfigValidationError(ConfigError):
    """配置校验错误 - 一次性列出全部问题"""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        joined = "; ".join(self.problems)
        super().__init__("invalid_config", f"{len(self.problems)} 个配置问题: {joined}")


class DataError(PipelineError):
    """数据错误"""

    exit_code = EXIT_DATA


class MissingArtifactError(DataError):
    """上游产物缺失，提示需要先运行的子命令"""

    def __init__(self, path: Any, producer: str):
        self.path = str(path)
        self.producer = producer
        super().__init__(
            "missing_artifact",
            f"缺少上游产物 {self.path}，请先运行 `claims-vgnn {producer}`",
            {"path": self.path, "producer": producer},
        )


class NumericalError(PipelineError):
    """数值计算错误"""

    exit_code = EXIT_NUMERICAL


def exit_code_for(error: BaseException) -> int:
    """根据异常类型确定退出码"""
    if isinstance(error, PipelineError):
        return error.exit_code
    return EXIT_UNEXPECTED


def format_error(operation: str, error: Exception, context: dict | None = None) -> dict[str, Any]:
    """统一的错误格式

    Args:
        operation: 操作名称
        error: 异常对象
        context: 额外的上下文信息

    Returns:
        标准化的错误响应

    """
    merged_context = dict(getattr(error, "context", {}) or {})
    merged_context.update(context or {})
    return {
        "success": False,
        "error": str(error),
        "operation": operation,
        "error_type": type(error).__name__,
        "error_code": getattr(error, "code", None),
        "exit_code": exit_code_for(error),
        "context": merged_context,
        "timestamp": time.time(),
    }


def format_response(
    success: bool,
    data: Any = None,
    operation: str = "",
    message: str = "",
    context: dict | None = None,
) -> dict[str, Any]:
    """统一的响应格式

    Args:
        success: 是否成功
        data: 返回数据
        operation: 操作名称
        message: 响应消息
        context: 额外的上下文信息

    Returns:
        标准化的响应

    """
    response = {"success": success, "operation": operation, "timestamp": time.time()}

    if data is not None:
        response["data"] = data

    if message:
        response["message"] = message

    if context:
        response["context"] = context

    return response


class ErrorHandler:
    """错误处理器类"""

    def __init__(self, logger: logging.Logger | None = None):
        self.logger = logger or logging.getLogger(__name__)

    def handle(
        self, operation: str, error: Exception, context: dict | None = None
    ) -> dict[str, Any]:
        """记录并格式化错误"""
        problems = getattr(error, "problems", None)
        if problems:
            self.logger.error(f"{operation} 失败: 配置存在 {len(problems)} 个问题")
            for problem in problems:
                self.logger.error(f"  - {problem}")
        else:
            self.logger.error(f"{operation} 失败: {error}")
        return format_error(operation, error, context)


_default_handler = ErrorHandler()


def get_error_handler(logger: logging.Logger | None = None) -> ErrorHandler:
    """获取错误处理器"""
    if logger:
        return ErrorHandler(logger)
    return _default_handler
