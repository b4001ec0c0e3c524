"""阶段注册表 - 以名称注册阶段处理函数，并按顺序套用中间件"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

from ..services.error_utils import ConfigError

StageHandler = Callable[..., dict[str, Any]]


@dataclass
class StageContext:
    """一次阶段调用的上下文"""

    stage: str
    arguments: dict[str, Any] = field(default_factory=dict)


class Middleware:
    """中间件基类：on_call 决定是否以及如何调用下一层"""

    def on_call(self, context: StageContext, call_next: Callable[[StageContext], Any]) -> Any:
        return call_next(context)


@dataclass
class StageTool:
    name: str
    description: str
    handler: StageHandler


class StageRegistry:
    """流水线阶段注册表"""

    def __init__(self, name: str = "claims-vgnn", logger: logging.Logger | None = None):
        self.name = name
        self.logger = logger or logging.getLogger(__name__)
        self._tools: dict[str, StageTool] = {}
        self._middleware: list[Middleware] = []

    def tool(self, name: str, description: str = "") -> Callable[[StageHandler], StageHandler]:
        """注册阶段处理函数的装饰器"""

        def decorator(handler: StageHandler) -> StageHandler:
            if name in self._tools:
                raise ConfigError("duplicate_stage", f"阶段 {name} 重复注册")
            self._tools[name] = StageTool(name, description or (handler.__doc__ or ""), handler)
            return handler

        return decorator

    def add_middleware(self, middleware: Middleware) -> None:
        """先添加的中间件位于最外层"""
        self._middleware.append(middleware)

    @property
    def stages(self) -> list[str]:
        return list(self._tools)

    def describe(self, name: str) -> str:
        return self._tools[name].description

    def call(self, stage: str, **arguments: Any) -> dict[str, Any]:
        """经过全部中间件调用一个阶段"""
        if stage not in self._tools:
            raise ConfigError("unknown_stage", f"未注册的阶段: {stage}")
        tool = self._tools[stage]

        def innermost(context: StageContext) -> Any:
            return tool.handler(**context.arguments)

        call_next: Callable[[StageContext], Any] = innermost
        for middleware in reversed(self._middleware):
            call_next = _bind(middleware, call_next)
        result: dict[str, Any] = call_next(StageContext(stage=stage, arguments=arguments))
        return result


def _bind(
    middleware: Middleware, call_next: Callable[[StageContext], Any]
) -> Callable[[StageContext], Any]:
    def wrapped(context: StageContext) -> Any:
        return middleware.on_call(context, call_next)

    return wrapped
