"""内置资源 - 默认病例定义与示例编码分组表"""

from importlib import resources
from pathlib import Path

CASE_DEFINITION_FILE = "case_definition.csv"
SAMPLE_CODE_MAP_FILE = "sample_code_map.csv"


def resource_path(name: str) -> Path:
    """返回内置资源文件的路径"""
    return Path(str(resources.files(__name__).joinpath(name)))


def default_case_definition_path() -> Path:
    return resource_path(CASE_DEFINITION_FILE)


def sample_code_map_path() -> Path:
    return resource_path(SAMPLE_CODE_MAP_FILE)


__all__ = [
    "CASE_DEFINITION_FILE",
    "SAMPLE_CODE_MAP_FILE",
    "default_case_definition_path",
    "resource_path",
    "sample_code_map_path",
]
