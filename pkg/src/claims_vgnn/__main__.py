#!/usr/bin/env python3
"""claims-vgnn 模块执行入口
支持 python -m claims_vgnn 命令
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
