# -*- coding: utf-8 -*-
"""
日志模块
全项目共用一个 logger，控制台输出到 stderr（stdout 留给机器可读的统计行）
"""
import logging
import sys

import colorlog

LOGGER_NAME = "voxel_mapper"

logger = logging.getLogger(LOGGER_NAME)
logger.addHandler(logging.NullHandler())

_LOG_FORMAT = "%(log_color)s[%(asctime)s] [%(levelname)s]%(reset)s %(message)s"
_LOG_COLORS = {
    "DEBUG": "cyan",
    "INFO": "green",
    "WARNING": "yellow",
    "ERROR": "red",
    "CRITICAL": "bold_red",
}


def setup_logger(level: str = "INFO") -> logging.Logger:
    """配置控制台日志输出

    重复调用只会调整日志级别与输出流，不会叠加 handler。

    Args:
        level: 日志级别名称（DEBUG/INFO/WARNING/ERROR）

    Returns:
        配置好的 logger
    """
    logger.setLevel(level.upper())
    consoles = [h for h in logger.handlers if getattr(h, "_voxel_console", False)]
    for handler in consoles:
        # 跟随当前 sys.stderr（测试捕获会替换它）
        handler.stream = sys.stderr
    if not consoles:
        handler = colorlog.StreamHandler(sys.stderr)
        handler.setFormatter(
            colorlog.ColoredFormatter(_LOG_FORMAT, datefmt="%H:%M:%S", log_colors=_LOG_COLORS)
        )
        handler._voxel_console = True
        logger.addHandler(handler)
    logger.propagate = False
    return logger
