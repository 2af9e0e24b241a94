# -*- coding: utf-8 -*-
"""
异常定义
所有异常同时继承内置 ValueError，按内置类型捕获的调用方不受影响
"""
from typing import Optional


class MappingError(Exception):
    """本项目所有异常的基类"""


class DomainError(MappingError, ValueError):
    """输入超出定义域：非有限值、零长度射线、非法概率等"""


class DensityDomainError(DomainError):
    """距离不大于 α 有效阈值（√3ω/2），反正切分母不再为正"""

    def __init__(self, distance: float, threshold: float):
        self.distance = distance
        self.threshold = threshold
        super().__init__(f"距离 {distance:.6g} m 不大于密度模型有效阈值 {threshold:.6g} m")


class ScanFormatError(MappingError, ValueError):
    """Velodyne 二进制文件格式错误"""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message}（字节偏移 {offset}）")


class PoseParseError(MappingError, ValueError):
    """位姿文件解析错误"""

    def __init__(self, message: str, line_number: int):
        self.line_number = line_number
        super().__init__(f"第 {line_number} 行: {message}")


class PoseValidationError(MappingError, ValueError):
    """旋转矩阵不满足正交性或行列式约束"""

    def __init__(self, message: str, deviation: float, line_number: Optional[int] = None):
        self.deviation = deviation
        self.line_number = line_number
        prefix = f"第 {line_number} 行: " if line_number is not None else ""
        super().__init__(f"{prefix}{message}（偏差 {deviation:.3e}）")


class ConfigError(MappingError, ValueError):
    """运行配置非法"""
