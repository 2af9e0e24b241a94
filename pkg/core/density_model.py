# -*- coding: utf-8 -*-
"""
射线密度模型
估计距离 d 处一个边长 ω 的体素可被多少条传感器射线穿过 ρ(d)，并由此得到权重函数
w(d) = min(1, ρ(d) / γ)

三种可见面情形 α₁/α₂/α₃ 分别对应下界/中间/上界，ρ(d) 以球面上各情形体素数 η 加权平均。
所有函数同时接受标量与 numpy 数组。
"""
import math
from typing import Dict, Iterable, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.optimize import brentq

from .errors import DensityDomainError, DomainError
from .log import logger

ArrayLike = Union[float, np.ndarray]

GEOMETRY_EPS = 1e-9

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)

# 情形 → (垂直分子系数, 水平分子系数, 分母系数)，均乘以 ω
_CASE_FACTORS = {
    1: (1.0, 1.0, 1.0),
    2: (SQRT2, 1.0, SQRT2),
    3: (SQRT3, SQRT2, SQRT3),
}


class SensorAngularSpec(BaseModel):
    """传感器角分辨率（弧度）"""

    model_config = ConfigDict(frozen=True)

    phi_s: float = Field(math.radians(0.4), gt=0, lt=math.pi / 2)
    """垂直角分辨率 φ_s"""
    theta_s: float = Field(math.radians(0.16), gt=0, lt=math.pi / 2)
    """水平角分辨率 θ_s"""

    @classmethod
    def from_degrees(cls, vertical_deg: float, horizontal_deg: float) -> "SensorAngularSpec":
        return cls(phi_s=math.radians(vertical_deg), theta_s=math.radians(horizontal_deg))


class DensityParams(BaseModel):
    """密度模型参数"""

    model_config = ConfigDict(frozen=True)

    spec: SensorAngularSpec = Field(default_factory=SensorAngularSpec)
    omega: float = Field(0.2, gt=0)
    """体素边长 ω（米）"""
    gamma: float = Field(32.0, gt=0)
    """密度缩放系数 γ"""

    @property
    def validity_threshold(self) -> float:
        """α 的有效下限 √3ω/2 + ε，更近处反正切分母不为正"""
        return SQRT3 * self.omega / 2.0 + GEOMETRY_EPS


def _as_array(d: ArrayLike) -> np.ndarray:
    return np.asarray(d, dtype=np.float64)


def _unwrap(out: np.ndarray) -> ArrayLike:
    return float(out) if out.ndim == 0 else out


def alpha(case: int, d: ArrayLike, params: DensityParams) -> ArrayLike:
    """第 case 种可见面情形下预期穿过体素的射线数

    Args:
        case: 1（下界）、2 或 3（上界）
        d: 体素到传感器的距离（米）
        params: 密度模型参数

    Returns:
        预期射线数（无量纲）
    """
    if case not in _CASE_FACTORS:
        raise DomainError(f"情形编号必须为 1/2/3，收到 {case}")
    d = _as_array(d)
    threshold = params.validity_threshold
    if d.size and np.min(d) <= threshold:
        raise DensityDomainError(float(np.min(d)), threshold)
    v_factor, h_factor, den_factor = _CASE_FACTORS[case]
    omega = params.omega
    den = 2.0 * d - den_factor * omega
    vertical = (2.0 / params.spec.phi_s) * np.arctan(v_factor * omega / den)
    horizontal = (2.0 / params.spec.theta_s) * np.arctan(h_factor * omega / den)
    return _unwrap(vertical * horizontal)


def eta(d: ArrayLike, params: DensityParams) -> Tuple[ArrayLike, ArrayLike, ArrayLike, ArrayLike]:
    """半径 d 的球面上各情形体素数 (η₁, η₂, η₃, η_t)

    η₂、η₃ 为渐近近似，近处会变负，此时截断为 0。
    """
    d = _as_array(d)
    if d.size and np.min(d) <= 0.0:
        raise DomainError(f"距离必须为正，收到 {float(np.min(d))}")
    omega = params.omega
    eta_t = 4.0 * math.pi * d ** 2 / omega ** 2
    eta_1 = np.full_like(d, 6.0)
    eta_2 = np.maximum(0.0, 3.0 * (2.0 * math.pi * d / omega) - 12.0)
    eta_3 = np.maximum(0.0, eta_t - eta_1 - eta_2)
    return _unwrap(eta_1), _unwrap(eta_2), _unwrap(eta_3), _unwrap(eta_t)


def rho(d: ArrayLike, params: DensityParams) -> ArrayLike:
    """密度函数 ρ(d)：三种情形按 η 加权的算术平均"""
    d = _as_array(d)
    a1 = alpha(1, d, params)
    a2 = alpha(2, d, params)
    a3 = alpha(3, d, params)
    eta_1, eta_2, eta_3, eta_t = eta(d, params)
    return _unwrap(_as_array((eta_1 * a1 + eta_2 * a2 + eta_3 * a3) / eta_t))


def weight(d: ArrayLike, params: DensityParams) -> ArrayLike:
    """权重函数 w(d) = min(1, ρ(d)/γ)

    不大于有效阈值的距离直接饱和为 1。
    """
    d = _as_array(d)
    if d.size and np.min(d) <= 0.0:
        raise DomainError(f"距离必须为正，收到 {float(np.min(d))}")
    out = np.ones_like(d)
    valid = d > params.validity_threshold
    if np.any(valid):
        out[valid] = np.minimum(1.0, _as_array(rho(d[valid], params)) / params.gamma)
    return _unwrap(out)


def weight_dropoff_distance(params: DensityParams) -> float:
    """ρ(d) = γ 的距离，即权重开始小于 1 的位置"""
    lower = params.validity_threshold * (1.0 + 1e-6)

    def excess(d: float) -> float:
        return float(rho(d, params)) - params.gamma

    if excess(lower) <= 0.0:
        return lower
    upper = max(2.0 * lower, 1.0)
    while excess(upper) > 0.0:
        upper *= 2.0
    distance = brentq(excess, lower, upper, xtol=1e-10)
    logger.debug(f"[密度模型] γ={params.gamma} 时权重在 d={distance:.4f} m 处开始衰减")
    return float(distance)


def weight_curves(params: DensityParams, gammas: Iterable[float], distances: np.ndarray) -> Dict[float, np.ndarray]:
    """同一组距离上不同 γ 的权重曲线"""
    distances = _as_array(distances)
    return {
        float(g): _as_array(weight(distances, params.model_copy(update={"gamma": float(g)})))
        for g in gammas
    }


class WeightLookupTable:
    """按距离量化（桶宽 ω/4）的只读权重表

    超出建表范围的距离直接计算。
    """

    def __init__(self, params: DensityParams, max_distance: float = 120.0):
        if max_distance <= 0:
            raise DomainError(f"建表距离必须为正，收到 {max_distance}")
        self.params = params
        self.bin_width = params.omega / 4.0
        self.max_distance = max_distance
        n_bins = int(math.ceil(max_distance / self.bin_width))
        centers = (np.arange(n_bins) + 0.5) * self.bin_width
        self._values = _as_array(weight(centers, params)).copy()
        self._values.setflags(write=False)
        logger.debug(f"[密度模型] 权重查找表已建立: {n_bins} 个桶，桶宽 {self.bin_width:.4f} m")

    def __call__(self, d: ArrayLike) -> ArrayLike:
        d = _as_array(d)
        if d.size and np.min(d) <= 0.0:
            raise DomainError(f"距离必须为正，收到 {float(np.min(d))}")
        idx = np.floor(d / self.bin_width).astype(np.int64)
        inside = idx < self._values.size
        out = np.empty_like(d)
        out[inside] = self._values[idx[inside]]
        if not np.all(inside):
            out[~inside] = weight(d[~inside], self.params)
        return _unwrap(out)
