# -*- coding: utf-8 -*-
"""
逆传感器模型
为三种更新策略给出单次测量的占据概率：
- 基线：每次扫描每个体素只取一个观测，有命中则忽略穿越
- 方法一：命中与穿越都按弦长线性调制，并乘以距离权重 w(d)
- 方法二：命中只按弦长调制，只有穿越乘以 w(d)
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Hashable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .density_model import DensityParams, weight
from .errors import DomainError

ArrayLike = Union[float, np.ndarray]

CHORD_EPS = 1e-9


class UpdatePolicy(str, Enum):
    """更新策略"""

    BASELINE = "baseline"
    METHOD1 = "m1"
    METHOD2 = "m2"


class ObservationKind(str, Enum):
    """观测类型"""

    HIT = "hit"
    MISS = "miss"


@dataclass(frozen=True)
class Observation:
    """单个观测：类型与其占据概率"""

    kind: ObservationKind
    probability: float


class SensorModelParams(BaseModel):
    """传感器模型参数"""

    model_config = ConfigDict(frozen=True)

    p_occ: float = Field(0.7, gt=0, lt=1)
    """命中概率 P_occ"""
    p_free: float = Field(0.4, gt=0, lt=1)
    """穿越概率 P_free"""
    p_min: float = Field(0.12, gt=0, lt=1)
    """截断下限 P_min"""
    p_max: float = Field(0.97, gt=0, lt=1)
    """截断上限 P_max"""
    density: DensityParams = Field(default_factory=DensityParams)
    """射线密度模型参数（含 ω 与 γ）"""

    @model_validator(mode="after")
    def _check_ordering(self) -> "SensorModelParams":
        if not (0.0 < self.p_min < self.p_free < 0.5 < self.p_occ < self.p_max < 1.0):
            raise ValueError(
                "需满足 0 < p_min < p_free < 0.5 < p_occ < p_max < 1，"
                f"收到 p_min={self.p_min}, p_free={self.p_free}, p_occ={self.p_occ}, p_max={self.p_max}"
            )
        return self

    @property
    def omega(self) -> float:
        return self.density.omega

    @property
    def max_chord(self) -> float:
        """体素体对角线 √3ω，射线在体素内可走的最长距离"""
        return math.sqrt(3.0) * self.density.omega


def _check_chords(lam: np.ndarray, params: SensorModelParams) -> None:
    if lam.size and np.min(lam) < 0.0:
        raise DomainError("弦长 λ 不能为负")
    if lam.size and np.max(lam) > params.max_chord + CHORD_EPS:
        raise DomainError(f"弦长 λ={float(np.max(lam)):.12g} 超过体对角线 √3ω={params.max_chord:.12g}")


def hit_probabilities(
    policy: UpdatePolicy, lam: ArrayLike, lam_prime: ArrayLike, w: ArrayLike, params: SensorModelParams
) -> np.ndarray:
    """命中观测的占据概率（向量化）

    Args:
        policy: 更新策略
        lam: 入射面到撞击点的弦长 λ
        lam_prime: 撞击点到出射面的距离 λ′
        w: 各体素的距离权重 w(d)
        params: 传感器模型参数
    """
    lam = np.asarray(lam, dtype=np.float64)
    lam_prime = np.asarray(lam_prime, dtype=np.float64)
    _check_chords(lam, params)
    if policy is UpdatePolicy.BASELINE:
        return np.full(np.broadcast(lam, lam_prime).shape, params.p_occ)
    if lam_prime.size and np.min(lam_prime) < 0.0:
        raise DomainError("λ′ 不能为负")
    total = lam + lam_prime
    if total.size and np.min(total) <= 0.0:
        raise DomainError("命中体素要求 λ + λ′ > 0")
    fraction = lam_prime / total
    excursion = (params.p_occ - 0.5) * fraction
    if policy is UpdatePolicy.METHOD1:
        excursion = excursion * np.asarray(w, dtype=np.float64)
    return 0.5 + excursion


def miss_probabilities(policy: UpdatePolicy, lam: ArrayLike, w: ArrayLike, params: SensorModelParams) -> np.ndarray:
    """穿越观测的占据概率（向量化），方法一与方法二相同"""
    lam = np.asarray(lam, dtype=np.float64)
    _check_chords(lam, params)
    if policy is UpdatePolicy.BASELINE:
        return np.full(lam.shape, params.p_free)
    ratio = np.minimum(lam / params.max_chord, 1.0)
    return 0.5 - (0.5 - params.p_free) * ratio * np.asarray(w, dtype=np.float64)


def measurement_probability(
    policy: UpdatePolicy,
    kind: ObservationKind,
    lam: float,
    lam_prime: Optional[float],
    d: float,
    params: SensorModelParams,
) -> float:
    """单次测量在体素上的占据概率 P(v | z_t,m_i)

    Args:
        policy: 更新策略
        kind: 命中或穿越
        lam: 体素内弦长 λ（米）
        lam_prime: 命中时撞击点到出射面的距离 λ′（米），穿越时忽略
        d: 传感器到体素中心的距离（米）
        params: 传感器模型参数

    Returns:
        落在 [p_free, p_occ] 内的概率
    """
    policy = UpdatePolicy(policy)
    kind = ObservationKind(kind)
    if not (math.isfinite(d) and d > 0.0):
        raise DomainError(f"距离必须为正的有限值，收到 {d}")
    w = 1.0 if policy is UpdatePolicy.BASELINE else weight(d, params.density)
    if kind is ObservationKind.HIT:
        if lam_prime is None:
            raise DomainError("命中观测必须提供 λ′")
        return float(hit_probabilities(policy, lam, lam_prime, w, params))
    return float(miss_probabilities(policy, lam, w, params))


def baseline_scan_filter(
    observations: Mapping[Hashable, Sequence[Union[Observation, ObservationKind]]],
    params: SensorModelParams,
) -> Dict[Hashable, Observation]:
    """基线策略：一次扫描内每个体素只保留一个观测，有命中则只发命中

    Args:
        observations: 按体素分组的本次扫描观测
        params: 传感器模型参数

    Returns:
        每个体素一个观测；空分组不输出
    """
    reduced: Dict[Hashable, Observation] = {}
    for key, group in observations.items():
        if not group:
            continue
        kinds = [ObservationKind(o.kind if isinstance(o, Observation) else o) for o in group]
        if ObservationKind.HIT in kinds:
            reduced[key] = Observation(ObservationKind.HIT, params.p_occ)
        else:
            reduced[key] = Observation(ObservationKind.MISS, params.p_free)
    return reduced


def baseline_reduce(packed_keys: np.ndarray, is_hit: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """baseline_scan_filter 的向量化版本

    Returns:
        (去重后的打包键, 该体素是否有命中)
    """
    unique, inverse = np.unique(packed_keys, return_inverse=True)
    any_hit = np.zeros(unique.size, dtype=bool)
    np.logical_or.at(any_hit, inverse, np.asarray(is_hit, dtype=bool))
    return unique, any_hit
