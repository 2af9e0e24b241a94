# -*- coding: utf-8 -*-
"""
稀疏体素占据地图
以整数体素坐标为键，保存截断后的对数几率（log-odds），并提供点与体素之间的几何换算
"""
import math
from pathlib import Path
from typing import Dict, Iterator, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import DomainError
from .log import logger

ArrayLike = Union[float, np.ndarray]

# 打包键：每轴 21 位，可表示 |index| < 2^20
_KEY_BITS = 21
_KEY_OFFSET = 1 << (_KEY_BITS - 1)
_KEY_MASK = (1 << _KEY_BITS) - 1


class VoxelKey(NamedTuple):
    """体素整数坐标"""

    i: int
    j: int
    k: int


class CellState(NamedTuple):
    """单个体素的状态（自然对数几率）"""

    log_odds: float

    @property
    def occupancy(self) -> float:
        return float(logistic(self.log_odds))


class GridConfig(BaseModel):
    """栅格配置"""

    model_config = ConfigDict(frozen=True)

    voxel_size: float = Field(0.2, gt=0)
    """体素边长 ω（米）"""
    prior: float = Field(0.5, gt=0, lt=1)
    """未观测体素的先验占据概率 P(v)"""


def log_odds(p: ArrayLike) -> ArrayLike:
    """概率 → 对数几率 L(p) = ln(p / (1 - p))"""
    p = np.asarray(p, dtype=np.float64)
    out = np.log(p / (1.0 - p))
    return float(out) if out.ndim == 0 else out


def logistic(l: ArrayLike) -> ArrayLike:
    """对数几率 → 概率 1 / (1 + e^(-l))"""
    l = np.asarray(l, dtype=np.float64)
    out = 1.0 / (1.0 + np.exp(-l))
    return float(out) if out.ndim == 0 else out


def _check_voxel_size(omega: float) -> None:
    if not (math.isfinite(omega) and omega > 0):
        raise DomainError(f"体素边长必须为正的有限值，收到 {omega}")


def key_from_point(p, omega: float) -> VoxelKey:
    """点 → 体素坐标，半开区间 [iω, (i+1)ω)

    Args:
        p: 三维点（米）
        omega: 体素边长（米）

    Returns:
        所在体素的键
    """
    _check_voxel_size(omega)
    x, y, z = (float(c) for c in p)
    if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
        raise DomainError(f"点坐标必须为有限值，收到 {(x, y, z)}")
    return VoxelKey(math.floor(x / omega), math.floor(y / omega), math.floor(z / omega))


def keys_from_points(points: np.ndarray, omega: float) -> np.ndarray:
    """批量版 key_from_point，返回 (N, 3) int64"""
    _check_voxel_size(omega)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(points)):
        raise DomainError("点坐标必须为有限值")
    return np.floor(points / omega).astype(np.int64)


def voxel_center(key, omega: float) -> np.ndarray:
    """体素中心 ((i+½)ω, (j+½)ω, (k+½)ω)"""
    _check_voxel_size(omega)
    return (np.asarray(key, dtype=np.float64) + 0.5) * omega


def voxel_centers(keys: np.ndarray, omega: float) -> np.ndarray:
    """批量版 voxel_center"""
    return voxel_center(np.asarray(keys).reshape(-1, 3), omega)


def pack_keys(keys: np.ndarray) -> np.ndarray:
    """(N, 3) 体素坐标 → int64 打包键，用于向量化分组"""
    keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
    if keys.size and (keys.min() < -_KEY_OFFSET or keys.max() >= _KEY_OFFSET):
        raise DomainError(f"体素坐标超出打包范围 ±{_KEY_OFFSET}")
    shifted = keys + _KEY_OFFSET
    return (shifted[:, 0] << (2 * _KEY_BITS)) | (shifted[:, 1] << _KEY_BITS) | shifted[:, 2]


def unpack_keys(packed: np.ndarray) -> np.ndarray:
    """pack_keys 的逆运算"""
    packed = np.asarray(packed, dtype=np.int64)
    out = np.empty((packed.size, 3), dtype=np.int64)
    out[:, 0] = (packed >> (2 * _KEY_BITS)) & _KEY_MASK
    out[:, 1] = (packed >> _KEY_BITS) & _KEY_MASK
    out[:, 2] = packed & _KEY_MASK
    return out - _KEY_OFFSET


class OccupancyMap:
    """稀疏占据地图

    只保存被观测过的体素；未观测体素报告先验概率。
    读操作可并发，写操作（扫描融合）由调用方串行化。

    属性:
        grid (GridConfig): 栅格配置
        clamp_min (float): 概率下限 P_min
        clamp_max (float): 概率上限 P_max
    """

    def __init__(self, grid: Optional[GridConfig] = None, clamp_min: float = 0.12, clamp_max: float = 0.97):
        self.grid = grid or GridConfig()
        if not (0.0 < clamp_min < clamp_max < 1.0):
            raise DomainError(f"截断阈值需满足 0 < P_min < P_max < 1，收到 {clamp_min}, {clamp_max}")
        self.clamp_min = clamp_min
        self.clamp_max = clamp_max
        self._lo = log_odds(clamp_min)
        self._hi = log_odds(clamp_max)
        self._initial = log_odds(self.grid.prior)
        self._cells: Dict[Tuple[int, int, int], float] = {}

    @property
    def voxel_size(self) -> float:
        return self.grid.voxel_size

    @property
    def log_odds_bounds(self) -> Tuple[float, float]:
        """截断区间 [L(P_min), L(P_max)]"""
        return self._lo, self._hi

    def __len__(self) -> int:
        return len(self._cells)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._cells

    # ========== 更新 ==========

    def apply_log_odds(self, key, delta: float) -> float:
        """对单个体素累加对数几率并截断

        Args:
            key: 体素键
            delta: 对数几率增量

        Returns:
            更新后的对数几率
        """
        if not math.isfinite(delta):
            raise DomainError(f"对数几率增量必须为有限值，收到 {delta}")
        key = tuple(int(c) for c in key)
        value = min(max(self._cells.get(key, self._initial) + delta, self._lo), self._hi)
        self._cells[key] = value
        return value

    def apply_log_odds_batch(self, keys: np.ndarray, deltas: np.ndarray) -> int:
        """批量累加并截断，每个键只能出现一次

        Returns:
            本次触发截断的体素数
        """
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        deltas = np.asarray(deltas, dtype=np.float64)
        if not np.all(np.isfinite(deltas)):
            raise DomainError("对数几率增量必须为有限值")
        tuples = list(map(tuple, keys.tolist()))
        old = self.get_log_odds_many(tuples)
        raw = old + deltas
        new = np.clip(raw, self._lo, self._hi)
        self._cells.update(zip(tuples, new.tolist()))
        return int(np.count_nonzero(raw != new))

    def get_log_odds_many(self, keys) -> np.ndarray:
        """批量读取对数几率，未观测体素返回 L(prior)"""
        if isinstance(keys, np.ndarray):
            keys = list(map(tuple, keys.reshape(-1, 3).tolist()))
        get = self._cells.get
        initial = self._initial
        return np.fromiter((get(k, initial) for k in keys), dtype=np.float64, count=len(keys))

    def set_log_odds_many(self, keys: np.ndarray, values: np.ndarray) -> None:
        """直接写入（值必须已在截断区间内）"""
        tuples = list(map(tuple, np.asarray(keys, dtype=np.int64).reshape(-1, 3).tolist()))
        self._cells.update(zip(tuples, np.asarray(values, dtype=np.float64).tolist()))

    # ========== 查询 ==========

    def cell_state(self, key) -> Optional[CellState]:
        """已观测体素的状态，未观测返回 None"""
        value = self._cells.get(tuple(key))
        return None if value is None else CellState(value)

    def log_odds_of(self, key) -> float:
        return self._cells.get(tuple(key), self._initial)

    def occupancy(self, key) -> float:
        """P(v | z_1:t)，未观测体素返回先验"""
        value = self._cells.get(tuple(key))
        if value is None:
            return self.grid.prior
        return float(logistic(value))

    def items(self) -> Iterator[Tuple[VoxelKey, float]]:
        for key, value in self._cells.items():
            yield VoxelKey(*key), value

    def to_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        """导出 (N, 3) 键数组与 (N,) 对数几率数组"""
        n = len(self._cells)
        keys = np.fromiter(
            (c for key in self._cells for c in key), dtype=np.int64, count=3 * n
        ).reshape(n, 3)
        values = np.fromiter(self._cells.values(), dtype=np.float64, count=n)
        return keys, values

    def occupied_cells(self, threshold: float = 0.5) -> Iterator[Tuple[VoxelKey, float]]:
        """已观测且占据概率大于阈值的体素，顺序不定"""
        if not (0.0 < threshold < 1.0):
            raise DomainError(f"阈值必须在 (0, 1) 内，收到 {threshold}")
        keys, values = self.to_arrays()
        probs = logistic(values) if len(values) else values
        mask = probs > threshold
        for key, prob in zip(keys[mask].tolist(), np.asarray(probs)[mask].tolist()):
            yield VoxelKey(*key), prob

    def statistics(self, threshold: float = 0.5) -> Dict[str, int]:
        """地图统计摘要"""
        _, values = self.to_arrays()
        probs = np.asarray(logistic(values)) if len(values) else values
        return {
            "observed": int(len(values)),
            "occupied": int(np.count_nonzero(probs > threshold)),
            "free": int(np.count_nonzero(probs < threshold)),
            "at_lower_bound": int(np.count_nonzero(values <= self._lo)),
            "at_upper_bound": int(np.count_nonzero(values >= self._hi)),
        }

    def copy(self) -> "OccupancyMap":
        clone = OccupancyMap(self.grid, self.clamp_min, self.clamp_max)
        clone._cells = dict(self._cells)
        return clone

    # ========== 持久化 ==========

    def save(self, path: Union[str, Path]) -> Path:
        """保存为 .npz 快照"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        keys, values = self.to_arrays()
        meta = np.array([self.grid.voxel_size, self.grid.prior, self.clamp_min, self.clamp_max])
        with open(path, "wb") as f:
            np.savez_compressed(f, keys=keys, log_odds=values, meta=meta)
        logger.info(f"[占据地图] 快照已保存: {path}（{len(values)} 个体素）")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "OccupancyMap":
        """读取 save() 写出的快照"""
        with np.load(Path(path)) as data:
            voxel_size, prior, clamp_min, clamp_max = data["meta"].tolist()
            occupancy_map = cls(GridConfig(voxel_size=voxel_size, prior=prior), clamp_min, clamp_max)
            occupancy_map.set_log_odds_many(data["keys"], data["log_odds"])
        logger.info(f"[占据地图] 快照已加载: {path}（{len(occupancy_map)} 个体素）")
        return occupancy_map
