# -*- coding: utf-8 -*-
"""
射线体素遍历
从传感器原点走到射线终点，逐体素给出精确弦长 λ；命中体素额外给出 λ′（撞击点到出射面的距离）

实现为多条射线同步推进的参数化网格步进（t-max 逐轴比较），单条射线接口复用同一内核。
"""
import math
from dataclasses import dataclass
from typing import Iterator, List, Optional

import numpy as np

from .errors import DomainError
from .occupancy_map import VoxelKey

# 几何容差（米）
GEOMETRY_EPS = 1e-9

DEFAULT_BATCH_SIZE = 16384


@dataclass(frozen=True)
class Ray:
    """单条测量射线"""

    origin: tuple
    endpoint: tuple
    is_hit: bool = True

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        e = np.asarray(self.endpoint, dtype=np.float64)
        if o.shape != (3,) or e.shape != (3,):
            raise DomainError("射线起点与终点必须是三维点")
        if not (np.all(np.isfinite(o)) and np.all(np.isfinite(e))):
            raise DomainError("射线起点与终点必须为有限值")
        if np.array_equal(o, e):
            raise DomainError("零长度射线")

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.endpoint, self.origin, dtype=np.float64)))


@dataclass(frozen=True)
class TraversalSegment:
    """射线在一个体素内的一段"""

    key: VoxelKey
    chord: float
    """体素内弦长 λ（米）"""
    chord_prime: Optional[float] = None
    """仅命中体素：撞击点沿射线方向到出射面的距离 λ′（米）"""
    terminal_hit: bool = False


@dataclass
class SegmentBatch:
    """一批射线的遍历结果（扁平数组）

    属性:
        ray_index: (M,) 所属射线序号
        step: (M,) 在射线内的顺序号
        keys: (M, 3) 体素坐标
        chord: (M,) 弦长 λ
        chord_prime: (M,) λ′，非命中段为 NaN
        terminal_hit: (M,) 是否为命中体素
    """

    ray_index: np.ndarray
    step: np.ndarray
    keys: np.ndarray
    chord: np.ndarray
    chord_prime: np.ndarray
    terminal_hit: np.ndarray

    def __len__(self) -> int:
        return int(self.chord.size)

    def select(self, mask: np.ndarray) -> "SegmentBatch":
        return SegmentBatch(
            self.ray_index[mask],
            self.step[mask],
            self.keys[mask],
            self.chord[mask],
            self.chord_prime[mask],
            self.terminal_hit[mask],
        )


def _validate_rays(origins: np.ndarray, endpoints: np.ndarray, omega: float):
    if not (math.isfinite(omega) and omega > 0):
        raise DomainError(f"体素边长必须为正的有限值，收到 {omega}")
    if origins.shape != endpoints.shape:
        raise DomainError(f"起点与终点数组形状不一致: {origins.shape} vs {endpoints.shape}")
    if not (np.all(np.isfinite(origins)) and np.all(np.isfinite(endpoints))):
        raise DomainError("射线起点与终点必须为有限值")
    direction = endpoints - origins
    length = np.sqrt(np.einsum("ij,ij->i", direction, direction))
    if np.any(length == 0.0):
        bad = int(np.flatnonzero(length == 0.0)[0])
        raise DomainError(f"零长度射线（序号 {bad}）")
    return direction, length


def _next_boundary_t(keys, step, origins, direction, omega, usable):
    """各轴下一个体素边界对应的参数 t，不可用的轴为 +inf"""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((keys + (step > 0)) * omega - origins) / direction
    return np.where(usable, t, np.inf)


def traverse_batch(
    origins: np.ndarray,
    endpoints: np.ndarray,
    hit_flags: Optional[np.ndarray],
    omega: float,
    ordered: bool = True,
) -> SegmentBatch:
    """多条射线同步遍历

    射线在起点处视为开区间：起点若恰在边界上，按射线方向归入即将进入的体素；
    终点体素按半开区间规则 floor(p/ω) 确定。多轴同时越界（棱/角）时各轴同时步进，
    不产生零弦长的对角邻居。

    Args:
        origins: (N, 3) 射线起点
        endpoints: (N, 3) 射线终点
        hit_flags: (N,) 终点是否为撞击；None 表示全部为撞击
        omega: 体素边长
        ordered: 为 True 时按 (射线, 沿射线顺序) 排序输出

    Returns:
        扁平化的遍历结果
    """
    origins = np.ascontiguousarray(origins, dtype=np.float64).reshape(-1, 3)
    endpoints = np.ascontiguousarray(endpoints, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    if hit_flags is None:
        hit_flags = np.ones(n, dtype=bool)
    hit_flags = np.asarray(hit_flags, dtype=bool).reshape(-1)
    if hit_flags.size != n:
        raise DomainError("hit_flags 长度与射线数不一致")
    if n == 0:
        return SegmentBatch(
            np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, 3), np.int64),
            np.empty(0), np.empty(0), np.empty(0, bool),
        )

    direction, length = _validate_rays(origins, endpoints, omega)
    step = np.sign(direction).astype(np.int64)
    scaled_origin = origins / omega
    start = np.where(direction < 0, np.ceil(scaled_origin) - 1, np.floor(scaled_origin)).astype(np.int64)
    end = np.floor(endpoints / omega).astype(np.int64)
    delta = end - start
    # 舍入导致方向相反时不再步进
    remaining = np.where(delta * step > 0, np.abs(delta), 0)

    key = start.copy()
    t = np.zeros(n)
    pieces_idx: List[np.ndarray] = []
    pieces_keys: List[np.ndarray] = []
    pieces_chord: List[np.ndarray] = []
    pieces_step: List[np.ndarray] = []
    step_count = np.zeros(n, dtype=np.int64)

    idx = np.flatnonzero(remaining.any(axis=1))
    while idx.size:
        k = key[idx]
        rem = remaining[idx]
        st = step[idx]
        tn = _next_boundary_t(k, st, origins[idx], direction[idx], omega, rem > 0)
        tmin = tn.min(axis=1)
        t_prev = t[idx]
        t_new = np.minimum(np.maximum(tmin, t_prev), 1.0)

        pieces_idx.append(idx)
        pieces_keys.append(k)
        pieces_chord.append((t_new - t_prev) * length[idx])
        pieces_step.append(step_count[idx].copy())

        crossed = tn == tmin[:, None]
        key[idx] = k + st * crossed
        remaining[idx] = rem - crossed
        t[idx] = t_new
        step_count[idx] += 1
        idx = idx[remaining[idx].any(axis=1)]

    # 终点所在体素
    all_idx = np.arange(n)
    final_chord = np.maximum(1.0 - t, 0.0) * length
    t_exit = _next_boundary_t(key, step, origins, direction, omega, step != 0).min(axis=1)
    final_prime = np.where(hit_flags, np.maximum(t_exit - 1.0, 0.0) * length, np.nan)

    # 未命中射线恰好止于边界时，末体素弦长为 0，不输出
    keep = hit_flags | (final_chord > 0.0)
    pieces_idx.append(all_idx[keep])
    pieces_keys.append(key[keep])
    pieces_chord.append(final_chord[keep])
    pieces_step.append(step_count[keep])

    ray_index = np.concatenate(pieces_idx)
    steps = np.concatenate(pieces_step)
    keys = np.concatenate(pieces_keys)
    chord = np.concatenate(pieces_chord)
    n_final = int(np.count_nonzero(keep))
    n_inner = chord.size - n_final
    chord_prime = np.concatenate([np.full(n_inner, np.nan), final_prime[keep]])
    terminal = np.concatenate([np.zeros(n_inner, dtype=bool), hit_flags[keep]])

    if ordered:
        order = np.lexsort((steps, ray_index))
        return SegmentBatch(
            ray_index[order], steps[order], keys[order], chord[order], chord_prime[order], terminal[order]
        )
    return SegmentBatch(ray_index, steps, keys, chord, chord_prime, terminal)


def iter_segment_batches(
    origins: np.ndarray,
    endpoints: np.ndarray,
    hit_flags: Optional[np.ndarray],
    omega: float,
    batch_size: int = DEFAULT_BATCH_SIZE,
    ordered: bool = True,
) -> Iterator[SegmentBatch]:
    """按批遍历大规模扫描，ray_index 为全局序号"""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    endpoints = np.asarray(endpoints, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    flags = np.ones(n, dtype=bool) if hit_flags is None else np.asarray(hit_flags, dtype=bool)
    for begin in range(0, n, batch_size):
        stop = min(begin + batch_size, n)
        batch = traverse_batch(origins[begin:stop], endpoints[begin:stop], flags[begin:stop], omega, ordered)
        batch.ray_index += begin
        yield batch


def traverse(ray: Ray, omega: float) -> List[TraversalSegment]:
    """单条射线遍历，按穿越顺序返回各体素段

    Args:
        ray: 测量射线
        omega: 体素边长

    Returns:
        有序的体素段列表；命中射线的最后一段 terminal_hit=True 并带 λ′
    """
    batch = traverse_batch(
        np.asarray([ray.origin]), np.asarray([ray.endpoint]), np.asarray([ray.is_hit]), omega
    )
    segments = []
    for key, chord, prime, terminal in zip(
        batch.keys.tolist(), batch.chord.tolist(), batch.chord_prime.tolist(), batch.terminal_hit.tolist()
    ):
        segments.append(
            TraversalSegment(VoxelKey(*key), chord, prime if terminal else None, bool(terminal))
        )
    return segments


def chord_partition_check(ray: Ray, omega: float) -> float:
    """|Σλ − 射线长度|（不含 λ′）"""
    total = math.fsum(segment.chord for segment in traverse(ray, omega))
    return abs(total - ray.length)
