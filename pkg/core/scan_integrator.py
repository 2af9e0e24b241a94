# -*- coding: utf-8 -*-
"""
扫描融合
把一整帧扫描写入占据地图：遍历每条射线，按体素汇总本帧的全部观测，转成对数几率后累加并截断。

截断模式：
- per_scan：本帧每个体素的对数几率先求和，再一次性累加并截断（默认）
- per_measurement：按射线顺序逐个观测累加，每一步都截断
"""
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .density_model import weight
from .errors import DomainError
from .log import logger
from .occupancy_map import OccupancyMap, log_odds, logistic, pack_keys, unpack_keys, voxel_centers
from .ray_traversal import DEFAULT_BATCH_SIZE, SegmentBatch, iter_segment_batches
from .sensor_model import (
    SensorModelParams,
    UpdatePolicy,
    baseline_reduce,
    hit_probabilities,
    miss_probabilities,
)

WeightFn = Callable[[np.ndarray], np.ndarray]

# 体素中心与传感器原点重合时的最小距离
_MIN_DISTANCE = 1e-12


class ClampMode(str, Enum):
    """截断时机"""

    PER_SCAN = "per_scan"
    PER_MEASUREMENT = "per_measurement"


@dataclass
class Scan:
    """一帧扫描（世界坐标系）

    属性:
        origin: (3,) 传感器原点
        points: (N, 3) 射线终点
        hit_flags: (N,) 终点是否为真实撞击；超量程截断的点为 False
    """

    origin: np.ndarray
    points: np.ndarray
    hit_flags: np.ndarray = field(default=None)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.hit_flags is None:
            self.hit_flags = np.ones(len(self.points), dtype=bool)
        self.hit_flags = np.asarray(self.hit_flags, dtype=bool).reshape(-1)
        if self.hit_flags.size != len(self.points):
            raise DomainError(f"hit_flags 长度 {self.hit_flags.size} 与点数 {len(self.points)} 不一致")
        if not (np.all(np.isfinite(self.origin)) and np.all(np.isfinite(self.points))):
            raise DomainError("扫描原点与点坐标必须为有限值")

    def __len__(self) -> int:
        return len(self.points)


class ScanInsertReport(BaseModel):
    """一次（或多次）扫描融合的统计"""

    rays_processed: int = Field(0, ge=0)
    cells_touched: int = Field(0, ge=0)
    hits: int = Field(0, ge=0)
    """写入的命中观测数"""
    misses: int = Field(0, ge=0)
    """写入的穿越观测数"""
    clamped_cells: int = Field(0, ge=0)
    neutral_skipped: int = Field(0, ge=0)
    """概率恰为 0.5（不含信息）或几何退化而跳过的观测数"""

    def merge(self, other: "ScanInsertReport") -> "ScanInsertReport":
        """逐项相加，cells_touched 与 clamped_cells 为各帧之和"""
        return ScanInsertReport(
            **{name: getattr(self, name) + getattr(other, name) for name in ScanInsertReport.model_fields}
        )


def bayes_posterior(prior: float, observation: float) -> float:
    """静态二值贝叶斯滤波的一步更新（均匀先验 P(v)=0.5）

    Args:
        prior: 当前占据概率
        observation: 本次观测给出的占据概率

    Returns:
        融合后的占据概率
    """
    for name, value in (("prior", prior), ("observation", observation)):
        if not (0.0 < value < 1.0):
            raise DomainError(f"{name} 必须在 (0, 1) 内，收到 {value}")
    odds = ((1.0 - prior) / prior) * ((1.0 - observation) / observation)
    return 1.0 / (1.0 + odds)


def _batch_observations(
    batch: SegmentBatch,
    scan: Scan,
    policy: UpdatePolicy,
    params: SensorModelParams,
    weight_fn: WeightFn,
    insert_misses: bool,
    z_band: Optional[Tuple[int, int]],
):
    """一批遍历段 → (打包键, 对数几率增量, 是否命中, 跳过数)

    基线策略下返回的增量为 NaN，由调用方在整帧归约后再赋值。
    """
    keep = np.ones(len(batch), dtype=bool)
    if not insert_misses:
        keep &= batch.terminal_hit
    if z_band is not None:
        keep &= (batch.keys[:, 2] >= z_band[0]) & (batch.keys[:, 2] <= z_band[1])
    # 零弦长的穿越段不与体素相交
    keep &= batch.terminal_hit | (batch.chord > 0.0)
    batch = batch.select(keep)
    skipped = 0
    if policy is UpdatePolicy.BASELINE:
        return pack_keys(batch.keys), np.full(len(batch), np.nan), batch.terminal_hit, skipped

    hits = batch.terminal_hit
    degenerate = hits & ((batch.chord + np.nan_to_num(batch.chord_prime)) <= 0.0)
    if np.any(degenerate):
        n_bad = int(np.count_nonzero(degenerate))
        logger.warning(f"[扫描融合] {n_bad} 个命中体素 λ+λ′=0，已跳过")
        skipped += n_bad
        batch = batch.select(~degenerate)
        hits = batch.terminal_hit

    distances = np.linalg.norm(voxel_centers(batch.keys, params.omega) - scan.origin, axis=1)
    w = np.asarray(weight_fn(np.maximum(distances, _MIN_DISTANCE)), dtype=np.float64)
    probabilities = np.empty(len(batch))
    if np.any(hits):
        probabilities[hits] = hit_probabilities(
            policy, batch.chord[hits], batch.chord_prime[hits], w[hits], params
        )
    if not np.all(hits):
        probabilities[~hits] = miss_probabilities(policy, batch.chord[~hits], w[~hits], params)
    deltas = np.asarray(log_odds(probabilities), dtype=np.float64).reshape(-1)

    informative = deltas != 0.0
    skipped += int(np.count_nonzero(~informative))
    return pack_keys(batch.keys[informative]), deltas[informative], hits[informative], skipped


def _clip_to_z_band(
    origin: np.ndarray, points: np.ndarray, flags: np.ndarray, z_band: Tuple[int, int], omega: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """把射线裁剪到 z ∈ [k_min·ω, (k_max+1)·ω] 的板层内

    带内体素的弦长不变；终点在带外的射线改为非撞击。与板层不相交的射线被丢弃。
    """
    z_lo = z_band[0] * omega
    z_hi = (z_band[1] + 1) * omega
    direction = points - origin
    dz = direction[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t_a = (z_lo - origin[2]) / dz
        t_b = (z_hi - origin[2]) / dz
    inside_now = (origin[2] >= z_lo) & (origin[2] <= z_hi)
    flat = dz == 0.0
    t_enter = np.where(flat, np.where(inside_now, 0.0, np.inf), np.minimum(t_a, t_b))
    t_exit = np.where(flat, np.where(inside_now, np.inf, -np.inf), np.maximum(t_a, t_b))
    t_enter = np.maximum(t_enter, 0.0)
    t_exit_clipped = np.minimum(t_exit, 1.0)
    crosses = t_exit_clipped > t_enter
    new_origins = origin + t_enter[:, None] * direction
    new_points = origin + t_exit_clipped[:, None] * direction
    # 未被裁剪的终点保持原值
    untouched_end = t_exit >= 1.0
    new_points[untouched_end] = points[untouched_end]
    new_flags = flags & untouched_end
    return new_origins[crosses], new_points[crosses], new_flags[crosses]


def _reduce_sum(packed: np.ndarray, deltas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    unique, inverse = np.unique(packed, return_inverse=True)
    return unique, np.bincount(inverse.reshape(-1), weights=deltas, minlength=unique.size)


def _fold_clamped(
    occupancy_map: OccupancyMap, packed: np.ndarray, deltas: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """按输入顺序逐个观测累加并截断，返回 (涉及的体素, 触发过截断的体素)"""
    lo, hi = occupancy_map.log_odds_bounds
    order = np.argsort(packed, kind="stable")
    sorted_keys = packed[order]
    unique, starts, inverse = np.unique(sorted_keys, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    rank = np.arange(sorted_keys.size) - starts[inverse]

    keys3 = unpack_keys(unique)
    values = occupancy_map.get_log_odds_many(keys3)
    clamped = np.zeros(unique.size, dtype=bool)

    # 同一层级内每个体素只出现一次
    by_rank = np.argsort(rank, kind="stable")
    level_bounds = np.searchsorted(rank[by_rank], np.arange(int(rank.max()) + 2))
    for level in range(level_bounds.size - 1):
        sel = by_rank[level_bounds[level]:level_bounds[level + 1]]
        cells = inverse[sel]
        raw = values[cells] + deltas[order[sel]]
        new = np.clip(raw, lo, hi)
        clamped[cells] |= raw != new
        values[cells] = new

    occupancy_map.set_log_odds_many(keys3, values)
    return unique, unique[clamped]


def insert_scan(
    occupancy_map: OccupancyMap,
    scan: Scan,
    policy: UpdatePolicy,
    params: SensorModelParams,
    clamp_mode: ClampMode = ClampMode.PER_SCAN,
    insert_misses: bool = True,
    z_band: Optional[Tuple[int, int]] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
    weight_fn: Optional[WeightFn] = None,
) -> ScanInsertReport:
    """把一帧扫描融合进地图

    Args:
        occupancy_map: 目标地图，体素边长须与 params 一致
        scan: 世界坐标系下的扫描
        policy: 更新策略
        params: 传感器模型参数
        clamp_mode: 截断时机
        insert_misses: 为 False 时只写命中体素
        z_band: 仅更新 k ∈ [k_min, k_max] 的体素；体素之间相互独立，裁剪不影响保留体素的结果
        batch_size: 每批遍历的射线数
        weight_fn: 距离 → 权重，默认直接计算 w(d)，可传入 WeightLookupTable

    Returns:
        本帧统计
    """
    policy = UpdatePolicy(policy)
    clamp_mode = ClampMode(clamp_mode)
    if not math.isclose(occupancy_map.voxel_size, params.omega, rel_tol=0.0, abs_tol=1e-12):
        raise DomainError(f"地图体素边长 {occupancy_map.voxel_size} 与模型参数 ω={params.omega} 不一致")
    if batch_size <= 0:
        raise DomainError(f"batch_size 必须为正，收到 {batch_size}")
    if z_band is not None and z_band[0] > z_band[1]:
        raise DomainError(f"z_band 下界大于上界: {z_band}")
    if len(scan) == 0:
        return ScanInsertReport()

    lengths = np.linalg.norm(scan.points - scan.origin, axis=1)
    valid = lengths > 0.0
    if not np.all(valid):
        logger.warning(f"[扫描融合] 跳过 {int(np.count_nonzero(~valid))} 条零长度射线")
    points = scan.points[valid]
    flags = scan.hit_flags[valid]
    n_rays = len(points)
    if n_rays == 0:
        return ScanInsertReport()

    if weight_fn is None:
        density = params.density

        def weight_fn(d):
            return weight(d, density)

    origins = np.broadcast_to(scan.origin, points.shape)
    if z_band is not None:
        origins, points, flags = _clip_to_z_band(scan.origin, points, flags, z_band, params.omega)
        same = np.all(origins == points, axis=1)
        origins, points, flags = origins[~same], points[~same], flags[~same]
    ordered = clamp_mode is ClampMode.PER_MEASUREMENT and policy is not UpdatePolicy.BASELINE
    batches = iter_segment_batches(origins, points, flags, params.omega, batch_size, ordered=ordered)

    skipped = 0
    hits = misses = 0
    touched: List[np.ndarray] = []
    clamped: List[np.ndarray] = []
    partial_keys: List[np.ndarray] = []
    partial_values: List[np.ndarray] = []

    for batch in batches:
        packed, deltas, is_hit, n_skipped = _batch_observations(
            batch, scan, policy, params, weight_fn, insert_misses, z_band
        )
        skipped += n_skipped
        if packed.size == 0:
            continue
        if policy is UpdatePolicy.BASELINE:
            unique, any_hit = baseline_reduce(packed, is_hit)
            partial_keys.append(unique)
            partial_values.append(any_hit.astype(np.float64))
        elif ordered:
            hits += int(np.count_nonzero(is_hit))
            misses += int(is_hit.size - np.count_nonzero(is_hit))
            cells, cells_clamped = _fold_clamped(occupancy_map, packed, deltas)
            touched.append(cells)
            clamped.append(cells_clamped)
        else:
            hits += int(np.count_nonzero(is_hit))
            misses += int(is_hit.size - np.count_nonzero(is_hit))
            unique, sums = _reduce_sum(packed, deltas)
            partial_keys.append(unique)
            partial_values.append(sums)
        logger.debug(f"[扫描融合] 批次 {len(batch)} 段，有效观测 {packed.size}")

    if partial_keys:
        keys_all = np.concatenate(partial_keys)
        values_all = np.concatenate(partial_values)
        if policy is UpdatePolicy.BASELINE:
            unique, any_hit = baseline_reduce(keys_all, values_all > 0.0)
            hits = int(np.count_nonzero(any_hit))
            misses = int(unique.size - hits)
            sums = np.where(any_hit, log_odds(params.p_occ), log_odds(params.p_free))
        else:
            unique, sums = _reduce_sum(keys_all, values_all)
        n_clamped = occupancy_map.apply_log_odds_batch(unpack_keys(unique), sums)
        cells_touched = int(unique.size)
    else:
        cells_touched = int(np.unique(np.concatenate(touched)).size) if touched else 0
        n_clamped = int(np.unique(np.concatenate(clamped)).size) if clamped else 0

    report = ScanInsertReport(
        rays_processed=n_rays,
        cells_touched=cells_touched,
        hits=hits,
        misses=misses,
        clamped_cells=n_clamped,
        neutral_skipped=skipped,
    )
    logger.debug(f"[扫描融合] {policy.value} 完成: {report.model_dump()}")
    return report


class ScanIntegrator:
    """按固定策略依次融合多帧扫描，并累计统计

    同一张地图同一时刻只允许一个融合过程写入。
    """

    def __init__(
        self,
        occupancy_map: OccupancyMap,
        policy: UpdatePolicy,
        params: SensorModelParams,
        clamp_mode: ClampMode = ClampMode.PER_SCAN,
        insert_misses: bool = True,
        z_band: Optional[Tuple[int, int]] = None,
        batch_size: int = DEFAULT_BATCH_SIZE,
        weight_fn: Optional[WeightFn] = None,
    ):
        self.map = occupancy_map
        self.policy = UpdatePolicy(policy)
        self.params = params
        self.clamp_mode = ClampMode(clamp_mode)
        self.insert_misses = insert_misses
        self.z_band = z_band
        self.batch_size = batch_size
        self.weight_fn = weight_fn
        self.scans_inserted = 0
        self.total = ScanInsertReport()

    def insert(self, scan: Scan) -> ScanInsertReport:
        report = insert_scan(
            self.map,
            scan,
            self.policy,
            self.params,
            clamp_mode=self.clamp_mode,
            insert_misses=self.insert_misses,
            z_band=self.z_band,
            batch_size=self.batch_size,
            weight_fn=self.weight_fn,
        )
        self.scans_inserted += 1
        self.total = self.total.merge(report)
        return report


def fold_posterior(observations) -> float:
    """从先验 0.5 起依次做贝叶斯更新，作为对数几率累加的参照"""
    p = 0.5
    for observation in observations:
        p = bayes_posterior(p, observation)
    return p


def occupancy_from_log_odds_sum(observations) -> float:
    """对数几率求和后取 logistic，与 fold_posterior 等价（不截断时）"""
    return float(logistic(math.fsum(log_odds(o) for o in observations)))
