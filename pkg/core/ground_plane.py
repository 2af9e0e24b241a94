# -*- coding: utf-8 -*-
"""
地面平面实验
传感器在无限大水平面上方沿直线移动，按三种策略分别建图，统计评估半径内平面体素的
占据比例与“空洞”（被判为空闲的平面体素）数量。
"""
import math
from typing import Dict, Iterable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .density_validator import angular_lattice, lattice_directions
from .log import logger
from .occupancy_map import GridConfig, OccupancyMap
from .scan_integrator import ClampMode, Scan, ScanIntegrator
from .sensor_model import SensorModelParams, UpdatePolicy


class GroundPlaneSpec(BaseModel):
    """实验场景参数；角分辨率取自 SensorModelParams"""

    model_config = ConfigDict(frozen=True)

    sensor_height: float = Field(1.7, gt=0)
    """传感器离地高度（米）"""
    plane_z: Optional[float] = None
    """平面高度；默认取 0.5ω，使平面落在一层体素的中间而不是体素面上"""
    n_scans: int = Field(5, ge=1)
    pose_spacing: float = Field(1.0, ge=0)
    """相邻扫描沿 x 轴的间距（米）"""
    fov_min_deg: float = Field(-24.8, ge=-90, lt=0)
    fov_max_deg: float = Field(-2.0, lt=0)
    """只取向下的光束，所有射线都打到平面上"""
    eval_radius: float = Field(30.0, gt=0)
    """以位姿连线中点为圆心的水平评估半径（米）"""
    max_range: float = Field(80.0, gt=0)

    @model_validator(mode="after")
    def _check_fov(self) -> "GroundPlaneSpec":
        if self.fov_min_deg > self.fov_max_deg:
            raise ValueError(f"视场下界 {self.fov_min_deg} 大于上界 {self.fov_max_deg}")
        return self

    def resolved_plane_z(self, omega: float) -> float:
        return 0.5 * omega if self.plane_z is None else self.plane_z


class GroundPlaneMetrics(BaseModel):
    """单个策略的平面统计"""

    policy: UpdatePolicy
    plane_voxels: int
    """评估圆内平面层体素总数"""
    observed: int
    occupied: int
    holes: int
    unknown: int
    occupied_fraction: float


def generate_ground_scans(spec: GroundPlaneSpec, params: SensorModelParams) -> List[Scan]:
    """沿 x 轴等间距的若干帧扫描，射线止于平面；超出量程的射线截断为非撞击"""
    angular = params.density.spec
    elevations, azimuths = angular_lattice(
        angular.phi_s, angular.theta_s, math.radians(spec.fov_min_deg), math.radians(spec.fov_max_deg)
    )
    directions = lattice_directions(elevations, azimuths)
    plane_z = spec.resolved_plane_z(params.omega)
    # 向下光束到平面的距离
    ranges = spec.sensor_height / -directions[:, 2]
    hit = ranges <= spec.max_range
    ranges = np.minimum(ranges, spec.max_range)

    scans = []
    offsets = (np.arange(spec.n_scans) - (spec.n_scans - 1) / 2.0) * spec.pose_spacing
    for x in offsets:
        origin = np.array([x, 0.0, plane_z + spec.sensor_height])
        points = origin + ranges[:, None] * directions
        # 数值上保证撞击点正好位于平面
        points[hit, 2] = plane_z
        scans.append(Scan(origin=origin, points=points, hit_flags=hit))
    return scans


def _plane_disc_keys(spec: GroundPlaneSpec, omega: float) -> np.ndarray:
    """评估圆内平面层的所有 (i, j)"""
    extent = int(math.ceil(spec.eval_radius / omega)) + 1
    idx = np.arange(-extent, extent)
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    cx = (ii + 0.5) * omega
    cy = (jj + 0.5) * omega
    inside = cx ** 2 + cy ** 2 <= spec.eval_radius ** 2
    return np.stack([ii[inside], jj[inside]], axis=1)


def plane_metrics(
    occupancy_map: OccupancyMap, policy: UpdatePolicy, spec: GroundPlaneSpec
) -> GroundPlaneMetrics:
    """统计平面层在评估圆内的占据 / 空洞 / 未观测体素"""
    omega = occupancy_map.voxel_size
    k_plane = int(math.floor(spec.resolved_plane_z(omega) / omega))
    disc = _plane_disc_keys(spec, omega)
    keys = np.column_stack([disc, np.full(len(disc), k_plane)])
    observed_mask = np.fromiter((tuple(k) in occupancy_map for k in keys.tolist()), dtype=bool, count=len(keys))
    values = occupancy_map.get_log_odds_many(keys[observed_mask])
    observed = int(np.count_nonzero(observed_mask))
    occupied = int(np.count_nonzero(values > 0.0))
    holes = int(np.count_nonzero(values < 0.0))
    return GroundPlaneMetrics(
        policy=policy,
        plane_voxels=len(keys),
        observed=observed,
        occupied=occupied,
        holes=holes,
        unknown=len(keys) - observed,
        occupied_fraction=occupied / observed if observed else 0.0,
    )


def ground_plane_experiment(
    policies: Iterable[UpdatePolicy],
    params: SensorModelParams,
    spec: Optional[GroundPlaneSpec] = None,
    insert_misses: bool = True,
    clamp_mode: ClampMode = ClampMode.PER_SCAN,
) -> Dict[UpdatePolicy, GroundPlaneMetrics]:
    """对每个策略各建一张地图并统计平面指标

    只更新平面层及其上下各一层体素；各体素的更新互不影响，裁剪不改变平面层的结果。

    Args:
        policies: 参与对比的策略
        params: 传感器模型参数
        spec: 场景参数
        insert_misses: 为 False 时只写命中
        clamp_mode: 截断时机

    Returns:
        策略 → 指标，顺序同输入
    """
    spec = spec or GroundPlaneSpec()
    omega = params.omega
    scans = generate_ground_scans(spec, params)
    k_plane = int(math.floor(spec.resolved_plane_z(omega) / omega))
    z_band = (k_plane - 1, k_plane + 1)

    results: Dict[UpdatePolicy, GroundPlaneMetrics] = {}
    for policy in policies:
        policy = UpdatePolicy(policy)
        occupancy_map = OccupancyMap(GridConfig(voxel_size=omega), params.p_min, params.p_max)
        integrator = ScanIntegrator(
            occupancy_map, policy, params, clamp_mode=clamp_mode, insert_misses=insert_misses, z_band=z_band
        )
        for scan in scans:
            integrator.insert(scan)
        results[policy] = plane_metrics(occupancy_map, policy, spec)
        logger.info(
            f"[地面实验] {policy.value}: 观测 {results[policy].observed}，占据 {results[policy].occupied}，"
            f"空洞 {results[policy].holes}"
        )
    return results


def hole_count_gap(first: GroundPlaneMetrics, second: GroundPlaneMetrics) -> float:
    """两个策略空洞数的相对差 |a - b| / max(a, b)，都为 0 时返回 0"""
    largest = max(first.holes, second.holes)
    if largest == 0:
        return 0.0
    return abs(first.holes - second.holes) / largest
