# -*- coding: utf-8 -*-
"""
射线密度验证
在球面合成点云上逐体素统计穿过的射线数，与 α₁/α₂/α₃/ρ 模型曲线对照。
"""
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .density_model import DensityParams, SensorAngularSpec, alpha, rho
from .errors import DomainError
from .log import logger
from .occupancy_map import VoxelKey, pack_keys, unpack_keys, voxel_centers
from .ray_traversal import DEFAULT_BATCH_SIZE, iter_segment_batches
from .scan_integrator import Scan

CURVE_HEADER = ["d", "empirical", "alpha1", "alpha2", "alpha3", "rho"]

# 角度格点计数时吸收浮点误差
_LATTICE_EPS = 1e-6


class SphereScanSpec(BaseModel):
    """球面合成点云参数（角度为弧度）"""

    model_config = ConfigDict(frozen=True)

    radius: float = Field(100.0, gt=0)
    phi_s: float = Field(math.radians(0.4), gt=0)
    theta_s: float = Field(math.radians(0.16), gt=0)
    fov_min: float = Field(-math.pi / 2, ge=-math.pi / 2)
    fov_max: float = Field(math.pi / 2, le=math.pi / 2)
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @model_validator(mode="after")
    def _check_fov(self) -> "SphereScanSpec":
        if self.fov_min > self.fov_max:
            raise ValueError(f"视场下界 {self.fov_min} 大于上界 {self.fov_max}")
        return self

    @classmethod
    def from_degrees(
        cls,
        radius: float,
        vres_deg: float,
        hres_deg: float,
        fov_deg: Tuple[float, float] = (-90.0, 90.0),
        center: Tuple[float, float, float] = (0.0, 0.0, 0.0),
    ) -> "SphereScanSpec":
        return cls(
            radius=radius,
            phi_s=math.radians(vres_deg),
            theta_s=math.radians(hres_deg),
            fov_min=math.radians(fov_deg[0]),
            fov_max=math.radians(fov_deg[1]),
            center=center,
        )

    @property
    def angular_spec(self) -> SensorAngularSpec:
        return SensorAngularSpec(phi_s=self.phi_s, theta_s=self.theta_s)


def angular_lattice(phi_s: float, theta_s: float, fov_min: float, fov_max: float) -> Tuple[np.ndarray, np.ndarray]:
    """扫描角度格点

    俯仰角从 fov_min 起按 φ_s 步进，包含两端；方位角覆盖一整圈 [0, 2π)，步长 θ_s。

    Returns:
        (俯仰角数组, 方位角数组)，单位弧度
    """
    n_elevation = int(math.floor((fov_max - fov_min) / phi_s + _LATTICE_EPS)) + 1
    n_azimuth = int(math.floor(2.0 * math.pi / theta_s + _LATTICE_EPS))
    elevations = fov_min + np.arange(n_elevation) * phi_s
    azimuths = np.arange(n_azimuth) * theta_s
    return elevations, azimuths


def lattice_directions(elevations: np.ndarray, azimuths: np.ndarray) -> np.ndarray:
    """(俯仰, 方位) 格点 → (N, 3) 单位方向，俯仰为外层循环"""
    el, az = np.meshgrid(elevations, azimuths, indexing="ij")
    el = el.reshape(-1)
    az = az.reshape(-1)
    cos_el = np.cos(el)
    return np.stack([cos_el * np.cos(az), cos_el * np.sin(az), np.sin(el)], axis=1)


def generate_sphere_scan(spec: SphereScanSpec) -> Scan:
    """球心发出、落在半径 radius 球面上的合成扫描，全部为撞击"""
    elevations, azimuths = angular_lattice(spec.phi_s, spec.theta_s, spec.fov_min, spec.fov_max)
    center = np.asarray(spec.center, dtype=np.float64)
    points = center + spec.radius * lattice_directions(elevations, azimuths)
    logger.debug(
        f"[密度验证] 球面扫描: {elevations.size} 个俯仰角 × {azimuths.size} 个方位角，半径 {spec.radius} m"
    )
    return Scan(origin=center, points=points, hit_flags=np.ones(len(points), dtype=bool))


@dataclass
class RayCountGrid:
    """每个体素被穿过的射线数（只保存非零体素）

    属性:
        keys: (N, 3) 体素坐标，按打包键升序
        counts: (N,) 射线数
    """

    keys: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return int(self.counts.size)

    def get(self, key) -> int:
        packed = pack_keys(np.asarray(key).reshape(1, 3))
        pos = int(np.searchsorted(self._packed, packed[0]))
        if pos < self._packed.size and self._packed[pos] == packed[0]:
            return int(self.counts[pos])
        return 0

    def as_dict(self) -> Dict[VoxelKey, int]:
        return {VoxelKey(*key): int(c) for key, c in zip(self.keys.tolist(), self.counts.tolist())}

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def _packed(self) -> np.ndarray:
        return pack_keys(self.keys)


def count_rays_per_voxel(scan: Scan, omega: float, batch_size: int = DEFAULT_BATCH_SIZE) -> RayCountGrid:
    """逐射线统计穿过各体素的次数（只计是否穿过，不计弦长）

    弦长为 0 的段（射线只擦过边界或恰好止于入射面）不计入。
    """
    origins = np.broadcast_to(scan.origin, scan.points.shape)
    accumulated_keys: List[np.ndarray] = []
    accumulated_counts: List[np.ndarray] = []
    for batch in iter_segment_batches(origins, scan.points, scan.hit_flags, omega, batch_size, ordered=False):
        packed = pack_keys(batch.keys[batch.chord > 0.0])
        unique, counts = np.unique(packed, return_counts=True)
        accumulated_keys.append(unique)
        accumulated_counts.append(counts)
    if not accumulated_keys:
        return RayCountGrid(np.empty((0, 3), dtype=np.int64), np.empty(0, dtype=np.int64))

    packed = np.concatenate(accumulated_keys)
    counts = np.concatenate(accumulated_counts)
    unique, inverse = np.unique(packed, return_inverse=True)
    totals = np.bincount(inverse.reshape(-1), weights=counts, minlength=unique.size).astype(np.int64)
    logger.debug(f"[密度验证] 统计完成: {unique.size} 个体素，共 {int(totals.sum())} 次穿越")
    return RayCountGrid(unpack_keys(unique), totals)


class DensityBin(NamedTuple):
    d: float
    empirical: float
    alpha1: float
    alpha2: float
    alpha3: float
    rho: float


@dataclass
class DensityCurve:
    """按距离分桶的实测平均射线数与模型曲线"""

    omega: float
    bins: List[DensityBin] = field(default_factory=list)

    def __post_init__(self):
        distances = [b.d for b in self.bins]
        if any(b <= a for a, b in zip(distances, distances[1:])):
            raise DomainError("密度曲线的距离必须严格递增")
        if any(b.empirical < 0 for b in self.bins):
            raise DomainError("实测射线数不能为负")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(b, name) for b in self.bins], dtype=np.float64)


def density_validation_curve(
    spec: SphereScanSpec,
    omega: float,
    bin_width: Optional[float] = None,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> DensityCurve:
    """球面扫描实测曲线与模型对照

    体素按中心到球心的距离分桶（默认桶宽 ω/2），对被至少一条射线穿过的体素求平均。
    只输出模型有定义（桶中心大于 √3ω/2）且整桶位于球内完整穿越区
    （上沿不超过 radius − √3ω/2）的桶。

    Args:
        spec: 球面扫描参数
        omega: 体素边长
        bin_width: 距离桶宽

    Returns:
        密度曲线
    """
    if bin_width is None:
        bin_width = omega / 2.0
    if not (bin_width > 0):
        raise DomainError(f"桶宽必须为正，收到 {bin_width}")
    params = DensityParams(spec=spec.angular_spec, omega=omega)

    scan = generate_sphere_scan(spec)
    grid = count_rays_per_voxel(scan, omega, batch_size)
    centers = voxel_centers(grid.keys, omega)
    distances = np.linalg.norm(centers - np.asarray(spec.center), axis=1)

    bin_index = np.floor(distances / bin_width).astype(np.int64)
    n_bins = int(bin_index.max()) + 1 if bin_index.size else 0
    sums = np.bincount(bin_index, weights=grid.counts, minlength=n_bins)
    sizes = np.bincount(bin_index, minlength=n_bins)

    half_diagonal = math.sqrt(3.0) * omega / 2.0
    bins = []
    for index in range(n_bins):
        center_d = (index + 0.5) * bin_width
        upper = (index + 1) * bin_width
        if sizes[index] == 0 or center_d <= params.validity_threshold or upper > spec.radius - half_diagonal:
            continue
        bins.append(
            DensityBin(
                d=center_d,
                empirical=float(sums[index] / sizes[index]),
                alpha1=alpha(1, center_d, params),
                alpha2=alpha(2, center_d, params),
                alpha3=alpha(3, center_d, params),
                rho=rho(center_d, params),
            )
        )
    logger.info(f"[密度验证] ω={omega}: {len(bins)} 个距离桶，{len(grid)} 个体素")
    return DensityCurve(omega=omega, bins=bins)


def write_density_curve(curve: DensityCurve, path: Union[str, Path]) -> Path:
    """写出 CSV，表头 d,empirical,alpha1,alpha2,alpha3,rho"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for b in curve.bins:
            writer.writerow([f"{value:.10g}" for value in b])
    return path


def read_density_curve(path: Union[str, Path], omega: float) -> DensityCurve:
    """读取 write_density_curve 写出的 CSV"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CURVE_HEADER:
            raise DomainError(f"密度曲线表头不符: {header}")
        bins = [DensityBin(*(float(v) for v in row)) for row in reader if row]
    return DensityCurve(omega=omega, bins=bins)
