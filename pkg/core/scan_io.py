# -*- coding: utf-8 -*-
"""
扫描读写
- Velodyne 二进制点云（小端 float32 ×4：x, y, z, 反射率，无文件头）
- 位姿文本（每行 12 个实数，按行展开的 3×4 [R|t]）
- 占据体素导出（ASCII PLY / CSV）
"""
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DomainError, PoseParseError, PoseValidationError, ScanFormatError
from .log import logger
from .occupancy_map import OccupancyMap, voxel_center
from .scan_integrator import Scan

PathLike = Union[str, Path]

RECORD_BYTES = 16
POSE_TOLERANCE = 1e-6
DEFAULT_MAX_RANGE = 80.0

CSV_HEADER = "i,j,k,x,y,z,occupancy"


class ExportFormat(str, Enum):
    PLY = "ply"
    CSV = "csv"


@dataclass
class RawScan:
    """传感器坐标系下的原始点云

    属性:
        points: (N, 4) x, y, z（米）与反射率
        skipped: 读取时因非有限值跳过的记录数
    """

    points: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.points)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def reflectance(self) -> np.ndarray:
        return self.points[:, 3]


@dataclass(frozen=True)
class PoseRecord:
    """刚体位姿 p_world = R·p + t"""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3) or translation.shape != (3,):
            raise DomainError("位姿需要 3×3 旋转矩阵与三维平移")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise DomainError("位姿必须为有限值")
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)

    @classmethod
    def identity(cls) -> "PoseRecord":
        return cls(np.eye(3), np.zeros(3))

    def validate(self, tolerance: float = POSE_TOLERANCE, line_number: Optional[int] = None) -> None:
        """检查 ‖RᵀR − I‖ 与 det(R) = +1"""
        deviation = float(np.linalg.norm(self.rotation.T @ self.rotation - np.eye(3)))
        if deviation > tolerance:
            raise PoseValidationError("旋转矩阵不正交", deviation, line_number)
        det_error = abs(float(np.linalg.det(self.rotation)) - 1.0)
        if det_error > tolerance:
            raise PoseValidationError("旋转矩阵行列式不为 +1", det_error, line_number)

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64).reshape(-1, 3) @ self.rotation.T + self.translation


def read_velodyne_bin(path: PathLike) -> RawScan:
    """读取 Velodyne 二进制点云，保持记录顺序

    Args:
        path: .bin 文件路径

    Returns:
        原始点云；含非有限值的记录被跳过并计数
    """
    path = Path(path)
    data = path.read_bytes()
    usable = len(data) // RECORD_BYTES * RECORD_BYTES
    if usable != len(data):
        raise ScanFormatError(f"{path.name} 长度 {len(data)} 不是 {RECORD_BYTES} 的整数倍", usable)
    points = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(np.float64)
    finite = np.all(np.isfinite(points), axis=1)
    skipped = int(points.shape[0] - np.count_nonzero(finite))
    if skipped:
        logger.warning(f"[扫描读写] {path.name}: 跳过 {skipped} 条含非有限值的记录")
        points = points[finite]
    logger.debug(f"[扫描读写] 读取 {path.name}: {len(points)} 个点")
    return RawScan(points, skipped)


def write_velodyne_bin(points: np.ndarray, path: PathLike) -> Path:
    """写出 Velodyne 二进制点云；输入 (N, 3) 时反射率补 0"""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] not in (3, 4):
        raise DomainError(f"点云形状必须为 (N, 3) 或 (N, 4)，收到 {points.shape}")
    if points.shape[1] == 3:
        points = np.hstack([points, np.zeros((len(points), 1))])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(points.astype("<f4").tobytes())
    return path


def read_poses(path: PathLike, tolerance: float = POSE_TOLERANCE) -> List[PoseRecord]:
    """读取位姿文件，每个非空行一个位姿

    Args:
        path: 位姿文本路径
        tolerance: 正交性与行列式容差

    Returns:
        按文件顺序排列的位姿
    """
    poses = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 12:
                raise PoseParseError(f"需要 12 个数值，实际 {len(tokens)} 个", line_number)
            try:
                values = np.array([float(t) for t in tokens]).reshape(3, 4)
            except ValueError as e:
                raise PoseParseError(f"无法解析数值: {e}", line_number) from e
            try:
                pose = PoseRecord(values[:, :3], values[:, 3])
            except DomainError as e:
                raise PoseParseError(str(e), line_number) from e
            pose.validate(tolerance, line_number)
            poses.append(pose)
    logger.info(f"[扫描读写] 读取位姿 {len(poses)} 条: {path}")
    return poses


def to_world_scan(raw: RawScan, pose: PoseRecord, max_range: float = DEFAULT_MAX_RANGE) -> Scan:
    """传感器坐标系 → 世界坐标系

    超过 max_range 的点沿射线方向截断到 max_range，并标记为非撞击。
    """
    if not (math.isfinite(max_range) and max_range > 0):
        raise DomainError(f"max_range 必须为正，收到 {max_range}")
    xyz = raw.xyz
    norms = np.linalg.norm(xyz, axis=1)
    far = norms > max_range
    scale = np.ones_like(norms)
    scale[far] = max_range / norms[far]
    world = pose.transform(xyz * scale[:, None])
    return Scan(origin=pose.translation.copy(), points=world, hit_flags=~far)


def list_frame_files(input_dir: PathLike) -> List[Path]:
    """目录下按文件名排序的 .bin 帧"""
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise FileNotFoundError(f"输入目录不存在: {input_dir}")
    return sorted(input_dir.glob("*.bin"))


def parse_frame_range(text: str) -> Tuple[int, int]:
    """解析 "A..B"（两端都包含）"""
    match = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if not match:
        raise DomainError(f"帧范围格式应为 A..B，收到 {text!r}")
    first, last = int(match.group(1)), int(match.group(2))
    if first > last:
        raise DomainError(f"帧范围起点大于终点: {text!r}")
    return first, last


def select_frames(
    files: Sequence[Path], frames: Optional[Tuple[int, int]] = None
) -> List[Tuple[int, Path]]:
    """按帧号范围挑选帧，返回 (帧号, 路径)；帧号即排序后的位置"""
    indexed = list(enumerate(files))
    if frames is None:
        return indexed
    first, last = frames
    if last >= len(files):
        raise DomainError(f"帧范围 {first}..{last} 超出可用帧数 {len(files)}")
    return indexed[first:last + 1]


def _occupied_rows(occupancy_map: OccupancyMap, threshold: float):
    rows = sorted(occupancy_map.occupied_cells(threshold))
    omega = occupancy_map.voxel_size
    for key, prob in rows:
        x, y, z = voxel_center(key, omega).tolist()
        yield key, x, y, z, prob


def export_map(occupancy_map: OccupancyMap, threshold: float, fmt: ExportFormat, path: PathLike) -> int:
    """导出占据概率大于阈值的体素中心，按 (i, j, k) 排序

    Args:
        occupancy_map: 地图
        threshold: 占据阈值，(0, 1)
        fmt: ply 或 csv
        path: 输出路径

    Returns:
        写出的体素数
    """
    fmt = ExportFormat(fmt)
    rows = list(_occupied_rows(occupancy_map, threshold))
    lines = []
    if fmt is ExportFormat.CSV:
        lines.append(CSV_HEADER)
        for (i, j, k), x, y, z, prob in rows:
            lines.append(f"{i},{j},{k},{x:.10g},{y:.10g},{z:.10g},{prob:.10g}")
    else:
        lines += [
            "ply",
            "format ascii 1.0",
            f"element vertex {len(rows)}",
            "property float x",
            "property float y",
            "property float z",
            "property float occupancy",
            "end_header",
        ]
        for _, x, y, z, prob in rows:
            lines.append(f"{x:.10g} {y:.10g} {z:.10g} {prob:.10g}")

    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"[扫描读写] 已导出 {len(rows)} 个占据体素 → {path}")
    return len(rows)
