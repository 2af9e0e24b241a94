# -*- coding: utf-8 -*-
"""
运行配置
传感器预设保存在 default_config/*.json（角度单位为度），命令行参数覆盖预设。
"""
import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .density_model import DensityParams, SensorAngularSpec
from .errors import ConfigError
from .log import logger
from .occupancy_map import GridConfig, OccupancyMap
from .scan_integrator import ClampMode
from .scan_io import ExportFormat
from .sensor_model import SensorModelParams, UpdatePolicy

PRESET_DIR = Path(__file__).resolve().parent.parent / "default_config"
DEFAULT_PRESET = "hdl64e"

PRESET_KEYS = {
    "voxel_size",
    "prior",
    "p_occ",
    "p_free",
    "clamp_min",
    "clamp_max",
    "gamma",
    "vres_deg",
    "hres_deg",
    "max_range",
}


def load_preset(name: Union[str, Path] = DEFAULT_PRESET) -> Dict[str, float]:
    """读取传感器预设

    Args:
        name: default_config/ 下的预设名（不含扩展名）或 JSON 文件路径

    Returns:
        预设字典
    """
    path = Path(name)
    if path.suffix != ".json":
        path = PRESET_DIR / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"预设文件不存在: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            values = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"预设文件不是合法 JSON: {path}: {e}") from e
    unknown = set(values) - PRESET_KEYS
    if unknown:
        raise ConfigError(f"预设 {path.name} 含未知字段: {sorted(unknown)}")
    missing = PRESET_KEYS - set(values)
    if missing:
        raise ConfigError(f"预设 {path.name} 缺少字段: {sorted(missing)}")
    logger.debug(f"[配置] 已加载预设 {path}")
    return values


def build_sensor_params(
    voxel_size: float,
    p_occ: float,
    p_free: float,
    clamp_min: float,
    clamp_max: float,
    gamma: float,
    vres_deg: float,
    hres_deg: float,
) -> SensorModelParams:
    """由命令行/预设的扁平参数构造 SensorModelParams，校验失败抛 ConfigError"""
    try:
        return SensorModelParams(
            p_occ=p_occ,
            p_free=p_free,
            p_min=clamp_min,
            p_max=clamp_max,
            density=DensityParams(
                spec=SensorAngularSpec.from_degrees(vres_deg, hres_deg),
                omega=voxel_size,
                gamma=gamma,
            ),
        )
    except ValidationError as e:
        raise ConfigError(f"传感器参数非法: {e}") from e


class RunConfig(BaseModel):
    """build-map / export 的完整运行配置"""

    model_config = ConfigDict(frozen=True)

    grid: GridConfig = Field(default_factory=GridConfig)
    sensor: SensorModelParams = Field(default_factory=SensorModelParams)
    policy: UpdatePolicy = UpdatePolicy.METHOD2
    clamp_mode: ClampMode = ClampMode.PER_SCAN
    input_dir: Optional[Path] = None
    poses: Optional[Path] = None
    frames: Optional[Tuple[int, int]] = None
    """闭区间帧号范围"""
    max_range: float = Field(80.0, gt=0)
    pose_tolerance: float = Field(1e-6, gt=0)
    output: Optional[Path] = None
    format: ExportFormat = ExportFormat.PLY
    threshold: float = Field(0.5, gt=0, lt=1)
    save_map: Optional[Path] = None
    batch_size: int = Field(16384, gt=0)
    weight_lut: bool = False

    @model_validator(mode="after")
    def _check_voxel_size(self) -> "RunConfig":
        if abs(self.grid.voxel_size - self.sensor.omega) > 1e-12:
            raise ValueError(f"栅格体素边长 {self.grid.voxel_size} 与传感器模型 ω={self.sensor.omega} 不一致")
        return self

    def new_map(self) -> OccupancyMap:
        return OccupancyMap(self.grid, self.sensor.p_min, self.sensor.p_max)


def build_run_config(**values: Any) -> RunConfig:
    """构造 RunConfig，校验失败统一转为 ConfigError"""
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"运行配置非法: {e}") from e
