# -*- coding: utf-8 -*-
"""
体素占据建图命令行入口
子命令：
- build-map：按帧读取 Velodyne 点云与位姿，用选定策略融合成占据地图
- validate-density：球面合成扫描验证射线密度模型
- ground-plane：地面平面实验，对比三种策略的空洞数量
- export：把保存的地图快照导出为 PLY / CSV
- weight-curve：输出不同 γ 下的 ρ(d) 与 w(d)

进度与日志写到 stderr，机器可读的统计写到 stdout。
"""
import argparse
import functools
import json
import math
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from core.config import DEFAULT_PRESET, build_run_config, build_sensor_params, load_preset
from core.density_model import WeightLookupTable, rho, weight_curves, weight_dropoff_distance
from core.density_validator import SphereScanSpec, density_validation_curve, write_density_curve
from core.errors import ConfigError
from core.ground_plane import GroundPlaneSpec, ground_plane_experiment, hole_count_gap
from core.log import logger, setup_logger
from core.occupancy_map import GridConfig, OccupancyMap
from core.scan_integrator import ClampMode, ScanIntegrator
from core.scan_io import (
    ExportFormat,
    export_map,
    list_frame_files,
    parse_frame_range,
    read_poses,
    read_velodyne_bin,
    select_frames,
    to_world_scan,
)
from core.sensor_model import UpdatePolicy


def error_handler(func):
    """子命令错误处理：记录异常并返回退出码 1"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except Exception as e:
            logger.error(f"[命令行] {func.__name__} 执行失败: {e}", exc_info=True)
            return 1

    return wrapper


def _emit(record: dict) -> None:
    print(json.dumps(record, ensure_ascii=False), flush=True)


def _sensor_params(args: argparse.Namespace, voxel_size: Optional[float] = None):
    return build_sensor_params(
        voxel_size=args.voxel_size if voxel_size is None else voxel_size,
        p_occ=args.p_occ,
        p_free=args.p_free,
        clamp_min=args.clamp_min,
        clamp_max=args.clamp_max,
        gamma=args.gamma,
        vres_deg=args.vres_deg,
        hres_deg=args.hres_deg,
    )


# ========== 子命令 ==========


@error_handler
def cmd_build_map(args: argparse.Namespace) -> int:
    """逐帧融合扫描，输出每帧与总计统计"""
    config = build_run_config(
        grid=GridConfig(voxel_size=args.voxel_size, prior=args.prior),
        sensor=_sensor_params(args),
        policy=args.method,
        clamp_mode=args.clamp_mode,
        input_dir=args.input,
        poses=args.poses,
        frames=args.frames,
        max_range=args.max_range,
        pose_tolerance=args.pose_tolerance,
        output=args.output,
        format=args.format,
        threshold=args.threshold,
        save_map=args.save_map,
        batch_size=args.batch_size,
        weight_lut=args.weight_lut,
    )
    files = list_frame_files(config.input_dir)
    if not files:
        raise ConfigError(f"输入目录中没有 .bin 帧: {config.input_dir}")
    frames = select_frames(files, config.frames)
    poses = read_poses(config.poses, config.pose_tolerance)
    needed = frames[-1][0] + 1
    if len(poses) < needed:
        raise ConfigError(f"位姿数 {len(poses)} 少于所需帧数 {needed}")

    weight_fn = None
    if config.weight_lut:
        weight_fn = WeightLookupTable(config.sensor.density, max_distance=config.max_range + 2 * config.grid.voxel_size)
    occupancy_map = config.new_map()
    integrator = ScanIntegrator(
        occupancy_map,
        config.policy,
        config.sensor,
        clamp_mode=config.clamp_mode,
        batch_size=config.batch_size,
        weight_fn=weight_fn,
    )
    logger.info(f"[命令行] 开始建图: {len(frames)} 帧，策略 {config.policy.value}，截断 {config.clamp_mode.value}")
    started = time.perf_counter()
    for index, path in frames:
        raw = read_velodyne_bin(path)
        scan = to_world_scan(raw, poses[index], config.max_range)
        report = integrator.insert(scan)
        _emit({"frame": index, "file": path.name, **report.model_dump()})
        logger.info(f"[命令行] 帧 {index} 完成，地图体素 {len(occupancy_map)}")

    stats = occupancy_map.statistics(config.threshold)
    _emit({
        "total": integrator.total.model_dump(),
        "scans": integrator.scans_inserted,
        "map": stats,
        "seconds": round(time.perf_counter() - started, 3),
    })
    if config.save_map:
        occupancy_map.save(config.save_map)
    if config.output:
        export_map(occupancy_map, config.threshold, config.format, config.output)
    return 0


@error_handler
def cmd_validate_density(args: argparse.Namespace) -> int:
    """每个 ω 输出一条密度曲线 CSV"""
    omegas = args.voxel_size or [0.8, 0.6]
    output_dir = Path(args.output)
    for omega in omegas:
        if not (math.isfinite(omega) and omega > 0):
            raise ConfigError(f"体素边长必须为正，收到 {omega}")
        spec = SphereScanSpec.from_degrees(
            radius=args.radius,
            vres_deg=args.vres_deg,
            hres_deg=args.hres_deg,
            fov_deg=(args.fov_min, args.fov_max),
        )
        started = time.perf_counter()
        curve = density_validation_curve(spec, omega, args.bin_width, args.batch_size)
        elapsed = time.perf_counter() - started
        logger.info(f"[命令行] ω={omega:g} 密度曲线耗时 {elapsed:.1f} s")
        path = write_density_curve(curve, output_dir / f"density_omega_{omega:g}.csv")
        _emit({"omega": omega, "bins": len(curve.bins), "path": str(path), "seconds": round(elapsed, 3)})
    return 0


@error_handler
def cmd_ground_plane(args: argparse.Namespace) -> int:
    """三种策略的地面平面对比表"""
    params = _sensor_params(args)
    spec = GroundPlaneSpec(
        sensor_height=args.sensor_height,
        n_scans=args.scans,
        pose_spacing=args.spacing,
        eval_radius=args.radius,
        max_range=args.max_range,
    )
    results = ground_plane_experiment(
        [UpdatePolicy.BASELINE, UpdatePolicy.METHOD1, UpdatePolicy.METHOD2],
        params,
        spec,
        insert_misses=not args.no_misses,
        clamp_mode=args.clamp_mode,
    )
    print(f"{'policy':<10}{'observed':>10}{'occupied':>10}{'holes':>10}{'unknown':>10}{'occupied_fraction':>20}")
    for policy, m in results.items():
        print(f"{policy.value:<10}{m.observed:>10}{m.occupied:>10}{m.holes:>10}{m.unknown:>10}{m.occupied_fraction:>20.6f}")
    gap = hole_count_gap(results[UpdatePolicy.BASELINE], results[UpdatePolicy.METHOD1])
    logger.info(f"[命令行] 基线与方法一的空洞数相差 {gap:.1%}")
    return 0


@error_handler
def cmd_export(args: argparse.Namespace) -> int:
    occupancy_map = OccupancyMap.load(args.map)
    count = export_map(occupancy_map, args.threshold, args.format, args.output)
    _emit({"exported": count, "path": str(args.output)})
    return 0


@error_handler
def cmd_weight_curve(args: argparse.Namespace) -> int:
    """CSV：d, rho, 各 γ 的 w(d)"""
    params = _sensor_params(args)
    distances = np.arange(args.step, args.max_distance + args.step / 2, args.step)
    distances = distances[distances > params.density.validity_threshold]
    curves = weight_curves(params.density, args.gammas, distances)
    densities = np.asarray(rho(distances, params.density))
    for gamma in args.gammas:
        dropoff = weight_dropoff_distance(params.density.model_copy(update={"gamma": float(gamma)}))
        logger.info(f"[命令行] γ={gamma:g}: 权重在 {dropoff:.3f} m 后小于 1")

    lines = ["d,rho," + ",".join(f"w_{g:g}" for g in args.gammas)]
    for i, d in enumerate(distances.tolist()):
        row = [f"{d:.10g}", f"{densities[i]:.10g}"] + [f"{curves[float(g)][i]:.10g}" for g in args.gammas]
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        _emit({"rows": len(distances), "path": str(args.output)})
    else:
        sys.stdout.write(text)
    return 0


# ========== 参数解析 ==========


def _add_sensor_arguments(parser: argparse.ArgumentParser, preset: dict, with_voxel_size: bool = True) -> None:
    group = parser.add_argument_group("传感器模型")
    if with_voxel_size:
        group.add_argument("--voxel-size", type=float, default=preset["voxel_size"], help="体素边长 ω（米）")
    group.add_argument("--p-occ", type=float, default=preset["p_occ"], help="命中概率")
    group.add_argument("--p-free", type=float, default=preset["p_free"], help="穿越概率")
    group.add_argument("--clamp-min", type=float, default=preset["clamp_min"], help="截断下限")
    group.add_argument("--clamp-max", type=float, default=preset["clamp_max"], help="截断上限")
    group.add_argument("--gamma", type=float, default=preset["gamma"], help="密度缩放系数 γ")
    group.add_argument("--vres-deg", type=float, default=preset["vres_deg"], help="垂直角分辨率（度）")
    group.add_argument("--hres-deg", type=float, default=preset["hres_deg"], help="水平角分辨率（度）")


def build_parser(preset: dict) -> argparse.ArgumentParser:
    formatter = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="voxel-mapper", description="体素占据建图", formatter_class=formatter)
    parser.add_argument("--preset", default=DEFAULT_PRESET, help="default_config/ 下的传感器预设或 JSON 路径")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-map", help="融合 Velodyne 帧生成占据地图", formatter_class=formatter)
    p.add_argument("--input", type=Path, required=True, help=".bin 帧所在目录")
    p.add_argument("--poses", type=Path, required=True, help="位姿文件，每行 12 个实数")
    p.add_argument("--frames", type=parse_frame_range, default=None, help="闭区间帧号范围 A..B")
    p.add_argument("--method", choices=[m.value for m in UpdatePolicy], default=UpdatePolicy.METHOD2.value)
    p.add_argument("--clamp-mode", choices=[m.value for m in ClampMode], default=ClampMode.PER_SCAN.value)
    p.add_argument("--max-range", type=float, default=preset["max_range"], help="量程（米），更远的点截断为非撞击")
    p.add_argument("--pose-tolerance", type=float, default=1e-6, help="旋转矩阵正交性容差")
    p.add_argument("--prior", type=float, default=preset["prior"], help="未观测体素的先验概率")
    p.add_argument("--output", type=Path, default=None, help="导出占据体素的文件")
    p.add_argument("--format", choices=[f.value for f in ExportFormat], default=ExportFormat.PLY.value)
    p.add_argument("--threshold", type=float, default=0.5, help="导出与统计用的占据阈值")
    p.add_argument("--save-map", type=Path, default=None, help="保存 .npz 地图快照")
    p.add_argument("--batch-size", type=int, default=16384, help="每批遍历的射线数")
    p.add_argument("--weight-lut", action="store_true", help="使用量化的权重查找表")
    _add_sensor_arguments(p, preset)
    p.set_defaults(handler=cmd_build_map)

    p = sub.add_parser("validate-density", help="球面扫描验证射线密度模型", formatter_class=formatter)
    p.add_argument("--voxel-size", type=float, nargs="*", default=None, help="体素边长，可给多个；默认 0.8 与 0.6")
    p.add_argument("--radius", type=float, default=100.0, help="球面半径（米）")
    p.add_argument("--bin-width", type=float, default=None, help="距离桶宽，默认 ω/2")
    p.add_argument("--fov-min", type=float, default=-90.0, help="俯仰下界（度）")
    p.add_argument("--fov-max", type=float, default=90.0, help="俯仰上界（度）")
    p.add_argument("--batch-size", type=int, default=16384)
    p.add_argument("--output", type=Path, default=Path("density_curves"), help="CSV 输出目录")
    _add_sensor_arguments(p, preset, with_voxel_size=False)
    p.set_defaults(handler=cmd_validate_density)

    p = sub.add_parser("ground-plane", help="地面平面实验", formatter_class=formatter)
    p.add_argument("--scans", type=int, default=5, help="扫描帧数")
    p.add_argument("--spacing", type=float, default=1.0, help="相邻帧间距（米）")
    p.add_argument("--sensor-height", type=float, default=1.7, help="传感器离地高度（米）")
    p.add_argument("--radius", type=float, default=30.0, help="评估半径（米）")
    p.add_argument("--max-range", type=float, default=preset["max_range"])
    p.add_argument("--clamp-mode", choices=[m.value for m in ClampMode], default=ClampMode.PER_SCAN.value)
    p.add_argument("--no-misses", action="store_true", help="只写命中")
    _add_sensor_arguments(p, preset)
    p.set_defaults(handler=cmd_ground_plane)

    p = sub.add_parser("export", help="导出地图快照中的占据体素", formatter_class=formatter)
    p.add_argument("--map", type=Path, required=True, help="build-map --save-map 写出的 .npz")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--format", choices=[f.value for f in ExportFormat], default=ExportFormat.PLY.value)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(handler=cmd_export)

    p = sub.add_parser("weight-curve", help="输出 ρ(d) 与不同 γ 的 w(d)", formatter_class=formatter)
    p.add_argument("--gammas", type=float, nargs="+", default=[8.0, 16.0, 32.0, 64.0])
    p.add_argument("--max-distance", type=float, default=100.0)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--output", type=Path, default=None, help="CSV 路径，缺省写到 stdout")
    _add_sensor_arguments(p, preset)
    p.set_defaults(handler=cmd_weight_curve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--preset", default=DEFAULT_PRESET)
    pre.add_argument("--log-level", default="INFO")
    known, _ = pre.parse_known_args(argv)
    setup_logger(known.log_level)
    try:
        preset = load_preset(known.preset)
    except ConfigError as e:
        logger.error(f"[命令行] {e}")
        return 1
    args = build_parser(preset).parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
