# -*- coding: utf-8 -*-
"""
命令行与运行配置测试
"""
from pathlib import Path
import json
import sys

import numpy as np
import pytest

# 添加项目路径
sys.path.insert(0, str(Path(__file__).parent))

from core.config import PRESET_KEYS, build_run_config, build_sensor_params, load_preset
from core.errors import ConfigError
from core.occupancy_map import GridConfig
from core.scan_io import write_velodyne_bin
from main import build_parser, main

IDENTITY_POSE = "1 0 0 0 0 1 0 0 0 0 1 0"
SHIFTED_POSE = "1 0 0 0.5 0 1 0 0 0 0 1 0"


def _json_lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


@pytest.fixture
def frames_dir(tmp_path):
    """两帧墙面点云（传感器前方 5 m）与对应位姿"""
    y, z = np.meshgrid(np.linspace(-1.0, 1.0, 21), np.linspace(-0.5, 0.5, 11), indexing="ij")
    wall = np.column_stack([np.full(y.size, 5.0), y.reshape(-1), z.reshape(-1)])
    velodyne = tmp_path / "velodyne"
    write_velodyne_bin(wall, velodyne / "000000.bin")
    write_velodyne_bin(wall, velodyne / "000001.bin")
    poses = tmp_path / "poses.txt"
    poses.write_text(f"{IDENTITY_POSE}\n{SHIFTED_POSE}\n", encoding="utf-8")
    return velodyne, poses


def test_default_preset():
    preset = load_preset()
    assert set(preset) == PRESET_KEYS
    assert preset["voxel_size"] == 0.2
    assert (preset["vres_deg"], preset["hres_deg"]) == (0.4, 0.16)


def test_preset_errors(tmp_path):
    """缺失、非法 JSON、未知字段、缺少字段"""
    with pytest.raises(ConfigError):
        load_preset("no_such_sensor")

    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_preset(bad)

    extra = tmp_path / "extra.json"
    extra.write_text(json.dumps({**load_preset(), "colour": "red"}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_preset(extra)

    partial = tmp_path / "partial.json"
    partial.write_text(json.dumps({"voxel_size": 0.2}), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_preset(partial)


def test_sensor_and_run_config_validation():
    """参数顺序非法、体素边长不一致"""
    preset = load_preset()
    with pytest.raises(ConfigError):
        build_sensor_params(0.2, 0.3, 0.4, 0.12, 0.97, 32, 0.4, 0.16)
    sensor = build_sensor_params(0.25, 0.7, 0.4, 0.12, 0.97, preset["gamma"], 0.4, 0.16)
    assert sensor.omega == 0.25
    with pytest.raises(ConfigError):
        build_run_config(grid=GridConfig(voxel_size=0.2), sensor=sensor)
    config = build_run_config(grid=GridConfig(voxel_size=0.25), sensor=sensor, policy="m1", frames=(0, 3))
    assert config.new_map().voxel_size == 0.25


def test_parser_defaults_follow_preset():
    parser = build_parser(load_preset())
    args = parser.parse_args(["build-map", "--input", "in", "--poses", "poses.txt"])
    assert args.voxel_size == 0.2
    assert args.method == "m2"
    assert args.clamp_mode == "per_scan"
    assert args.max_range == 80.0
    assert args.frames is None

    args = parser.parse_args(["build-map", "--input", "in", "--poses", "p", "--frames", "2..4"])
    assert args.frames == (2, 4)


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["build-map", "--help"])
    assert excinfo.value.code == 0
    out = capsys.readouterr().out
    assert "--voxel-size" in out and "--method" in out
    assert "default" in out


def test_build_map_end_to_end(frames_dir, tmp_path, capsys):
    """逐帧统计行 + 总计行，导出文件与快照导出一致"""
    velodyne, poses = frames_dir
    output = tmp_path / "map.csv"
    snapshot = tmp_path / "map.npz"
    rc = main([
        "--log-level", "WARNING",
        "build-map", "--input", str(velodyne), "--poses", str(poses),
        "--method", "baseline", "--format", "csv", "--output", str(output), "--save-map", str(snapshot),
    ])
    assert rc == 0
    records = _json_lines(capsys.readouterr().out)
    assert [r["frame"] for r in records[:-1]] == [0, 1]
    assert all(r["rays_processed"] == 231 and r["hits"] > 0 for r in records[:-1])
    total = records[-1]
    assert total["scans"] == 2
    assert total["total"]["rays_processed"] == 462
    assert total["map"]["occupied"] > 0

    lines = output.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "i,j,k,x,y,z,occupancy"
    assert len(lines) - 1 == total["map"]["occupied"]

    exported = tmp_path / "again.csv"
    assert main(["export", "--map", str(snapshot), "--output", str(exported), "--format", "csv"]) == 0
    assert exported.read_bytes() == output.read_bytes()


def test_build_map_frame_range(frames_dir, capsys):
    velodyne, poses = frames_dir
    rc = main(["build-map", "--input", str(velodyne), "--poses", str(poses), "--frames", "1..1"])
    assert rc == 0
    records = _json_lines(capsys.readouterr().out)
    assert len(records) == 2
    assert records[0]["frame"] == 1 and records[0]["file"] == "000001.bin"


def test_build_map_failures_exit_with_one(frames_dir, tmp_path, capsys):
    """位姿不足、目录不存在、体素边长非法"""
    velodyne, _ = frames_dir
    short = tmp_path / "short.txt"
    short.write_text(IDENTITY_POSE + "\n", encoding="utf-8")
    assert main(["build-map", "--input", str(velodyne), "--poses", str(short)]) == 1
    assert main(["build-map", "--input", str(tmp_path / "missing"), "--poses", str(short)]) == 1
    assert main(["build-map", "--input", str(velodyne), "--poses", str(short), "--voxel-size", "-1"]) == 1
    assert main(["--preset", "no_such_sensor", "build-map", "--input", "x", "--poses", "y"]) == 1
    assert capsys.readouterr().out == ""


def test_ground_plane_table(capsys):
    """表头加三行，依次为 baseline / m1 / m2；空洞相对差写入日志"""
    rc = main(["ground-plane", "--scans", "1", "--radius", "5", "--hres-deg", "1.0"])
    assert rc == 0
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[0].split() == ["policy", "observed", "occupied", "holes", "unknown", "occupied_fraction"]
    assert [line.split()[0] for line in lines[1:]] == ["baseline", "m1", "m2"]
    assert "基线与方法一的空洞数相差" in captured.err


def test_weight_curve_stdout(capsys):
    rc = main(["weight-curve", "--gammas", "16", "32", "--max-distance", "5", "--step", "1"])
    assert rc == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "d,rho,w_16,w_32"
    assert [line.split(",")[0] for line in lines[1:]] == ["1", "2", "3", "4", "5"]
    assert all(float(line.split(",")[2]) == 1.0 for line in lines[1:])


def test_validate_density_writes_csv(tmp_path, capsys):
    rc = main([
        "validate-density", "--voxel-size", "0.8", "--radius", "6",
        "--vres-deg", "2", "--hres-deg", "1", "--output", str(tmp_path),
    ])
    assert rc == 0
    record = _json_lines(capsys.readouterr().out)[0]
    assert record["omega"] == 0.8 and record["bins"] > 0
    assert record["seconds"] >= 0.0
    path = tmp_path / "density_omega_0.8.csv"
    assert path.read_text(encoding="utf-8").startswith("d,empirical,alpha1,alpha2,alpha3,rho\n")
