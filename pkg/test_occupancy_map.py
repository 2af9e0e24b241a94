# -*- coding: utf-8 -*-
"""
稀疏占据地图测试
"""
from pathlib import Path
import math
import sys

import numpy as np
import pytest

# 添加项目路径
sys.path.insert(0, str(Path(__file__).parent))

from core.errors import DomainError
from core.occupancy_map import (
    GridConfig,
    OccupancyMap,
    VoxelKey,
    key_from_point,
    keys_from_points,
    log_odds,
    logistic,
    pack_keys,
    unpack_keys,
    voxel_center,
)


def test_key_from_point_half_open():
    """半开区间取整，负方向落到 -1"""
    assert key_from_point((0, 0, 0), 0.2) == VoxelKey(0, 0, 0)
    assert key_from_point((0.19999, 0.0, -0.00001), 0.2) == VoxelKey(0, 0, -1)
    assert key_from_point((1.0, 1.0, 1.0), 0.2) == VoxelKey(5, 5, 5)


def test_key_from_point_rejects_bad_input():
    """非有限坐标与非法边长"""
    with pytest.raises(DomainError):
        key_from_point((math.nan, 0, 0), 0.2)
    with pytest.raises(DomainError):
        key_from_point((0, 0, 0), 0.0)
    with pytest.raises(DomainError):
        keys_from_points(np.array([[0.0, math.inf, 0.0]]), 0.2)


def test_voxel_center_and_round_trip():
    """体素中心以及 键 → 中心 → 键 往返"""
    np.testing.assert_allclose(voxel_center((0, 0, 0), 0.2), [0.1, 0.1, 0.1])
    np.testing.assert_allclose(voxel_center((-1, 0, 0), 0.2), [-0.1, 0.1, 0.1])

    rng = np.random.default_rng(7)
    keys = rng.integers(-5000, 5000, size=(1000, 3))
    centers = voxel_center(keys, 0.2)
    np.testing.assert_array_equal(keys_from_points(centers, 0.2), keys)


def test_pack_keys_is_bijective():
    """打包键可逆，超出范围报错"""
    rng = np.random.default_rng(3)
    keys = rng.integers(-(1 << 20), 1 << 20, size=(500, 3))
    np.testing.assert_array_equal(unpack_keys(pack_keys(keys)), keys)
    assert np.unique(pack_keys(keys)).size == np.unique(keys, axis=0).shape[0]
    with pytest.raises(DomainError):
        pack_keys(np.array([[1 << 20, 0, 0]]))


def test_apply_log_odds_examples():
    """单体素更新的几个锚点"""
    occupancy_map = OccupancyMap()
    key = (0, 0, 0)
    occupancy_map.apply_log_odds(key, log_odds(0.7))
    assert occupancy_map.occupancy(key) == pytest.approx(0.7, abs=1e-12)
    occupancy_map.apply_log_odds(key, log_odds(0.4))
    assert occupancy_map.occupancy(key) == pytest.approx(0.60870, abs=1e-5)

    saturated = OccupancyMap()
    for _ in range(20):
        saturated.apply_log_odds(key, log_odds(0.7))
    assert saturated.occupancy(key) == pytest.approx(0.97, abs=1e-12)
    assert saturated.log_odds_of(key) == saturated.log_odds_bounds[1]


def test_occupancy_of_unobserved_and_bounds():
    """未观测体素报告先验"""
    occupancy_map = OccupancyMap()
    assert occupancy_map.occupancy((3, 4, 5)) == 0.5
    assert (3, 4, 5) not in occupancy_map
    assert occupancy_map.cell_state((3, 4, 5)) is None
    assert logistic(0.0) == 0.5
    assert logistic(log_odds(0.97)) == pytest.approx(0.97, abs=1e-12)

    biased = OccupancyMap(GridConfig(prior=0.3))
    assert biased.occupancy((0, 0, 0)) == 0.3


def test_clamp_containment_random_sequences():
    """任意更新序列后占据概率都在 [P_min, P_max] 内"""
    rng = np.random.default_rng(11)
    occupancy_map = OccupancyMap()
    keys = rng.integers(-3, 3, size=(2000, 3))
    deltas = rng.normal(0.0, 2.0, size=2000)
    for key, delta in zip(keys.tolist(), deltas.tolist()):
        occupancy_map.apply_log_odds(key, delta)
    for key, _ in occupancy_map.items():
        assert 0.12 - 1e-12 <= occupancy_map.occupancy(key) <= 0.97 + 1e-12


def test_log_odds_matches_iterated_bayes():
    """不截断时对数几率求和与逐步贝叶斯更新一致"""
    rng = np.random.default_rng(5)
    for _ in range(200):
        observations = rng.uniform(0.45, 0.55, size=rng.integers(1, 50))
        p = 0.5
        for o in observations:
            p = 1.0 / (1.0 + ((1 - p) / p) * ((1 - o) / o))
        total = logistic(math.fsum(log_odds(o) for o in observations))
        assert total == pytest.approx(p, rel=1e-12)


def test_commutativity_below_clamp():
    """未触发截断时更新顺序无关"""
    rng = np.random.default_rng(2)
    deltas = rng.uniform(-0.05, 0.05, size=30)
    a, b = OccupancyMap(), OccupancyMap()
    for d in deltas:
        a.apply_log_odds((1, 1, 1), d)
    for d in rng.permutation(deltas):
        b.apply_log_odds((1, 1, 1), d)
    assert a.log_odds_of((1, 1, 1)) == pytest.approx(b.log_odds_of((1, 1, 1)), abs=1e-14)


def test_apply_log_odds_batch_counts_clamps():
    """批量更新返回触发截断的体素数"""
    occupancy_map = OccupancyMap()
    keys = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    clamped = occupancy_map.apply_log_odds_batch(keys, np.array([10.0, 0.1, -10.0]))
    assert clamped == 2
    lo, hi = occupancy_map.log_odds_bounds
    assert occupancy_map.log_odds_of((0, 0, 0)) == hi
    assert occupancy_map.log_odds_of((2, 0, 0)) == lo
    with pytest.raises(DomainError):
        occupancy_map.apply_log_odds_batch(keys[:1], np.array([math.nan]))


def test_occupied_cells_matches_brute_force():
    """occupied_cells 与逐个过滤的结果相同"""
    assert list(OccupancyMap().occupied_cells(0.5)) == []

    single = OccupancyMap()
    single.apply_log_odds((0, 0, 0), log_odds(0.7))
    cells = list(single.occupied_cells(0.5))
    assert len(cells) == 1 and cells[0][0] == VoxelKey(0, 0, 0)

    rng = np.random.default_rng(9)
    occupancy_map = OccupancyMap()
    for key, delta in zip(rng.integers(-50, 50, size=(100, 3)).tolist(), rng.normal(0, 1.5, 100).tolist()):
        occupancy_map.apply_log_odds(key, delta)
    expected = {k for k, _ in occupancy_map.items() if occupancy_map.occupancy(k) > 0.5}
    assert {k for k, _ in occupancy_map.occupied_cells(0.5)} == expected

    with pytest.raises(DomainError):
        list(occupancy_map.occupied_cells(1.0))


def test_statistics_and_copy():
    """统计摘要与拷贝互不影响"""
    occupancy_map = OccupancyMap()
    occupancy_map.apply_log_odds((0, 0, 0), 10.0)
    occupancy_map.apply_log_odds((1, 0, 0), -0.2)
    stats = occupancy_map.statistics()
    assert stats == {"observed": 2, "occupied": 1, "free": 1, "at_lower_bound": 0, "at_upper_bound": 1}

    clone = occupancy_map.copy()
    clone.apply_log_odds((5, 5, 5), 1.0)
    assert len(occupancy_map) == 2 and len(clone) == 3


def test_save_and_load_snapshot(tmp_path):
    """快照保存后读回完全一致"""
    occupancy_map = OccupancyMap(GridConfig(voxel_size=0.25, prior=0.5), 0.1, 0.9)
    occupancy_map.apply_log_odds((0, 0, 0), 0.8)
    occupancy_map.apply_log_odds((-3, 7, 2), -0.4)
    path = occupancy_map.save(tmp_path / "map.npz")

    loaded = OccupancyMap.load(path)
    assert loaded.voxel_size == 0.25
    assert (loaded.clamp_min, loaded.clamp_max) == (0.1, 0.9)
    assert dict(loaded.items()) == dict(occupancy_map.items())


def test_invalid_clamp_configuration():
    with pytest.raises(DomainError):
        OccupancyMap(clamp_min=0.8, clamp_max=0.2)
