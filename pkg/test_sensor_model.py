# -*- coding: utf-8 -*-
"""
逆传感器模型测试
"""
from pathlib import Path
import math
import sys

import numpy as np
import pytest
from pydantic import ValidationError

# 添加项目路径
sys.path.insert(0, str(Path(__file__).parent))

from core.density_model import weight
from core.errors import DomainError
from core.occupancy_map import pack_keys
from core.sensor_model import (
    Observation,
    ObservationKind,
    SensorModelParams,
    UpdatePolicy,
    baseline_reduce,
    baseline_scan_filter,
    hit_probabilities,
    measurement_probability,
    miss_probabilities,
)

PARAMS = SensorModelParams()
OMEGA = PARAMS.omega
MAX_CHORD = math.sqrt(3.0) * OMEGA
NEAR = 1.0  # w(1 m) = 1
FAR = 40.0  # w(40 m) < 1


def test_anchor_values():
    """P_occ / P_free / 0.5 三个锚点精确成立"""
    hit = measurement_probability(UpdatePolicy.METHOD2, ObservationKind.HIT, 0.0, 0.1, NEAR, PARAMS)
    assert hit == 0.7
    hit_m1 = measurement_probability(UpdatePolicy.METHOD1, ObservationKind.HIT, 0.0, 0.1, NEAR, PARAMS)
    assert hit_m1 == 0.7
    miss = measurement_probability(UpdatePolicy.METHOD1, ObservationKind.MISS, MAX_CHORD, None, NEAR, PARAMS)
    assert miss == 0.4
    for policy in (UpdatePolicy.METHOD1, UpdatePolicy.METHOD2):
        assert measurement_probability(policy, ObservationKind.HIT, 0.1, 0.0, NEAR, PARAMS) == 0.5
        assert measurement_probability(policy, ObservationKind.MISS, 0.0, None, NEAR, PARAMS) == 0.5


def test_method2_partial_hit():
    """λ=0.15，λ′=0.05 → 0.55"""
    p = measurement_probability(UpdatePolicy.METHOD2, ObservationKind.HIT, 0.15, 0.05, FAR, PARAMS)
    assert p == pytest.approx(0.55, abs=1e-12)


def test_baseline_ignores_geometry():
    for d in (NEAR, FAR):
        assert measurement_probability(UpdatePolicy.BASELINE, "hit", 0.01, 0.01, d, PARAMS) == 0.7
        assert measurement_probability(UpdatePolicy.BASELINE, "miss", 0.01, None, d, PARAMS) == 0.4


def test_range_and_monotonicity():
    """概率在 [P_free, P_occ] 内；命中随 λ′ 不减，穿越随 λ 不增"""
    total = 0.3
    lam_prime = np.linspace(0.0, total, 101)
    for policy in (UpdatePolicy.METHOD1, UpdatePolicy.METHOD2):
        for w in (1.0, 0.3):
            hits = hit_probabilities(policy, total - lam_prime, lam_prime, w, PARAMS)
            assert np.all(np.diff(hits) >= 0.0)
            assert np.all((hits >= 0.4) & (hits <= 0.7))
            misses = miss_probabilities(policy, np.linspace(0.0, MAX_CHORD, 101), w, PARAMS)
            assert np.all(np.diff(misses) <= 0.0)
            assert np.all((misses >= 0.4) & (misses <= 0.7))


def test_methods_agree_when_weight_is_one():
    rng = np.random.default_rng(8)
    lam = rng.uniform(0.0, MAX_CHORD / 2, 200)
    lam_prime = rng.uniform(0.01, MAX_CHORD / 2, 200)
    np.testing.assert_array_equal(
        hit_probabilities(UpdatePolicy.METHOD1, lam, lam_prime, 1.0, PARAMS),
        hit_probabilities(UpdatePolicy.METHOD2, lam, lam_prime, 1.0, PARAMS),
    )


def test_weight_attenuation():
    """w<1 时方法一命中的偏离量是方法二（w=1）的 w 倍，穿越两者相同"""
    w = weight(FAR, PARAMS.density)
    assert w < 1.0
    m1 = measurement_probability(UpdatePolicy.METHOD1, "hit", 0.05, 0.1, FAR, PARAMS)
    m2 = measurement_probability(UpdatePolicy.METHOD2, "hit", 0.05, 0.1, NEAR, PARAMS)
    assert abs(m1 - 0.5) == pytest.approx(w * abs(m2 - 0.5), abs=1e-12)

    for lam in (0.0, 0.1, MAX_CHORD):
        assert measurement_probability(UpdatePolicy.METHOD1, "miss", lam, None, FAR, PARAMS) == (
            measurement_probability(UpdatePolicy.METHOD2, "miss", lam, None, FAR, PARAMS)
        )


def test_chord_contract_violations():
    """超过体对角线或 λ+λ′=0 的观测被拒绝"""
    with pytest.raises(DomainError):
        measurement_probability(UpdatePolicy.METHOD2, "miss", MAX_CHORD + 1e-6, None, NEAR, PARAMS)
    with pytest.raises(DomainError):
        measurement_probability(UpdatePolicy.METHOD2, "hit", 0.0, 0.0, NEAR, PARAMS)
    with pytest.raises(DomainError):
        measurement_probability(UpdatePolicy.METHOD2, "hit", 0.1, None, NEAR, PARAMS)
    with pytest.raises(DomainError):
        measurement_probability(UpdatePolicy.METHOD2, "miss", 0.1, None, 0.0, PARAMS)


@pytest.mark.parametrize("kind,lam_prime", [("hit", 0.0), ("miss", None)])
def test_baseline_rejects_oversized_chord(kind, lam_prime):
    """基线同样拒绝超过体对角线或为负的弦长"""
    with pytest.raises(DomainError):
        measurement_probability(UpdatePolicy.BASELINE, kind, MAX_CHORD + 1e-6, lam_prime, NEAR, PARAMS)
    with pytest.raises(DomainError):
        measurement_probability(UpdatePolicy.BASELINE, kind, -0.01, lam_prime, NEAR, PARAMS)
    assert measurement_probability(UpdatePolicy.BASELINE, kind, MAX_CHORD, lam_prime, NEAR, PARAMS) in (0.7, 0.4)


def test_params_ordering_validated():
    with pytest.raises(ValidationError):
        SensorModelParams(p_occ=0.45)
    with pytest.raises(ValidationError):
        SensorModelParams(p_min=0.5)
    with pytest.raises(ValidationError):
        SensorModelParams(p_max=0.6, p_occ=0.7)


def test_baseline_scan_filter():
    """每个体素只保留一个观测，命中优先"""
    hit = Observation(ObservationKind.HIT, 0.7)
    miss = Observation(ObservationKind.MISS, 0.4)
    reduced = baseline_scan_filter(
        {
            "a": [miss, miss, miss, hit],
            "b": [miss] * 5,
            "c": [ObservationKind.HIT, ObservationKind.HIT],
            "d": [],
        },
        PARAMS,
    )
    assert reduced == {
        "a": Observation(ObservationKind.HIT, 0.7),
        "b": Observation(ObservationKind.MISS, 0.4),
        "c": Observation(ObservationKind.HIT, 0.7),
    }


def test_baseline_reduce_matches_filter():
    keys = pack_keys(np.array([[0, 0, 0], [1, 0, 0], [0, 0, 0], [1, 0, 0], [2, 0, 0]]))
    unique, any_hit = baseline_reduce(keys, np.array([False, False, True, False, True]))
    assert unique.size == 3
    assert any_hit.tolist() == [True, False, True]
