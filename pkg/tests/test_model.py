"""Mode construction and enumeration.

Covers: index-matrix assembly for plain and mixed attacks, empty supports,
dimension diagnostics, hypothesis counting (plain and with per-kind caps)
against brute-force oracles, order stability, and JSON round-trips.
"""

import itertools
import math

import numpy as np
import pytest

from resilient_mm import (
    AttackSupport,
    OperationMode,
    PlantTopology,
    build_mode,
    enumerate_modes,
    enumerate_supports,
    expected_mode_count,
    topology_from_json,
    topology_to_json,
)
from resilient_mm.model import DimensionError


def make_topology(n, m, l, t_a, t_s, t_m=1, seed=0):
    rng = np.random.default_rng(seed)
    ops = []
    for _ in range(t_m):
        ops.append(
            OperationMode(
                A=rng.standard_normal((n, n)) * 0.3,
                B=rng.standard_normal((n, m)),
                C=rng.standard_normal((l, n)),
                D=np.zeros((l, m)),
            )
        )
    return PlantTopology(
        operation_modes=ops,
        calG=rng.standard_normal((n, t_a)),
        calH=rng.standard_normal((l, t_s)),
        Q=np.eye(n),
        R=np.eye(l),
    )


def test_mixed_attack_two_state():
    # two vulnerable actuators, one vulnerable sensor; the first attack channel
    # hits actuator 1 and the sensor simultaneously
    topo = PlantTopology(
        operation_modes=[
            OperationMode(A=np.eye(2), B=np.eye(2), C=np.array([[1.0, 0.0]]), D=np.zeros((1, 2)))
        ],
        calG=np.eye(2),
        calH=np.array([[1.0]]),
        Q=np.eye(2),
        R=np.eye(1),
    )
    support = AttackSupport(q_m=0, I_G=np.eye(2), I_H=np.array([[1.0, 0.0]]))
    mode = build_mode(topo, support)
    assert np.allclose(mode.G, np.eye(2))
    assert np.allclose(mode.H, np.array([[1.0, 0.0]]))


def test_three_state_partial_vulnerability():
    topo = PlantTopology(
        operation_modes=[
            OperationMode(
                A=np.eye(3),
                B=np.eye(3),
                C=np.zeros((2, 3)),
                D=np.zeros((2, 3)),
            )
        ],
        calG=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        calH=np.array([[1.0], [0.0]]),
        Q=np.eye(3),
        R=np.eye(2),
    )
    support = AttackSupport(
        q_m=0,
        I_G=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        I_H=np.array([[0.0, 0.0, 1.0]]),
    )
    mode = build_mode(topo, support)
    assert np.allclose(
        mode.G, np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    )
    assert np.allclose(mode.H, np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]))


def test_empty_support_is_valid():
    topo = make_topology(3, 2, 3, t_a=2, t_s=2)
    support = AttackSupport.from_signals(topo, 0)
    mode = build_mode(topo, support)
    assert mode.p == 0
    assert mode.G.shape == (3, 0)
    assert mode.H.shape == (3, 0)


def test_dimension_mismatch_names_matrix():
    topo = make_topology(3, 2, 3, t_a=2, t_s=2)
    bad = AttackSupport(q_m=0, I_G=np.array([[1.0], [0.0], [0.0]]), I_H=np.array([[0.0], [0.0]]))
    with pytest.raises(DimensionError, match="I_G"):
        build_mode(topo, bad)


def test_support_validation():
    with pytest.raises(ValueError, match="more than one"):
        AttackSupport(q_m=0, I_G=np.array([[1.0], [1.0]]), I_H=np.zeros((1, 1)))
    with pytest.raises(ValueError, match="no signal"):
        AttackSupport(q_m=0, I_G=np.zeros((2, 1)), I_H=np.zeros((1, 1)))


def test_benchmark_enumeration_count(benchmark):
    topo, modes, _ = benchmark
    assert len(modes) == expected_mode_count(topo, 4) == 5


def test_trivial_single_model():
    topo = make_topology(3, 2, 3, t_a=1, t_s=2)
    modes = enumerate_modes(topo, p=0)
    assert len(modes) == 1


def test_unconstrained_count_matches_brute_force():
    for t_a in range(0, 5):
        for t_s in range(0, 9 - t_a):
            if t_a + t_s == 0 or t_a + t_s > 8:
                continue
            for t_m in (1, 2):
                l = t_a + t_s + 1
                topo = make_topology(3, max(t_a, 1), l, t_a, t_s, t_m=t_m)
                for p in range(0, min(t_a + t_s, l - 1) + 1):
                    supports = enumerate_supports(topo, p)
                    brute = list(itertools.combinations(range(t_a + t_s), p))
                    assert len(supports) == t_m * len(brute)
                    assert len(supports) == expected_mode_count(topo, p)


def constrained_brute_force(t_a, t_s, p, n_a, n_s):
    found = set()
    for i in range(min(n_a, p) + 1):
        k_s = min(p - i, n_s)
        for acts in itertools.combinations(range(t_a), i):
            for sens in itertools.combinations(range(t_s), k_s):
                found.add((acts, sens))
    return found


def test_constrained_count_matches_brute_force():
    t_m, t_a, t_s, p, n_a, n_s = 2, 2, 3, 2, 1, 2
    topo = make_topology(4, 2, 6, t_a, t_s, t_m=t_m)
    supports = enumerate_supports(topo, p, n_a=n_a, n_s=n_s)
    brute = constrained_brute_force(t_a, t_s, p, n_a, n_s)
    assert len(supports) == t_m * len(brute)
    assert len(supports) == expected_mode_count(topo, p, n_a, n_s)
    got = {
        (
            tuple(np.nonzero(s.I_G.sum(axis=1))[0]),
            tuple(np.nonzero(s.I_H.sum(axis=1))[0]),
        )
        for s in supports
    }
    assert got == brute


def test_too_many_attacks_rejected():
    topo = make_topology(3, 3, 3, t_a=3, t_s=3)
    with pytest.raises(ValueError, match="p\\* = l"):
        enumerate_modes(topo, p=4)


def test_saturated_attack_count_warns():
    topo = make_topology(3, 2, 2, t_a=2, t_s=2)
    with pytest.warns(RuntimeWarning, match="strictly below"):
        enumerate_modes(topo, p=2)


def test_enumerated_columns_come_from_catalogue():
    rng = np.random.default_rng(5)
    topo = make_topology(4, 3, 5, t_a=2, t_s=3, seed=11)
    for mode in enumerate_modes(topo, p=3):
        for col in range(mode.p):
            g = mode.G[:, col]
            h = mode.H[:, col]
            assert (
                not np.any(g)
                or any(np.allclose(g, topo.calG[:, j]) for j in range(topo.t_a))
            )
            assert (
                not np.any(h)
                or any(np.allclose(h, topo.calH[:, j]) for j in range(topo.t_s))
            )
            assert np.any(g) or np.any(h)
    del rng


def test_enumeration_is_order_stable(benchmark):
    topo, modes, _ = benchmark
    again = enumerate_modes(topo, p=4)
    assert [m.label for m in modes] == [m.label for m in again]
    support = AttackSupport.from_signals(topo, 0, actuators=[0], sensors=[0, 1, 2])
    assert build_mode(topo, support).label == build_mode(topo, support).label


def test_topology_json_round_trip(benchmark):
    topo, _, _ = benchmark
    supports = enumerate_supports(topo, 4)
    doc = topology_to_json(topo, supports)
    topo2, supports2 = topology_from_json(doc)
    assert np.allclose(topo2.operation_modes[0].A, topo.operation_modes[0].A)
    assert np.allclose(topo2.calH, topo.calH)
    assert len(supports2) == len(supports)
    for s1, s2 in zip(supports, supports2):
        assert s1.support_key == s2.support_key


def test_benchmark_supports_match_expected(benchmark):
    topo, modes, _ = benchmark
    keys = [m.label[1] for m in modes]
    expected = [
        (("a", 0), ("s", 0), ("s", 1), ("s", 2)),
        (("a", 0), ("s", 0), ("s", 1), ("s", 3)),
        (("a", 0), ("s", 0), ("s", 2), ("s", 3)),
        (("a", 0), ("s", 1), ("s", 2), ("s", 3)),
        (("s", 0), ("s", 1), ("s", 2), ("s", 3)),
    ]
    assert keys == expected
    assert math.comb(5, 4) == len(modes)
