import math

import numpy as np
import pytest

from oracles import build
from slicegame import (
    UnsupportedAlphaError,
    capacity_equivalent_gain,
    compute_loads,
    envy,
    envy_matrix,
    envy_upper_bound_constant,
    exchange_allocation,
    poa_gap,
    random_scenario,
    solve_equilibrium,
)
from slicegame.metrics import EligibilityError, MetricsReport, eligible_envy_pairs, scaled_network_utility


def pair_scenario(phi_a=(0.5, 0.5), phi_b=(0.5, 0.5), alpha=1.0):
    return build(["b1", "b2"], [
        ("A", 0.4, alpha, [("a1", "b1", 1.0, phi_a[0]), ("a2", "b1", 2.0, phi_a[1])]),
        ("B", 0.4, alpha, [("c1", "b1", 1.0, phi_b[0]), ("c2", "b1", 3.0, phi_b[1])]),
        ("C", 0.2, alpha, [("e1", "b1", 1.0, 0.5), ("e2", "b2", 1.0, 0.5)]),
    ])


def test_exchange_example():
    sc = pair_scenario()
    w = {"a1": 0.3, "a2": 0.1, "c1": 0.1, "c2": 0.3, "e1": 0.1, "e2": 0.1}
    out = exchange_allocation(sc, w, "A", "B")
    assert (out["a1"], out["a2"]) == pytest.approx((0.2, 0.2))
    assert (out["c1"], out["c2"]) == pytest.approx((0.2, 0.2))
    assert out["e1"] == 0.1


def test_exchange_identical_slices_is_identity():
    sc = pair_scenario()
    w = {"a1": 0.2, "a2": 0.2, "c1": 0.2, "c2": 0.2, "e1": 0.1, "e2": 0.1}
    assert exchange_allocation(sc, w, "A", "B").weights == pytest.approx(list(w.values()))


def test_exchange_preserves_loads_and_is_involution():
    sc = pair_scenario(phi_a=(0.3, 0.7), phi_b=(0.9, 0.1))
    w = {"a1": 0.12, "a2": 0.28, "c1": 0.36, "c2": 0.04, "e1": 0.05, "e2": 0.15}
    once = exchange_allocation(sc, w, "A", "B")
    twice = exchange_allocation(sc, once, "A", "B")
    assert np.array_equal(compute_loads(sc, once).loads, compute_loads(sc, w).loads)
    assert twice.weights == pytest.approx(list(w.values()), abs=1e-16)


def test_exchange_footprint_mismatch():
    sc = pair_scenario()
    w = {"a1": 0.2, "a2": 0.2, "c1": 0.2, "c2": 0.2, "e1": 0.1, "e2": 0.1}
    with pytest.raises(EligibilityError):
        exchange_allocation(sc, w, "A", "C")
    loose = exchange_allocation(sc, w, "A", "C", strict=False)
    # A has no user at b2, so C gets nothing there
    assert loose["e2"] == 0.0 and loose["e1"] == pytest.approx(0.4)


def test_envy_identical_slices_zero():
    sc = pair_scenario()
    w = {"a1": 0.2, "a2": 0.2, "c1": 0.2, "c2": 0.2, "e1": 0.1, "e2": 0.1}
    assert envy(sc, w, "A", "B") == pytest.approx(0.0, abs=1e-15)


def test_envy_requires_equal_shares_by_default():
    sc = build(["b"], [
        ("A", 0.3, 1.0, [("a", "b", 1.0, 1.0)]),
        ("B", 0.7, 1.0, [("c", "b", 1.0, 1.0)]),
    ])
    with pytest.raises(EligibilityError, match="shares"):
        envy(sc, {"a": 0.3, "c": 0.7}, "A", "B")
    assert eligible_envy_pairs(sc) == []
    assert envy(sc, {"a": 0.3, "c": 0.7}, "A", "B", equal_shares=False) == pytest.approx(math.log(7 / 3))


def test_envy_matrix_pairs():
    sc = pair_scenario()
    ne = solve_equilibrium(sc)
    m = envy_matrix(sc, ne.allocation)
    assert set(m) == {("A", "B"), ("B", "A")}


def test_envy_constant():
    ln2 = 0.693147
    assert envy_upper_bound_constant() == pytest.approx(-math.log(ln2) - (1 / ln2 - 1) * ln2, abs=1e-6)
    assert envy_upper_bound_constant() == pytest.approx(0.05966, abs=1e-5)
    assert round(envy_upper_bound_constant(), 3) == 0.060
    assert envy_upper_bound_constant() > 0.041


def test_poa_gap_zero_when_equilibrium_is_optimal():
    sc = build(["b"], [
        ("A", 0.5, 1.0, [("a", "b", 1.0, 1.0)]),
        ("B", 0.5, 1.0, [("c", "b", 1.0, 1.0)]),
    ])
    ne = solve_equilibrium(sc)
    assert poa_gap(sc, ne.allocation) == pytest.approx(0.0, abs=1e-12)


def test_poa_gap_in_bounds_and_checks():
    sc = random_scenario(seed=2, n_slices=(3, 3), n_stations=(5, 5), density=(3.0, 3.0), alpha=(1.0, 1.0))
    ne = solve_equilibrium(sc)
    assert 0.0 <= poa_gap(sc, ne.allocation) <= 1.0
    with pytest.raises(ValueError, match="equilibrium"):
        poa_gap(sc, sc.arrays.share[sc.arrays.user_slice] / np.bincount(sc.arrays.user_slice)[sc.arrays.user_slice])
    sc2 = random_scenario(seed=2, n_slices=(2, 2), n_stations=(3, 3), density=(2.0, 2.0), alpha=(2.0, 2.0))
    with pytest.raises(UnsupportedAlphaError):
        poa_gap(sc2, solve_equilibrium(sc2).allocation)


def test_capacity_equivalent_log():
    sc = build(["b"], [
        ("A", 0.5, 1.0, [("a", "b", 1.0, 1.0)]),
        ("B", 0.5, 1.0, [("c", "b", 1.0, 1.0)]),
    ])
    kappa, pct = capacity_equivalent_gain(sc, -0.5 + 0.1, [-0.3, -0.7])
    assert kappa == pytest.approx(math.exp(0.1), rel=1e-9)
    assert pct == pytest.approx(10.517, abs=1e-3)


def test_capacity_equivalent_alpha_two():
    sc = build(["b"], [("A", 1.0, 2.0, [("a", "b", 1.0, 1.0)])])
    kappa, pct = capacity_equivalent_gain(sc, -1.0, [-2.0])
    assert kappa == pytest.approx(2.0, rel=1e-9)
    assert pct == pytest.approx(100.0, rel=1e-7)


def test_capacity_equivalent_mixed_residual():
    sc = build(["b"], [
        ("A", 0.3, 0.5, [("a", "b", 1.0, 1.0)]),
        ("B", 0.3, 1.0, [("c", "b", 1.0, 1.0)]),
        ("C", 0.4, 3.0, [("e", "b", 1.0, 1.0)]),
    ])
    base = [1.2, -0.4, -3.0]
    target = 0.3 * 1.2 + 0.3 * -0.4 + 0.4 * -3.0 + 0.25
    kappa, _ = capacity_equivalent_gain(sc, target, base)
    assert abs(scaled_network_utility([0.5, 1.0, 3.0], [0.3, 0.3, 0.4], base, kappa) - target) <= 1e-10


def test_capacity_equivalent_zero_utility_slice():
    sc = build(["b"], [
        ("A", 0.5, 2.0, [("a", "b", 1.0, 1.0)]),
        ("B", 0.5, 1.0, [("c", "b", 1.0, 1.0)]),
    ])
    with pytest.raises(ValueError, match="'A'"):
        capacity_equivalent_gain(sc, 0.0, [0.0, -1.0])


def test_metrics_report_envy_stats():
    rep = MetricsReport(envy={("A", "B"): -0.2, ("B", "A"): 0.1})
    lo, hi, mean = rep.envy_stats
    assert (lo, hi) == (-0.2, 0.1) and mean == pytest.approx(-0.05)
    assert MetricsReport().envy_stats is None
