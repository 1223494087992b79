import math

import numpy as np
import pytest

from oracles import build, rates_direct
from slicegame.model import network_utility_from_slices
from slicegame import (
    DegenerateAllocationError,
    ScenarioError,
    WeightAllocation,
    alpha_fair_deriv,
    alpha_fair_value,
    compute_loads,
    compute_rates,
    network_utility,
    poa_tight_instance,
    slice_utility,
    social_optimum_log,
    validate_scenario,
)


def two_slice():
    return build(
        ["b1", "b2", "b3"],
        [
            ("A", 0.5, 1.0, [("a1", "b1", 10, 0.5), ("a2", "b2", 10, 0.5)]),
            ("B", 0.5, 1.0, [("c1", "b1", 10, 0.3), ("c2", "b2", 10, 0.7)]),
        ],
    )


def test_load_is_sum_of_weights():
    sc = two_slice()
    loads = compute_loads(sc, {"a1": 0.2, "c1": 0.3, "a2": 0.3, "c2": 0.2})
    assert loads.as_dict()["b1"] == pytest.approx(0.5)
    assert loads.as_dict()["b3"] == 0.0


def test_load_decomposition_matches_hand_sum():
    sc = two_slice()
    w = {"a1": 0.1, "a2": 0.4, "c1": 0.3, "c2": 0.2}
    loads = compute_loads(sc, w)
    assert loads.own("A").tolist()[:2] == pytest.approx([0.1, 0.4])
    assert loads.others("A").tolist()[:2] == pytest.approx([0.3, 0.2])
    assert loads.as_dict()["b2"] == pytest.approx(0.6)


def test_unknown_user_rejected():
    with pytest.raises(ScenarioError):
        compute_loads(two_slice(), {"zz": 0.1})


def test_rates_proportional_split():
    sc = build(["b"], [
        ("A", 0.5, 1.0, [("u1", "b", 10, 1.0)]),
        ("B", 0.5, 1.0, [("u2", "b", 10, 1.0)]),
    ])
    r = compute_rates(sc, {"u1": 0.2, "u2": 0.3})
    assert (r["u1"], r["u2"]) == pytest.approx((4.0, 6.0))


def test_rates_three_users():
    sc = build(["b"], [
        ("A", 0.5, 1.0, [("u1", "b", 8, 0.5), ("u2", "b", 4, 0.5)]),
        ("B", 0.5, 1.0, [("u3", "b", 2, 1.0)]),
    ])
    w = {"u1": 0.25, "u2": 0.25, "u3": 0.5}
    r = compute_rates(sc, w).as_dict()
    assert [r["u1"], r["u2"], r["u3"]] == pytest.approx([2.0, 1.0, 1.0])
    assert r == pytest.approx(rates_direct(sc, w))


def test_sole_occupancy_split_follows_beta():
    sc = build(["b", "c"], [
        ("A", 0.5, 1.0, [("u1", "b", 2, 0.25), ("u2", "b", 2, 0.25), ("u3", "c", 1, 0.5)]),
        ("B", 0.5, 1.0, [("v", "c", 1, 1.0)]),
    ])
    r = compute_rates(sc, {"u1": 0.0, "u2": 0.0, "u3": 0.5, "v": 0.5})
    assert (r["u1"], r["u2"]) == pytest.approx((1.0, 1.0))


def test_zero_load_at_contested_station():
    sc = two_slice()
    with pytest.raises(DegenerateAllocationError, match="b1"):
        compute_rates(sc, {"a1": 0.0, "a2": 0.5, "c1": 0.0, "c2": 0.5})


@pytest.mark.parametrize("alpha, r, expected", [(2.0, 2.0, -0.5), (1.0, math.e, 1.0), (0.5, 4.0, 4.0)])
def test_alpha_fair_value(alpha, r, expected):
    assert alpha_fair_value(alpha, r) == pytest.approx(expected)


def test_alpha_fair_zero_rate_is_minus_inf():
    assert alpha_fair_value(1.0, 0.0) == -math.inf
    assert alpha_fair_value(2.0, 0.0) == -math.inf
    assert alpha_fair_value(0.5, 0.0) == 0.0


def test_alpha_fair_deriv_matches_difference():
    for a in (0.3, 1.0, 2.5):
        h = 1e-6
        fd = (alpha_fair_value(a, 3.0 + h) - alpha_fair_value(a, 3.0 - h)) / (2 * h)
        assert alpha_fair_deriv(a, 3.0) == pytest.approx(fd, rel=1e-7)


def one_slice_two_users(alpha, phi, caps):
    # a second slice at the same station makes it contested, so rates follow weights
    return build(["b1", "b2"], [
        ("A", 0.5, alpha, [("u1", "b1", caps[0], phi[0]), ("u2", "b2", caps[1], phi[1])]),
        ("B", 0.5, alpha, [("v1", "b1", 1.0, 0.5), ("v2", "b2", 1.0, 0.5)]),
    ])


def _with_rates(sc, r1, r2):
    # pick weights so that user rates equal (r1, r2) with loads of 1
    c1, c2 = sc.users[0].capacity, sc.users[1].capacity
    w1, w2 = r1 / c1, r2 / c2
    return {"u1": w1, "u2": w2, "v1": 1 - w1, "v2": 1 - w2}


def test_slice_utility_log():
    sc = one_slice_two_users(1.0, (0.5, 0.5), (2 * math.e, 2 * math.e))
    assert slice_utility(sc, "A", _with_rates(sc, math.e, math.e)) == pytest.approx(1.0)


def test_slice_utility_ignores_zero_priority():
    sc = one_slice_two_users(2.0, (1.0, 0.0), (4.0, 4.0))
    assert slice_utility(sc, "A", _with_rates(sc, 2.0, 1.7)) == pytest.approx(-0.5)


def test_slice_utility_sqrt():
    sc = one_slice_two_users(0.5, (0.25, 0.75), (8.0, 8.0))
    assert slice_utility(sc, "A", _with_rates(sc, 4.0, 1.0)) == pytest.approx(2.5)


def test_network_utility_single_slice_equals_slice_utility():
    sc = build(["b"], [("A", 1.0, 1.0, [("u1", "b", 3, 0.4), ("u2", "b", 5, 0.6)])])
    w = {"u1": 0.3, "u2": 0.7}
    assert network_utility(sc, w) == pytest.approx(slice_utility(sc, "A", w))


def test_network_utility_weights_by_share():
    sc = one_slice_two_users(1.0, (0.5, 0.5), (1.0, 1.0))
    w = {"u1": 0.5, "u2": 0.5, "v1": 0.5, "v2": 0.5}
    expected = 0.5 * slice_utility(sc, "A", w) + 0.5 * slice_utility(sc, "B", w)
    assert network_utility(sc, w) == pytest.approx(expected)
    assert network_utility_from_slices(sc.arrays, np.array([2.0, -1.0])) == 0.5


def test_tight_instance_optimum_closed_form():
    sc, u_opt, _ = poa_tight_instance(4, 0.6, 0.4)
    assert social_optimum_log(sc).network_utility == pytest.approx(u_opt, abs=1e-9)


def test_validate_well_formed():
    rep = validate_scenario(two_slice())
    assert rep.ok and not rep.sole_occupancy


def test_validate_share_sum():
    sc = build(["b"], [
        ("A", 0.6, 1.0, [("u1", "b", 1, 1.0)]),
        ("B", 0.5, 1.0, [("u2", "b", 1, 1.0)]),
    ])
    rep = validate_scenario(sc)
    assert not rep.ok
    assert any("sum" in e for e in rep.errors)


def test_validate_tight_instance_flags_station_one():
    sc, _, _ = poa_tight_instance(4, 0.6, 0.4)
    rep = validate_scenario(sc)
    assert rep.ok
    assert rep.sole_occupancy == ["b1"]


def test_weight_allocation_roundtrip():
    sc = two_slice()
    w = WeightAllocation.from_mapping(sc, {"a1": 0.1, "a2": 0.4, "c1": 0.3, "c2": 0.2})
    assert WeightAllocation.from_array(sc, w.weights).allclose(w)
