import math

import numpy as np
import pytest

from oracles import best_response_oracle, build, grid_simplex_2, utility
from slicegame import (
    BestResponseOptions,
    ScenarioError,
    UnsupportedAlphaError,
    beta_coefficients,
    best_response,
    compute_rates,
    protective_allocation,
    slice_utility,
    static_slicing,
    stationarity_residual,
    with_slice_weights,
)
from slicegame.best_response import solve_station_budgets, station_response


def two_station(alpha=1.0, phi=(0.5, 0.5), caps=(1.0, 1.0), share=0.5, others=(0.3, 0.2)):
    sc = build(["b1", "b2"], [
        ("A", share, alpha, [("u1", "b1", caps[0], phi[0]), ("u2", "b2", caps[1], phi[1])]),
        ("B", 1 - share, 1.0, [("v1", "b1", 1.0, 0.5), ("v2", "b2", 1.0, 0.5)]),
    ])
    w = {"u1": share / 2, "u2": share / 2, "v1": others[0], "v2": others[1]}
    return sc, w


def test_beta_log_is_priority():
    sc, _ = two_station(phi=(0.3, 0.7), caps=(5.0, 2.0))
    assert beta_coefficients(sc, "A") == pytest.approx({"u1": 0.3, "u2": 0.7})


@pytest.mark.parametrize("alpha, phi, c, expected", [(2.0, 0.5, 4.0, 0.35355339), (0.5, 0.5, 2.0, 0.5)])
def test_beta_closed_form(alpha, phi, c, expected):
    sc, _ = two_station(alpha=alpha, phi=(phi, 1 - phi), caps=(c, 1.0))
    assert beta_coefficients(sc, "A")["u1"] == pytest.approx(expected, rel=1e-7)


def test_two_station_log_example():
    sc, w = two_station()
    br = best_response(sc, "A", w)
    # d1 solves 5/3 d^2 - 7 d + 1.75 = 0 (smaller root)
    d1 = (7 - math.sqrt(49 - 4 * (5 / 3) * 1.75)) / (2 * 5 / 3)
    assert br == pytest.approx([d1, 0.5 - d1], abs=1e-12)
    assert br == pytest.approx([0.26697, 0.23303], abs=1e-5)
    _, oracle = best_response_oracle(sc, "A", {"b1": 0.3, "b2": 0.2})
    assert br == pytest.approx([oracle["u1"], oracle["u2"]], abs=1e-6)


def test_symmetric_stations_split_evenly():
    sc, w = two_station(others=(0.25, 0.25))
    assert best_response(sc, "A", w) == pytest.approx([0.25, 0.25], abs=1e-14)


def test_single_contested_station_follows_beta():
    sc = build(["b"], [
        ("A", 0.3, 2.0, [("u1", "b", 4.0, 0.5), ("u2", "b", 1.0, 0.5)]),
        ("B", 0.7, 1.0, [("v", "b", 1.0, 1.0)]),
    ])
    br = best_response(sc, "A", {"u1": 0.0, "u2": 0.0, "v": 0.7})
    assert br == pytest.approx([0.1, 0.2], abs=1e-14)

    def obj(x, y):
        l = 0.7 + x + y
        return 0.5 * utility(2.0, x / l * 4.0) + 0.5 * utility(2.0, y / l)

    gx, gy = grid_simplex_2(obj, 0.3)
    assert br == pytest.approx([gx, gy], abs=1e-5)


@pytest.mark.parametrize("method", ["newton", "bisection"])
@pytest.mark.parametrize("alpha", [0.3, 1.0, 2.0, 5.0])
def test_methods_agree_and_are_stationary(method, alpha):
    sc = build(["b1", "b2", "b3"], [
        ("A", 0.4, alpha, [("u1", "b1", 3.0, 0.2), ("u2", "b2", 1.0, 0.5), ("u3", "b3", 8.0, 0.2), ("u4", "b3", 2.0, 0.1)]),
        ("B", 0.6, 1.0, [("v1", "b1", 1.0, 0.2), ("v2", "b2", 1.0, 0.3), ("v3", "b3", 1.0, 0.5)]),
    ])
    others = {"v1": 0.05, "v2": 0.3, "v3": 0.25}
    opts = BestResponseOptions(method=method)
    br = best_response(sc, "A", others, opts)
    ref = best_response(sc, "A", others)
    assert br.sum() == pytest.approx(0.4, rel=1e-12)
    assert br == pytest.approx(ref, abs=1e-11)
    full = with_slice_weights(sc, others, "A", br)
    assert stationarity_residual(sc, "A", full) <= 1e-8


def test_uniform_weights_not_stationary():
    sc, w = two_station(caps=(1.0, 4.0), others=(0.45, 0.05))
    assert stationarity_residual(sc, "A", w) > 1e-3


def test_symmetric_point_is_stationary():
    sc, w = two_station(others=(0.25, 0.25))
    assert stationarity_residual(sc, "A", w) <= 1e-12


@pytest.mark.parametrize("alpha", [0.3, 1.0, 2.0, 5.0])
def test_station_response_increasing(alpha):
    d = np.linspace(1e-6, 5.0, 2000)
    h = station_response(d, 0.7, 1.3, alpha)
    assert np.all(np.diff(h) > 0)


def test_budgets_sum_to_share():
    d = solve_station_budgets(2.0, [0.1, 1.0, 10.0], [0.3, 0.3, 0.4], 0.25)
    assert d.sum() == pytest.approx(0.25, rel=1e-12)
    assert np.all(d > 0)


def test_sole_stations_get_nothing():
    sc = build(["b1", "b2"], [
        ("A", 0.5, 1.0, [("u1", "b1", 1.0, 0.5), ("u2", "b2", 1.0, 0.5)]),
        ("B", 0.5, 1.0, [("v2", "b2", 1.0, 1.0)]),
    ])
    assert best_response(sc, "A", {"v2": 0.5}) == pytest.approx([0.0, 0.5])


def test_all_sole_slice_gets_zero_weights():
    sc = build(["b1", "b2"], [
        ("A", 0.5, 1.0, [("u1", "b1", 1.0, 1.0)]),
        ("B", 0.5, 1.0, [("v2", "b2", 1.0, 1.0)]),
    ])
    assert best_response(sc, "A", {"v2": 0.5}).tolist() == [0.0]
    assert protective_allocation(sc, "A", {"v2": 0.5}).tolist() == [0.0]


def test_negative_load_rejected():
    sc, w = two_station()
    w["v1"] = -0.1
    with pytest.raises(ScenarioError, match="b1"):
        best_response(sc, "A", w)


def test_linear_utility_unsupported():
    with pytest.raises(UnsupportedAlphaError):
        solve_station_budgets(0.0, [0.1, 0.2], [1.0, 1.0], 0.5)


def test_protective_example():
    sc, w = two_station(others=(0.4, 0.1))
    p = protective_allocation(sc, "A", w)
    assert p == pytest.approx([0.4, 0.1], abs=1e-15)
    full = with_slice_weights(sc, w, "A", p)
    rates = [float(x) for x in (full.weights[0] / 0.8, full.weights[1] / 0.2)]
    ss = static_slicing(sc).rates
    assert rates == pytest.approx([0.5, 0.5])
    assert rates == pytest.approx([ss["u1"], ss["u2"]], abs=1e-15)


def test_protective_strict_subset_beats_static():
    rng = np.random.default_rng(0)
    sc = build(["b1", "b2", "b3"], [
        ("A", 0.3, 1.0, [("u1", "b1", 1.0, 0.5), ("u2", "b2", 2.0, 0.5)]),
        ("B", 0.7, 1.0, [("v1", "b1", 1.0, 0.3), ("v2", "b2", 1.0, 0.3), ("v3", "b3", 1.0, 0.4)]),
    ])
    ss = static_slicing(sc).rates
    for _ in range(20):
        wb = rng.dirichlet(np.ones(3)) * 0.7
        others = {"v1": wb[0], "v2": wb[1], "v3": wb[2]}
        full = with_slice_weights(sc, others, "A", protective_allocation(sc, "A", others))
        r = compute_rates(sc, full)
        assert r["u1"] > ss["u1"] and r["u2"] > ss["u2"]


def test_protective_symmetric_equals_best_response():
    sc, w = two_station(others=(0.25, 0.25))
    assert protective_allocation(sc, "A", w) == pytest.approx(best_response(sc, "A", w), abs=1e-14)


def test_best_response_beats_protective():
    sc, w = two_station(alpha=2.0, caps=(3.0, 1.0), others=(0.35, 0.15))
    br = with_slice_weights(sc, w, "A", best_response(sc, "A", w))
    pr = with_slice_weights(sc, w, "A", protective_allocation(sc, "A", w))
    assert slice_utility(sc, "A", br) >= slice_utility(sc, "A", pr)
