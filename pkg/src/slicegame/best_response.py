"""Best responses of a single slice with homogeneous alpha-fair utility.

Given the aggregate weight ``a_b`` of the other slices at each station, the
optimal weights of a slice split within a station in proportion to ``beta``
and across stations so that

    h_b(d_b) = d_b (a_b + d_b)^(2/alpha - 1) / (S_b a_b^(1/alpha))

takes a common value ``t`` for every station, with ``sum_b d_b = share``.
Both ``h_b`` and ``t -> sum_b h_b^{-1}(t)`` are strictly increasing, so the
solve is a pair of nested monotone scalar root finds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from .model import (
    DegenerateAllocationError,
    NetworkScenario,
    ScenarioArrays,
    ScenarioError,
    WeightAllocation,
    _weights_of,
    rates_from_weights,
    slice_station_loads,
)


class SolverError(RuntimeError):
    """A root find failed to meet its tolerance."""


class UnsupportedAlphaError(ValueError):
    pass


@dataclass(frozen=True)
class BestResponseOptions:
    """Tolerances for the nested solve.

    ``outer_rtol`` bounds ``|sum(d) - share| / share``; ``inner_tol`` is the
    relative precision of each per-station root. ``epsilon`` adds a phantom
    weight to every contested station the slice serves.
    """

    outer_rtol: float = 1e-12
    inner_tol: float = 1e-13
    epsilon: float = 0.0
    max_iter: int = 200
    method: str = "newton"

    def __post_init__(self) -> None:
        if not (self.outer_rtol > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.method not in ("newton", "bisection"):
            raise ValueError(f"unknown method {self.method!r}")


DEFAULT_OPTIONS = BestResponseOptions()


class _SliceData:
    """Per-slice index bookkeeping reused across best responses."""

    __slots__ = ("o", "alpha", "share", "users", "active", "stations", "log_S", "pos", "within")

    def __init__(self, arr: ScenarioArrays, o: int) -> None:
        self.o = o
        self.alpha = float(arr.alpha[o])
        self.share = float(arr.share[o])
        self.users = arr.slice_users[o]
        st = arr.user_station[self.users]
        lS = arr.log_S[o, st]
        # users that can receive weight: contested station, positive beta mass there
        self.active = arr.contested[st] & np.isfinite(lS)
        self.stations = np.unique(st[self.active])
        self.log_S = arr.log_S[o, self.stations]
        self.pos = np.searchsorted(self.stations, st)
        self.within = arr.within[self.users]


def _slice_data(arr: ScenarioArrays, o: int) -> _SliceData:
    cache = arr.__dict__.setdefault("_br_cache", {})
    if o not in cache:
        cache[o] = _SliceData(arr, o)
    return cache[o]


def beta_coefficients(scenario: NetworkScenario, slice_id: str) -> dict[str, float]:
    """``beta_u = phi_u^(1/alpha) c_u^(1/alpha - 1)`` for each user of the slice."""
    o = scenario.slice_index(slice_id)
    arr = scenario.arrays
    if not arr.alpha[o] > 0:
        raise UnsupportedAlphaError("alpha must be positive")
    idx = arr.slice_users[o]
    return {arr.user_ids[i]: float(math.exp(arr.log_beta[i])) for i in idx}


def station_response(d, a, S, alpha: float):
    """The increasing map ``h_b`` whose level sets define the best response."""
    d = np.asarray(d, dtype=float)
    return d * (a + d) ** (2.0 / alpha - 1.0) / (S * a ** (1.0 / alpha))


# --------------------------------------------------------------------------
# nested root finding


def _newton_budgets(alpha, a, log_S, share, opts: BestResponseOptions) -> np.ndarray:
    # Work in y = log d and tau = log t: g(y) = y + k log(a + e^y) has slope in
    # [lo_slope, hi_slope], which brackets each root from a single evaluation.
    k = 2.0 / alpha - 1.0
    lo_slope, hi_slope = min(1.0, 2.0 / alpha), max(1.0, 2.0 / alpha)
    la = np.log(a)
    offset = log_S + la / alpha
    log_share = math.log(share)

    def g(y):
        return y + k * np.logaddexp(la, y)

    def gp(y):
        return 1.0 + k * expit(y - la)

    def inner(tau, y):
        target = tau + offset
        r = g(y) - target
        lo = np.where(r > 0, y - r / lo_slope, y)
        hi = np.where(r > 0, y, y - r / lo_slope)
        for _ in range(opts.max_iter):
            step = r / gp(y)
            y_new = y - step
            bad = (y_new <= lo) | (y_new >= hi)
            y_new = np.where(bad, 0.5 * (lo + hi), y_new)
            moved = np.abs(y_new - y)
            y = y_new
            r = g(y) - target
            lo = np.where(r < 0, y, lo)
            hi = np.where(r > 0, y, hi)
            if np.all((moved <= opts.inner_tol) | (r == 0) | (hi - lo <= opts.inner_tol)):
                return y
        raise SolverError("inner root find did not converge")

    y = log_share + log_S - logsumexp(log_S)
    tau = float(np.mean(g(y) - offset))
    y = inner(tau, y)
    F = logsumexp(y) - log_share
    if F > 0:
        t_lo, t_hi = tau - F * hi_slope, tau
    else:
        t_lo, t_hi = tau, tau - F * hi_slope
    for _ in range(opts.max_iter):
        if abs(math.expm1(F)) <= opts.outer_rtol:
            break
        e = np.exp(y - logsumexp(y))
        slope = float(np.sum(e / gp(y)))
        tau_new = tau - F / slope
        if not t_lo < tau_new < t_hi:
            tau_new = 0.5 * (t_lo + t_hi)
        y = inner(tau_new, y + (tau_new - tau) / gp(y))
        tau = tau_new
        F = logsumexp(y) - log_share
        if F > 0:
            t_hi = tau
        elif F < 0:
            t_lo = tau
        if t_hi - t_lo <= 4 * np.finfo(float).eps * max(1.0, abs(tau)):
            break
    else:
        raise SolverError("budget root find did not converge")
    d = np.exp(y)
    return d * (share / d.sum())


def _bisection_budgets(alpha, a, log_S, share, opts: BestResponseOptions) -> np.ndarray:
    k = 2.0 / alpha - 1.0
    offset = log_S + np.log(a) / alpha

    def log_h(d):
        with np.errstate(divide="ignore"):
            return np.log(d) + k * np.log(a + d) - offset

    def inverse(log_t):
        lo = np.zeros_like(a)
        hi = np.full_like(a, share)
        for _ in range(opts.max_iter):
            low = log_h(hi) < log_t
            if not low.any():
                break
            hi = np.where(low, 2.0 * hi, hi)
        for _ in range(opts.max_iter):
            mid = 0.5 * (lo + hi)
            above = log_h(mid) >= log_t
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            if np.all(hi - lo <= opts.inner_tol * hi):
                break
        return 0.5 * (lo + hi)

    even = log_h(np.full_like(a, share / a.size))
    lt_lo, lt_hi = float(even.min()), float(even.max())
    d = inverse(lt_hi)
    for _ in range(opts.max_iter):
        mid = 0.5 * (lt_lo + lt_hi)
        d = inverse(mid)
        total = d.sum()
        if abs(total - share) <= opts.outer_rtol * share:
            break
        if total > share:
            lt_hi = mid
        else:
            lt_lo = mid
        if lt_hi - lt_lo <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            break
    else:
        raise SolverError("budget bisection did not converge")
    return d * (share / d.sum())


def solve_station_budgets(alpha, a, S, share, options: BestResponseOptions = DEFAULT_OPTIONS):
    """Per-station budgets ``d_b`` of a best response against loads ``a``.

    ``S`` holds the per-station sums of ``beta``. All ``a`` must be positive.
    """
    a = np.asarray(a, dtype=float)
    log_S = np.log(np.asarray(S, dtype=float))
    return _station_budgets(alpha, a, log_S, share, options)


def _station_budgets(alpha, a, log_S, share, opts):
    if not alpha > 0:
        raise UnsupportedAlphaError(
            "best responses are defined for alpha > 0 only; linear utilities are unsupported"
        )
    if a.size == 0:
        return a.copy()
    if a.size == 1:
        return np.array([share])
    if opts.method == "newton":
        return _newton_budgets(alpha, a, log_S, share, opts)
    return _bisection_budgets(alpha, a, log_S, share, opts)


def _best_response_weights(
    arr: ScenarioArrays, o: int, others: np.ndarray, opts: BestResponseOptions
) -> np.ndarray:
    """Weights of slice ``o``'s users (slice order) against per-station loads ``others``."""
    sd = _slice_data(arr, o)
    w = np.zeros(sd.users.size)
    if sd.stations.size == 0:
        return w
    a = others[sd.stations]
    if np.any(a < 0):
        b = sd.stations[np.argmax(a < 0)]
        raise ScenarioError(f"negative load {a.min()!r} at base station {arr.station_ids[b]!r}")
    a = a + opts.epsilon
    if np.any(a <= 0):
        b = sd.stations[np.argmax(a <= 0)]
        raise DegenerateAllocationError(
            f"other slices place no weight at contested base station {arr.station_ids[b]!r}"
        )
    d = _station_budgets(sd.alpha, a, sd.log_S, sd.share, opts)
    act = sd.active
    w[act] = sd.within[act] * d[sd.pos[act]]
    return w


def _others_loads(arr: ScenarioArrays, w: np.ndarray, o: int) -> np.ndarray:
    mask = arr.user_slice != o
    return np.bincount(arr.user_station[mask], weights=w[mask], minlength=arr.n_stations)


def best_response(
    scenario: NetworkScenario,
    slice_id: str,
    others_weights,
    options: BestResponseOptions = DEFAULT_OPTIONS,
) -> np.ndarray:
    """Optimal weights of ``slice_id`` given the other slices' weights.

    ``others_weights`` is a full allocation (the slice's own entries are
    ignored). Returns the slice's weights in the order of its ``user_ids``.
    Users at stations no other slice serves receive zero weight.
    """
    arr = scenario.arrays
    o = scenario.slice_index(slice_id)
    w = _weights_of(scenario, others_weights)
    return _best_response_weights(arr, o, _others_loads(arr, w, o), options)


def with_slice_weights(
    scenario: NetworkScenario, allocation, slice_id: str, slice_weights
) -> WeightAllocation:
    """Copy of ``allocation`` with one slice's weights replaced."""
    arr = scenario.arrays
    w = np.array(_weights_of(scenario, allocation), dtype=float)
    w[arr.slice_users[scenario.slice_index(slice_id)]] = slice_weights
    return WeightAllocation(arr.user_ids, w)


def stationarity_residual(
    scenario: NetworkScenario, slice_id: str, allocation, epsilon: float = 0.0
) -> float:
    """``max_u |w_u - RHS_u| / share`` of the best-response fixed point equations."""
    arr = scenario.arrays
    o = scenario.slice_index(slice_id)
    sd = _slice_data(arr, o)
    w = _weights_of(scenario, allocation)
    ws = w[sd.users]
    if sd.stations.size == 0:
        return float(np.max(np.abs(ws), initial=0.0)) / sd.share
    d = slice_station_loads(arr, w)[o, sd.stations]
    a = _others_loads(arr, w, o)[sd.stations] + epsilon
    if np.any(a <= 0):
        b = sd.stations[np.argmax(a <= 0)]
        raise DegenerateAllocationError(
            f"zero load from other slices at base station {arr.station_ids[b]!r}"
        )
    alpha = sd.alpha
    log_g = np.log(a) / alpha - (2.0 / alpha - 1.0) * np.log(a + d)
    act = sd.active
    lb = arr.log_beta[sd.users]
    terms = np.full(sd.users.size, -np.inf)
    terms[act] = lb[act] + log_g[sd.pos[act]]
    rhs = sd.share * np.exp(terms - logsumexp(terms[act]))
    return float(np.max(np.abs(ws - rhs))) / sd.share


def protective_allocation(scenario: NetworkScenario, slice_id: str, others_weights) -> np.ndarray:
    """Weights that guarantee every user of the slice at least its static-slicing rate.

    The slice spreads its share over stations in proportion to the other
    slices' loads there and splits within a station like static slicing.
    """
    arr = scenario.arrays
    o = scenario.slice_index(slice_id)
    idx = arr.slice_users[o]
    others = _others_loads(arr, _weights_of(scenario, others_weights), o)
    st = arr.user_station[idx]
    contested = arr.contested[st]
    stations = np.unique(st)
    if np.any(others[stations[arr.contested[stations]]] <= 0):
        raise DegenerateAllocationError("other slices must load every contested station of the slice")
    total = others[stations].sum()
    if total <= 0:
        return np.zeros(idx.size)
    w = arr.within[idx] * others[st] / total * arr.share[o]
    return np.where(contested, w, 0.0)


def slice_rates(scenario: NetworkScenario, allocation, slice_id: str) -> np.ndarray:
    arr = scenario.arrays
    r = rates_from_weights(arr, _weights_of(scenario, allocation))
    return r[arr.slice_users[scenario.slice_index(slice_id)]]
