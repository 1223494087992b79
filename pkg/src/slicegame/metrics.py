"""Efficiency and fairness metrics: utility gap, exchange envy, capacity equivalents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .baselines import BaselineResult, social_optimum_log
from .best_response import UnsupportedAlphaError
from .dynamics import nash_residual
from .model import (
    NetworkScenario,
    WeightAllocation,
    _weights_of,
    network_utility,
    slice_station_loads,
    slice_utility,
)

NASH_CERTIFICATE = 1e-6


class EligibilityError(ValueError):
    """The slice pair does not meet the hypotheses required for the metric."""


def poa_gap(scenario: NetworkScenario, ne_allocation, certify: bool = True) -> float:
    """``U(w*) - U(w)`` in nats, with ``w*`` the closed-form log-utility optimum.

    With ``certify`` the allocation must be a ``1e-6``-Nash equilibrium.
    """
    arr = scenario.arrays
    if np.any(arr.alpha != 1.0):
        raise UnsupportedAlphaError("the utility gap is certified for alpha = 1 only")
    if certify:
        res = nash_residual(scenario, ne_allocation)
        if res > NASH_CERTIFICATE:
            raise ValueError(f"allocation is not an equilibrium (Nash residual {res:.3g})")
    return social_optimum_log(scenario).network_utility - network_utility(scenario, ne_allocation)


def footprint(scenario: NetworkScenario, slice_id: str) -> frozenset[str]:
    arr = scenario.arrays
    idx = arr.slice_users[scenario.slice_index(slice_id)]
    return frozenset(arr.station_ids[b] for b in np.unique(arr.user_station[idx]))


def check_envy_pair(scenario: NetworkScenario, o: str, o2: str, equal_shares: bool = True) -> None:
    if footprint(scenario, o) != footprint(scenario, o2):
        raise EligibilityError(f"slices {o!r} and {o2!r} serve different base stations")
    if equal_shares and scenario.slice(o).share != scenario.slice(o2).share:
        raise EligibilityError(f"slices {o!r} and {o2!r} have different shares")


def exchange_allocation(
    scenario: NetworkScenario,
    allocation,
    o: str,
    o2: str,
    strict: bool = True,
    equal_shares: bool = False,
) -> WeightAllocation:
    """Swap the per-station aggregate weights of two slices.

    Each slice re-splits the other's aggregate at a station in proportion to
    its own users' priorities there. Other slices are untouched. In permissive
    mode (``strict=False``) a station only one of the two serves gives the
    other slice's users nothing there.
    """
    if strict:
        check_envy_pair(scenario, o, o2, equal_shares)
    arr = scenario.arrays
    w = np.array(_weights_of(scenario, allocation), dtype=float)
    d = slice_station_loads(arr, w)
    out = w.copy()
    for mine, theirs in ((o, o2), (o2, o)):
        i = scenario.slice_index(mine)
        j = scenario.slice_index(theirs)
        idx = arr.slice_users[i]
        st = arr.user_station[idx]
        phi_tot = arr.phi_station[i, st]
        counts = arr.user_counts[i, st]
        frac = np.where(phi_tot > 0, arr.priority[idx] / np.where(phi_tot > 0, phi_tot, 1.0), 1.0 / counts)
        out[idx] = frac * d[j, st]
    return WeightAllocation(arr.user_ids, out)


def envy(
    scenario: NetworkScenario,
    allocation,
    o: str,
    o2: str,
    strict: bool = True,
    equal_shares: bool = True,
) -> float:
    """``U^o(exchanged) - U^o(w)``: positive when ``o`` prefers ``o2``'s resources."""
    swapped = exchange_allocation(scenario, allocation, o, o2, strict, equal_shares)
    return slice_utility(scenario, o, swapped) - slice_utility(scenario, o, allocation)


def eligible_envy_pairs(scenario: NetworkScenario, equal_shares: bool = True) -> list[tuple[str, str]]:
    ids = [s.id for s in scenario.slices]
    pairs = []
    for a in ids:
        for b in ids:
            if a == b:
                continue
            try:
                check_envy_pair(scenario, a, b, equal_shares)
            except EligibilityError:
                continue
            pairs.append((a, b))
    return pairs


def envy_matrix(scenario: NetworkScenario, allocation, equal_shares: bool = True) -> dict[tuple[str, str], float]:
    return {
        (a, b): envy(scenario, allocation, a, b, True, equal_shares)
        for a, b in eligible_envy_pairs(scenario, equal_shares)
    }


def envy_upper_bound_constant() -> float:
    """``-ln(ln 2) - (1/ln 2 - 1) ln 2``, the worst-case envy of a log-utility slice."""
    ln2 = math.log(2.0)
    return -math.log(ln2) - (1.0 / ln2 - 1.0) * ln2


def scaled_network_utility(alphas: Sequence[float], shares: Sequence[float], utilities: Sequence[float], kappa: float) -> float:
    """Network utility after multiplying every capacity by ``kappa``."""
    total = 0.0
    for a, s, u in zip(alphas, shares, utilities):
        total += s * (u + math.log(kappa) if a == 1.0 else u * kappa ** (1.0 - a))
    return total


def capacity_equivalent_gain(
    scenario: NetworkScenario,
    target_utility: float,
    baseline: BaselineResult | Sequence[float],
    tol: float = 1e-10,
) -> tuple[float, float]:
    """Capacity factor ``kappa`` the baseline needs to reach ``target_utility``.

    ``baseline`` is a :class:`BaselineResult` or its per-slice utilities.
    Uses the exact scaling of alpha-fair utilities under ``c -> kappa c``
    and bisects on ``log(kappa)``. Returns ``(kappa, 100 * (kappa - 1))``.
    """
    arr = scenario.arrays
    per_slice = baseline.utility_per_slice if isinstance(baseline, BaselineResult) else baseline
    per_slice = [float(u) for u in per_slice]
    if not all(math.isfinite(u) for u in per_slice) or not math.isfinite(target_utility):
        raise ValueError("capacity equivalence needs finite utilities")
    for sid, a, u in zip(arr.slice_ids, arr.alpha, per_slice):
        if a != 1.0 and u == 0.0:
            raise ValueError(f"slice {sid!r} has zero utility; scaling is not monotone")
    alphas = arr.alpha.tolist()
    shares = arr.share.tolist()

    def resid(log_k):
        return scaled_network_utility(alphas, shares, per_slice, math.exp(log_k)) - target_utility

    lo, hi = -1.0, 1.0
    while resid(lo) > 0:
        lo *= 2.0
        if lo < -1e3:
            raise ValueError("no capacity factor reaches the target")
    while resid(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise ValueError("no capacity factor reaches the target")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        r = resid(mid)
        if abs(r) <= tol or hi - lo <= 1e-15:
            break
        if r > 0:
            hi = mid
        else:
            lo = mid
    kappa = math.exp(mid)
    return kappa, 100.0 * (kappa - 1.0)


@dataclass
class MetricsReport:
    poa_gap: float | None = None
    envy: dict[tuple[str, str], float] = field(default_factory=dict)
    gain_over_ss_percent: float | None = None
    loss_vs_so_percent: float | None = None
    kappa_gain: float | None = None
    kappa_loss: float | None = None
    flags: dict[str, str] = field(default_factory=dict)

    @property
    def envy_stats(self) -> tuple[float, float, float] | None:
        if not self.envy:
            return None
        v = np.array(list(self.envy.values()))
        return float(v.min()), float(v.max()), float(v.mean())
