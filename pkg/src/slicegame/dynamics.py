"""Round-robin best-response dynamics and equilibrium certification."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .baselines import static_slicing
from .best_response import (
    DEFAULT_OPTIONS,
    BestResponseOptions,
    _best_response_weights,
    _others_loads,
    stationarity_residual,
)
from .model import (
    NetworkScenario,
    ScenarioError,
    WeightAllocation,
    _weights_of,
    network_utility_from_slices,
    rates_from_weights,
    slice_utilities_from_rates,
)

logger = logging.getLogger(__name__)


class DynamicsError(RuntimeError):
    """A best response failed during the dynamics; carries round and slice."""

    def __init__(self, round_no: int, slice_id: str, cause: Exception) -> None:
        super().__init__(f"round {round_no}, slice {slice_id!r}: {cause}")
        self.round = round_no
        self.slice_id = slice_id


@dataclass(frozen=True)
class DynamicsOptions:
    tol: float = 1e-6
    max_rounds: int = 500
    order: Sequence[str] | None = None
    shuffle_seed: int | None = None
    stop_on: str = "weights"  # or "utility"
    best_response: BestResponseOptions = DEFAULT_OPTIONS
    certify: bool = True


@dataclass
class GameTrace:
    """Per-round record. Index ``r`` of ``allocations`` is the profile after round ``r``.

    ``upper``/``lower``/``lyapunov``/``max_change`` are indexed by round
    ``1..R`` (list position ``r - 1``).
    """

    slice_ids: tuple[str, ...]
    allocations: list[np.ndarray] = field(default_factory=list)
    utilities: list[np.ndarray] = field(default_factory=list)
    upper: list[np.ndarray] = field(default_factory=list)
    lower: list[np.ndarray] = field(default_factory=list)
    lyapunov: list[float] = field(default_factory=list)
    max_change: list[float] = field(default_factory=list)

    @property
    def rounds(self) -> int:
        return len(self.lyapunov)

    def rows(self):
        """Flat ``(round, slice, V, max_delta, utility)`` rows for export."""
        for r in range(1, self.rounds + 1):
            for o, sid in enumerate(self.slice_ids):
                delta = max(abs(self.upper[r - 1][o]), abs(self.lower[r - 1][o]))
                yield r, sid, self.lyapunov[r - 1], delta, float(self.utilities[r][o])


@dataclass
class EquilibriumReport:
    allocation: WeightAllocation
    rounds_used: int
    converged: bool
    max_relative_change: float
    stationarity_residuals: dict[str, float]
    nash_residual: float
    utilities: dict[str, float] = field(default_factory=dict)
    network_utility: float = math.nan

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "rounds_used": self.rounds_used,
            "max_relative_change": self.max_relative_change,
            "nash_residual": self.nash_residual,
            "stationarity_residuals": self.stationarity_residuals,
            "utilities": self.utilities,
            "network_utility": self.network_utility,
            "weights": self.allocation.as_dict(),
        }


def default_initial_allocation(scenario: NetworkScenario) -> WeightAllocation:
    """Static-slicing weights with single-slice stations zeroed and shares restored.

    At extreme alphas the static-slicing weights can underflow to exactly 0;
    a slice where that happens to a user the best response would serve is
    blended half and half with the uniform split over such users.
    """
    arr = scenario.arrays
    w = np.array(static_slicing(scenario).allocation.weights)
    eligible = ~arr.user_sole & (arr.within > 0)
    w[~eligible] = 0.0
    for o, idx in enumerate(arr.slice_users):
        e = idx[eligible[idx]]
        if e.size == 0:
            continue
        s = w[e].sum()
        if s > 0:
            w[e] *= arr.share[o] / s
        if s <= 0 or np.any(w[e] == 0):
            w[e] = 0.5 * w[e] + 0.5 * arr.share[o] / e.size
    return WeightAllocation(arr.user_ids, w)


def _relative_changes(
    prev: np.ndarray, nxt: np.ndarray, strict: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise ``nxt / prev - 1``, skipping users at zero in both.

    A weight leaving zero raises with ``strict``; otherwise its change is
    ``+inf`` (weights can underflow to zero at extreme alphas).
    """
    both_zero = (prev == 0) & (nxt == 0)
    born = (prev == 0) & ~both_zero
    if strict and np.any(born):
        raise ScenarioError("relative change from a zero weight is undefined")
    keep = ~both_zero
    delta = np.zeros_like(prev)
    ok = keep & ~born
    delta[ok] = nxt[ok] / prev[ok] - 1.0
    delta[born] = np.inf
    return delta, keep


def round_deltas(
    scenario: NetworkScenario, prev_allocation, next_allocation
) -> dict[str, tuple[float, float]]:
    """Per-slice (largest, smallest) relative weight change between two rounds.

    Users whose weight is zero in both rounds are left out.
    """
    arr = scenario.arrays
    delta, keep = _relative_changes(
        np.asarray(_weights_of(scenario, prev_allocation), dtype=float),
        np.asarray(_weights_of(scenario, next_allocation), dtype=float),
    )
    up, lo = _extremes(arr, delta, keep)
    return {sid: (float(up[o]), float(lo[o])) for o, sid in enumerate(arr.slice_ids)}


def _extremes(arr, delta, keep):
    up = np.zeros(arr.n_slices)
    lo = np.zeros(arr.n_slices)
    for o, idx in enumerate(arr.slice_users):
        k = idx[keep[idx]]
        if k.size:
            up[o] = delta[k].max()
            lo[o] = delta[k].min()
    return up, lo


def lyapunov(deltas) -> float:
    """``max_o max(1 + upper_o, 1 / (1 + lower_o)) - 1`` over per-slice extremes.

    ``deltas`` is a mapping or sequence of ``(upper, lower)`` pairs.
    """
    pairs = deltas.values() if hasattr(deltas, "values") else deltas
    pairs = list(pairs)
    for _, lo in pairs:
        if not 1.0 + lo > 0:
            raise ValueError("relative decrease must stay above -1")
    return _lyapunov(pairs)


def _lyapunov(pairs) -> float:
    # a weight dropping to exactly zero counts as an unbounded swing
    v = 1.0
    for up, lo in pairs:
        v = max(v, 1.0 + up, 1.0 / (1.0 + lo) if 1.0 + lo > 0 else math.inf)
    return v - 1.0


def _order(scenario: NetworkScenario, options: DynamicsOptions) -> list[int]:
    arr = scenario.arrays
    if options.order is not None:
        order = [scenario.slice_index(s) for s in options.order]
        if sorted(order) != list(range(arr.n_slices)):
            raise ValueError("update order must list every slice exactly once")
    else:
        order = list(range(arr.n_slices))
    if options.shuffle_seed is not None:
        np.random.default_rng(options.shuffle_seed).shuffle(order)
    return order


def nash_residual(
    scenario: NetworkScenario, allocation, options: BestResponseOptions = DEFAULT_OPTIONS
) -> float:
    """Largest utility gain any slice can obtain by deviating to its best response."""
    arr = scenario.arrays
    w = np.asarray(_weights_of(scenario, allocation), dtype=float)
    current = slice_utilities_from_rates(arr, rates_from_weights(arr, w))
    worst = -math.inf
    for o in range(arr.n_slices):
        trial = w.copy()
        trial[arr.slice_users[o]] = _best_response_weights(arr, o, _others_loads(arr, w, o), options)
        u = slice_utilities_from_rates(arr, rates_from_weights(arr, trial))[o]
        if u == current[o]:
            gain = 0.0
        elif current[o] == -math.inf:
            gain = math.inf
        else:
            gain = u - current[o]
        worst = max(worst, gain)
    return worst


def run_dynamics(
    scenario: NetworkScenario,
    initial_allocation=None,
    options: DynamicsOptions | None = None,
) -> tuple[GameTrace, EquilibriumReport]:
    """Slices take best responses one at a time, in a fixed order, round after round.

    Stops once the largest relative weight change over a round drops below
    ``options.tol`` (or the largest slice-utility change, with
    ``stop_on="utility"``), or after ``max_rounds``.
    """
    options = options or DynamicsOptions()
    arr = scenario.arrays
    if initial_allocation is None:
        initial_allocation = default_initial_allocation(scenario)
    w = np.array(_weights_of(scenario, initial_allocation), dtype=float)
    order = _order(scenario, options)
    br = options.best_response

    trace = GameTrace(arr.slice_ids)
    trace.allocations.append(w.copy())
    trace.utilities.append(slice_utilities_from_rates(arr, rates_from_weights(arr, w)))

    converged = False
    change = math.inf
    for rnd in range(1, options.max_rounds + 1):
        prev = w.copy()
        for o in order:
            # summed directly rather than as total minus own load, which
            # cancels to zero when the others' weight is tiny
            try:
                new = _best_response_weights(arr, o, _others_loads(arr, w, o), br)
            except Exception as exc:  # noqa: BLE001 - re-raised with context
                raise DynamicsError(rnd, arr.slice_ids[o], exc) from exc
            w[arr.slice_users[o]] = new
        delta, keep = _relative_changes(prev, w, strict=False)
        up, lo = _extremes(arr, delta, keep)
        utils = slice_utilities_from_rates(arr, rates_from_weights(arr, w))
        trace.allocations.append(w.copy())
        trace.utilities.append(utils)
        trace.upper.append(up)
        trace.lower.append(lo)
        trace.lyapunov.append(_lyapunov(zip(up, lo)))
        change = float(np.max(np.abs(delta), initial=0.0))
        trace.max_change.append(change)
        if options.stop_on == "utility":
            prev_u = trace.utilities[-2]
            with np.errstate(invalid="ignore"):
                du = np.abs(utils - prev_u)
            done = bool(np.all(np.where(utils == prev_u, 0.0, du) < options.tol))
        else:
            done = change < options.tol
        if done:
            converged = True
            break
    rounds = len(trace.lyapunov)
    if not converged:
        logger.warning("dynamics stopped after %d rounds (max change %.3g)", rounds, change)

    final = WeightAllocation(arr.user_ids, w)
    resid = {}
    nres = math.nan
    if options.certify:
        for sid in arr.slice_ids:
            resid[sid] = stationarity_residual(scenario, sid, final, br.epsilon)
        nres = nash_residual(scenario, final, br)
    utils = trace.utilities[-1]
    report = EquilibriumReport(
        allocation=final,
        rounds_used=rounds,
        converged=converged,
        max_relative_change=change,
        stationarity_residuals=resid,
        nash_residual=nres,
        utilities={sid: float(u) for sid, u in zip(arr.slice_ids, utils)},
        network_utility=network_utility_from_slices(arr, utils),
    )
    return trace, report


def solve_equilibrium(scenario: NetworkScenario, **kwargs) -> EquilibriumReport:
    """Shorthand for ``run_dynamics(scenario, options=DynamicsOptions(**kwargs))[1]``."""
    return run_dynamics(scenario, options=DynamicsOptions(**kwargs))[1]
