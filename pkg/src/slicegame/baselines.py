"""Comparison allocations: static slicing and the social optimum."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .best_response import UnsupportedAlphaError
from .model import (
    DegenerateAllocationError,
    NetworkScenario,
    RateVector,
    WeightAllocation,
    _weights_of,
    alpha_fair_deriv,
    network_utility_from_slices,
    rates_from_weights,
    slice_utilities_from_rates,
)


@dataclass(frozen=True, eq=False)
class BaselineResult:
    allocation: WeightAllocation
    rates: RateVector
    utility_per_slice: np.ndarray
    network_utility: float
    diagnostics: dict[str, Any] = field(default_factory=dict)


def _result(scenario, w, r, **diag) -> BaselineResult:
    arr = scenario.arrays
    per_slice = slice_utilities_from_rates(arr, r)
    return BaselineResult(
        WeightAllocation(arr.user_ids, w),
        RateVector(arr.user_ids, r),
        per_slice,
        network_utility_from_slices(arr, per_slice),
        dict(diag),
    )


def static_slicing(scenario: NetworkScenario) -> BaselineResult:
    """Each slice owns ``share`` of every station and optimises within it.

    Within a station the slice splits its fraction in proportion to ``beta``;
    budgets across stations are proportional to the per-station ``beta`` sums,
    so overall ``w_u`` is proportional to ``beta_u`` within the slice.
    """
    arr = scenario.arrays
    w = np.zeros(arr.n_users)
    for o, idx in enumerate(arr.slice_users):
        if idx.size == 0:
            continue
        lb = arr.log_beta[idx]
        if np.any(np.isfinite(lb)):
            e = np.exp(lb - lb[np.isfinite(lb)].max())
            w[idx] = arr.share[o] * e / e.sum()
        else:
            w[idx] = arr.share[o] / idx.size
    r = arr.within * arr.share[arr.user_slice] * arr.capacity
    return _result(scenario, w, r, method="closed-form")


def social_optimum_log(scenario: NetworkScenario) -> BaselineResult:
    """Priority-proportional weights ``w_u = phi_u * share``; log utilities only."""
    arr = scenario.arrays
    if np.any(arr.alpha != 1.0):
        raise UnsupportedAlphaError(
            "closed-form social optimum needs alpha = 1 for every slice; "
            "use social_optimum_numeric instead"
        )
    w = arr.priority * arr.share[arr.user_slice]
    return _result(scenario, w, rates_from_weights(arr, w), method="closed-form")


def _gradient(arr, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    loads = np.bincount(arr.user_station, weights=w, minlength=arr.n_stations)
    r = rates_from_weights(arr, w)
    q = np.zeros(arr.n_users)
    pos = arr.priority > 0
    for o in range(arr.n_slices):
        m = pos & (arr.user_slice == o)
        q[m] = arr.share[o] * arr.priority[m] * alpha_fair_deriv(arr.alpha[o], r[m]) * arr.capacity[m]
    Q = np.bincount(arr.user_station, weights=q * w, minlength=arr.n_stations)
    lb = loads[arr.user_station]
    g = np.zeros(arr.n_users)
    c = ~arr.user_sole
    g[c] = q[c] / lb[c] - Q[arr.user_station[c]] / lb[c] ** 2
    return g, r


def social_gradient(scenario: NetworkScenario, allocation) -> dict[str, float]:
    """Partial derivatives of the share-weighted network utility in each weight.

    Users at single-slice stations get 0: their rate ignores their weight.
    """
    arr = scenario.arrays
    g, _ = _gradient(arr, _weights_of(scenario, allocation))
    return dict(zip(arr.user_ids, g.tolist()))


def project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = total}``.

    Sort-and-threshold; a stable sort keeps ties in index order.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return v.copy()
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot project a vector with non-finite entries")
    u = np.sort(v, kind="stable")[::-1]
    css = np.cumsum(u) - total
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def project_simplices(v: np.ndarray, group: np.ndarray, totals: np.ndarray) -> np.ndarray:
    """Project each group of ``v`` onto its own scaled simplex in one pass.

    ``group`` holds group indices in ``0..len(totals)-1``; equivalent to
    calling :func:`project_simplex` per group.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return v.copy()
    order = np.lexsort((np.arange(v.size), -v, group))
    g = group[order]
    u = v[order]
    starts = np.r_[0, np.flatnonzero(np.diff(g)) + 1]
    sizes = np.diff(np.r_[starts, g.size])
    first = np.repeat(starts, sizes)
    cs = np.cumsum(u)
    cs = cs - np.r_[0.0, cs][first] - totals[g]
    rank = np.arange(g.size) - first + 1
    ok = u - cs / rank > 0
    # the condition holds on a prefix of each sorted group
    n_ok = np.bincount(g[ok], minlength=totals.size)
    last = starts + n_ok[g[starts]] - 1
    theta = np.zeros(totals.size)
    theta[g[starts]] = cs[last] / n_ok[g[starts]]
    return np.maximum(v - theta[group], 0.0)


def social_optimum_numeric(
    scenario: NetworkScenario,
    starts: int = 8,
    max_iters: int = 5000,
    tol: float = 1e-9,
    seed: int = 0,
    heuristic_starts: bool = True,
    armijo: float = 1e-4,
    memory: int = 10,
    initial: Sequence[Any] = (),
) -> BaselineResult:
    """Best local maximiser of the network utility found by projected gradient ascent.

    Each slice's weights live on the scaled simplex over its users at
    contested stations. This is the spectral projected gradient method:
    Barzilai-Borwein step lengths, and a nonmonotone Armijo search (against the
    best of the last ``memory`` values) along the projected direction. Starts:
    any ``initial`` allocations, priority-proportional, static slicing, then
    seeded random simplex points, ``starts`` in total.
    The result is a local optimum only (``diagnostics["optimality"] == "local"``).
    """
    arr = scenario.arrays
    groups = []
    for o, idx in enumerate(arr.slice_users):
        free = idx[~arr.user_sole[idx]]
        groups.append((o, free))
    rng = np.random.default_rng(seed)

    free_idx = np.concatenate([free for _, free in groups]).astype(int)
    free_grp = arr.user_slice[free_idx]

    def feasible(w):
        out = np.zeros(arr.n_users)
        out[free_idx] = project_simplices(w[free_idx], free_grp, arr.share)
        return out

    def renorm(w):
        out = np.zeros(arr.n_users)
        for o, free in groups:
            if free.size:
                s = w[free].sum()
                out[free] = w[free] / s * arr.share[o] if s > 0 else arr.share[o] / free.size
        return out

    def objective(w):
        try:
            r = rates_from_weights(arr, w)
        except DegenerateAllocationError:
            return -math.inf
        return network_utility_from_slices(arr, slice_utilities_from_rates(arr, r))

    inits = [renorm(np.asarray(_weights_of(scenario, w0), dtype=float)) for w0 in initial]
    if heuristic_starts:
        inits.append(renorm(arr.priority * arr.share[arr.user_slice]))
        inits.append(renorm(static_slicing(scenario).allocation.weights))
    while len(inits) < starts:
        inits.append(renorm(rng.dirichlet(np.ones(arr.n_users))))
    inits = inits[:starts]

    best = None
    for k, w in enumerate(inits):
        f = objective(w)
        g, _ = _gradient(arr, w)
        history = [f]
        lam = 1.0
        res = math.inf
        it = 0
        for it in range(1, max_iters + 1):
            res = float(np.max(np.abs(feasible(w + g) - w)))
            if res <= tol:
                break
            d = feasible(w + lam * g) - w
            slope = float(np.dot(g, d))
            f_ref = max(history[-memory:])
            # slack for rounding: near the optimum objective differences fall
            # below machine precision while the gradient stays informative
            slack = 8 * np.finfo(float).eps * max(1.0, abs(f))
            t = 1.0
            while True:
                w_new = w + t * d
                f_new = objective(w_new)
                if f_new >= f_ref + armijo * t * slope - slack:
                    break
                t *= 0.5
                if t < 1e-30:
                    break
            if t < 1e-30:
                break
            g_new, _ = _gradient(arr, w_new)
            s = w_new - w
            sy = float(np.dot(s, g_new - g))
            lam = float(np.dot(s, s)) / -sy if sy < 0 else 1e12
            lam = min(max(lam, 1e-12), 1e12)
            w, f, g = w_new, f_new, g_new
            history.append(f)
        if best is None or (f, -res) > (best[0], -best[4]):
            best = (f, k, w, it, res)
    f, k, w, it, res = best
    converged = res <= tol
    if not converged:
        warnings.warn(f"social optimum search stopped with residual {res:.3g}", RuntimeWarning)
    return _result(
        scenario,
        w,
        rates_from_weights(arr, w),
        method="projected-gradient",
        optimality="local",
        starts=len(inits),
        best_start=k,
        iterations=it,
        residual=res,
        converged=converged,
    )
