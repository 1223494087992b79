"""Domain types and share-constrained proportional allocation arithmetic.

A :class:`NetworkScenario` describes the game instance (stations, slices and
their users). Weight profiles are carried by :class:`WeightAllocation`, whose
values are aligned with ``scenario.users``. Everything numeric is computed on
a compiled array view (:attr:`NetworkScenario.arrays`) built once per scenario.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

SHARE_TOL = 1e-9


class ScenarioError(ValueError):
    """Structurally invalid scenario or allocation."""


class DegenerateAllocationError(ValueError):
    """Rates are undefined for the given allocation (zero load at a contested station)."""


@dataclass(frozen=True)
class UserSpec:
    id: str
    slice_id: str
    base_station: str
    capacity: float
    priority: float


@dataclass(frozen=True)
class SliceSpec:
    id: str
    share: float
    alpha: float
    user_ids: tuple[str, ...]


@dataclass(frozen=True)
class NetworkScenario:
    base_station_ids: tuple[str, ...]
    slices: tuple[SliceSpec, ...]
    users: tuple[UserSpec, ...]
    metadata: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @classmethod
    def from_slices(
        cls,
        base_station_ids: Sequence[str],
        slices: Iterable[Mapping[str, Any]],
        metadata: Mapping[str, Any] | None = None,
    ) -> "NetworkScenario":
        """Build a scenario from nested slice records.

        Each record has ``id``, ``share``, ``alpha`` and ``users``, a list of
        ``{id, bs, capacity, phi}`` mappings (the JSON file layout).
        """
        slice_specs = []
        users = []
        for rec in slices:
            sid = str(rec["id"])
            uids = []
            for u in rec["users"]:
                uid = str(u["id"])
                uids.append(uid)
                users.append(
                    UserSpec(uid, sid, str(u["bs"]), float(u["capacity"]), float(u["phi"]))
                )
            slice_specs.append(SliceSpec(sid, float(rec["share"]), float(rec["alpha"]), tuple(uids)))
        return cls(
            tuple(str(b) for b in base_station_ids),
            tuple(slice_specs),
            tuple(users),
            dict(metadata or {}),
        )

    def slice_index(self, slice_id: str) -> int:
        try:
            return self.arrays.slice_pos[slice_id]
        except KeyError:
            raise ScenarioError(f"unknown slice {slice_id!r}") from None

    def slice(self, slice_id: str) -> SliceSpec:
        return self.slices[self.slice_index(slice_id)]

    @cached_property
    def arrays(self) -> "ScenarioArrays":
        return ScenarioArrays(self)


class ScenarioArrays:
    """Index-based numeric view of a scenario.

    Users keep the order of ``scenario.users``; ``slice_users[o]`` lists user
    indices of slice ``o`` in the order of ``SliceSpec.user_ids``.
    """

    def __init__(self, scenario: NetworkScenario) -> None:
        self.station_ids = scenario.base_station_ids
        self.station_pos = {b: i for i, b in enumerate(scenario.base_station_ids)}
        self.slice_ids = tuple(s.id for s in scenario.slices)
        self.slice_pos = {s: i for i, s in enumerate(self.slice_ids)}
        self.user_ids = tuple(u.id for u in scenario.users)
        self.user_pos = {u: i for i, u in enumerate(self.user_ids)}
        if len(self.station_pos) != len(self.station_ids):
            raise ScenarioError("duplicate base station id")
        if len(self.slice_pos) != len(self.slice_ids):
            raise ScenarioError("duplicate slice id")
        if len(self.user_pos) != len(self.user_ids):
            raise ScenarioError("duplicate user id")

        n = len(scenario.users)
        self.n_users = n
        self.n_stations = B = len(self.station_ids)
        self.n_slices = O = len(self.slice_ids)
        self.user_slice = np.empty(n, dtype=np.intp)
        self.user_station = np.empty(n, dtype=np.intp)
        for i, u in enumerate(scenario.users):
            if u.slice_id not in self.slice_pos:
                raise ScenarioError(f"user {u.id!r} references unknown slice {u.slice_id!r}")
            if u.base_station not in self.station_pos:
                raise ScenarioError(
                    f"user {u.id!r} references unknown base station {u.base_station!r}"
                )
            self.user_slice[i] = self.slice_pos[u.slice_id]
            self.user_station[i] = self.station_pos[u.base_station]
        self.capacity = np.array([u.capacity for u in scenario.users], dtype=float)
        self.priority = np.array([u.priority for u in scenario.users], dtype=float)
        self.share = np.array([s.share for s in scenario.slices], dtype=float)
        self.alpha = np.array([s.alpha for s in scenario.slices], dtype=float)

        self.slice_users = []
        for o, s in enumerate(scenario.slices):
            idx = []
            for uid in s.user_ids:
                if uid not in self.user_pos:
                    raise ScenarioError(f"slice {s.id!r} lists unknown user {uid!r}")
                i = self.user_pos[uid]
                if self.user_slice[i] != o:
                    raise ScenarioError(f"user {uid!r} listed by slice {s.id!r} belongs elsewhere")
                idx.append(i)
            self.slice_users.append(np.array(idx, dtype=np.intp))
        listed = sum(len(ix) for ix in self.slice_users)
        if listed != n:
            raise ScenarioError("some users are not listed by their slice")

        counts = np.zeros((O, B), dtype=np.intp)
        np.add.at(counts, (self.user_slice, self.user_station), 1)
        self.user_counts = counts
        self.slices_present = (counts > 0).sum(axis=0)
        self.contested = self.slices_present >= 2
        self.user_sole = ~self.contested[self.user_station]

        alpha_u = self.alpha[self.user_slice]
        with np.errstate(divide="ignore", invalid="ignore"):
            safe_alpha = np.where(alpha_u > 0, alpha_u, np.nan)
            log_phi = np.log(self.priority)
            log_c = np.log(self.capacity)
            log_beta = log_phi / safe_alpha + (1.0 / safe_alpha - 1.0) * log_c
        self.log_beta = log_beta

        # log of sum of beta per (slice, station); -inf where absent or all-zero
        key = self.user_slice * B + self.user_station
        log_S = np.full(O * B, -np.inf)
        for k in np.unique(key):
            m = key == k
            log_S[k] = logsumexp(log_beta[m]) if np.any(np.isfinite(log_beta[m])) else -np.inf
        self.log_S = log_S.reshape(O, B)

        # within-station proportions of a slice; equal split when all betas vanish
        x = np.empty(n)
        lS = self.log_S[self.user_slice, self.user_station]
        ok = np.isfinite(lS)
        with np.errstate(invalid="ignore"):
            x[ok] = np.exp(log_beta[ok] - lS[ok])
        x[~ok] = 1.0 / counts[self.user_slice[~ok], self.user_station[~ok]]
        self.within = x

        phi_sum = np.zeros((O, B))
        np.add.at(phi_sum, (self.user_slice, self.user_station), self.priority)
        self.phi_station = phi_sum

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)


@dataclass(frozen=True, eq=False)
class WeightAllocation:
    """Per-user weights aligned with ``user_ids``."""

    user_ids: tuple[str, ...]
    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.user_ids),):
            raise ScenarioError("weights must have one entry per user")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_array(cls, scenario: NetworkScenario, weights: np.ndarray) -> "WeightAllocation":
        return cls(scenario.arrays.user_ids, weights)

    @classmethod
    def from_mapping(
        cls, scenario: NetworkScenario, mapping: Mapping[str, float]
    ) -> "WeightAllocation":
        arr = scenario.arrays
        w = np.zeros(arr.n_users)
        for uid, val in mapping.items():
            if uid not in arr.user_pos:
                raise ScenarioError(f"unknown user id {uid!r}")
            w[arr.user_pos[uid]] = val
        return cls(arr.user_ids, w)

    def __getitem__(self, user_id: str) -> float:
        return float(self.weights[self.user_ids.index(user_id)])

    def as_dict(self) -> dict[str, float]:
        return {u: float(w) for u, w in zip(self.user_ids, self.weights)}

    def allclose(self, other: "WeightAllocation", atol: float = 1e-12) -> bool:
        return self.user_ids == other.user_ids and bool(
            np.allclose(self.weights, other.weights, rtol=0.0, atol=atol)
        )


@dataclass(frozen=True, eq=False)
class LoadVector:
    station_ids: tuple[str, ...]
    slice_ids: tuple[str, ...]
    loads: np.ndarray
    slice_loads: np.ndarray  # d_b^o, shape (n_slices, n_stations)

    def others(self, slice_id: str) -> np.ndarray:
        """Aggregate weight of all other slices at each station (a_b^o)."""
        o = self.slice_ids.index(slice_id)
        return self.loads - self.slice_loads[o]

    def own(self, slice_id: str) -> np.ndarray:
        return self.slice_loads[self.slice_ids.index(slice_id)].copy()

    def as_dict(self) -> dict[str, float]:
        return {b: float(v) for b, v in zip(self.station_ids, self.loads)}


@dataclass(frozen=True, eq=False)
class RateVector:
    user_ids: tuple[str, ...]
    rates: np.ndarray

    def __getitem__(self, user_id: str) -> float:
        return float(self.rates[self.user_ids.index(user_id)])

    def as_dict(self) -> dict[str, float]:
        return {u: float(r) for u, r in zip(self.user_ids, self.rates)}


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    sole_occupancy: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return bool(self.errors or self.warnings)


# --------------------------------------------------------------------------
# alpha-fair utilities


def alpha_fair_value(alpha: float, r):
    """Homogeneous alpha-fair utility of rate(s) ``r`` (natural log at alpha=1).

    A zero rate with ``alpha >= 1`` evaluates to ``-inf`` instead of raising.
    """
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if alpha == 1.0:
            out = np.log(r)
        else:
            out = np.power(r, 1.0 - alpha) / (1.0 - alpha)
            if alpha > 1.0:
                out = np.where(r == 0.0, -np.inf, out)
    return float(out) if out.ndim == 0 else out


def alpha_fair_deriv(alpha: float, r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.power(r, -alpha)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# allocation arithmetic on raw arrays


def _weights_of(scenario: NetworkScenario, allocation) -> np.ndarray:
    arr = scenario.arrays
    if isinstance(allocation, WeightAllocation):
        if allocation.user_ids != arr.user_ids:
            unknown = set(allocation.user_ids) - set(arr.user_pos)
            if unknown:
                raise ScenarioError(f"unknown user id {sorted(unknown)[0]!r}")
            return WeightAllocation.from_mapping(scenario, allocation.as_dict()).weights
        return allocation.weights
    if isinstance(allocation, Mapping):
        return WeightAllocation.from_mapping(scenario, allocation).weights
    w = np.asarray(allocation, dtype=float)
    if w.shape != (arr.n_users,):
        raise ScenarioError("weight array has the wrong length")
    return w


def slice_station_loads(arr: ScenarioArrays, w: np.ndarray) -> np.ndarray:
    d = np.zeros((arr.n_slices, arr.n_stations))
    np.add.at(d, (arr.user_slice, arr.user_station), w)
    return d


def rates_from_weights(arr: ScenarioArrays, w: np.ndarray) -> np.ndarray:
    loads = np.bincount(arr.user_station, weights=w, minlength=arr.n_stations)
    lb = loads[arr.user_station]
    contested = ~arr.user_sole
    if np.any(contested & (lb <= 0.0)):
        bad = arr.user_station[contested & (lb <= 0.0)][0]
        raise DegenerateAllocationError(
            f"zero load at contested base station {arr.station_ids[bad]!r}"
        )
    r = np.empty(arr.n_users)
    r[contested] = w[contested] / lb[contested] * arr.capacity[contested]
    r[arr.user_sole] = arr.within[arr.user_sole] * arr.capacity[arr.user_sole]
    return r


def slice_utilities_from_rates(arr: ScenarioArrays, r: np.ndarray) -> np.ndarray:
    keep = arr.priority > 0
    a = arr.alpha[arr.user_slice[keep]]
    rk = np.asarray(r, dtype=float)[keep]
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        vals = np.where(a == 1.0, np.log(rk), np.power(rk, 1.0 - a) / (1.0 - a))
    vals = np.where((rk == 0.0) & (a >= 1.0), -np.inf, vals)
    return np.bincount(arr.user_slice[keep], weights=arr.priority[keep] * vals, minlength=arr.n_slices)


def network_utility_from_slices(arr: ScenarioArrays, per_slice: np.ndarray) -> float:
    if np.any(per_slice == -np.inf):
        return -math.inf
    return float(np.dot(arr.share, per_slice))


# --------------------------------------------------------------------------
# public operations


def compute_loads(scenario: NetworkScenario, allocation) -> LoadVector:
    arr = scenario.arrays
    w = _weights_of(scenario, allocation)
    d = slice_station_loads(arr, w)
    loads = np.bincount(arr.user_station, weights=w, minlength=arr.n_stations)
    return LoadVector(arr.station_ids, arr.slice_ids, loads, d)


def compute_rates(scenario: NetworkScenario, allocation) -> RateVector:
    """Rates under proportional sharing.

    At a station where a single slice has users, the rates do not depend on
    weights: the slice's users split the capacity in proportion to their
    alpha-fair coefficients ``beta``.
    """
    arr = scenario.arrays
    return RateVector(arr.user_ids, rates_from_weights(arr, _weights_of(scenario, allocation)))


def slice_utility(scenario: NetworkScenario, slice_id: str, allocation) -> float:
    arr = scenario.arrays
    o = scenario.slice_index(slice_id)
    r = rates_from_weights(arr, _weights_of(scenario, allocation))
    idx = arr.slice_users[o]
    phi = arr.priority[idx]
    keep = phi > 0
    return float(np.sum(phi[keep] * alpha_fair_value(arr.alpha[o], r[idx][keep])))


def slice_utilities(scenario: NetworkScenario, allocation) -> np.ndarray:
    arr = scenario.arrays
    return slice_utilities_from_rates(arr, rates_from_weights(arr, _weights_of(scenario, allocation)))


def network_utility(scenario: NetworkScenario, allocation) -> float:
    arr = scenario.arrays
    return network_utility_from_slices(arr, slice_utilities(scenario, allocation))


def validate_scenario(scenario: NetworkScenario) -> ValidationReport:
    """Report violated invariants without raising.

    Stations served by a single slice are reported as warnings only.
    """
    rep = ValidationReport()
    try:
        arr = scenario.arrays
    except ScenarioError as exc:
        rep.errors.append(str(exc))
        return rep
    total = float(np.sum(arr.share))
    if abs(total - 1.0) > SHARE_TOL:
        rep.errors.append(f"slice shares sum to {total!r}, expected 1")
    for o, s in enumerate(scenario.slices):
        if not 0.0 < s.share < 1.0 and not (s.share == 1.0 and len(scenario.slices) == 1):
            rep.errors.append(f"slice {s.id!r}: share {s.share!r} outside (0, 1)")
        if not s.alpha > 0.0:
            rep.errors.append(f"slice {s.id!r}: alpha must be positive, got {s.alpha!r}")
        if len(arr.slice_users[o]) == 0:
            rep.errors.append(f"slice {s.id!r} has no users")
            continue
        phi = arr.priority[arr.slice_users[o]]
        if np.any(phi < 0):
            rep.errors.append(f"slice {s.id!r}: negative priority")
        if abs(float(np.sum(phi)) - 1.0) > SHARE_TOL:
            rep.errors.append(f"slice {s.id!r}: priorities sum to {float(np.sum(phi))!r}")
    for u in scenario.users:
        if not u.capacity > 0.0:
            rep.errors.append(f"user {u.id!r}: capacity must be positive")
    for b in np.flatnonzero(arr.slices_present == 1):
        sid = arr.station_ids[b]
        rep.sole_occupancy.append(sid)
        rep.warnings.append(f"base station {sid!r} has users from a single slice")
    for b in np.flatnonzero(arr.slices_present == 0):
        rep.warnings.append(f"base station {arr.station_ids[b]!r} has no users")
    return rep


def check_allocation(scenario: NetworkScenario, allocation, tol: float = SHARE_TOL) -> None:
    """Raise :class:`ScenarioError` unless every slice spends exactly its share."""
    arr = scenario.arrays
    w = _weights_of(scenario, allocation)
    if np.any(w < 0):
        raise ScenarioError("negative weight")
    sums = np.bincount(arr.user_slice, weights=w, minlength=arr.n_slices)
    for o in range(arr.n_slices):
        if not np.any(~arr.user_sole[arr.slice_users[o]]):
            continue
        if abs(sums[o] - arr.share[o]) > tol:
            raise ScenarioError(
                f"slice {arr.slice_ids[o]!r} weights sum to {sums[o]!r}, share is {arr.share[o]!r}"
            )
