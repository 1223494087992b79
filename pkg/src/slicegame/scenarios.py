"""Scenario generators: random populations, traffic patterns and analytic instances."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .best_response import solve_station_budgets
from .model import NetworkScenario, ScenarioError, validate_scenario

PATTERNS = ("uniform", "overlapping", "non-overlapping", "mixed")


@dataclass(frozen=True)
class RandomScenarioParams:
    """Ranges are inclusive; integers are drawn uniformly, floats uniformly.

    ``alphas`` fixes per-slice alphas (cycled) and overrides ``alpha``.
    ``capacity`` is one of ``lognormal`` (``capacity_params = (mu, sigma)``),
    ``uniform`` (``(lo, hi)``) or ``constant`` (``(value,)``).
    """

    n_slices: tuple[int, int] = (2, 12)
    n_stations: tuple[int, int] = (10, 90)
    density: tuple[float, float] = (3.0, 15.0)
    alpha: tuple[float, float] = (0.01, 30.0)
    alphas: tuple[float, ...] | None = None
    share_rule: str = "equal"
    capacity: str = "lognormal"
    capacity_params: tuple[float, ...] = (math.log(10.0), 0.5)
    require_competition: bool = True
    full_footprint: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_slices", "n_stations", "density", "alpha"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range {lo}..{hi}")
        if self.n_slices[0] < 1 or self.n_stations[0] < 1 or self.density[0] <= 0:
            raise ValueError("counts and density must be positive")
        if self.alpha[0] <= 0:
            raise ValueError("alpha range must be positive")
        if self.share_rule not in ("equal", "random"):
            raise ValueError(f"unknown share rule {self.share_rule!r}")
        if self.capacity not in ("lognormal", "uniform", "constant"):
            raise ValueError(f"unknown capacity sampler {self.capacity!r}")


def _capacities(rng: np.random.Generator, kind: str, params: Sequence[float], n: int) -> np.ndarray:
    if kind == "lognormal":
        mu, sigma = params
        return rng.lognormal(mu, sigma, n)
    if kind == "uniform":
        lo, hi = params
        return rng.uniform(lo, hi, n)
    return np.full(n, float(params[0]))


def _assemble(
    stations: list[str],
    user_slice: Sequence[int],
    user_station: Sequence[int],
    shares: Sequence[float],
    alphas: Sequence[float],
    capacities: np.ndarray,
    rng: np.random.Generator,
    metadata: dict,
) -> NetworkScenario:
    user_slice = np.asarray(user_slice)
    user_station = np.asarray(user_station)
    records = []
    for o in range(len(shares)):
        members = np.flatnonzero(user_slice == o)
        phi = rng.dirichlet(np.ones(members.size))
        users = [
            {
                "id": f"u{o}_{k}",
                "bs": stations[user_station[i]],
                "capacity": float(capacities[i]),
                "phi": float(p),
            }
            for k, (i, p) in enumerate(zip(members, phi))
        ]
        records.append({"id": f"s{o}", "share": float(shares[o]), "alpha": float(alphas[o]), "users": users})
    return NetworkScenario.from_slices(stations, records, metadata)


def _attachments(rng, n_slices, n_stations, n_users, params: RandomScenarioParams):
    """Slice and station of every user; competition is built in when required."""
    user_slice: list[int] = []
    user_station: list[int] = []
    if params.full_footprint:
        for b in range(n_stations):
            for o in range(n_slices):
                user_slice.append(o)
                user_station.append(b)
    elif params.require_competition and n_slices >= 2:
        for b in range(n_stations):
            for o in rng.choice(n_slices, size=2, replace=False):
                user_slice.append(int(o))
                user_station.append(b)
    for o in sorted(set(range(n_slices)) - set(user_slice)):
        user_slice.append(o)
        user_station.append(int(rng.integers(n_stations)))
    extra = max(n_users - len(user_slice), 0)
    user_slice.extend(rng.integers(n_slices, size=extra).tolist())
    user_station.extend(rng.integers(n_stations, size=extra).tolist())
    return user_slice, user_station


def random_scenario(params: RandomScenarioParams | None = None, **overrides) -> NetworkScenario:
    """Random game instance; deterministic given ``params.seed``.

    Competition at every station (two slices or more) is placed by
    construction, seeding each station with users of two distinct slices
    before the remaining users are attached uniformly at random.
    """
    params = params or RandomScenarioParams()
    if overrides:
        params = RandomScenarioParams(**{**asdict(params), **overrides})
    rng = np.random.default_rng(params.seed)
    O = int(rng.integers(params.n_slices[0], params.n_slices[1] + 1))
    B = int(rng.integers(params.n_stations[0], params.n_stations[1] + 1))
    density = float(rng.uniform(*params.density))
    n_users = max(int(round(density * B)), O)
    if params.alphas is not None:
        alphas = [params.alphas[o % len(params.alphas)] for o in range(O)]
    else:
        alphas = rng.uniform(params.alpha[0], params.alpha[1], O).tolist()
    if params.share_rule == "equal":
        shares = [1.0 / O] * O
    else:
        shares = rng.dirichlet(np.ones(O)).tolist()
    stations = [f"b{i}" for i in range(B)]
    meta = {"seed": params.seed, "label": "random", "generator": _jsonable(asdict(params))}

    for attempt in range(100):
        us, ub = _attachments(rng, O, B, n_users, params)
        caps = _capacities(rng, params.capacity, params.capacity_params, len(us))
        sc = _assemble(stations, us, ub, shares, alphas, caps, rng, meta)
        rep = validate_scenario(sc)
        if rep.errors:
            raise ScenarioError("; ".join(rep.errors))
        if not params.require_competition or O < 2 or not rep.sole_occupancy:
            return sc
    raise ScenarioError("could not place competing slices at every base station")


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def patterned_scenario(
    pattern: str,
    n_stations: int = 20,
    density: float = 5.0,
    alpha: float = 1.0,
    n_slices: int = 4,
    hotspot_mass: float = 0.7,
    hotspot_fraction: float = 0.2,
    capacity: str = "lognormal",
    capacity_params: tuple[float, ...] = (math.log(10.0), 0.5),
    seed: int = 0,
) -> NetworkScenario:
    """Equal-share slices with spatial load patterns.

    ``uniform``: every slice attaches users uniformly. ``overlapping``: all
    slices share one hotspot set. ``non-overlapping``: each slice has its own
    disjoint hotspot set. ``mixed``: the first two slices share a hotspot set,
    the others are uniform. A hotspot slice puts ``hotspot_mass`` of its users
    on ``hotspot_fraction`` of the stations. Single-slice stations may occur
    and are reported by :func:`validate_scenario` as warnings.
    """
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}; expected one of {', '.join(PATTERNS)}")
    rng = np.random.default_rng(seed)
    B = n_stations
    k = max(1, int(math.ceil(hotspot_fraction * B)))
    perm = rng.permutation(B)
    if pattern == "non-overlapping":
        if n_slices * k > B:
            raise ValueError("too few stations for disjoint hotspot sets")
        hot = [perm[o * k:(o + 1) * k] for o in range(n_slices)]
    elif pattern == "overlapping":
        hot = [perm[:k]] * n_slices
    elif pattern == "mixed":
        hot = [perm[:k] if o < 2 else None for o in range(n_slices)]
    else:
        hot = [None] * n_slices

    n_users = int(round(density * B))
    per_slice = np.full(n_slices, n_users // n_slices)
    per_slice[: n_users % n_slices] += 1
    us: list[int] = []
    ub: list[int] = []
    for o in range(n_slices):
        n = int(per_slice[o])
        if hot[o] is None:
            st = rng.integers(B, size=n)
        else:
            n_hot = int(round(hotspot_mass * n))
            cold = np.setdiff1d(np.arange(B), hot[o])
            st = np.concatenate([rng.choice(hot[o], size=n_hot), rng.choice(cold, size=n - n_hot)])
        us.extend([o] * n)
        ub.extend(st.tolist())
    caps = _capacities(rng, capacity, capacity_params, len(us))
    stations = [f"b{i}" for i in range(B)]
    meta = {
        "seed": seed,
        "label": f"pattern:{pattern}",
        "hotspots": [None if h is None else [stations[i] for i in sorted(h)] for h in hot],
    }
    return _assemble(stations, us, ub, [1.0 / n_slices] * n_slices, [alpha] * n_slices, caps, rng, meta)


# --------------------------------------------------------------------------
# price-of-anarchy instance: slice 1 has m users alone at b1 and one user at
# b2, where slice 2's single user also sits; unit capacities, log utilities.


def tight_poa_optimum_utility(m: int, s1: float, s2: float) -> float:
    w1 = s1 / (m + 1)
    return (
        w1 * m * math.log(1.0 / m)
        + w1 * math.log(w1 / (w1 + s2))
        + s2 * math.log(s2 / (w1 + s2))
    )


def tight_poa_equilibrium_utility(m: int, s1: float, s2: float) -> float:
    w1 = s1 / (m + 1)
    return w1 * m * math.log(1.0 / m) + w1 * math.log(s1 / (s1 + s2)) + s2 * math.log(s2 / (s1 + s2))


def tight_poa_limit_gap(s1: float, s2: float) -> float:
    """Utility gap of the instance as ``m`` grows without bound."""
    return s2 * math.log((s1 + s2) / s2)


def poa_tight_instance(m: int, s1: float, s2: float) -> tuple[NetworkScenario, float, float]:
    """The two-station instance plus its closed-form optimum and equilibrium utilities."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if abs(s1 + s2 - 1.0) > 1e-12:
        warnings.warn("shares do not sum to one", RuntimeWarning)
    phi = 1.0 / (m + 1)
    users1 = [{"id": f"a{i}", "bs": "b1", "capacity": 1.0, "phi": phi} for i in range(1, m + 1)]
    users1.append({"id": f"a{m + 1}", "bs": "b2", "capacity": 1.0, "phi": phi})
    sc = NetworkScenario.from_slices(
        ["b1", "b2"],
        [
            {"id": "s1", "share": s1, "alpha": 1.0, "users": users1},
            {"id": "s2", "share": s2, "alpha": 1.0, "users": [{"id": "c1", "bs": "b2", "capacity": 1.0, "phi": 1.0}]},
        ],
        {"label": "tight-poa", "m": m, "s1": s1, "s2": s2},
    )
    return sc, tight_poa_optimum_utility(m, s1, s2), tight_poa_equilibrium_utility(m, s1, s2)


# --------------------------------------------------------------------------
# envy instance family: slice o has one user per station, the other slices
# load b1 with ~1 and b2 with x * phi2 * s_o.


def envy_xhat(x: float) -> float:
    """Positive root of ``xhat**2 + x * xhat - x = 0``."""
    return (-x + math.sqrt(x * x + 4.0 * x)) / 2.0


def envy_family_fixed_point(x: float, phi1: float) -> float:
    """Limit of ``d_2 / (phi2 * s_o)`` for the slice's best response as ``s_o -> 0``.

    Solves ``phi1 z**2 + x z - x = 0``; reduces to :func:`envy_xhat` at ``phi1 = 1``.
    """
    return (-x + math.sqrt(x * x + 4.0 * phi1 * x)) / (2.0 * phi1)


def _branch(x: float, phi1: float, z: float) -> float:
    phi2 = 1.0 - phi1
    if x >= 1.0:
        return phi1 * math.log(phi1 / (1.0 - z * phi2)) - phi2 * math.log(z)
    return phi1 * math.log((1.0 - x * phi2) / (1.0 - z * phi2)) + phi2 * math.log(x / z)


def envy_family_expression(x: float, phi1: float) -> float:
    """Envy of the family evaluated with ``xhat`` from :func:`envy_xhat`."""
    return _branch(x, phi1, envy_xhat(x))


def envy_family_limit(x: float, phi1: float) -> float:
    """Exact ``s_o -> 0`` limit of the family's envy."""
    return _branch(x, phi1, envy_family_fixed_point(x, phi1))


def envy_instance_family(x: float, phi1: float, s_o: float) -> tuple[NetworkScenario, float]:
    """Two-station equilibrium with equal-share slices ``o`` and ``o'``.

    Slice ``o`` best-responds to loads ``a1 = 1 - s_o - x phi2 s_o`` and
    ``a2 = x phi2 s_o``. Slice ``o'`` places ``(phi1 s_o, phi2 s_o)`` when
    ``x >= 1`` and ``((1 - x phi2) s_o, x phi2 s_o)`` otherwise, with its
    priorities chosen so that this is its own best response. Single-user
    slices fill the remaining load, so the returned profile
    (``metadata["equilibrium"]``) is an exact Nash equilibrium.

    Returns the scenario and :func:`envy_family_expression` at ``(x, phi1)``.
    """
    if not x > 0:
        raise ValueError("x must be positive")
    if not 0.0 < phi1 < 1.0:
        raise ValueError("phi1 must lie in (0, 1)")
    phi2 = 1.0 - phi1
    a1 = 1.0 - s_o - x * phi2 * s_o
    a2 = x * phi2 * s_o
    if not (s_o > 0 and a1 > max(phi1, phi2) * s_o):
        raise ValueError("s_o too large for the construction")
    t = (phi1 * s_o, phi2 * s_o) if x >= 1.0 else ((1.0 - x * phi2) * s_o, x * phi2 * s_o)
    d1, d2 = solve_station_budgets(1.0, [a1, a2], [phi1, phi2], s_o)
    l1, l2 = a1 + d1, a2 + d2
    r1 = t[0] * l1 / (l1 - t[0])
    r2 = t[1] * l2 / (l2 - t[1])
    pt1 = r1 / (r1 + r2)
    s3 = a1 - t[0]
    s4 = a2 - t[1]
    slices = [
        {"id": "o", "share": s_o, "alpha": 1.0, "users": [
            {"id": "o1", "bs": "b1", "capacity": 1.0, "phi": phi1},
            {"id": "o2", "bs": "b2", "capacity": 1.0, "phi": phi2}]},
        {"id": "o'", "share": s_o, "alpha": 1.0, "users": [
            {"id": "p1", "bs": "b1", "capacity": 1.0, "phi": pt1},
            {"id": "p2", "bs": "b2", "capacity": 1.0, "phi": 1.0 - pt1}]},
        {"id": "s3", "share": s3, "alpha": 1.0, "users": [{"id": "q3", "bs": "b1", "capacity": 1.0, "phi": 1.0}]},
    ]
    eq = {"o1": d1, "o2": d2, "p1": t[0], "p2": t[1], "q3": s3}
    if s4 > 1e-15 * s_o:
        slices.append({"id": "s4", "share": s4, "alpha": 1.0, "users": [{"id": "q4", "bs": "b2", "capacity": 1.0, "phi": 1.0}]})
        eq["q4"] = s4
    sc = NetworkScenario.from_slices(
        ["b1", "b2"], slices, {"label": "envy-family", "x": x, "phi1": phi1, "s_o": s_o, "equilibrium": eq}
    )
    return sc, envy_family_expression(x, phi1)


def search_envy_family(expression=envy_family_limit, grid: int = 200) -> tuple[float, float, float]:
    """Largest value of ``expression(x, phi1)`` over ``x > 0``, ``phi1 in (0, 1)``.

    Coarse log-spaced grid followed by bounded refinement in each coordinate.
    Returns ``(value, x, phi1)``.
    """
    xs = np.exp(np.linspace(math.log(1e-3), math.log(1e3), grid))
    ps = np.linspace(1e-3, 1 - 1e-3, grid)
    best = max((expression(x, p), x, p) for x in xs for p in ps)
    val, x, p = best
    for _ in range(20):
        rx = minimize_scalar(lambda lx: -expression(math.exp(lx), p),
                             bounds=(math.log(x) - 0.5, math.log(x) + 0.5), method="bounded",
                             options={"xatol": 1e-12})
        x = math.exp(rx.x)
        rp = minimize_scalar(lambda q: -expression(x, q), bounds=(max(1e-6, p - 0.2), min(1 - 1e-6, p + 0.2)),
                             method="bounded", options={"xatol": 1e-12})
        p = rp.x
        new = expression(x, p)
        if abs(new - val) < 1e-14:
            val = new
            break
        val = new
    return float(val), float(x), float(p)
