"""Per-scenario evaluation rows and seeded parameter sweeps."""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import stats

from .baselines import social_optimum_log, social_optimum_numeric, static_slicing
from .dynamics import DynamicsOptions, run_dynamics
from .metrics import (
    NASH_CERTIFICATE,
    MetricsReport,
    capacity_equivalent_gain,
    envy_matrix,
)
from .model import NetworkScenario
from .scenarios import PATTERNS, patterned_scenario, random_scenario

ALL_METRICS = ("poa", "envy", "gain", "loss")


@dataclass
class ResultRow:
    scenario_id: str
    seed: int | None
    cell: dict[str, Any] = field(default_factory=dict)
    rounds: int = 0
    converged: bool = False
    nash_residual: float = math.nan
    utility_ne: float = math.nan
    utility_ss: float = math.nan
    utility_so: float = math.nan
    so_kind: str = "NA"
    slice_utilities_ne: dict[str, float] = field(default_factory=dict)
    slice_utilities_ss: dict[str, float] = field(default_factory=dict)
    slice_utilities_so: dict[str, float] = field(default_factory=dict)
    gap: float = math.nan
    gap_kind: str = "NA"
    gain_percent: float = math.nan
    loss_percent: float = math.nan
    kappa_gain: float = math.nan
    kappa_loss: float = math.nan
    envy_pairs: int = 0
    envy_min: float = math.nan
    envy_max: float = math.nan
    envy_mean: float = math.nan
    envy_negative_fraction: float = math.nan
    flags: dict[str, str] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


RESULT_COLUMNS = {
    "scenario_id": "scenario label or file name",
    "seed": "generator seed (NA for files without one)",
    "cell": "sweep cell coordinates as JSON",
    "rounds": "best-response rounds used",
    "converged": "dynamics met the stopping tolerance",
    "nash_residual": "largest utility gain from a unilateral best response (nats at alpha = 1)",
    "utility_ne": "share-weighted network utility at the equilibrium",
    "utility_ss": "share-weighted network utility under static slicing",
    "utility_so": "share-weighted network utility at the social optimum",
    "so_kind": "closed-form (all alpha = 1) or local (numeric search)",
    "slice_utilities_ne": "per-slice utilities at the equilibrium, JSON",
    "slice_utilities_ss": "per-slice utilities under static slicing, JSON",
    "slice_utilities_so": "per-slice utilities at the social optimum, JSON",
    "gap": "utility_so - utility_ne in nats",
    "gap_kind": "certified (alpha = 1 closed form) or local (numeric optimum)",
    "gain_percent": "extra capacity static slicing needs to match the equilibrium, percent",
    "loss_percent": "extra capacity the equilibrium needs to match the social optimum, percent",
    "kappa_gain": "capacity factor behind gain_percent",
    "kappa_loss": "capacity factor behind loss_percent",
    "envy_pairs": "number of eligible ordered slice pairs (same stations, same share)",
    "envy_min": "smallest envy over eligible pairs, nats",
    "envy_max": "largest envy over eligible pairs, nats",
    "envy_mean": "mean envy over eligible pairs, nats",
    "envy_negative_fraction": "fraction of eligible pairs with negative envy",
    "flags": "reasons for NA metrics, JSON",
}


def _per_slice(scenario, values) -> dict[str, float]:
    return {s.id: float(v) for s, v in zip(scenario.slices, values)}


def evaluate_scenario(
    scenario: NetworkScenario,
    metrics: Sequence[str] = ALL_METRICS,
    dynamics: DynamicsOptions | None = None,
    scenario_id: str | None = None,
    cell: Mapping[str, Any] | None = None,
    so_starts: int = 3,
    so_iters: int = 2000,
) -> ResultRow:
    """Solve the game and compute the requested metrics.

    Metrics that do not apply are left NA with a reason under ``flags``.
    With some alpha != 1 the optimum comes from the numeric search, warm
    started at the equilibrium, and is labelled local.
    """
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    arr = scenario.arrays
    _, rep = run_dynamics(scenario, options=dynamics or DynamicsOptions())
    row = ResultRow(
        scenario_id=scenario_id or str(scenario.metadata.get("label", "scenario")),
        seed=scenario.metadata.get("seed"),
        cell=dict(cell or {}),
        rounds=rep.rounds_used,
        converged=rep.converged,
        nash_residual=rep.nash_residual,
        utility_ne=rep.network_utility,
        slice_utilities_ne=dict(rep.utilities),
    )
    certified = rep.converged and rep.nash_residual <= NASH_CERTIFICATE
    if not certified:
        row.flags["equilibrium"] = "not certified: metrics refer to the last iterate"

    ss = static_slicing(scenario)
    row.utility_ss = ss.network_utility
    row.slice_utilities_ss = _per_slice(scenario, ss.utility_per_slice)

    so = None
    if "poa" in metrics or "loss" in metrics:
        if np.all(arr.alpha == 1.0):
            so = social_optimum_log(scenario)
            row.so_kind = "closed-form"
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                so = social_optimum_numeric(
                    scenario,
                    starts=so_starts,
                    max_iters=so_iters,
                    seed=row.seed or 0,
                    initial=[rep.allocation],
                )
            row.so_kind = "local"
            if not so.diagnostics["converged"]:
                row.flags["so"] = f"numeric optimum residual {so.diagnostics['residual']:.3g}"
        row.utility_so = so.network_utility
        row.slice_utilities_so = _per_slice(scenario, so.utility_per_slice)

    if "poa" in metrics:
        row.gap = so.network_utility - rep.network_utility
        row.gap_kind = "certified" if row.so_kind == "closed-form" and certified else "local"
        if row.gap_kind == "local":
            row.flags["poa"] = "gap against a numeric or uncertified optimum"

    if "gain" in metrics:
        try:
            row.kappa_gain, row.gain_percent = capacity_equivalent_gain(
                scenario, rep.network_utility, ss.utility_per_slice
            )
        except ValueError as exc:
            row.flags["gain"] = str(exc)

    if "loss" in metrics:
        try:
            row.kappa_loss, row.loss_percent = capacity_equivalent_gain(
                scenario, so.network_utility, list(rep.utilities.values())
            )
        except ValueError as exc:
            row.flags["loss"] = str(exc)

    if "envy" in metrics:
        e = envy_matrix(scenario, rep.allocation)
        row.envy_pairs = len(e)
        if e:
            v = np.array(list(e.values()))
            row.envy_min, row.envy_max, row.envy_mean = float(v.min()), float(v.max()), float(v.mean())
            row.envy_negative_fraction = float(np.mean(v < 0))
            if np.any(arr.alpha != 1.0):
                row.flags["envy"] = "bound applies to alpha = 1 slices only"
        else:
            row.flags["envy"] = "no eligible pairs (strict matching of stations and shares)"
    return row


def metrics_report(row: ResultRow, envy: Mapping | None = None) -> MetricsReport:
    return MetricsReport(
        poa_gap=None if math.isnan(row.gap) else row.gap,
        envy=dict(envy or {}),
        gain_over_ss_percent=None if math.isnan(row.gain_percent) else row.gain_percent,
        loss_vs_so_percent=None if math.isnan(row.loss_percent) else row.loss_percent,
        kappa_gain=None if math.isnan(row.kappa_gain) else row.kappa_gain,
        kappa_loss=None if math.isnan(row.kappa_loss) else row.kappa_loss,
        flags=dict(row.flags),
    )


def result_table(rows: Sequence[ResultRow]) -> tuple[list[str], list[list[Any]]]:
    cols = list(RESULT_COLUMNS)
    return cols, [[getattr(r, c) for c in cols] for r in rows]


# --------------------------------------------------------------------------
# sweeps

_RANGE_FIELDS = {"n_slices", "n_stations", "density", "alpha"}


@dataclass(frozen=True)
class SweepConfig:
    """Grid of cells, each repeated ``repetitions`` times with its own seeds.

    ``generator`` is ``"random"`` (axes are :class:`RandomScenarioParams`
    fields; scalar values pin a range) or ``"pattern"`` (axes are
    :func:`patterned_scenario` arguments, including ``pattern``).
    """

    axes: Mapping[str, Sequence[Any]]
    repetitions: int = 10
    generator: str = "random"
    base: Mapping[str, Any] = field(default_factory=dict)
    metrics: Sequence[str] = ALL_METRICS
    seed: int = 0
    tol: float = 1e-6
    max_rounds: int = 500

    def __post_init__(self):
        if not self.axes or any(len(v) == 0 for v in self.axes.values()):
            raise ValueError("sweep axes must be non-empty")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.generator not in ("random", "pattern"):
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.generator == "pattern":
            for p in self.axes.get("pattern", [self.base.get("pattern", "uniform")]):
                if p not in PATTERNS:
                    raise ValueError(f"unknown pattern {p!r}")

    def cells(self) -> list[dict[str, Any]]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]


def cell_seeds(master: int, n_cells: int, repetitions: int) -> list[list[int]]:
    """Independent per-repetition seeds, split per cell from the master seed."""
    out = []
    for child in np.random.SeedSequence(master).spawn(n_cells):
        out.append([int(c.generate_state(1)[0]) for c in child.spawn(repetitions)])
    return out


def make_scenario(generator: str, base: Mapping[str, Any], cell: Mapping[str, Any], seed: int) -> NetworkScenario:
    params = {**base, **cell, "seed": seed}
    if generator == "pattern":
        pattern = params.pop("pattern", "uniform")
        return patterned_scenario(pattern, **params)
    for k in _RANGE_FIELDS & params.keys():
        v = params[k]
        if not isinstance(v, (list, tuple)):
            params[k] = (v, v)
        else:
            params[k] = tuple(v)
    if "alphas" in params and params["alphas"] is not None:
        params["alphas"] = tuple(params["alphas"])
    if "capacity_params" in params:
        params["capacity_params"] = tuple(params["capacity_params"])
    return random_scenario(**params)


def _run_cell(args) -> list[ResultRow]:
    cfg, index, cell, seeds = args
    dyn = DynamicsOptions(tol=cfg.tol, max_rounds=cfg.max_rounds)
    rows = []
    for rep, seed in enumerate(seeds):
        sc = make_scenario(cfg.generator, cfg.base, cell, seed)
        rows.append(
            evaluate_scenario(sc, cfg.metrics, dyn, scenario_id=f"cell{index}-rep{rep}", cell=cell)
        )
    return rows


def run_sweep(config: SweepConfig, workers: int = 1) -> list[list[ResultRow]]:
    """Raw rows per cell. Results do not depend on ``workers``."""
    cells = config.cells()
    seeds = cell_seeds(config.seed, len(cells), config.repetitions)
    jobs = [(config, i, c, s) for i, (c, s) in enumerate(zip(cells, seeds))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, jobs))
    return [_run_cell(j) for j in jobs]


AGGREGATE_FIELDS = (
    "rounds",
    "nash_residual",
    "utility_ne",
    "utility_ss",
    "utility_so",
    "gap",
    "gain_percent",
    "loss_percent",
    "envy_max",
    "envy_mean",
    "envy_negative_fraction",
)


def mean_ci(values: Sequence[float], level: float = 0.95) -> tuple[float, float, int]:
    """Mean and Student-t half width over the finite values."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    n = v.size
    if n == 0:
        return math.nan, math.nan, 0
    if n == 1:
        return float(v[0]), math.nan, 1
    half = stats.t.ppf(0.5 + level / 2, n - 1) * v.std(ddof=1) / math.sqrt(n)
    return float(v.mean()), float(half), n


def aggregate(config: SweepConfig, cell_rows: Sequence[Sequence[ResultRow]]) -> tuple[list[str], list[list[Any]], dict[str, str]]:
    axes = list(config.axes)
    cols = list(axes) + ["repetitions", "converged_fraction"]
    desc = {a: f"sweep axis {a}" for a in axes}
    desc["repetitions"] = "scenarios in the cell"
    desc["converged_fraction"] = "fraction of scenarios whose dynamics converged"
    for f in AGGREGATE_FIELDS:
        cols += [f"{f}_mean", f"{f}_ci95", f"{f}_n"]
        desc[f"{f}_mean"] = f"mean of {f}: {RESULT_COLUMNS[f]}"
        desc[f"{f}_ci95"] = f"Student-t 95% confidence half width of {f}"
        desc[f"{f}_n"] = f"finite values of {f} in the cell"
    table = []
    for cell, rows in zip(config.cells(), cell_rows):
        line = [cell[a] for a in axes]
        line += [len(rows), float(np.mean([r.converged for r in rows]))]
        for f in AGGREGATE_FIELDS:
            line += list(mean_ci([float(getattr(r, f)) for r in rows]))
        table.append(line)
    return cols, table, desc
