"""Scenario files, reports and CSV exports.

Scenario JSON layout::

    {"meta": {"seed": 7, "label": "random"},
     "base_stations": [{"id": "b0"}, ...],
     "slices": [{"id": "s0", "share": 0.5, "alpha": 1.0,
                 "users": [{"id": "u0_0", "bs": "b0", "capacity": 10.0, "phi": 0.4}, ...]}]}

Floats are written with ``repr`` precision, so a write/read cycle is exact.
CSV files are UTF-8, comma separated, with LF line endings; each one gets a
``<name>.columns.json`` manifest describing its columns and units.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import jsonschema

from .model import NetworkScenario, ScenarioError, validate_scenario

_NUMBER = {"type": "number"}

SCENARIO_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["base_stations", "slices"],
    "properties": {
        "meta": {
            "type": "object",
            "properties": {
                "seed": {"type": ["integer", "null"]},
                "label": {"type": "string"},
            },
        },
        "base_stations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id"],
                "properties": {"id": {"type": "string"}},
            },
        },
        "slices": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "share", "alpha", "users"],
                "properties": {
                    "id": {"type": "string"},
                    "share": _NUMBER,
                    "alpha": _NUMBER,
                    "users": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["id", "bs", "capacity", "phi"],
                            "properties": {
                                "id": {"type": "string"},
                                "bs": {"type": "string"},
                                "capacity": _NUMBER,
                                "phi": _NUMBER,
                            },
                        },
                    },
                },
            },
        },
    },
}


class ScenarioFormatError(ScenarioError):
    """Schema violation in a scenario document; ``json_path`` locates it."""

    def __init__(self, message: str, json_path: str = "$") -> None:
        super().__init__(f"{json_path}: {message}")
        self.json_path = json_path


def scenario_to_dict(scenario: NetworkScenario) -> dict:
    by_id = {u.id: u for u in scenario.users}
    return {
        "meta": dict(scenario.metadata),
        "base_stations": [{"id": b} for b in scenario.base_station_ids],
        "slices": [
            {
                "id": s.id,
                "share": s.share,
                "alpha": s.alpha,
                "users": [
                    {
                        "id": u,
                        "bs": by_id[u].base_station,
                        "capacity": by_id[u].capacity,
                        "phi": by_id[u].priority,
                    }
                    for u in s.user_ids
                ],
            }
            for s in scenario.slices
        ],
    }


def scenario_from_dict(doc: Mapping[str, Any], validate: bool = True) -> NetworkScenario:
    """Check ``doc`` against the schema and build the scenario.

    With ``validate`` the model-level checks (share sum, priorities, ...) run
    too and any error is raised as :class:`ScenarioError`.
    """
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise ScenarioFormatError(err.message, err.json_path)
    stations = [b["id"] for b in doc["base_stations"]]
    if len(set(stations)) != len(stations):
        raise ScenarioFormatError("duplicate base station id", "$.base_stations")
    known = set(stations)
    for i, s in enumerate(doc["slices"]):
        for j, u in enumerate(s["users"]):
            if u["bs"] not in known:
                raise ScenarioFormatError(
                    f"unknown base station {u['bs']!r}", f"$.slices[{i}].users[{j}].bs"
                )
    scenario = NetworkScenario.from_slices(stations, doc["slices"], doc.get("meta", {}))
    if validate:
        report = validate_scenario(scenario)
        if not report.ok:
            raise ScenarioError("; ".join(report.errors))
    return scenario


def write_scenario(scenario: NetworkScenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n", encoding="utf-8")


def read_scenario(path: str | Path, validate: bool = True) -> NetworkScenario:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return scenario_from_dict(doc, validate)


def encode_value(x: Any) -> Any:
    """JSON-safe value: non-finite floats become ``"inf"``/``"-inf"``, NaN becomes null."""
    if isinstance(x, float):
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(x)
    if isinstance(x, Mapping):
        return {str(k): encode_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [encode_value(v) for v in x]
    if hasattr(x, "item"):  # numpy scalar
        return encode_value(x.item())
    return x


def write_json(obj: Any, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(encode_value(obj), indent=2, allow_nan=False) + "\n", encoding="utf-8"
    )


def csv_cell(x: Any) -> str:
    if x is None:
        return "NA"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        if math.isnan(x):
            return "NA"
        return repr(float(x))
    if isinstance(x, (dict, list, tuple)):
        return json.dumps(encode_value(x), sort_keys=True, separators=(",", ":"))
    if hasattr(x, "item"):
        return csv_cell(x.item())
    return str(x)


def manifest_path(path: str | Path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".columns.json")


def write_csv(
    rows: Iterable[Sequence[Any]],
    columns: Sequence[str],
    path: str | Path,
    descriptions: Mapping[str, str] | None = None,
) -> Path:
    """Write rows plus the column manifest; returns the manifest path."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([csv_cell(v) for v in row])
    descriptions = descriptions or {}
    manifest = {
        "file": path.name,
        "encoding": "utf-8",
        "delimiter": ",",
        "missing": "NA",
        "columns": [{"name": c, "description": descriptions.get(c, "")} for c in columns],
    }
    mpath = manifest_path(path)
    mpath.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return mpath


TRACE_COLUMNS = {
    "round": "best-response round, starting at 1",
    "slice": "slice id",
    "V": "Lyapunov value of the round: largest relative weight swing across slices",
    "max_delta": "largest absolute relative weight change of this slice in the round",
    "utility": "slice utility after the round (nats when alpha = 1)",
}


def write_trace_csv(trace, path: str | Path) -> Path:
    return write_csv(trace.rows(), list(TRACE_COLUMNS), path, TRACE_COLUMNS)
