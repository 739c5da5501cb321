"""Machine-readable output records rendered as JSON or CSV."""

from __future__ import annotations

import csv
from dataclasses import dataclass, fields, is_dataclass
from fractions import Fraction
import io
import json
import math
from pathlib import Path
import sys
from typing import Any, Mapping, Sequence

import numpy as np

from .combinatorics import ExactProb

SCHEMA_VERSION = "1.0"
ECHO_COLUMNS = ("schema_version", "command", "parameters")


@dataclass(frozen=True)
class OutputRecord:
    command: str
    parameters: dict[str, Any]
    results: dict[str, Any]
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "command": self.command,
            "parameters": to_jsonable(self.parameters),
            "results": to_jsonable(self.results),
        }


def to_jsonable(value: Any) -> Any:
    """Convert result values into JSON-safe structures; rationals become "num/den" strings."""

    if isinstance(value, ExactProb):
        return {
            "rational": None if value.rational is None else str(value.rational),
            "float": _number(value.value),
            "log": _number(value.log_value),
        }
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return _number(float(value))
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, range):
        return [value.start, value.stop - 1] if value else []
    if is_dataclass(value) and not isinstance(value, type):
        return {item.name: to_jsonable(getattr(value, item.name)) for item in fields(value)}
    if isinstance(value, tuple) and hasattr(value, "_asdict"):
        return {key: to_jsonable(item) for key, item in value._asdict().items()}
    if isinstance(value, Mapping):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        return [to_jsonable(item) for item in value]
    raise TypeError(f"cannot serialize {type(value).__name__}")


def render_json(record: OutputRecord) -> str:
    return json.dumps(record.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def render_csv(record: OutputRecord, columns: Sequence[str] | None = None) -> str:
    """Render ``results["rows"]`` (or the flattened results) with the echo columns appended."""

    payload = record.to_dict()
    results = payload["results"]
    if isinstance(results.get("rows"), list):
        rows = [_flatten(row) for row in results["rows"]]
    else:
        rows = [_flatten(results)]
    if columns is None:
        columns = []
        for row in rows:
            columns.extend(key for key in row if key not in columns)
    echo = {
        "schema_version": record.schema_version,
        "command": record.command,
        "parameters": json.dumps(payload["parameters"], sort_keys=True, separators=(",", ":")),
    }
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=[*columns, *ECHO_COLUMNS], extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({**{column: _cell(row.get(column)) for column in columns}, **echo})
    return buffer.getvalue()


def render(record: OutputRecord, fmt: str, columns: Sequence[str] | None = None) -> str:
    if fmt == "json":
        return render_json(record)
    if fmt == "csv":
        return render_csv(record, columns)
    raise ValueError(f"unknown output format {fmt!r}")


def write_output(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.parent.mkdir(parents=True, exist_ok=True)
    # csv rows already carry \r\n terminators.
    with out.open("w", encoding="utf-8", newline="") as handle:
        handle.write(text)


def _number(value: float) -> float | str:
    if math.isfinite(value):
        return value
    if math.isnan(value):
        return "nan"
    return "inf" if value > 0 else "-inf"


def _flatten(value: Any, prefix: str = "") -> dict[str, Any]:
    if not isinstance(value, dict):
        return {prefix: value}
    flat: dict[str, Any] = {}
    for key, item in value.items():
        name = f"{prefix}.{key}" if prefix else str(key)
        if isinstance(item, dict):
            flat.update(_flatten(item, name))
        else:
            flat[name] = item
    return flat


def _cell(value: Any) -> Any:
    if value is None:
        return ""
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, list):
        return json.dumps(value, separators=(",", ":"))
    return value
