"""
Result documents: one JSON summary per command plus CSV tables.
"""

from __future__ import annotations

import csv
import json
import math
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, field_serializer

SCHEMA_VERSION = "1.0"


def tool_version() -> str:
    try:
        return version("isaacs-lab")
    except PackageNotFoundError:
        return "0.1.0+local"


def _plain(value: Any) -> Any:
    """JSON-ready copy: arrays to lists, numpy scalars to floats, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


class ResultDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: str = SCHEMA_VERSION
    tool_version: str = tool_version()
    command: str
    status: Literal["pass", "fail", "error"]
    exit_code: int
    config: dict
    results: dict

    @field_serializer("results", "config")
    def _serialize(self, value: dict) -> dict:
        return _plain(value)


def write_document(out_dir: str | Path, document: ResultDocument) -> Path:
    path = Path(out_dir) / f"{document.command}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = json.loads(document.model_dump_json())
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_csv(path: str | Path, rows: list[list[Any]]) -> Path:
    """UTF-8 CSV; the first row is the header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        csv.writer(handle, lineterminator="\n").writerows(rows)
    return path
