"""Canonical serialization helpers shared by file formats and the wire API.

Canonical JSON: sorted keys, no insignificant whitespace, floats rendered
with Python's shortest round-trip repr. Equal values always serialize to
identical bytes, which the golden tests and the service parity checks
rely on.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterable, Iterator


def canonical_json(obj: Any) -> str:
    _reject_non_finite(obj)
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _reject_non_finite(obj: Any) -> None:
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("non-finite number is not serializable")
    elif isinstance(obj, dict):
        for v in obj.values():
            _reject_non_finite(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            _reject_non_finite(v)


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(canonical_json(row))
            fh.write("\n")


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_sidecar(path: str | Path, fields: dict) -> None:
    """Write a key=value descriptor, one field per line."""
    lines = [f"{k}={fields[k]}" for k in fields]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sidecar(path: str | Path) -> dict:
    fields = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    return fields
