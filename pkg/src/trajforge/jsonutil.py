"""Canonical JSON helpers.

Every artifact the pipeline writes goes through these functions so that
byte-identical reruns are a property of the whole system, not of each
call site remembering the right dump flags.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any


def canonical_dumps(obj: Any) -> str:
    """Serialize with sorted keys and no insignificant whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def pretty_dumps(obj: Any) -> str:
    """Human-facing serialization, still key-sorted for reproducibility."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False)


def fingerprint(obj: Any) -> str:
    """Content hash of the canonical form; key order never matters."""
    return hashlib.sha256(canonical_dumps(obj).encode("utf-8")).hexdigest()


def strip_code_fences(text: str) -> str:
    """Drop a single markdown fence wrapper (``` or ```json) if present."""
    stripped = text.strip()
    if not stripped.startswith("```"):
        return stripped
    lines = stripped.splitlines()
    if lines[-1].strip() == "```":
        lines = lines[1:-1]
    else:
        lines = lines[1:]
    return "\n".join(lines).strip()


def parse_json_reply(text: str) -> Any:
    """Parse a model reply as JSON, tolerating markdown fences."""
    return json.loads(strip_code_fences(text))


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(canonical_dumps(rec))
            fh.write("\n")


def read_jsonl(path) -> list:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
