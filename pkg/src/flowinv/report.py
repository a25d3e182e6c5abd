"""Run artifacts: metrics rows, RFC-4180 CSV emission, manifests, config hashes.

All emitters are pure functions of their inputs so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from . import __version__

METRICS_HEADER = ["run_id", "config_hash", "metric", "value", "unit"]


@dataclass(frozen=True)
class MetricsRow:
    run_id: str
    config_hash: str
    metric: str
    value: float
    unit: str = "none"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """Stable under key reordering: hash of the canonical JSON encoding."""
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()[:12]


def fmt(value) -> str:
    """Shortest round-trip decimal form; deterministic across runs."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_metrics(path, rows: list[MetricsRow]) -> None:
    write_csv(
        path,
        METRICS_HEADER,
        [[r.run_id, r.config_hash, r.metric, r.value, r.unit] for r in rows],
    )


def write_manifest(path, command: str, cfg: dict) -> None:
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "code_version": __version__,
    }
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
