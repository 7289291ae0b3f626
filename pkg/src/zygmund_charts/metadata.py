from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np


@dataclass
class RunManifest:
    command: str
    generated_at: str
    config: dict
    seed: int | None
    threads: int | None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    telemetry: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    notes: str = ""

    def to_dict(self):
        return asdict(self)


def build_manifest(
    command: str,
    config: dict,
    seed: int | None,
    threads: int | None = None,
    inputs: dict[str, Path] | None = None,
    notes: str = "",
) -> RunManifest:
    hashed = {}
    for label, path in (inputs or {}).items():
        hashed[label] = f"{path}#sha256:{hash_file(Path(path))}"
    return RunManifest(
        command=command,
        generated_at=datetime.now(timezone.utc).isoformat(),
        config=config,
        seed=seed,
        threads=threads,
        inputs=hashed,
        notes=notes,
    )


def json_ready(value):
    """Plain JSON types; non-finite floats become None."""
    if isinstance(value, dict):
        return {str(k): json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_ready(v) for v in value]
    if isinstance(value, np.ndarray):
        return json_ready(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, Path):
        return str(value)
    return value


def dumps(data) -> str:
    return json.dumps(json_ready(data), indent=2, allow_nan=False)


def write_manifest(manifest: RunManifest, output_path: Path) -> None:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = output_path.with_suffix(output_path.suffix + ".tmp")
    tmp.write_text(dumps(manifest.to_dict()) + "\n", encoding="utf-8")
    tmp.replace(output_path)


def hash_file(path: Path) -> str:
    if not path.exists():
        return ""
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(1024 * 1024), b""):
            digest.update(chunk)
    return digest.hexdigest()
