"""Run manifests: content hashes, seeds, versions, and wall time per stage."""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np

PACKAGE_VERSION = "0.1.0"


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def to_builtin(value):
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(value, dict):
        return {str(k): to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_builtin(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_manifest(path, command: str, *, seed: int | None = None,
                   config_path=None, inputs=(), outputs=(), wall_time_s: float = 0.0,
                   extra: dict | None = None) -> None:
    """Write one stage's provenance record next to its artifacts."""
    payload = {
        "command": command,
        "package_version": PACKAGE_VERSION,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "seed": seed,
        "config": None,
        "inputs": {},
        "outputs": {},
        "wall_time_s": round(float(wall_time_s), 3),
    }
    if config_path is not None:
        payload["config"] = {"path": str(config_path), "sha256": file_sha256(config_path)}
    for p in inputs:
        payload["inputs"][Path(p).name] = file_sha256(p)
    for p in outputs:
        payload["outputs"][Path(p).name] = file_sha256(p)
    if extra:
        payload.update(to_builtin(extra))
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")

