"""Checkpoints: a JSON manifest next to a flat little-endian float64 blob."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def blob_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".bin")


def write(path: str | Path, params: dict, meta: dict) -> None:
    """Write ``params`` (name -> ndarray) and ``meta`` (JSON-able) to ``path`` + ``.bin``."""
    path = Path(path)
    table, offset = [], 0
    for name, value in params.items():
        table.append({"name": name, "offset": offset, "shape": list(value.shape)})
        offset += value.size
    manifest = {"format_version": FORMAT_VERSION, **meta, "params": table, "size": offset,
                "blob": blob_path(path).name}
    flat = np.concatenate([np.ravel(v) for v in params.values()]) if params else np.zeros(0)
    blob_path(path).write_bytes(flat.astype("<f8").tobytes())
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")


def read_manifest(path: str | Path) -> dict:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    return manifest


def read(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    manifest = read_manifest(path)
    raw = (Path(path).parent / manifest["blob"]).read_bytes()
    if len(raw) != 8 * manifest["size"]:
        raise CheckpointError(f"{path}: blob holds {len(raw)} bytes, expected {8 * manifest['size']}")
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    params, end = {}, 0
    for entry in sorted(manifest["params"], key=lambda e: e["offset"]):
        if entry["offset"] != end:
            raise CheckpointError(f"{path}: parameter table has a gap or overlap at {entry['name']}")
        size = int(np.prod(entry["shape"], dtype=np.int64))
        params[entry["name"]] = flat[end:end + size].reshape(entry["shape"]).copy()
        end += size
    if end != manifest["size"]:
        raise CheckpointError(f"{path}: parameter table does not cover the blob")
    return manifest, params
