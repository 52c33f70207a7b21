"""Artifact persistence: CSV tables, canonical JSON, arrays with JSON sidecars."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable

import numpy as np


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if np.isnan(f):
            return "nan"
        if np.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=1)


def sha256_bytes(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def write_json(path: Path, obj) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = canonical_json(obj) + "\n"
    path.write_text(text)
    return sha256_bytes(text.encode())


def read_json(path: Path):
    return json.loads(Path(path).read_text())


def write_csv(path: Path, rows: Iterable[dict]) -> str:
    rows = [_clean(r) for r in rows]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return sha256_bytes(path.read_bytes())


def read_csv(path: Path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(fh))


def save_array(path: Path, arr: np.ndarray, meta: dict | None = None) -> str:
    """arr as .npy plus a .json sidecar with shape, dtype, sha256 and user metadata."""
    path = Path(path).with_suffix(".npy")
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.ascontiguousarray(arr)
    np.save(path, arr, allow_pickle=False)
    digest = sha256_bytes(arr.tobytes())
    write_json(path.with_suffix(".json"), {"shape": list(arr.shape), "dtype": str(arr.dtype),
                                           "sha256": digest, "meta": meta or {}})
    return digest


def load_array(path: Path, verify: bool = True) -> tuple[np.ndarray, dict]:
    path = Path(path).with_suffix(".npy")
    arr = np.load(path, allow_pickle=False)
    side = read_json(path.with_suffix(".json"))
    if verify and sha256_bytes(np.ascontiguousarray(arr).tobytes()) != side["sha256"]:
        raise ValueError(f"checksum mismatch for {path}")
    return arr, side
