"""Preprocessed stack store: per-case .npy arrays plus a JSON index.

Writes are deterministic (plain .npy bodies, sorted JSON with content
hashes), so re-running preparation over identical inputs reproduces the
store byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .io import DataError, VolumeCase
from .pipeline import SliceStack, build_stacks

STORE_FORMAT = "lesionseg-store-v1"


def _sha256(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_store(cases: list[VolumeCase], out_dir, size: int = 192) -> Path:
    """Preprocess cases into stack arrays under ``out_dir``; returns the index path."""
    if not cases:
        raise DataError("no cases to prepare")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for case in sorted(cases, key=lambda c: c.case_id):
        stacks = build_stacks(case, out_size=size)
        inputs = np.stack([s.input for s in stacks]).astype(np.float32)
        targets = np.stack([s.target for s in stacks]).astype(np.uint8)
        in_name = f"{case.case_id}_inputs.npy"
        tg_name = f"{case.case_id}_targets.npy"
        np.save(out_dir / in_name, inputs)
        np.save(out_dir / tg_name, targets)
        entries.append({
            "case_id": case.case_id,
            "depth": int(case.depth),
            "inputs": in_name,
            "targets": tg_name,
            "sha256_inputs": _sha256(out_dir / in_name),
            "sha256_targets": _sha256(out_dir / tg_name),
        })
    index = {"format": STORE_FORMAT, "size": size, "cases": entries}
    index_path = out_dir / "index.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return index_path


def load_store(store_dir) -> tuple[list[SliceStack], dict]:
    store_dir = Path(store_dir)
    index_path = store_dir / "index.json"
    if not index_path.exists():
        raise FileNotFoundError(f"no index.json under {store_dir}")
    index = json.loads(index_path.read_text())
    if index.get("format") != STORE_FORMAT:
        raise DataError(f"{index_path}: unknown store format")
    stacks = []
    for entry in index["cases"]:
        inputs = np.load(store_dir / entry["inputs"])
        targets = np.load(store_dir / entry["targets"])
        if inputs.shape[0] != entry["depth"]:
            raise DataError(f"{entry['case_id']}: store depth mismatch")
        for i in range(entry["depth"]):
            stacks.append(SliceStack(input=inputs[i], target=targets[i],
                                     case_id=entry["case_id"], target_index=i))
    return stacks, index
