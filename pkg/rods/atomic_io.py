"""
Atomic File Operations

Crash-safe writes and content hashes for result files.
"""

from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Dict, Iterable


def _finish(tmp_path: str, path: str):
    with open(tmp_path, "rb") as f:
        os.fsync(f.fileno())
    os.replace(tmp_path, path)


def atomic_write_text(path: str, text: str) -> Dict[str, Any]:
    """
    Write text through a temporary sibling, fsync, then rename.

    Args:
        path: Output path; parent directories are created
        text: File contents

    Returns:
        Write result with path, size and sha256
    """
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    tmp_path = path + ".tmp"
    try:
        with open(tmp_path, "w", newline="\n") as f:
            f.write(text)
        _finish(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            try:
                os.remove(tmp_path)
            except OSError:
                pass
        raise
    return {
        "success": True,
        "path": path,
        "file_size": os.path.getsize(path),
        "sha256": compute_file_hash(path),
    }


def canonical_json(data: Any) -> str:
    """Sorted keys, two-space indent, trailing newline."""
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def atomic_write_json(path: str, data: Any) -> Dict[str, Any]:
    return atomic_write_text(path, canonical_json(data))


def atomic_write_lines(path: str, lines: Iterable[str]) -> Dict[str, Any]:
    return atomic_write_text(path, "".join(line + "\n" for line in lines))


def compute_file_hash(path: str) -> str:
    """Compute SHA256 hash of file."""
    hasher = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(4096), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def write_manifest(directory: str, names: Iterable[str], manifest_name: str) -> Dict[str, Any]:
    """Record sha256 and size of each written file next to them."""
    entries = {}
    for name in sorted(names):
        path = os.path.join(directory, name)
        entries[name] = {"sha256": compute_file_hash(path), "size": os.path.getsize(path)}
    return atomic_write_json(os.path.join(directory, manifest_name), {"files": entries})


def verify_manifest(directory: str, manifest_name: str) -> Dict[str, Any]:
    """
    Compare files in a result directory against their manifest.

    Returns:
        {"valid": bool, "missing": [...], "mismatched": [...]}
    """
    with open(os.path.join(directory, manifest_name)) as f:
        manifest = json.load(f)
    missing, mismatched = [], []
    for name, entry in manifest.get("files", {}).items():
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            missing.append(name)
        elif compute_file_hash(path) != entry["sha256"]:
            mismatched.append(name)
    return {"valid": not missing and not mismatched, "missing": missing, "mismatched": mismatched}
