"""
Field Quality Control

Sanity metrics for computed displacement fields before they are exported.
"""

from __future__ import annotations

from typing import Any, Dict

import numpy as np


def qc_field(values: np.ndarray, name: str = "field") -> Dict[str, Any]:
    """
    Basic checks on an array of nodal vectors.

    Args:
        values: (n, 3) nodal values
        name: Label used in the result

    Returns:
        QC metrics dictionary
    """
    values = np.asarray(values, dtype=float)
    finite = bool(np.isfinite(values).all())
    magnitudes = np.linalg.norm(values.reshape(-1, values.shape[-1]), axis=1) if values.size else np.zeros(0)
    peak = float(magnitudes.max()) if finite and magnitudes.size else float("nan")
    return {
        "name": name,
        "nodes": int(magnitudes.size),
        "finite": finite,
        "peak": peak,
        "rms": float(np.sqrt(np.mean(magnitudes**2))) if finite and magnitudes.size else float("nan"),
        "is_zero": finite and peak == 0.0,
        "is_valid": finite,
    }


def qc_clamped(values: np.ndarray, clamped_nodes: np.ndarray, atol: float = 0.0) -> Dict[str, Any]:
    """Clamped nodes must carry exactly zero displacement."""
    values = np.asarray(values, dtype=float).reshape(-1, 3)
    if clamped_nodes.size == 0:
        return {"clamped_nodes": 0, "max_clamped": 0.0, "is_valid": True}
    worst = float(np.abs(values[clamped_nodes]).max())
    return {"clamped_nodes": int(clamped_nodes.size), "max_clamped": worst, "is_valid": worst <= atol}
