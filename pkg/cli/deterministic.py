"""
Deterministic Runs

Seeding, canonical report serialization and report fingerprints.
"""

from __future__ import annotations

import hashlib
import os
import random
from typing import Any, Optional

import numpy as np

from rods.atomic_io import canonical_json
from rods.events import status

DEFAULT_SEED = 1234


def set_seed(seed: int = DEFAULT_SEED) -> np.random.Generator:
    """Seed python and numpy; returns a fresh Generator for sampled inputs."""
    status(f"🎲 Setting deterministic seed: {seed}")
    random.seed(seed)
    np.random.seed(seed)
    os.environ["PYTHONHASHSEED"] = str(seed)
    os.environ["ROD_SEED"] = str(seed)
    return np.random.default_rng(seed)


def _rounded(data: Any, digits: int) -> Any:
    if isinstance(data, dict):
        return {k: _rounded(v, digits) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [_rounded(v, digits) for v in data]
    if isinstance(data, float):
        # -0.0 and 0.0 must hash alike
        return round(data, digits) + 0.0
    return data


def report_fingerprint(report: Any, digits: Optional[int] = None) -> str:
    """
    sha256 prefix of the canonical JSON of a report.

    Args:
        report: JSON-compatible data
        digits: Round floats first, for fingerprints stable across BLAS builds

    Returns:
        16 hex characters
    """
    data = _rounded(report, digits) if digits is not None else report
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()[:16]
