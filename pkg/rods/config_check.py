"""
Solver Configuration Check

Validates solver settings and tolerance overrides against the frozen defaults.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any, Dict, Optional

from configs.rod_config import SOLVER_CONFIG, TOLERANCES
from rods.events import log_event, status

SUPPORTED_ELEMENT_ORDERS = (2,)
SUPPORTED_PRECONDITIONERS = ("jacobi", "none")


class SolverConfigValidator:
    """Validates solver and tolerance overrides before a run."""

    def __init__(self, baseline: Optional[Dict[str, Any]] = None):
        self.baseline = {**SOLVER_CONFIG, **TOLERANCES, **(baseline or {})}

    def validate(self, settings: Dict[str, Any]) -> Dict[str, Any]:
        """
        Check a merged settings mapping.

        Args:
            settings: Solver and tolerance keys, possibly partial

        Returns:
            Validation result with warnings/errors and the control hash
        """
        merged = {**self.baseline, **settings}
        result = {
            "valid": True,
            "warnings": [],
            "errors": [],
            "control_hash": self.compute_hash(merged),
        }

        for key in settings:
            if key not in self.baseline:
                result["warnings"].append(f"Unexpected parameter: {key}")

        if merged["element_order"] not in SUPPORTED_ELEMENT_ORDERS:
            result["errors"].append(
                f"element_order {merged['element_order']} unsupported (use {SUPPORTED_ELEMENT_ORDERS})"
            )
        if int(merged["quadrature_order"]) < 3:
            result["errors"].append("quadrature_order must be at least 3")
        if merged["cg_preconditioner"] not in SUPPORTED_PRECONDITIONERS:
            result["errors"].append(f"cg_preconditioner must be one of {SUPPORTED_PRECONDITIONERS}")

        for key in TOLERANCES:
            value = merged[key]
            if not isinstance(value, (int, float)) or value <= 0:
                result["errors"].append(f"{key} must be a positive number, got {value!r}")
            elif value != TOLERANCES[key]:
                result["warnings"].append(f"{key}: default {TOLERANCES[key]}, got {value}")
        if merged["saddle_regularization"] <= 0 or merged["saddle_regularization"] > 1e-6:
            result["errors"].append("saddle_regularization must lie in (0, 1e-6]")
        if int(merged["refinement_steps"]) < 1:
            result["warnings"].append("refinement_steps < 1 leaves the regularization bias in place")

        if result["errors"]:
            result["valid"] = False
        return result

    def compute_hash(self, settings: Dict[str, Any]) -> str:
        """md5 prefix of the canonical control surface."""
        hashable = {k: str(settings[k]) for k in sorted(settings)}
        return hashlib.md5(json.dumps(hashable, sort_keys=True).encode()).hexdigest()[:8]

    def log_validation(self, result: Dict[str, Any]):
        if result["valid"]:
            status(f"✅ Solver config valid (hash: {result['control_hash']})")
        else:
            status(f"❌ Solver config invalid (hash: {result['control_hash']})")
        for warning in result["warnings"]:
            status(f"⚠️  {warning}")
        for error in result["errors"]:
            status(f"❌ {error}")
        log_event(
            "config_validated",
            valid=result["valid"],
            control_hash=result["control_hash"],
            warnings=len(result["warnings"]),
            errors=len(result["errors"]),
        )


def validate_solver_config(settings: Dict[str, Any], quiet: bool = False) -> Dict[str, Any]:
    validator = SolverConfigValidator()
    result = validator.validate(settings)
    if not quiet:
        validator.log_validation(result)
    return result
