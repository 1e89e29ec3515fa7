"""
Rod Structure Configuration

Centralized defaults for geometry checks, discretization, solvers and exports.
"""

from __future__ import annotations

import copy
import os
from typing import Any, Dict, Optional

import yaml

# Geometric and algebraic tolerances (lengths relative to arc length where noted)
TOLERANCES = {
    "tol_arclen": 1e-8,       # relative
    "tol_frame": 1e-10,
    "tol_knot_rel": 1e-9,     # times L
    "tol_tangency": 1e-6,
    "c_min": 1e-8,
    "tol_constraint": 1e-8,   # relative
    "tol_orth": 1e-10,        # relative to the Riesz representer norm
    "residual_rtol": 1e-9,
}

# Discretization and linear algebra
SOLVER_CONFIG = {
    "element_order": 2,
    "quadrature_order": 3,
    "cg_rtol": 1e-12,
    "cg_maxiter_factor": 10,
    "cg_preconditioner": "jacobi",
    "saddle_regularization": 1e-12,
    "refinement_steps": 3,
    "check_coercivity": False,
}

# Sampling used by validate_skeleton and the junction covering estimate
GEOMETRY_CONFIG = {
    "validation_samples": 257,
    "resample_n": 64,
    "knot_exclusion": 0.25,   # fraction of the shorter arc ignored near shared knots
    "covering_samples": 41,
}

# Tube-field toolkit
DECOMPOSITION_CONFIG = {
    "n_radial": 4,
    "n_angular": 8,
    "fit_degree": 3,
    "ball_fraction": 0.2,
    "sections_per_delta": 10,
    "deltas": [0.2, 0.1, 0.05],
    "families": ["extension", "bending", "torsion"],
    "amplitude": 1.0,
    "growth_limit": 4.0,     # max/min ratio across deltas still reported as bounded
}

# Output settings
OUTPUT_CONFIG = {
    "output_dir": "out",
    "summary_file": "summary.json",
    "validation_file": "validation.json",
    "estimates_file": "estimates.json",
    "polyline_file": "polyline.txt",
    "manifest_file": "manifest.json",
    "arc_file_pattern": "arc_{arc_id}.csv",
    "stress_radial": 3,
    "stress_angular": 8,
}

# Thread caps applied before numpy/scipy spin up their pools
ROD_ENV = {
    "OMP_NUM_THREADS": "4",
    "OPENBLAS_NUM_THREADS": "4",
    "MKL_NUM_THREADS": "4",
    "VECLIB_MAXIMUM_THREADS": "4",
}

DEFAULT_MATERIAL = {"lambda": 1.0, "mu": 1.0}


def setup_environment():
    """
    Apply thread caps; call before numpy is imported.

    ROD_NUM_THREADS overrides every cap, otherwise caps already in the
    environment are kept.
    """
    threads = os.environ.get("ROD_NUM_THREADS", "").strip()
    for key, value in ROD_ENV.items():
        if threads.isdigit() and int(threads) > 0:
            os.environ[key] = threads
        else:
            os.environ.setdefault(key, value)


def worker_count() -> int:
    """Worker pool size for per-arc and per-knot maps."""
    raw = os.environ.get("ROD_NUM_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, min(4, os.cpu_count() or 1))


def _merged(base: Dict[str, Any], overrides: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def get_tolerances(overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Get tolerance table with optional overrides."""
    return _merged(TOLERANCES, overrides)


def get_solver_config(overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Get solver configuration with optional overrides."""
    return _merged(SOLVER_CONFIG, overrides)


def get_geometry_config(overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Get geometry sampling configuration."""
    return _merged(GEOMETRY_CONFIG, overrides)


def get_decomposition_config(overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Get decomposition toolkit configuration."""
    return _merged(DECOMPOSITION_CONFIG, overrides)


def get_output_config():
    """Get output configuration."""
    return OUTPUT_CONFIG


def load_config_file(path: str) -> Dict[str, Any]:
    """
    Load a run configuration file.

    JSON documents parse as YAML, so one loader covers both formats.

    Args:
        path: Path to a .json, .yaml or .yml file

    Returns:
        Mapping with optional sections "solver", "tolerances", "decomposition",
        "material" and "run"
    """
    with open(path, "r") as f:
        data = yaml.safe_load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must contain a mapping, got {type(data).__name__}")
    return data


_RUN_TABLES = {
    "solver": SOLVER_CONFIG,
    "tolerances": TOLERANCES,
    "geometry": GEOMETRY_CONFIG,
    "decomposition": DECOMPOSITION_CONFIG,
}

_DEFAULT_TABLES = copy.deepcopy(_RUN_TABLES)


def reset_tables():
    """Put the live tables back to their import-time defaults."""
    for name, table in _RUN_TABLES.items():
        table.clear()
        table.update(copy.deepcopy(_DEFAULT_TABLES[name]))


def apply_run_config(data: Dict[str, Any]) -> Dict[str, Any]:
    """
    Reset the live tables, then fold in the known keys of a run config's sections.

    Every call starts from the defaults, so one run's settings never carry
    over into the next run in the same process.

    Returns:
        The applied keys per section; unknown keys are left to the config check
    """
    sections = {}
    for name in _RUN_TABLES:
        section = data.get(name) or {}
        if not isinstance(section, dict):
            raise ValueError(f"config section {name!r} must be a mapping")
        sections[name] = section
    reset_tables()
    applied: Dict[str, Any] = {}
    for name, table in _RUN_TABLES.items():
        known = {k: v for k, v in sections[name].items() if k in table and v is not None}
        table.update(known)
        if known:
            applied[name] = known
    return applied
