"""
rodctl report

Environment diagnostics and result-directory status for issue reporting.
"""

from __future__ import annotations

import json
import os
import platform
from datetime import datetime, timezone
from importlib import metadata
from typing import Any, Dict

from configs.rod_config import ROD_ENV, get_output_config
from rods.atomic_io import verify_manifest
from rods.config_check import validate_solver_config
from rods.pipeline import solver_settings

ENV_KEYS = ["ROD_NUM_THREADS", "ROD_LOG_LEVEL", "ROD_SEED", *ROD_ENV]
PACKAGES = ["numpy", "scipy", "click", "rich", "PyYAML"]


def _version(name: str) -> str:
    try:
        return metadata.version(name)
    except metadata.PackageNotFoundError:
        return "missing"


def _read_json(path: str) -> Any:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError):
        return None


def _output_status(out_dir: str) -> Dict[str, Any]:
    cfg = get_output_config()
    if not os.path.isdir(out_dir):
        return {"directory_exists": False}
    files = sorted(os.listdir(out_dir))
    info: Dict[str, Any] = {
        "directory_exists": True,
        "files": files,
        "total_size_kb": sum(os.path.getsize(os.path.join(out_dir, f)) for f in files) // 1024,
    }
    if cfg["manifest_file"] in files:
        info["manifest"] = verify_manifest(out_dir, cfg["manifest_file"])

    summary = _read_json(os.path.join(out_dir, cfg["summary_file"]))
    if summary:
        info["solve"] = {
            "control_hash": summary.get("diagnostics", {}).get("control_hash"),
            "energies": summary.get("energies"),
            "residuals": summary.get("residuals"),
        }
    validation = _read_json(os.path.join(out_dir, cfg["validation_file"]))
    if validation:
        failing = [k for k, v in validation.get("checks", {}).items() if not v.get("passed")]
        info["validate"] = {"usable": validation.get("usable"), "failing": failing}
    estimates = _read_json(os.path.join(out_dir, cfg["estimates_file"]))
    if estimates:
        info["decompose"] = {
            "tube_fields": len(estimates.get("tube_fields", [])),
            "families": sorted(estimates.get("families", {})),
        }
    return info


def collect_diagnostics(out_dir: str) -> Dict[str, Any]:
    """System, library, environment and output-directory status."""
    config = validate_solver_config(solver_settings(), quiet=True)
    output = _output_status(out_dir)
    manifest_ok = output.get("manifest", {}).get("valid", True)
    return {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "system": {
            "platform": platform.system(),
            "machine": platform.machine(),
            "python_version": platform.python_version(),
            "cpu_count": os.cpu_count(),
        },
        "packages": {name: _version(name) for name in PACKAGES},
        "environment": {key: os.environ.get(key, "unset") for key in ENV_KEYS},
        "solver_config": {"valid": config["valid"], "control_hash": config["control_hash"]},
        "output": output,
        "health": {
            "config_valid": config["valid"],
            "packages_ok": all(_version(name) != "missing" for name in PACKAGES),
            "results_intact": bool(output.get("directory_exists")) and manifest_ok,
        },
    }


def render_diagnostics(diag: Dict[str, Any], console) -> None:
    """Human-readable report on a rich console."""
    console.print("🔍 Rod Structure Diagnostic Report", style="bold")
    console.print("=" * 50)

    system = diag["system"]
    console.print("\n💻 System:")
    console.print(f"   Platform: {system['platform']} {system['machine']}")
    console.print(f"   Python: {system['python_version']}  CPUs: {system['cpu_count']}")
    console.print("   " + "  ".join(f"{k} {v}" for k, v in diag["packages"].items()))

    cfg = diag["solver_config"]
    mark = "✅" if cfg["valid"] else "❌"
    console.print(f"\n⚙️  Solver config: {mark} (hash: {cfg['control_hash']})")

    output = diag["output"]
    if not output["directory_exists"]:
        console.print("\n📁 Output: Directory not found")
    else:
        console.print(f"\n📁 Output: {len(output['files'])} files, {output['total_size_kb']} KB")
        manifest = output.get("manifest")
        if manifest is not None:
            mark = "✅ intact" if manifest["valid"] else "❌ modified"
            console.print(f"   Manifest: {mark}")
            for name in manifest["missing"] + manifest["mismatched"]:
                console.print(f"      {name}")
        if "validate" in output:
            v = output["validate"]
            console.print(f"   Skeleton: {'usable' if v['usable'] else 'failing ' + ', '.join(v['failing'])}")
        if "solve" in output:
            e = output["solve"]["energies"] or {}
            console.print(
                f"   Energies: extensional {e.get('extensional', 0.0):.6g}, "
                f"inextensional {e.get('inextensional', 0.0):.6g}"
            )
        if "decompose" in output:
            d = output["decompose"]
            console.print(f"   Estimates: {d['tube_fields']} tube fields, families {d['families']}")

    healthy = all(diag["health"].values())
    console.print(f"\n🎯 Status: {'Healthy' if healthy else 'Attention needed'}")
