"""
rodctl

Batch front end: validate a skeleton, solve the limit problems, decompose
tube fields and report on a finished run.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, NoReturn, Optional, Tuple

import click
from rich.console import Console
from rich.table import Table

from cli.deterministic import DEFAULT_SEED, report_fingerprint, set_seed
from cli.rodctl_diag import collect_diagnostics, render_diagnostics
from configs.rod_config import (
    DEFAULT_MATERIAL,
    apply_run_config,
    get_decomposition_config,
    get_output_config,
    load_config_file,
)
from rods.atomic_io import canonical_json
from rods.decomposition import FAMILIES
from rods.errors import InvalidMaterial
from rods.loads import LOAD_MODES
from rods.pipeline import decompose_with_validation, solve_with_validation, validate_with_report
from rods.solver import Material

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_INPUT = 2

# failures caused by the inputs rather than the numerics
INPUT_ERRORS = {"ParseError", "InvalidMaterial", "ConfigInvalid", "FileNotFoundError"}

stdout = Console(highlight=False)


@dataclass
class RunConfig:
    """Resolved settings of one rodctl invocation (config file, then flags)."""

    command: str
    skeleton: Optional[str] = None
    loads: Optional[str] = None
    out_dir: str = field(default_factory=lambda: get_output_config()["output_dir"])
    h: Optional[float] = None
    mode: Optional[str] = None
    deltas: List[float] = field(default_factory=list)
    tube_files: List[str] = field(default_factory=list)
    families: List[str] = field(default_factory=list)
    rho: Optional[float] = None
    lam: float = DEFAULT_MATERIAL["lambda"]
    mu: float = DEFAULT_MATERIAL["mu"]
    settings: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> List[str]:
        """Errors that stop the run before any numerics."""
        errors = []
        needs = {"validate": ("skeleton",), "solve": ("skeleton", "loads"), "decompose": ("skeleton",)}
        for name in needs.get(self.command, ()):
            path = getattr(self, name)
            if not path:
                errors.append(f"--{name} is required for {self.command}")
            elif not os.path.exists(path):
                errors.append(f"{name} file not found: {path}")
        for path in self.tube_files:
            if not os.path.exists(path):
                errors.append(f"tube field not found: {path}")
        if self.h is not None and not self.h > 0:
            errors.append(f"--h must be positive, got {self.h}")
        if self.mode is not None and self.mode not in LOAD_MODES:
            errors.append(f"--mode must be one of {LOAD_MODES}")
        if any(not d > 0 for d in self.deltas):
            errors.append("deltas must be positive")
        if self.rho is not None and self.rho < 1.0:
            errors.append("--rho must be at least 1")
        unknown = [name for name in self.families if name not in FAMILIES]
        if unknown:
            errors.append(f"unknown families {unknown}; expected {list(FAMILIES)}")
        for key, value in self.settings.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value <= 0:
                errors.append(f"{key} must be positive, got {value}")
        if self.command == "decompose" and not self.tube_files and not self.families:
            errors.append("decompose needs --tube files or --family names")
        return errors


def _parse_deltas(raw: Optional[str]) -> List[float]:
    if not raw:
        return []
    try:
        return [float(v) for v in raw.replace(" ", "").split(",") if v]
    except ValueError:
        raise click.BadParameter(f"expected a comma-separated list of numbers, got {raw!r}")


def build_run_config(command: str, config_path: Optional[str], **flags: Any) -> RunConfig:
    """
    Merge a run config file with command-line flags.

    The file's solver/tolerances/geometry/decomposition sections update the
    live tables; its run and material sections give defaults for the flags.
    """
    data: Dict[str, Any] = load_config_file(config_path) if config_path else {}
    apply_run_config(data)
    run = dict(data.get("run") or {})
    material = dict(data.get("material") or {})
    settings = {**(data.get("solver") or {}), **(data.get("tolerances") or {})}

    def pick(name: str, default: Any = None) -> Any:
        value = flags.get(name)
        if value is None or value == () or value == []:
            value = run.get(name, default)
        return value

    deltas = pick("deltas") or []
    if isinstance(deltas, str):
        deltas = _parse_deltas(deltas)
    return RunConfig(
        command=command,
        skeleton=pick("skeleton"),
        loads=pick("loads"),
        out_dir=pick("out_dir", get_output_config()["output_dir"]),
        h=pick("h"),
        mode=pick("mode"),
        deltas=[float(d) for d in deltas],
        tube_files=list(pick("tube_files") or []),
        families=list(pick("families") or []),
        rho=pick("rho"),
        lam=float(flags.get("lam") or material.get("lambda", DEFAULT_MATERIAL["lambda"])),
        mu=float(flags.get("mu") or material.get("mu", DEFAULT_MATERIAL["mu"])),
        settings=settings,
    )


def _exit_for(result: Dict[str, Any]) -> int:
    return EXIT_INPUT if result.get("error_type") in INPUT_ERRORS else EXIT_FAILED


def _fail(message: str, code: int, as_json: bool) -> NoReturn:
    if as_json:
        click.echo(canonical_json({"success": False, "error": message}), nl=False)
    else:
        click.echo(f"❌ {message}", err=True)
    sys.exit(code)


def _prepare(ctx: click.Context, command: str, **flags: Any) -> Tuple[RunConfig, bool]:
    as_json = ctx.obj["json"]
    try:
        config = build_run_config(command, ctx.obj["config"], **flags)
    except (OSError, ValueError) as e:
        _fail(f"cannot load config: {e}", EXIT_INPUT, as_json)
    errors = config.validate()
    if errors:
        _fail("; ".join(errors), EXIT_INPUT, as_json)
    return config, as_json


def _material(config: RunConfig, as_json: bool) -> Material:
    try:
        return Material(config.lam, config.mu)
    except InvalidMaterial as e:
        _fail(str(e), EXIT_INPUT, as_json)


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Run config (JSON or YAML)")
@click.option("--json", "as_json", is_flag=True, help="Print the result as JSON on stdout")
@click.option("--seed", type=int, default=DEFAULT_SEED, show_default=True, help="Seed for sampled inputs")
@click.pass_context
def main(ctx: click.Context, config_path: Optional[str], as_json: bool, seed: int):
    """Limit models of curved rod structures."""
    set_seed(seed)
    ctx.ensure_object(dict)
    ctx.obj.update({"config": config_path, "json": as_json})


@main.command()
@click.option("--skeleton", type=click.Path(), help="Skeleton file")
@click.option("--out", "out_dir", type=click.Path(), help="Output directory")
@click.pass_context
def validate(ctx: click.Context, skeleton: Optional[str], out_dir: Optional[str]):
    """Check the structural hypotheses of a skeleton."""
    config, as_json = _prepare(ctx, "validate", skeleton=skeleton, out_dir=out_dir)
    result = validate_with_report(config.skeleton, config.out_dir)
    if not result["success"]:
        _fail(f"{result['error_type']}: {result['error']}", _exit_for(result), as_json)

    if as_json:
        click.echo(canonical_json(result["report"]), nl=False)
    else:
        table = Table(title="Skeleton checks")
        table.add_column("check")
        table.add_column("status")
        table.add_column("details")
        for name, check in result["report"]["checks"].items():
            table.add_row(name, "✅" if check["passed"] else "❌", "\n".join(check["details"]))
        stdout.print(table)
        delta0 = result["report"]["delta0"]
        stdout.print(f"delta0: {delta0:.6g}" if delta0 is not None else "delta0: undefined")
        stdout.print(f"report: {result['path']}")
    sys.exit(EXIT_OK if result["usable"] else EXIT_FAILED)


@main.command()
@click.option("--skeleton", type=click.Path(), help="Skeleton file")
@click.option("--loads", type=click.Path(), help="Load case file")
@click.option("--out", "out_dir", type=click.Path(), help="Output directory")
@click.option("--h", type=float, default=None, help="Mesh size")
@click.option("--mode", type=click.Choice(LOAD_MODES), default=None, help="Extensional load handling")
@click.option("--lam", type=float, default=None, help="Lamé lambda")
@click.option("--mu", type=float, default=None, help="Lamé mu")
@click.pass_context
def solve(ctx: click.Context, **flags: Any):
    """Solve both limit problems and export the fields."""
    config, as_json = _prepare(ctx, "solve", **flags)
    result = solve_with_validation(
        config.skeleton,
        config.loads,
        config.out_dir,
        h=config.h,
        mode=config.mode,
        material=_material(config, as_json),
        settings=config.settings,
    )
    if not result["success"]:
        _fail(f"{result['error_type']}: {result['error']}", _exit_for(result), as_json)

    met = result["metrics"]["tolerances_met"]
    if as_json:
        payload = {k: v for k, v in result.items() if k != "solution"}
        click.echo(canonical_json(payload), nl=False)
    else:
        table = Table(title="Tolerance checks")
        table.add_column("check")
        table.add_column("value")
        table.add_column("limit")
        table.add_column("status")
        for name, check in result["checks"].items():
            table.add_row(name, f"{check['value']:.3e}", f"{check['limit']:.1e}", "✅" if check["passed"] else "❌")
        stdout.print(table)
        m = result["metrics"]
        stdout.print(
            f"energies: extensional {m['extensional_energy']:.6g}, inextensional {m['inextensional_energy']:.6g}"
        )
        stdout.print(f"files: {', '.join(result['files'])} in {config.out_dir}")
    sys.exit(EXIT_OK if met else EXIT_FAILED)


@main.command()
@click.option("--skeleton", type=click.Path(), help="Skeleton file the tube fields live on")
@click.option("--out", "out_dir", type=click.Path(), help="Output directory")
@click.option("--tube", "tube_files", multiple=True, type=click.Path(), help="Tube field CSV (repeatable)")
@click.option("--family", "families", multiple=True, type=click.Choice(FAMILIES), help="Synthetic displacement family")
@click.option("--delta", "deltas", default=None, help="Comma-separated thicknesses, decreasing")
@click.option("--rho", type=float, default=None, help="Junction width factor")
@click.option("--lam", type=float, default=None, help="Lamé lambda")
@click.option("--mu", type=float, default=None, help="Lamé mu")
@click.pass_context
def decompose(ctx: click.Context, **flags: Any):
    """Elementary decompositions and estimate ratios."""
    flags["deltas"] = _parse_deltas(flags.get("deltas"))
    config, as_json = _prepare(ctx, "decompose", **flags)
    result = decompose_with_validation(
        config.skeleton,
        config.out_dir,
        tube_files=config.tube_files,
        families=config.families,
        deltas=config.deltas or get_decomposition_config()["deltas"],
        rho=config.rho,
        material=_material(config, as_json),
    )
    if not result["success"]:
        _fail(f"{result['error_type']}: {result['error']}", _exit_for(result), as_json)

    report = result["report"]
    if as_json:
        click.echo(canonical_json({"report": report, "unbounded": result["unbounded"]}), nl=False)
    else:
        for row in report["tube_fields"]:
            ratios = ", ".join(f"{k}={_fmt(v)}" for k, v in row["ratios"].items())
            stdout.print(f"{row['file']}: E={row['strain_energy']:.6g} D={row['gradient_energy']:.6g} {ratios}")
        for name, sweep in report["families"].items():
            table = Table(title=f"{name} family")
            table.add_column("ratio")
            for delta in sweep["deltas"]:
                table.add_column(f"δ={delta:g}")
            table.add_column("bounded")
            for key, flag in sweep["flags"].items():
                cells = [_fmt(sweep["by_delta"][repr(d)]["ratios"][key]) for d in sweep["deltas"]]
                table.add_row(key, *cells, "✅" if flag["bounded"] else "⚠️")
            stdout.print(table)
        stdout.print(f"fingerprint: {report_fingerprint(report, digits=8)}")
    sys.exit(EXIT_OK)


@main.command()
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Run directory")
@click.pass_context
def report(ctx: click.Context, out_dir: Optional[str]):
    """Render a finished run directory and environment diagnostics."""
    diag = collect_diagnostics(out_dir or get_output_config()["output_dir"])
    if ctx.obj["json"]:
        click.echo(json.dumps(diag, indent=2))
    else:
        render_diagnostics(diag, stdout)
    manifest = diag["output"].get("manifest")
    sys.exit(EXIT_FAILED if manifest is not None and not manifest["valid"] else EXIT_OK)


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4g}"


if __name__ == "__main__":
    main()
