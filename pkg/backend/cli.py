"""
Command-line front end.

    python cli.py run scenarios/benchmark.scn --out benchmark.csv
    python cli.py sweep scenarios --out results
    python cli.py compare scenarios/contour_good.scn --rule horizon --ticks 6000
    python cli.py modes base.mesh 30 --out base.modes
    python cli.py mesh gen base.spec --out base.mesh

Exit codes: 0 converged, 1 on any error, 2 stalled, 3 tick budget exhausted.
`compare` exits with the code of the modal run.
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import dotenv_values

from config import configure_logging, get_settings
from models.mesh import MaterialParams, MeshResolution
from models.run import RunStatus
from models.scenario import StopRule
from services.baseline_service import compare_controllers, run_baseline
from services.exceptions import DeformationControlError, InvalidSpecError
from services.export_service import export_csv, summarize
from services.fem_service import assemble_system
from services.mesh_service import (
    euler_rotation,
    format_mesh,
    generate_ellipsoid_mesh,
    make_ellipsoid_spec,
    place_mesh,
    read_mesh,
)
from services.modal_service import format_basis, solve_modes
from services.scenario_service import load_scenario, run_scenario, run_sweep

logger = logging.getLogger(__name__)

EXIT_CONVERGED = 0
EXIT_ERROR = 1
EXIT_STALLED = 2
EXIT_BUDGET_EXHAUSTED = 3

STATUS_EXIT_CODES = {
    RunStatus.CONVERGED: EXIT_CONVERGED,
    RunStatus.STALLED: EXIT_STALLED,
    RunStatus.MAX_TICKS: EXIT_BUDGET_EXHAUSTED,
}

MESH_SPEC_KEYS = {"a_x", "a_y", "a_z", "n_lat", "n_lon", "n_radial", "center", "rotation_deg"}


def _exit_code(status: RunStatus) -> int:
    return STATUS_EXIT_CODES[status]


def _triple(values: Dict[str, str], key: str, default: Sequence[float]) -> List[float]:
    raw = values.get(key)
    if not raw:
        return list(default)
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if len(parts) != 3:
        raise InvalidSpecError(f"{key} needs three comma-separated values")
    return [float(p) for p in parts]


def load_mesh_spec(path: Path):
    """Read a KEY=VALUE ellipsoid spec file into an EllipsoidSpec."""
    values = {k.lower(): v for k, v in dotenv_values(path, interpolate=False).items() if v}
    unknown = set(values) - MESH_SPEC_KEYS
    if unknown:
        raise InvalidSpecError(f"Unknown mesh spec keys: {', '.join(sorted(unknown))}")
    try:
        axes = [float(values[k]) for k in ("a_x", "a_y", "a_z")]
        defaults = MeshResolution()
        resolution = MeshResolution(
            n_lat=int(values.get("n_lat", defaults.n_lat)),
            n_lon=int(values.get("n_lon", defaults.n_lon)),
            n_radial=int(values.get("n_radial", defaults.n_radial)),
        )
    except KeyError as e:
        raise InvalidSpecError(f"Missing mesh spec key {e}") from e
    except ValueError as e:
        raise InvalidSpecError(f"Invalid mesh spec value: {e}") from e
    rotation = euler_rotation(_triple(values, "rotation_deg", (0.0, 0.0, 0.0)))
    return make_ellipsoid_spec(axes, _triple(values, "center", (0.0, 0.0, 0.0)), rotation, resolution)


def _write_or_print(text: str, out: Optional[Path]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)
        logger.info(f"Wrote {out}")


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    runner = run_baseline if args.baseline else run_scenario
    record = runner(scenario, args.seed)
    if args.out is not None:
        export_csv(record, args.out)
        logger.info(f"Wrote {args.out}")
    summary = summarize(record)
    print(summary.model_dump_json(indent=2))
    return _exit_code(summary.status)


def cmd_sweep(args: argparse.Namespace) -> int:
    table = asyncio.run(run_sweep(args.directory, args.out, get_settings()))
    if args.out is not None:
        table.to_csv(Path(args.out) / "summary.csv", index=False)
    columns = [c for c in ("scenario", "family", "status", "ticks", "final_e_s_norm", "cache_hit") if c in table]
    print(table[columns].to_string(index=False))
    if (table["status"] == "error").any():
        return EXIT_ERROR
    if (table["status"] == RunStatus.STALLED.value).any():
        return EXIT_STALLED
    if (table["status"] == RunStatus.MAX_TICKS.value).any():
        return EXIT_BUDGET_EXHAUSTED
    return EXIT_CONVERGED


def cmd_compare(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    comparison = compare_controllers(scenario, StopRule(args.rule), args.ticks, args.seed)
    print(comparison.model_dump_json(indent=2))
    return _exit_code(comparison.modal.status)


def cmd_modes(args: argparse.Namespace) -> int:
    mesh = read_mesh(args.mesh)
    material = MaterialParams(young_modulus=args.young, poisson_ratio=args.poisson, total_mass=args.mass)
    basis = solve_modes(assemble_system(mesh, material), args.m)
    _write_or_print(format_basis(basis), args.out)
    return EXIT_CONVERGED


def cmd_mesh_gen(args: argparse.Namespace) -> int:
    spec = load_mesh_spec(args.spec)
    mesh = place_mesh(generate_ellipsoid_mesh(spec), spec)
    _write_or_print(format_mesh(mesh), args.out)
    return EXIT_CONVERGED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deform",
        description="Model-free shape control of deformable objects with modal deformation features",
    )
    parser.add_argument("--log-level", default=None, help="Override DEFORM_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one scenario")
    run.add_argument("scenario", type=Path, help="Scenario .scn file")
    run.add_argument("--out", type=Path, default=None, help="CSV output path")
    run.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    run.add_argument("--baseline", action="store_true", help="Use the point-based baseline controller")
    run.set_defaults(handler=cmd_run)

    sweep = sub.add_parser("sweep", help="Run every scenario in a directory")
    sweep.add_argument("directory", type=Path)
    sweep.add_argument("--out", type=Path, default=None, help="Directory for per-run CSVs and summary.csv")
    sweep.set_defaults(handler=cmd_sweep)

    compare = sub.add_parser("compare", help="Run the modal and baseline controllers under one stop rule")
    compare.add_argument("scenario", type=Path, help="Scenario .scn file")
    compare.add_argument(
        "--rule", choices=[StopRule.TARGET.value, StopRule.HORIZON.value], default=StopRule.HORIZON.value,
    )
    compare.add_argument("--ticks", type=int, default=None, help="Override max_ticks for both runs")
    compare.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    compare.set_defaults(handler=cmd_compare)

    modes = sub.add_parser("modes", help="Dump the modal basis of a mesh file")
    modes.add_argument("mesh", type=Path)
    modes.add_argument("m", type=int)
    modes.add_argument("--young", type=float, default=1e5)
    modes.add_argument("--poisson", type=float, default=0.45)
    modes.add_argument("--mass", type=float, default=1000.0)
    modes.add_argument("--out", type=Path, default=None)
    modes.set_defaults(handler=cmd_modes)

    mesh = sub.add_parser("mesh", help="Mesh utilities")
    mesh_sub = mesh.add_subparsers(dest="mesh_command", required=True)
    gen = mesh_sub.add_parser("gen", help="Emit an ellipsoid mesh file from a KEY=VALUE spec")
    gen.add_argument("spec", type=Path)
    gen.add_argument("--out", type=Path, default=None)
    gen.set_defaults(handler=cmd_mesh_gen)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (DeformationControlError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
