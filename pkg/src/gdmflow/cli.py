"""Experiment runner: config parsing, study/single execution, CSV output.

Config files are `key = value` lines with '#' comments.  Recognized keys::

    mode             study | single            (required)
    mesh_family      triangular | distorted | <path to a polymesh file>
    levels           comma-separated n values  (study: >= 3 distinct)
    amplitude        distortion amplitude      (default 0.3)
    viscosity_model  constant | sqrt_coupled
    problem          taylor_green | zero       (default taylor_green)
    mu               thermal diffusivity       (default 1)
    T                final time                (default 0.1)
    dt_rule          proportional:<factor> | fixed:<dt>  (default proportional:1)
    picard_tol       Picard stopping tolerance (default 1e-9)
    output           output directory          (default '.')

Outputs: errors.csv, rates.txt (study mode), diagnostics.csv, state.csv
(single mode).  Reruns with an identical config are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mms
from .errors import ConfigError, GdmflowError, InsufficientLevels
from .gd_core import TimeGrid
from .hfv import build_hfv
from .mesh import build_distorted, build_triangular, load_mesh
from .scheme import (
    ProblemSpec,
    SolverConfig,
    constant_viscosity,
    solve_transient,
    sqrt_coupled_viscosity,
)

_KNOWN_KEYS = {
    "mode",
    "mesh_family",
    "levels",
    "amplitude",
    "viscosity_model",
    "problem",
    "mu",
    "T",
    "dt_rule",
    "picard_tol",
    "output",
}

_VISCOSITIES = {
    "constant": constant_viscosity,
    "sqrt_coupled": sqrt_coupled_viscosity,
}


@dataclass(frozen=True)
class RunConfig:
    mode: str
    mesh_family: str = "triangular"
    levels: tuple[int, ...] = ()
    amplitude: float = 0.3
    viscosity_model: str = "constant"
    problem: str = "taylor_green"
    mu: float = 1.0
    final_time: float = 0.1
    dt_rule: str = "proportional"
    dt_value: float = 1.0
    picard_tol: float = 1e-9
    output: str = "."


def parse_config(path) -> RunConfig:
    """Parse and validate a run configuration file."""
    try:
        raw = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc

    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for no, line in enumerate(raw.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", line=no)
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KNOWN_KEYS:
            raise ConfigError("unknown key", line=no, key=key)
        if key in values:
            raise ConfigError("duplicate key", line=no, key=key)
        values[key] = value
        lines[key] = no

    def err(key: str, message: str) -> ConfigError:
        return ConfigError(message, line=lines.get(key), key=key)

    def parse_float(key: str, default: float, positive: bool = True) -> float:
        if key not in values:
            return default
        try:
            out = float(values[key])
        except ValueError:
            raise err(key, f"bad number '{values[key]}'") from None
        if positive and out <= 0.0:
            raise err(key, "value must be positive")
        return out

    mode = values.get("mode")
    if mode not in ("study", "single"):
        raise err("mode", f"mode must be 'study' or 'single', got '{mode}'")

    mesh_family = values.get("mesh_family", "triangular")
    if mesh_family not in ("triangular", "distorted") and not Path(mesh_family).suffix:
        raise err("mesh_family", f"unknown mesh family '{mesh_family}'")

    levels: tuple[int, ...] = ()
    if "levels" in values:
        try:
            levels = tuple(int(part) for part in values["levels"].split(","))
        except ValueError:
            raise err("levels", f"bad level list '{values['levels']}'") from None
        if any(n < 1 for n in levels):
            raise err("levels", "levels must be positive integers")
    if mode == "study":
        if mesh_family not in ("triangular", "distorted"):
            raise err("mesh_family", "study mode needs a generated mesh family")
        if len(set(levels)) < 3:
            raise ConfigError(
                str(InsufficientLevels("study mode needs >= 3 distinct levels")),
                line=lines.get("levels"),
                key="levels",
            )
    elif mode == "single" and mesh_family in ("triangular", "distorted") and not levels:
        levels = (2,)

    amplitude = parse_float("amplitude", 0.3, positive=False)
    if not 0.0 <= amplitude < 0.45:
        raise err("amplitude", "amplitude must lie in [0, 0.45)")

    viscosity_model = values.get("viscosity_model", "constant")
    if viscosity_model not in _VISCOSITIES:
        raise err("viscosity_model", f"unknown viscosity model '{viscosity_model}'")

    problem = values.get("problem", "taylor_green")
    if problem not in ("taylor_green", "zero"):
        raise err("problem", f"unknown problem '{problem}'")
    if mode == "study" and problem != "taylor_green":
        raise err("problem", "study mode requires the manufactured problem")

    dt_rule, dt_value = "proportional", 1.0
    if "dt_rule" in values:
        rule, _, num = values["dt_rule"].partition(":")
        rule = rule.strip()
        if rule not in ("proportional", "fixed"):
            raise err("dt_rule", "dt_rule must be 'proportional:<c>' or 'fixed:<dt>'")
        try:
            dt_value = float(num) if num else 1.0
        except ValueError:
            raise err("dt_rule", f"bad dt_rule number '{num}'") from None
        if dt_value <= 0.0:
            raise err("dt_rule", "dt_rule value must be positive")
        dt_rule = rule

    return RunConfig(
        mode=mode,
        mesh_family=mesh_family,
        levels=levels,
        amplitude=amplitude,
        viscosity_model=viscosity_model,
        problem=problem,
        mu=parse_float("mu", 1.0),
        final_time=parse_float("T", 0.1),
        dt_rule=dt_rule,
        dt_value=dt_value,
        picard_tol=parse_float("picard_tol", 1e-9),
        output=values.get("output", "."),
    )


_ERROR_COLUMNS = [
    "level", "h", "dofs_u", "dofs_p", "dofs_s",
    "E_u1", "E_u2", "E1", "E2", "E3",
]
_DIAG_COLUMNS = [
    "level", "step", "picard_iters",
    "energy_residual_u", "energy_residual_s", "incompressibility_residual",
]


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list], complete: bool):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
        if not complete:
            fh.write("# INCOMPLETE\n")


def _max_workers() -> int:
    env = os.environ.get("GDM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"bad GDM_THREADS value '{env}'") from None
    return os.cpu_count() or 1


def _run_study(config: RunConfig, out: Path, quiet: bool) -> None:
    viscosity = _VISCOSITIES[config.viscosity_model]()
    report = mms.convergence_study(
        family=config.mesh_family,
        levels=config.levels,
        viscosity=viscosity,
        mu=config.mu,
        final_time=config.final_time,
        amplitude=config.amplitude,
        dt_factor=config.dt_value if config.dt_rule == "proportional" else 1.0,
        fixed_dt=config.dt_value if config.dt_rule == "fixed" else None,
        config=SolverConfig(picard_tol=config.picard_tol),
        max_workers=_max_workers(),
    )
    error_rows = [
        [res.level, res.h, res.dofs_u, res.dofs_p, res.dofs_s]
        + [res.errors[q] for q in ("E_u1", "E_u2", "E1", "E2", "E3")]
        for res in report.levels
    ]
    _write_csv(out / "errors.csv", _ERROR_COLUMNS, error_rows, complete=True)

    diag_rows = [
        [res.level, n, d.picard_iters, d.energy_residual_u,
         d.energy_residual_s, d.incompressibility_residual]
        for res in report.levels
        for n, d in enumerate(res.diagnostics)
    ]
    _write_csv(out / "diagnostics.csv", _DIAG_COLUMNS, diag_rows, complete=True)

    with open(out / "rates.txt", "w") as fh:
        for fit in report.fits:
            fh.write(
                f"{fit.quantity}: slope={_fmt(fit.slope)} "
                f"intercept={_fmt(float(np.log(fit.prefactor)))} "
                f"residual={_fmt(fit.residual)}\n"
            )
    if not quiet:
        for fit in report.fits:
            print(f"{fit.quantity}: slope {fit.slope:.4f} (residual {fit.residual:.4f})")


def _run_single(config: RunConfig, out: Path, quiet: bool) -> None:
    viscosity = _VISCOSITIES[config.viscosity_model]()
    if config.mesh_family == "triangular":
        mesh = build_triangular(config.levels[0])
    elif config.mesh_family == "distorted":
        mesh = build_distorted(config.levels[0], config.amplitude)
    else:
        mesh = load_mesh(config.mesh_family)
    gd = build_hfv(mesh)
    h = gd.geom.h

    sol = None
    if config.problem == "taylor_green":
        sol = mms.taylor_green_solution()
        problem = mms.make_problem(
            sol, viscosity, mu=config.mu, final_time=config.final_time
        )
    else:
        problem = ProblemSpec(
            viscosity=viscosity, mu=config.mu, final_time=config.final_time
        )

    if config.dt_rule == "fixed":
        n_steps = max(1, round(config.final_time / config.dt_value))
    else:
        n_steps = max(1, round(1.0 / config.dt_value))
    grid = TimeGrid.uniform(config.final_time, n_steps)
    states, diags = solve_transient(
        gd, problem, grid, SolverConfig(picard_tol=config.picard_tol)
    )

    diag_rows = [
        [0, n, d.picard_iters, d.energy_residual_u,
         d.energy_residual_s, d.incompressibility_residual]
        for n, d in enumerate(diags)
    ]
    _write_csv(out / "diagnostics.csv", _DIAG_COLUMNS, diag_rows, complete=True)

    final = states[-1]
    state_rows = (
        [["u", i, v] for i, v in enumerate(final.u)]
        + [["p", i, v] for i, v in enumerate(final.p)]
        + [["S", i, v] for i, v in enumerate(final.s)]
    )
    _write_csv(out / "state.csv", ["field", "dof", "value"], state_rows, complete=True)

    if sol is not None:
        errors = mms.compute_errors(gd, final, sol, config.final_time)
        row = [0, h, len(gd.free_u), gd.n_pdofs, len(gd.free_s)] + [
            errors[q] for q in ("E_u1", "E_u2", "E1", "E2", "E3")
        ]
        _write_csv(out / "errors.csv", _ERROR_COLUMNS, [row], complete=True)
    if not quiet:
        print(f"single run complete: {len(diags)} step(s), h={h:.4g}")


def run(config: RunConfig, out_dir: str | None = None, quiet: bool = False) -> int:
    """Execute a run; returns a process exit status."""
    out = Path(out_dir if out_dir is not None else config.output)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if config.mode == "study":
            _run_study(config, out, quiet)
        else:
            _run_single(config, out, quiet)
    except GdmflowError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gdmflow",
        description="Convergence studies and single runs of the coupled "
        "flow/heat hybrid-finite-volume solver.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_parser = sub.add_parser("run", help="execute a config file")
    run_parser.add_argument("config", help="path to the run configuration")
    run_parser.add_argument("--out", default=None, help="output directory")
    run_parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        config = parse_config(args.config)
    except ConfigError as exc:
        print(f"error [ConfigError]: {exc}", file=sys.stderr)
        return 2
    return run(config, out_dir=args.out, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
