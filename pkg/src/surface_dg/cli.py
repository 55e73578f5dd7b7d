"""Command-line front end: ``surface-dg convergence|geometry|solve --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical failure.
"""
import argparse
import configparser
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import manufactured
from .analysis import SolveOptions, convergence_study, geometry_study, solve
from .curved import CurvedMesh, export_vtk
from .dgspace import DGSpace
from .errors import SurfaceDGError
from .geometry import Sphere, Torus
from .mesh import base_mesh
from .methods import LDG_SIGNS, SCHEMES, MethodConfig, assemble

__all__ = ["ParseError", "ValidationError", "RunConfig", "parse_config", "cmd_convergence",
           "cmd_geometry", "cmd_solve", "main"]

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class ParseError(ValueError):
    """Malformed configuration text; ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)
        self.lineno = lineno


class ValidationError(ValueError):
    """A configuration value is missing or out of range; ``field`` names it."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class RunConfig:
    surface_kind: str
    radius: float = 1.0
    major: float = 2.0
    minor: float = 0.5
    scheme: str = "IP"
    alpha: float = 10.0
    beta: tuple = (0.0, 0.0, 0.0)
    ldg_sign: str = "symmetric"
    degree: int = 1
    base_level: int = 1
    levels: int = 4
    solution: str = None
    csv: str = None
    export: str = "solution.vtk"
    subsample: int = 2
    timings: bool = False

    def surface(self):
        if self.surface_kind == "sphere":
            return Sphere(self.radius)
        return Torus(self.major, self.minor)

    def method(self):
        return MethodConfig(self.scheme, self.alpha, np.array(self.beta), self.ldg_sign)


_KEYS = {
    "surface": {"kind", "radius", "major", "minor"},
    "method": {"scheme", "alpha", "beta", "ldg_sign"},
    "study": {"degree", "base_level", "levels", "solution"},
    "output": {"csv", "export", "subsample", "timings"},
}


def _option_lines(text):
    """1-based line number of every ``(section, key)``, for error messages."""
    where, section = {}, None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
        elif "=" in line and section is not None:
            where[(section, line.split("=", 1)[0].strip().lower())] = i
    return where


def _number(raw, field, kind=float):
    try:
        return kind(raw)
    except ValueError:
        raise ValidationError(field, f"expected {'an integer' if kind is int else 'a number'}, "
                                     f"got {raw!r}") from None


def parse_config(text):
    """Parse and validate INI-style configuration text into a :class:`RunConfig`."""
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), strict=True,
                                       interpolation=None, default_section="\0")
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("content before the first [section] header", exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ParseError(exc.message.split(": ", 1)[-1], exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ParseError("expected 'key = value'", lineno) from None
    lines = _option_lines(text)
    for section in parser.sections():
        if section not in _KEYS:
            raise ParseError(f"unknown section [{section}]")
        for key in parser[section]:
            if key not in _KEYS[section]:
                raise ParseError(f"unknown key {key!r} in [{section}]", lines.get((section, key)))
    if not parser.has_section("surface"):
        raise ValidationError("surface", "missing [surface] section")
    get = {s: dict(parser[s]) if parser.has_section(s) else {} for s in _KEYS}
    values = {}

    surf = get["surface"]
    kind = surf.get("kind")
    if kind not in ("sphere", "torus"):
        raise ValidationError("kind", f"surface kind must be 'sphere' or 'torus', got {kind!r}")
    values["surface_kind"] = kind
    for key in ("radius", "major", "minor"):
        if key in surf:
            if (kind == "sphere") != (key == "radius"):
                raise ValidationError(key, f"not a parameter of a {kind}")
            values[key] = _number(surf[key], key)
    if kind == "sphere" and not values.get("radius", 1.0) > 0:
        raise ValidationError("radius", "must be positive")
    if kind == "torus" and not 0 < values.get("minor", 0.5) < values.get("major", 2.0):
        raise ValidationError("minor", "need 0 < minor < major")

    meth = get["method"]
    if "scheme" in meth:
        if meth["scheme"] not in SCHEMES:
            raise ValidationError("scheme", f"choose from {', '.join(SCHEMES)}")
        values["scheme"] = meth["scheme"]
    if "alpha" in meth:
        values["alpha"] = _number(meth["alpha"], "alpha")
        if not values["alpha"] > 0:
            raise ValidationError("alpha", "must be positive")
    if "beta" in meth:
        parts = [p for p in meth["beta"].replace(",", " ").split() if p]
        if len(parts) != 3:
            raise ValidationError("beta", "expected three components")
        values["beta"] = tuple(_number(p, "beta") for p in parts)
    if "ldg_sign" in meth:
        if meth["ldg_sign"] not in LDG_SIGNS:
            raise ValidationError("ldg_sign", f"choose from {', '.join(LDG_SIGNS)}")
        values["ldg_sign"] = meth["ldg_sign"]

    study = get["study"]
    for key in ("degree", "base_level", "levels"):
        if key in study:
            values[key] = _number(study[key], key, int)
    if "solution" in study:
        values["solution"] = study["solution"]

    out = get["output"]
    for key in ("csv", "export"):
        if key in out:
            values[key] = out[key]
    if "subsample" in out:
        values["subsample"] = _number(out["subsample"], "subsample", int)
    if "timings" in out:
        flag = out["timings"].lower()
        if flag not in ("true", "false", "yes", "no", "1", "0"):
            raise ValidationError("timings", "expected true or false")
        values["timings"] = flag in ("true", "yes", "1")
    return validate(RunConfig(**values))


def validate(cfg):
    """Range checks shared by file values and command-line overrides."""
    if not 1 <= cfg.degree <= 4:
        raise ValidationError("degree", f"must lie in [1, 4], got {cfg.degree}")
    if not 1 <= cfg.levels <= 6:
        raise ValidationError("levels", f"must lie in [1, 6], got {cfg.levels}")
    if not 0 <= cfg.base_level <= 6:
        raise ValidationError("base_level", f"must lie in [0, 6], got {cfg.base_level}")
    if not 0 <= cfg.subsample <= 5:
        raise ValidationError("subsample", f"must lie in [0, 5], got {cfg.subsample}")
    if not cfg.alpha > 0:
        raise ValidationError("alpha", "must be positive")
    solution = cfg.solution
    if solution is None:
        solution = "sphere_x1x2" if cfg.surface_kind == "sphere" else "torus_sin_theta"
        cfg = replace(cfg, solution=solution)
    if solution not in manufactured.REGISTRY:
        raise ValidationError("solution", f"unknown; available: {', '.join(manufactured.REGISTRY)}")
    if not solution.startswith(cfg.surface_kind):
        raise ValidationError("solution", f"{solution!r} is not defined on a {cfg.surface_kind}")
    return cfg


def _write(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def cmd_convergence(cfg, out=None):
    out = sys.stdout if out is None else out
    surface = cfg.surface()
    method = cfg.method()
    print(f"# convergence: {cfg.surface_kind} {cfg.scheme} k={cfg.degree} "
          f"alpha={cfg.alpha:g} levels={cfg.levels}", file=out)
    print(f"{'level':>5} {'h':>10} {'dofs':>8} {'L2 error':>12} {'DG error':>12} "
          f"{'asm [s]':>8} {'solve [s]':>9}", file=out)

    def show(row):
        print(f"{row['level']:5d} {row['h']:10.4g} {row['dofs']:8d} {row['l2_error']:12.4e} "
              f"{row['dg_error']:12.4e} {row['assembly_s']:8.2f} {row['solve_s']:9.2f}",
              file=out, flush=True)

    report = convergence_study(surface, method, cfg.degree, cfg.levels, cfg.solution,
                               base_level=cfg.base_level, progress=show)
    if len(report.rows) > 1:
        fmt = lambda v: "-" if v is None else f"{v:.3f}"
        print("L2 EOC: " + " ".join(fmt(v) for v in report.l2_eoc[1:]), file=out)
        print("DG EOC: " + " ".join(fmt(v) for v in report.dg_eoc[1:]), file=out)
    text = report.to_csv(timings=cfg.timings)
    if cfg.csv:
        _write(cfg.csv, text)
        print(f"wrote {cfg.csv}", file=out)
    else:
        out.write(text)
    return EXIT_OK


def cmd_geometry(cfg, out=None):
    out = sys.stdout if out is None else out
    surface = cfg.surface()
    report = geometry_study(surface, cfg.degree, cfg.levels, base_level=cfg.base_level)
    print(f"# geometry: {cfg.surface_kind} k={cfg.degree} levels={cfg.levels}", file=out)
    for name, order in report.final_orders().items():
        print(f"{name:>10}: final order {'-' if order is None else f'{order:.3f}'}", file=out)
    text = report.to_csv()
    if cfg.csv:
        _write(cfg.csv, text)
        print(f"wrote {cfg.csv}", file=out)
    else:
        out.write(text)
    return EXIT_OK


def cmd_solve(cfg, out=None):
    out = sys.stdout if out is None else out
    surface = cfg.surface()
    sol = manufactured.get(cfg.solution, surface)
    space = DGSpace(CurvedMesh(base_mesh(surface, cfg.base_level), surface, cfg.degree))
    system = assemble(cfg.method(), space, sol.f)
    x, info = solve(system, SolveOptions(), return_info=True)
    cells = export_vtk(cfg.export, space.curved, cfg.subsample, x.reshape(space.n_elements, -1))
    print(f"dofs {space.total_dofs}", file=out)
    print(f"residual {info.residual:.3e} ({info.solver}, {info.iterations} iterations)", file=out)
    print(f"wrote {cfg.export} ({cells} triangles)", file=out)
    return EXIT_OK


COMMANDS = {"convergence": cmd_convergence, "geometry": cmd_geometry, "solve": cmd_solve}


def build_parser():
    p = argparse.ArgumentParser(prog="surface-dg", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--out", help="CSV path (convergence, geometry) or VTK path (solve)")
    p.add_argument("--alpha", type=float, help="penalty parameter")
    p.add_argument("--degree", type=int, help="polynomial degree k")
    p.add_argument("--levels", type=int, help="number of refinement levels")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with open(args.config, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text)
        overrides = {k: v for k, v in (("alpha", args.alpha), ("degree", args.degree),
                                       ("levels", args.levels)) if v is not None}
        if args.out is not None:
            overrides["export" if args.command == "solve" else "csv"] = args.out
        cfg = validate(replace(cfg, **overrides))
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SurfaceDGError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
