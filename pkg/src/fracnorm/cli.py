"""Command-line driver.

Subcommands: ``compute``, ``estimate-constants``, ``verify`` and
``scale-study``.  A JSON config (``--config``) may hold any option plus a
``command`` field; flags given on the command line win over the file.

Exit codes: 0 success, 1 a bound failed, 2 configuration error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .fespace import FormError, P1Function
from .geometry import AffineMap, GeometryError, Mesh, mesh_from_spec, refine
from .norms import NormSuite, estimate_equivalence_constants
from .report import dumps_json, reports_to_json, summary_csv, write_csv
from .slobodeckij import ParameterError, QuadratureSpec, default_threads
from .spectral import SpectralError
from .verify import (
    EnsembleError,
    build_ensemble,
    remark_blowup_study,
    run_verification,
    scaling_study,
    slopes_csv,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("compute", "estimate-constants", "verify", "scale-study")

DEFAULTS = {
    "mesh": None,
    "s": [0.25, 0.5, 0.75],
    "seed": 0,
    "out": None,
    "rtol": 1e-6,
    "levels": 1,
    "threads": None,
    "override_K": None,
    "function": None,
    "hs": [1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125],
    "remark": False,
    "maps": "default",
    "n_random": 8,
    "n_modes": 4,
    "quadrature": {},
}


class ConfigError(ValueError):
    """Bad or inconsistent run configuration."""


# -- configuration -------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracnorm", description=__doc__.split("\n\n")[0])
    p.add_argument("command", nargs="?", choices=COMMANDS,
                   help="subcommand (may instead come from the config file)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--mesh", help="mesh file or generator such as 'square(4)' or 'interval(8,1)'")
    p.add_argument("--s", type=_float_list, help="orders, e.g. 0.25,0.5")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: print to stdout)")
    p.add_argument("--rtol", type=float)
    p.add_argument("--levels", type=int, help="refinement levels for estimate-constants")
    p.add_argument("--threads", type=int)
    p.add_argument("--override-K", dest="override_K", type=float,
                   help="multiply the estimated K_h by this factor (fault injection)")
    p.add_argument("--function", action="append",
                   help="expression in x (and y) or a JSON file of nodal values; repeatable")
    p.add_argument("--hs", type=_float_list, help="scale factors for scale-study")
    p.add_argument("--remark", action="store_true", default=None,
                   help="scale-study: add the quotient ratio slopes")
    return p


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("the config must be a JSON object")
        unknown = set(data) - set(DEFAULTS) - {"command"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg["command"] = args.command or cfg.get("command")
    if cfg["command"] not in COMMANDS:
        raise ConfigError(f"a command is required, one of {', '.join(COMMANDS)}")
    if not cfg["mesh"]:
        raise ConfigError("a mesh is required (--mesh)")
    s = cfg["s"]
    s = [s] if isinstance(s, (int, float)) else list(s)
    if not s or not all(0.0 < float(x) < 1.0 for x in s):
        raise ConfigError("s values must lie in (0, 1)")
    cfg["s"] = [float(x) for x in s]
    if isinstance(cfg["function"], str):
        cfg["function"] = [cfg["function"]]
    if cfg["threads"] is None:
        cfg["threads"] = default_threads()
    if int(cfg["levels"]) < 1:
        raise ConfigError("levels must be at least 1")
    return cfg


def _quadrature(cfg) -> QuadratureSpec:
    try:
        return QuadratureSpec(**cfg["quadrature"])
    except TypeError as exc:
        raise ConfigError(f"bad quadrature settings: {exc}") from exc


def _mesh(cfg) -> Mesh:
    try:
        return mesh_from_spec(str(cfg["mesh"]))
    except FileNotFoundError as exc:
        raise ConfigError(f"mesh file not found: {cfg['mesh']}") from exc
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read mesh {cfg['mesh']!r}: {exc}") from exc


_SAFE_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "exp", "sqrt", "abs", "pi", "log", "tanh", "maximum", "minimum")
}


def _function(mesh: Mesh, text: str) -> P1Function:
    path = Path(text)
    if path.suffix == ".json" or path.is_file():
        try:
            values = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read function file {text!r}: {exc}") from exc
        return P1Function(mesh, values, path.stem)
    names = dict(_SAFE_NAMES)
    names["x"] = mesh.vertices[:, 0]
    if mesh.dim == 2:
        names["y"] = mesh.vertices[:, 1]
    try:
        vals = eval(text, {"__builtins__": {}}, names)  # noqa: S307 (restricted names)
    except Exception as exc:
        raise ConfigError(f"cannot evaluate function {text!r}: {exc}") from exc
    return P1Function(mesh, np.broadcast_to(np.asarray(vals, dtype=float), (mesh.n_vertices,)), text)


def _emit(cfg, name: str, text: str):
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _maps(cfg, dim: int):
    spec = cfg["maps"]
    if spec == "default":
        return None
    if not isinstance(spec, list):
        raise ConfigError("maps must be 'default' or a list of {B, x0, label} objects")
    maps = []
    for i, m in enumerate(spec):
        try:
            maps.append(AffineMap(m["B"], m.get("x0"), label=m.get("label", f"map{i}")))
        except (KeyError, TypeError, GeometryError) as exc:
            raise ConfigError(f"bad map #{i}: {exc}") from exc
        if maps[-1].dim != dim:
            raise ConfigError(f"map #{i} has dimension {maps[-1].dim}, the mesh has {dim}")
    return maps


# -- commands --------------------------------------------------------------------


def cmd_compute(cfg) -> int:
    mesh = _mesh(cfg)
    suite = NormSuite(mesh, spec=_quadrature(cfg), threads=cfg["threads"])
    texts = cfg["function"] or (["1", "x"] if mesh.dim == 1 else ["1", "x", "x*y"])
    rows = []
    for text in texts:
        v = _function(mesh, text)
        zero_trace = v.vanishes_on_boundary()
        for s in cfg["s"]:
            row = {
                "function": v.label,
                "s": s,
                "semi_ss": math.sqrt(max(suite.semi_ss(v, s), 0.0)),
                "semi_int": math.sqrt(max(suite.semi_interp(v, s), 0.0)),
                "semi_inf": math.sqrt(max(suite.semi_inf(v, s), 0.0)),
                "norm_tilde": "",
                "norm_h10": "",
            }
            if zero_trace or s < 0.5:
                row["norm_tilde"] = math.sqrt(max(suite.norm_tilde(v, s), 0.0))
            if zero_trace:
                row["norm_h10"] = math.sqrt(max(suite.norm_h10(v, s), 0.0))
            rows.append(row)
    cols = ["function", "s", "semi_ss", "semi_int", "semi_inf", "norm_tilde", "norm_h10"]
    _emit(cfg, "norms.csv", write_csv(rows, cols))
    return EXIT_OK


def cmd_estimate_constants(cfg) -> int:
    mesh = _mesh(cfg)
    spec = _quadrature(cfg)
    out = []
    for level in range(int(cfg["levels"])):
        suite = NormSuite(mesh, spec=spec, threads=cfg["threads"])
        for s in cfg["s"]:
            c = estimate_equivalence_constants(suite, s)
            if cfg["override_K"] is not None:
                c = c.with_K_factor(float(cfg["override_K"]))
            d = c.to_dict()
            d["level"] = level
            out.append(d)
        if level + 1 < int(cfg["levels"]):
            mesh = refine(mesh)
    _emit(cfg, "constants.json", dumps_json(out))
    return EXIT_OK


def cmd_verify(cfg) -> int:
    mesh = _mesh(cfg)
    ens = build_ensemble(
        mesh, cfg["s"], seed=int(cfg["seed"]), maps=_maps(cfg, mesh.dim),
        n_random=int(cfg["n_random"]), n_modes=int(cfg["n_modes"]),
        spec=_quadrature(cfg), threads=cfg["threads"], mesh_label=str(cfg["mesh"]),
    )
    factor = 1.0 if cfg["override_K"] is None else float(cfg["override_K"])
    reports, constants = run_verification(ens, rtol=float(cfg["rtol"]), K_factor=factor)
    if cfg["out"]:
        _emit(cfg, "reports.json", reports_to_json(reports))
        _emit(cfg, "summary.csv", summary_csv(reports))
        _emit(cfg, "constants.json", dumps_json([constants[s].to_dict() for s in sorted(constants)]))
        _emit(cfg, "ensemble.json", dumps_json(ens.describe()))
    else:
        sys.stdout.write(summary_csv(reports))
    failed = [r for r in reports if not r.passed]
    if failed:
        ids = sorted({r.bound_id for r in failed})
        print(f"{len(failed)} of {len(reports)} bound checks failed: {', '.join(ids)}", file=sys.stderr)
        for r in failed[:10]:
            print("  " + r.describe(), file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_scale_study(cfg) -> int:
    mesh = _mesh(cfg)
    spec = _quadrature(cfg)
    texts = cfg["function"] or ["x"]
    if len(texts) != 1:
        raise ConfigError("scale-study takes exactly one function")
    v = _function(mesh, texts[0])
    fits = []
    for s in cfg["s"]:
        fits += scaling_study(v, mesh, s, cfg["hs"], spec=spec, threads=cfg["threads"])
        if cfg["remark"]:
            fits += remark_blowup_study(v, mesh, s, cfg["hs"], spec=spec, threads=cfg["threads"])
    _emit(cfg, "slopes.csv", slopes_csv(fits))
    return EXIT_OK


HANDLERS = {
    "compute": cmd_compute,
    "estimate-constants": cmd_estimate_constants,
    "verify": cmd_verify,
    "scale-study": cmd_scale_study,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return HANDLERS[cfg["command"]](cfg)
    except (ConfigError, ParameterError, GeometryError, FormError, EnsembleError) as exc:
        print(f"fracnorm: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpectralError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"fracnorm: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
