"""Command-line front end.

Exit codes: 0 when every check passes, 1 on a scientific failure (a
hypothesis check, a convergence failure or a violated bound), 2 on usage or
configuration errors.
"""

import argparse
import copy
import hashlib
import json
import os
import sys

import jsonschema
import numpy as np

from . import __version__
from .apps import (
    ViscoFrictionConfig,
    WaveImpedanceConfig,
    build_viscoelastic_friction,
    build_wave_impedance,
    postprocess,
)
from .linalg import StateSpace
from .material import NotPositive
from .material import from_config as law_from_config
from .monotone import NoConvergence, check_monotone, relation_from_config
from .solver import (
    EvoProblem,
    HypothesisFailed,
    SolveOptions,
    causality_check,
    lipschitz_check,
    solve,
)
from .timegrid import TimeGrid, write_signal_csv

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_FORCING = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "profile": {"enum": ["zero", "pulse", "bump", "ramp"]},
        "amplitude": _NUM,
        "t_end": _NUM,
        "center": _NUM,
        "width": {"type": "number", "exclusiveMinimum": 0},
    },
}
_GRID = {
    "n": {"type": "integer", "minimum": 4},
    "L": {"type": "number", "exclusiveMinimum": 0},
    "T": {"type": "number", "exclusiveMinimum": 0},
    "N": {"type": "integer", "minimum": 2},
    "nu": {"type": "number", "exclusiveMinimum": 0},
    "pad": {"type": "integer", "minimum": 1},
    "forcing": _FORCING,
}
SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["problem"],
    "properties": {
        "problem": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type"],
                    "properties": {
                        "type": {"const": "wave"},
                        **_GRID,
                        "alpha": _NUM,
                        "coeffs": {"type": "array", "items": _NUM, "minItems": 1},
                        "order": {"type": "integer", "minimum": 0},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type"],
                    "properties": {
                        "type": {"const": "friction"},
                        **_GRID,
                        "rho": _NUM,
                        "C": _NUM,
                        "Dvisc": _NUM,
                        "mu_friction": _NUM,
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["type", "dim", "material", "relation", "grid"],
                    "properties": {
                        "type": {"const": "custom"},
                        "dim": {"type": "integer", "minimum": 1},
                        "material": {"type": "object"},
                        "constants": {"type": "object"},
                        "relation": {"type": "object"},
                        "grid": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["nu", "step", "length"],
                            "properties": {
                                "nu": {"type": "number", "exclusiveMinimum": 0},
                                "step": {"type": "number", "exclusiveMinimum": 0},
                                "length": {"type": "integer", "minimum": 2},
                                "pad": {"type": "integer", "minimum": 1},
                            },
                        },
                        "rhs": {
                            "type": "object",
                            "additionalProperties": False,
                            "properties": {
                                "kind": {"enum": ["zero", "ramp", "random", "constant"]},
                                "scale": _NUM,
                                "value": {"type": "array", "items": _NUM},
                            },
                        },
                    },
                },
            ]
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda0": {"type": "number", "exclusiveMinimum": 0},
                "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "max_levels": {"type": "integer", "minimum": 1},
                "tol_inner": {"type": "number", "exclusiveMinimum": 0},
                "tol_outer": {"type": "number", "exclusiveMinimum": 0},
                "max_inner": {"type": "integer", "minimum": 1},
                "backend": {"enum": ["fb", "dr"]},
                "memory": {"type": "integer", "minimum": 0},
            },
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pairs": {"type": "integer", "minimum": 1},
                "slack": {"type": "number", "minimum": 0},
                "causal_tol": {"type": "number", "exclusiveMinimum": 0},
                "cutoff_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "seed": _INT,
        "output_dir": {"type": "string"},
    },
}

DEMOS = {
    "wave": {"problem": {"type": "wave"}, "seed": 0},
    "friction": {"problem": {"type": "friction"}, "seed": 0},
}


class ConfigError(ValueError):
    pass


def load_config(path):
    """Read and validate a run configuration; raises ``ConfigError``."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as e:
        loc = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {loc}: {e.message}") from e


def run_id(cfg, seed):
    blob = json.dumps({"config": cfg, "seed": seed}, sort_keys=True).encode()
    return f"{cfg['problem']['type']}-{hashlib.sha256(blob).hexdigest()[:12]}"


def build_problem(cfg, seed, n_check=10):
    """Problem and right-hand side described by a validated config."""
    pc = {k: v for k, v in cfg["problem"].items() if k != "type"}
    kind = cfg["problem"]["type"]
    try:
        if kind == "wave":
            p = build_wave_impedance(WaveImpedanceConfig(**pc), seed=seed, n_check=n_check)
            return p, p.rhs
        if kind == "friction":
            p = build_viscoelastic_friction(ViscoFrictionConfig(**pc), seed=seed, n_check=n_check)
            return p, p.rhs
        g = pc["grid"]
        grid = TimeGrid(g["nu"], g["step"], g["length"], pad=g.get("pad", 1))
        space = StateSpace.euclidean(pc["dim"])
        M = law_from_config(pc["material"], space, pc.get("constants"))
        A = relation_from_config(pc["relation"], space, grid)
        p = EvoProblem(grid, M, A, seed=seed, name="custom", n_check=n_check)
        p.app = "custom"
        return p, _custom_rhs(pc.get("rhs", {}), grid, space.dim, seed)
    except (TypeError, ValueError, KeyError) as e:
        if isinstance(e, (HypothesisFailed, NotPositive)):
            raise
        raise ConfigError(str(e)) from e


def _custom_rhs(rc, grid, dim, seed):
    kind = rc.get("kind", "ramp")
    s = float(rc.get("scale", 1.0))
    N = grid.length
    if kind == "zero":
        return np.zeros((N, dim), dtype=complex)
    if kind == "ramp":
        return s * np.outer(grid.times / grid.horizon, np.ones(dim)).astype(complex)
    if kind == "constant":
        v = np.asarray(rc.get("value", [1.0] * dim), dtype=float)
        if v.shape != (dim,):
            raise ConfigError("rhs value has the wrong length")
        return s * np.tile(v, (N, 1)).astype(complex)
    rng = np.random.default_rng(seed)
    return s * rng.standard_normal((N, dim)).astype(complex)


# output helpers -------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else repr(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out(args, cfg, seed, command):
    base = args.out or cfg.get("output_dir") or "out"
    d = os.path.join(base, run_id(cfg, seed))
    os.makedirs(d, exist_ok=True)
    write_json(os.path.join(d, "config.json"), cfg)
    write_json(os.path.join(d, "metadata.json"),
               {"version": __version__, "seed": seed, "command": command,
                "run_id": run_id(cfg, seed)})
    return d


def _print_table(rows):
    w = max((len(r[0]) for r in rows), default=4)
    print(f"{'check':<{w}}  {'status':<6}  worst")
    for name, ok, worst in rows:
        print(f"{name:<{w}}  {'PASS' if ok else 'FAIL':<6}  {worst}")


def _report_rows(reports):
    rows = []
    for name, r in reports.items():
        worst = r.get("worst", r.get("symbol_c_hat"))
        rows.append((name, bool(r.get("passed", False)), worst))
    return rows


# commands ------------------------------------------------------------------------------


def _solver_opts(cfg, args):
    d = dict(cfg.get("solver", {}))
    if getattr(args, "backend", None):
        d["backend"] = args.backend
    return SolveOptions.from_dict(d)


def cmd_check(cfg, args, seed):
    out = _prepare_out(args, cfg, seed, "check")
    try:
        p, _ = build_problem(cfg, seed)
    except (HypothesisFailed, NotPositive) as e:
        rep = getattr(e, "report", None)
        rd = rep.to_dict() if hasattr(rep, "to_dict") else {"error": str(e)}
        write_json(os.path.join(out, "reports.json"), {"failed": rd, "seed": seed})
        print(f"hypothesis failure: {e}")
        if isinstance(rd, dict) and rd.get("witness"):
            print(f"witness: {json.dumps(_jsonable(rd['witness']), sort_keys=True)}")
        return 1
    reports = dict(p.reports)
    mono = check_monotone(p.A, n=20, seed=seed)
    reports["monotone"] = mono.to_dict()
    reports["H1"]["worst"] = reports["H1"]["symbol_c_hat"]
    rows = _report_rows(reports)
    _print_table(rows)
    write_json(os.path.join(out, "reports.json"), {"reports": reports, "seed": seed})
    return 0 if all(ok for _, ok, _ in rows) else 1


def _run_solve(p, rhs, opts):
    u, d = solve(p, rhs, opts)
    return u, d


def cmd_solve(cfg, args, seed):
    out = _prepare_out(args, cfg, seed, "solve")
    try:
        p, rhs = build_problem(cfg, seed, n_check=10)
    except (HypothesisFailed, NotPositive) as e:
        if not args.force:
            print(f"hypothesis failure: {e} (use --force to solve anyway)")
            return 1
        raise
    opts = _solver_opts(cfg, args)
    try:
        u, d = _run_solve(p, rhs, opts)
    except NoConvergence as e:
        if e.diagnostics is not None:
            write_json(os.path.join(out, "diagnostics.json"), e.diagnostics.to_dict())
        print(f"no convergence: {e}")
        return 1
    write_signal_csv(os.path.join(out, "solution.csv"), u)
    write_json(os.path.join(out, "diagnostics.json"), d.to_dict())
    write_json(os.path.join(out, "reports.json"), {"reports": p.reports, "seed": seed})
    if getattr(p, "app", "custom") in ("wave", "friction"):
        art = postprocess(p, u, d)
        art.write(out, p.grid)
        write_json(os.path.join(out, "postprocess.json"), art.checks)
    print(f"solved: path={d.path} levels={d.levels} residual={d.final_residual:.3e}")
    print(f"output: {out}")
    return 0


def cmd_verify(cfg, args, seed):
    out = _prepare_out(args, cfg, seed, "verify")
    p, rhs = build_problem(cfg, seed)
    opts = _solver_opts(cfg, args)
    vc = cfg.get("verify", {})
    rng = np.random.default_rng(seed)
    N, dim = rhs.shape
    scale = max(float(np.abs(rhs).max()), 1.0)
    results = {"lipschitz": [], "causality": []}
    ok = True
    try:
        for _ in range(int(vc.get("pairs", 2))):
            g = rhs + 0.1 * scale * rng.standard_normal((N, dim))
            r = lipschitz_check(p, rhs, g, opts, slack=vc.get("slack", 0.05))
            results["lipschitz"].append(r.to_dict())
            ok &= r.passed
        a = int(N * vc.get("cutoff_fraction", 0.75))
        pert = np.zeros((N, dim), dtype=complex)
        pert[a:] = scale * rng.standard_normal((N - a, dim))
        c = causality_check(p, rhs, a, pert, opts, tol=vc.get("causal_tol", 1e-6))
        results["causality"].append(c.to_dict())
        ok &= c.passed
    except NoConvergence as e:
        print(f"no convergence: {e}")
        results["error"] = str(e)
        ok = False
    results["passed"] = bool(ok)
    results["bound"] = 1.0 / p.c
    write_json(os.path.join(out, "verify.json"), results)
    for r in results["lipschitz"]:
        print(f"lipschitz ratio {r['ratio']:.6e} bound {r['bound']:.6e} "
              f"{'PASS' if r['passed'] else 'FAIL'}")
    for r in results["causality"]:
        print(f"causality defect {r['defect']:.3e} tol {r['tol']:.1e} "
              f"{'PASS' if r['passed'] else 'FAIL'}")
    return 0 if ok else 1


COMMANDS = {"check": cmd_check, "solve": cmd_solve, "verify": cmd_verify}


def make_parser():
    ap = argparse.ArgumentParser(prog="evoincl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("--config", required=needs_config, help="JSON run configuration")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--out", default=None, help="output base directory (default: out)")
        sp.add_argument("--force", action="store_true", help="solve even if checks fail")
        sp.add_argument("--backend", choices=["fb", "dr"], default=None)

    for name in COMMANDS:
        common(sub.add_parser(name))
    demo = sub.add_parser("demo", help="solve a built-in demo")
    demo.add_argument("which", choices=sorted(DEMOS))
    common(demo, needs_config=False)
    return ap


def main(argv=None):
    ap = make_parser()
    args = ap.parse_args(argv)
    try:
        if args.command == "demo":
            cfg = copy.deepcopy(DEMOS[args.which])
            if args.config:
                cfg = load_config(args.config)
            validate_config(cfg)
            fn = cmd_solve
        else:
            cfg = load_config(args.config)
            fn = COMMANDS[args.command]
        if args.backend:
            cfg = copy.deepcopy(cfg)
            cfg.setdefault("solver", {})["backend"] = args.backend
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        return fn(cfg, args, seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (HypothesisFailed, NotPositive) as e:
        print(f"hypothesis failure: {e}")
        return 1
    except NoConvergence as e:
        print(f"no convergence: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
