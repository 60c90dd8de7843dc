"""Batch front end: ``compactglue <subcommand> --config PATH --out DIR``.

Each subcommand runs one scenario described by a JSON document, writes
``report.json``, field dumps and ``summary.txt`` into the output directory,
and exits with 0 (all checks passed), 1 (numerical failure) or 2 (bad usage
or configuration).
"""
from __future__ import annotations

import argparse
import copy
import json
import os
import re
import sys
from pathlib import Path

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
ADJOINT_LIMIT = 1e-12

_SOLVER = {"rel_tolerance": 1e-8, "max_iterations": None, "preconditioner": "DIAGONAL"}
_WEIGHTS = {"a": None, "s": 1.0}

DEFAULTS: dict[str, dict[str, dict]] = {
    "solve": {
        "solve1d": {
            "scenario": "solve1d", "operator": "GRAD", "dimension": 1, "cells": 512,
            "bump": {"center": 0.5, "half_width": 0.3},
            "weights": _WEIGHTS, "solver": _SOLVER,
        },
        "radial2d": {
            "scenario": "radial2d", "operator": "GRAD", "dimension": 2, "cells": 256,
            "half_width": 1.25, "disk_radius": 1.0, "source_radius": 0.7,
            "weights": _WEIGHTS, "solver": _SOLVER,
        },
        "tt-manufacture": {
            "scenario": "tt-manufacture", "operator": "CONF_KILLING", "dimension": 3,
            "cells": 32, "half_width": 1.45, "ball_radius": 1.2, "seed_radius": 0.4, "seed": 1,
            "weights": _WEIGHTS, "solver": _SOLVER,
        },
    },
    "glue": {
        "coulomb-glue": {
            "scenario": "coulomb-glue", "operator": "GRAD", "dimension": 3, "cells": 48,
            "half_width": 2.5, "r_in": 1.0, "r_out": 2.0,
            "inner_charges": [{"position": [0.0, 0.0, 0.3], "charge": 0.5},
                              {"position": [0.0, 0.0, -0.3], "charge": 0.5}],
            "outer_charge": 1.0, "smoothing": 0.2,
            "collar": {"start": 1.4, "end": 1.6},
            "weights": _WEIGHTS, "solver": _SOLVER,
        },
    },
    "truncate": {
        "tt-truncate": {
            "scenario": "tt-truncate", "operator": "CONF_KILLING", "dimension": 3,
            "cells": 32, "half_width": 1.45, "ball_radius": 1.2, "seed_radius": 0.4, "seed": 1,
            "r_in": 0.5, "r_out": 1.1,
            "weights": _WEIGHTS, "solver": _SOLVER,
        },
    },
    "flux-match": {
        "coulomb-flux-match": {
            "scenario": "coulomb-flux-match", "operator": "GRAD", "dimension": 3, "cells": 48,
            "half_width": 2.5, "r_in": 1.0, "r_out": 2.0,
            "inner_charges": [{"position": [0.0, 0.0, 0.2], "charge": 0.7}],
            "family_charges": [1.0], "smoothing": 0.2,
            "collar": {"start": 1.4, "end": 1.6},
            "weights": _WEIGHTS, "solver": _SOLVER,
        },
    },
    "api-estimate": {
        "api": {
            "scenario": "api", "operator": "GRAD", "dimension": 1, "cells": 256,
            "half_width": 1.25, "ball_radius": 1.0,
            "collar_widths": [0.3, 0.2, 0.1], "sample_count": 20, "seed": 0,
            "weights": _WEIGHTS,
        },
    },
    "kernel-dim": {
        "kernel-dim": {
            "scenario": "kernel-dim", "operator": "KILLING", "dimension": 3, "cells": 24,
            "half_width": 1.5, "shape": {"kind": "BALL", "center": [0.0, 0.0, 0.0], "radius": 1.0},
            "extra_candidates": 8, "seed": 0,
            "weights": _WEIGHTS,
        },
    },
    "selftest": {
        "selftest": {"scenario": "selftest", "cells": 16, "seed": 0},
    },
}

OPERATORS = ("GRAD", "KILLING", "CONF_KILLING")


class ConfigError(Exception):
    pass


def _line_of(text: str, key: str) -> int | None:
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text[:m.start()].count("\n") + 1 if m else None


def _where(text: str, key: str) -> str:
    line = _line_of(text, key)
    return f"line {line}: " if line else ""


def _merge(defaults: dict, user: dict, text: str, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"{_where(text, key)}unknown key {path + key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{_where(text, key)}{path + key!r} must be an object")
            out[key] = _merge(defaults[key], value, text, path + key + ".")
        else:
            out[key] = value
    return out


def _require(cond: bool, text: str, key: str, message: str):
    if not cond:
        raise ConfigError(f"{_where(text, key)}{message}")


def load_config(command: str, text: str | None) -> dict:
    """Parse, merge with the scenario defaults and validate."""
    scenarios = DEFAULTS[command]
    user = {}
    if text:
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(user, dict):
            raise ConfigError("line 1: configuration must be a JSON object")
    name = user.get("scenario", next(iter(scenarios)))
    _require(name in scenarios, text or "", "scenario",
             f"scenario {name!r} is not available for {command!r} "
             f"(choose from {', '.join(scenarios)})")
    cfg = _merge(scenarios[name], user, text or "")
    _validate(cfg, text or "")
    return cfg


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _validate(cfg: dict, text: str):
    if "operator" in cfg:
        _require(cfg["operator"] in OPERATORS, text, "operator",
                 f"operator must be one of {', '.join(OPERATORS)}")
    if "dimension" in cfg:
        _require(cfg["dimension"] in (1, 2, 3), text, "dimension", "dimension must be 1, 2 or 3")
        if cfg.get("operator") == "CONF_KILLING":
            _require(cfg["dimension"] >= 3, text, "dimension",
                     "CONF_KILLING requires dimension >= 3: for n = 2 the conformal Killing "
                     "operator is determined elliptic and has an infinite-dimensional kernel")
        if cfg.get("operator") == "KILLING":
            _require(cfg["dimension"] >= 2, text, "dimension", "KILLING requires dimension >= 2")
    _require(_is_int(cfg["cells"]) and cfg["cells"] >= 8, text, "cells",
             "cells must be an integer >= 8")
    if "weights" in cfg:
        w = cfg["weights"]
        _require(isinstance(w["s"], (int, float)) and w["s"] > 0, text, "s", "weights.s must be > 0")
        _require(w["a"] is None or (_is_int(w["a"]) and w["a"] >= 1), text, "a",
                 "weights.a must be null or an integer >= 1")
    if "solver" in cfg:
        s = cfg["solver"]
        _require(isinstance(s["rel_tolerance"], (int, float)) and 0 < s["rel_tolerance"] < 1,
                 text, "rel_tolerance", "solver.rel_tolerance must lie in (0, 1)")
        _require(s["max_iterations"] is None or (_is_int(s["max_iterations"])
                                                 and s["max_iterations"] > 0),
                 text, "max_iterations", "solver.max_iterations must be null or a positive integer")
        _require(s["preconditioner"] in ("NONE", "DIAGONAL"), text, "preconditioner",
                 "solver.preconditioner must be NONE or DIAGONAL")
    if "sample_count" in cfg:
        _require(_is_int(cfg["sample_count"]) and cfg["sample_count"] >= 20, text,
                 "sample_count", "sample_count must be an integer >= 20")
    if "collar" in cfg:
        c = cfg["collar"]
        _require(c["end"] > c["start"], text, "collar", "collar.end must exceed collar.start")
    if "r_in" in cfg:
        _require(0 < cfg["r_in"] < cfg["r_out"], text, "r_in", "need 0 < r_in < r_out")
    for key in ("half_width", "ball_radius", "seed_radius", "smoothing", "disk_radius",
                "source_radius"):
        if key in cfg:
            _require(isinstance(cfg[key], (int, float)) and cfg[key] > 0, text, key,
                     f"{key} must be positive")


# --- scenario runners ---------------------------------------------------------
# Each runner returns (report dict, list of (check name, passed, detail), dumps).

class Run:
    def __init__(self, cfg: dict, out: Path):
        self.cfg = cfg
        self.out = out
        self.report: dict = {}
        self.checks: list[tuple[str, bool, str]] = []

    def check(self, name: str, passed: bool, detail: str):
        self.checks.append((name, bool(passed), detail))

    def dump(self, field, name: str):
        from .fields import write_field_dump
        write_field_dump(field, self.out / f"{name}.csv")


def _weights(cfg):
    from .domain import WeightConfig
    w = cfg["weights"]
    base = WeightConfig.default(cfg["dimension"], float(w["s"]))
    return base if w["a"] is None else WeightConfig(int(w["a"]), float(w["s"]))


def _solve_config(cfg):
    from .solver import SolveConfig
    s = cfg["solver"]
    return SolveConfig(float(s["rel_tolerance"]), s["max_iterations"], s["preconditioner"])


def _spec(cfg):
    from .fields import OperatorSpec
    return OperatorSpec(cfg["operator"], cfg["dimension"])


def _verify_adjoint(run: Run, spec, domain):
    from .fields import adjointness_defect
    defect = adjointness_defect(spec, domain, pairs=3)
    run.report["adjointness_defect"] = defect
    if not defect <= ADJOINT_LIMIT:
        raise _NumericAbort(f"adjointness defect {defect:.3e} exceeds {ADJOINT_LIMIT:.0e}")


class _NumericAbort(Exception):
    pass


def _ball_domain(cfg, radius_key="ball_radius"):
    from .domain import Ball, Grid, build_domain
    n = cfg["dimension"]
    grid = Grid.cube(n, float(cfg["half_width"]), cfg["cells"])
    return build_domain(Ball((0.0,) * n, float(cfg[radius_key])), grid)


def run_solve1d(run: Run):
    from .problems import interval_bump_problem, interval_domain, relative_l2
    from .solver import solve_compact_support
    cfg = run.cfg
    spec = _spec(cfg)
    domain = interval_domain(cfg["cells"])
    _verify_adjoint(run, spec, domain)
    f, exact = interval_bump_problem(domain, cfg["bump"]["center"], cfg["bump"]["half_width"])
    U, rep = solve_compact_support(spec, _weights(cfg), f, _solve_config(cfg))
    err = relative_l2(U, exact)
    h2 = domain.grid.h[0] ** 2
    run.report.update(rep.to_dict())
    run.report["oracle_rel_error"] = err
    run.dump(U, "U")
    run.check("oracle error <= 100 h^2", err <= 100 * h2, f"{err:.3e} vs {100 * h2:.3e}")
    run.check("forward residual <= h^2", rep.forward_residual <= h2,
              f"{rep.forward_residual:.3e} vs {h2:.3e}")


def run_radial2d(run: Run):
    from .problems import RadialOracle, relative_l2
    from .solver import solve_compact_support
    cfg = run.cfg
    spec = _spec(cfg)
    domain = _ball_domain(cfg, "disk_radius")
    _verify_adjoint(run, spec, domain)
    f, exact = RadialOracle(float(cfg["source_radius"])).problem(domain)
    U, rep = solve_compact_support(spec, _weights(cfg), f, _solve_config(cfg))
    err = relative_l2(U, exact)
    h2 = max(domain.grid.h) ** 2
    run.report.update(rep.to_dict())
    run.report["oracle_rel_error"] = err
    run.dump(U, "U")
    run.check("oracle error <= 50 h^2", err <= 50 * h2, f"{err:.3e} vs {50 * h2:.3e}")
    outside = (~domain.mask).sum()
    zero = bool((U.components[:, ~domain.mask] == 0).all())
    run.check("U vanishes outside the domain", zero, f"{outside} exterior cells")


def _manufacture_tt(cfg, run: Run | None = None):
    from .problems import manufacture_tt
    spec = _spec(cfg)
    domain = _ball_domain(cfg)
    if run is not None:
        _verify_adjoint(run, spec, domain)
    wc = _weights(cfg)
    TT, rep, residual = manufacture_tt(domain, wc, float(cfg["seed_radius"]), cfg["seed"],
                                       _solve_config(cfg))
    return spec, domain, wc, TT, rep, residual


def run_tt_manufacture(run: Run):
    cfg = run.cfg
    _, domain, _, TT, rep, residual = _manufacture_tt(cfg, run)
    h2 = max(domain.grid.h) ** 2
    run.report.update(rep.to_dict())
    run.report["divergence_residual"] = residual
    run.dump(TT, "TT")
    run.check("divergence residual <= 40 h^2", residual <= 40 * h2,
              f"{residual:.3e} vs {40 * h2:.3e}")
    tol = max(abs(c) for c in rep.kernel_coefficients)
    run.check("kernel coefficients <= 1e-8", tol <= 1e-8, f"{tol:.3e}")


def run_tt_truncate(run: Run):
    import numpy as np
    from .domain import Annulus, build_domain
    from .gluing import truncate
    cfg = run.cfg
    spec, domain, wc, TT, _, residual = _manufacture_tt(cfg, run)
    ann = build_domain(Annulus((0.0,) * 3, float(cfg["r_in"]), float(cfg["r_out"])), domain.grid)
    G, rep = truncate(spec, TT, ann, wc, _solve_config(cfg))
    full = G.full()
    trace = float(np.max(np.abs(np.einsum("ii...->...", full))))
    r = np.sqrt(np.sum(domain.grid.centers() ** 2, axis=0))
    outside = float(np.max(np.abs(G.components[:, r >= float(cfg["r_out"])]), initial=0.0))
    from .gluing import divergence_residual
    glued_residual = divergence_residual(G, spec, domain)
    h2 = max(domain.grid.h) ** 2
    run.report.update(rep.to_dict())
    run.report.update({"seed_divergence_residual": residual, "truncated_divergence_residual":
                       glued_residual, "max_trace": trace, "max_outside": outside})
    run.dump(G, "truncated")
    run.check("trace-free to 1e-12", trace <= 1e-12, f"{trace:.3e}")
    run.check("zero outside the smaller ball", outside == 0.0, f"{outside:.3e}")
    run.check("divergence residual <= 40 h^2", glued_residual <= 40 * h2,
              f"{glued_residual:.3e} vs {40 * h2:.3e}")


def _charges(cfg, key="inner_charges"):
    return [(tuple(float(x) for x in c["position"]), float(c["charge"])) for c in cfg[key]]


def _annulus(cfg):
    from .domain import Annulus, Grid, build_domain
    grid = Grid.cube(3, float(cfg["half_width"]), cfg["cells"])
    return build_domain(Annulus((0.0, 0.0, 0.0), float(cfg["r_in"]), float(cfg["r_out"])), grid)


def run_coulomb_glue(run: Run):
    from .domain import CollarSpec
    from .gluing import coulomb_problem, glue
    cfg = run.cfg
    spec = _spec(cfg)
    _require(cfg["dimension"] == 3 and cfg["operator"] == "GRAD", "", "",
             "coulomb-glue needs operator GRAD in dimension 3")
    domain = _annulus(cfg)
    _verify_adjoint(run, spec, domain)
    wc = _weights(cfg)
    problem = coulomb_problem(spec, domain, _charges(cfg), float(cfg["outer_charge"]),
                              CollarSpec(cfg["collar"]["start"], cfg["collar"]["end"]), wc,
                              float(cfg["smoothing"]))
    G, rep = glue(problem, wc, _solve_config(cfg))
    run.report.update(rep.to_dict())
    run.dump(G, "glued")
    outside = ~domain.mask
    keep_v = outside & problem.V.domain.mask
    keep_w = outside & problem.W.domain.mask
    exact = (bool((G.components[:, keep_v] == problem.V.components[:, keep_v]).all())
             and bool((G.components[:, keep_w] == problem.W.components[:, keep_w]).all()))
    run.check("inputs preserved outside the gluing region", exact, "bitwise")
    coeff = max(abs(c) for c in rep.solve_report.kernel_coefficients)
    run.check("flux condition: kernel coefficients <= 1e-6", coeff <= 1e-6, f"{coeff:.3e}")
    h2 = max(domain.grid.h) ** 2
    run.check("glued divergence <= h^2", rep.glued_divergence_residual <= h2,
              f"{rep.glued_divergence_residual:.3e} vs {h2:.3e}")


def run_coulomb_flux_match(run: Run):
    from .domain import CollarSpec
    from .fields import TensorField
    from .gluing import charge_field, coulomb_problem, flux_match, glue
    cfg = run.cfg
    spec = _spec(cfg)
    domain = _annulus(cfg)
    _verify_adjoint(run, spec, domain)
    wc = _weights(cfg)
    collar = CollarSpec(cfg["collar"]["start"], cfg["collar"]["end"])
    problem = coulomb_problem(spec, domain, _charges(cfg), 0.0, collar, wc,
                              float(cfg["smoothing"]))
    grid = domain.grid
    family = [TensorField.from_full(charge_field(grid, (0.0, 0.0, 0.0), float(q),
                                                 float(cfg["smoothing"])),
                                    spec.source_bundle, problem.W.domain)
              for q in cfg["family_charges"]]
    params, matched = flux_match(problem, family)
    G, rep = glue(matched, wc, _solve_config(cfg))
    q_in = sum(q for _, q in _charges(cfg))
    q_matched = sum(c * q for c, q in zip(params.coefficients, cfg["family_charges"]))
    run.report.update(rep.to_dict())
    run.report.update({"parameters": params.coefficients, "match_residual": params.residual,
                       "condition": params.condition, "matched_charge": q_matched})
    run.dump(G, "glued")
    rel = abs(q_matched - q_in) / abs(q_in)
    run.check("matched charge within 2%", rel <= 0.02, f"{q_matched:.6f} vs {q_in:.6f}")
    coeff = max(abs(c) for c in rep.solve_report.kernel_coefficients)
    run.check("post-match kernel coefficients <= 1e-6", coeff <= 1e-6, f"{coeff:.3e}")


def run_api(run: Run):
    from .domain import Ball, Grid, build_domain
    from .problems import interval_domain
    from .solver import estimate_api_constant
    cfg = run.cfg
    spec = _spec(cfg)
    n = cfg["dimension"]
    if n == 1:
        domain = interval_domain(cfg["cells"])
    else:
        grid = Grid.cube(n, float(cfg["half_width"]), cfg["cells"])
        domain = build_domain(Ball((0.0,) * n, float(cfg["ball_radius"])), grid)
    wc = _weights(cfg)
    widths = sorted((float(w) for w in cfg["collar_widths"]), reverse=True)
    values = [estimate_api_constant(spec, domain, wc, w, cfg["sample_count"], cfg["seed"])
              for w in widths]
    run.report.update({"collar_widths": widths, "lambda": values,
                       "api_constant": [v ** -0.5 if v > 0 else None for v in values]})
    run.check("lambda > 0", all(v > 0 for v in values), ", ".join(f"{v:.4g}" for v in values))
    mono = all(b >= a * (1 - 1e-9) for a, b in zip(values, values[1:]))
    run.check("non-decreasing as the collar shrinks", mono, "")


def run_kernel_dim(run: Run):
    from .domain import Grid, build_domain, shape_from_dict
    from .kernel import kernel_dimension, numeric_kernel_dim
    cfg = run.cfg
    spec = _spec(cfg)
    grid = Grid.cube(cfg["dimension"], float(cfg["half_width"]), cfg["cells"])
    try:
        shape = shape_from_dict(cfg["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{_where(json.dumps(cfg), 'shape')}invalid shape ({exc})") from None
    domain = build_domain(shape, grid)
    expected = kernel_dimension(spec)
    count = expected + int(cfg["extra_candidates"])
    found = numeric_kernel_dim(spec, domain, _weights(cfg), count, cfg["seed"])
    run.report.update({"numeric_dimension": found, "analytic_dimension": expected})
    run.check("numeric kernel dimension matches", found == expected, f"{found} vs {expected}")


def run_selftest(run: Run):
    import numpy as np
    from .domain import Ball, Grid, WeightConfig, build_domain
    from .fields import OperatorSpec, adjointness_defect, random_compact_field
    from .kernel import build_kernel_basis, project_off
    from .solver import NormalOperator, psi_adjoint_pairing
    cfg = run.cfg
    rng = np.random.default_rng(cfg["seed"])
    cells = cfg["cells"]
    for kind, n in (("GRAD", 1), ("GRAD", 2), ("GRAD", 3), ("KILLING", 2), ("KILLING", 3),
                    ("CONF_KILLING", 3)):
        spec = OperatorSpec(kind, n)
        grid = Grid.cube(n, 1.5, cells)
        domain = build_domain(Ball((0.0,) * n, 1.0), grid)
        defect = adjointness_defect(spec, domain, pairs=3, seed=cfg["seed"])
        run.check(f"adjointness {kind} n={n}", defect <= ADJOINT_LIMIT, f"{defect:.2e}")
        wc = WeightConfig.default(n)
        basis = build_kernel_basis(spec, domain, wc)
        f = random_compact_field(spec.target_bundle, domain, rng)
        once, _ = project_off(f, basis)
        twice, _ = project_off(once, basis)
        drift = float(np.max(np.abs(twice.components - once.components)))
        scale = float(np.max(np.abs(once.components)))
        run.check(f"projector idempotent {kind} n={n}", drift <= 1e-12 * scale, f"{drift:.2e}")
        op = NormalOperator(spec, domain, wc, basis)
        u = random_compact_field(spec.target_bundle, domain, rng)
        w = random_compact_field(spec.target_bundle, domain, rng)
        a = psi_adjoint_pairing(op, u, w)
        b = psi_adjoint_pairing(op, w, u)
        scale = abs(a) + abs(b)
        run.check(f"L_h self-adjoint {kind} n={n}", abs(a - b) <= 1e-12 * scale,
                  f"{abs(a - b) / scale:.2e}")
        run.report[f"adjointness_{kind}_{n}"] = defect


RUNNERS = {
    "solve1d": run_solve1d,
    "radial2d": run_radial2d,
    "tt-manufacture": run_tt_manufacture,
    "coulomb-glue": run_coulomb_glue,
    "tt-truncate": run_tt_truncate,
    "coulomb-flux-match": run_coulomb_flux_match,
    "api": run_api,
    "kernel-dim": run_kernel_dim,
    "selftest": run_selftest,
}


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item"):
        return value.item()
    return value


def _write_outputs(run: Run, status: str):
    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "report.json").write_text(
        json.dumps(_jsonable(run.report), indent=2, sort_keys=True) + "\n")
    lines = [f"scenario: {run.cfg['scenario']}", f"status: {status}"]
    for name, passed, detail in run.checks:
        lines.append(f"{'PASS' if passed else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
    (run.out / "summary.txt").write_text("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compactglue", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=list(DEFAULTS), help="pipeline to run")
    p.add_argument("--config", metavar="PATH", help="JSON scenario configuration")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("--threads", metavar="N", type=int, default=None,
                   help="worker threads for numerical libraries; never changes results")
    p.add_argument("--print-defaults", action="store_true",
                   help="print the default configuration of every scenario and exit")
    return p


def _set_threads(n: int):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if args.print_defaults:
        print(json.dumps(DEFAULTS[args.command], indent=2))
        return EXIT_OK
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        _set_threads(args.threads)
    text = None
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        cfg = load_config(args.command, text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    from .errors import (CompactGlueError, InvalidCollars, NoConvergence, ShapeTooLarge,
                         UnsupportedDimension, UnsupportedOperator)
    run = Run(cfg, Path(args.out))
    run.out.mkdir(parents=True, exist_ok=True)
    try:
        RUNNERS[cfg["scenario"]](run)
    except (ConfigError, InvalidCollars, ShapeTooLarge, UnsupportedDimension,
            UnsupportedOperator) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoConvergence as exc:
        run.report.update(exc.report.to_dict())
        run.check("solver converged", False, str(exc))
        _write_outputs(run, "numerical failure")
        print(json.dumps(_jsonable(run.report), indent=2, sort_keys=True))
        return EXIT_NUMERIC
    except (CompactGlueError, _NumericAbort) as exc:
        run.check("pipeline", False, f"{type(exc).__name__}: {exc}")
        _write_outputs(run, "numerical failure")
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    ok = all(passed for _, passed, _ in run.checks)
    _write_outputs(run, "pass" if ok else "fail")
    print((run.out / "summary.txt").read_text(), end="")
    return EXIT_OK if ok else EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
