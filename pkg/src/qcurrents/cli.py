"""Command line runner: ``qcurrents <subcommand>``.

Exit codes: 0 success, 1 a check failed (or a baseline drifted),
2 malformed configuration or missing input.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np
import sympy as sp

from . import currents as cur
from . import reparam as rp
from . import variational as var
from .expr import VectorExpr
from .manifold import BaseManifold
from .qfield import AnalyticSheetBundle, Domain, PAQMap
from .samples import random_pa_map, sample_map

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

_domain_schema = {
    "type": "object",
    "oneOf": [
        {"required": ["box"], "properties": {"box": {"type": "array", "minItems": 2, "maxItems": 2,
                                                     "items": {"type": "array", "items": {"type": "number"}}}}},
        {"required": ["ball"], "properties": {"ball": {
            "type": "object", "required": ["center", "radius"],
            "properties": {"center": {"type": "array", "items": {"type": "number"}},
                           "radius": {"type": "number", "exclusiveMinimum": 0}}}}},
    ],
}
_strings = {"type": "array", "items": {"type": "string"}, "minItems": 1}
_sheets = {"type": "array", "items": _strings, "minItems": 1}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": ["commutation", "expansion", "excess", "variation", "reparam"]},
        "functional": {"enum": ["mass", "weighted_mass", "curvilinear", "cylindrical",
                                "graph_variation", "outer_variation", "inner_variation"]},
        "manifold": {"type": "object", "required": ["phi", "domain"],
                     "properties": {"phi": _strings, "domain": _domain_schema}},
        "field": {"type": "object", "required": ["sheets"], "properties": {"sheets": _sheets}},
        "map": {"oneOf": [
            {"type": "string"},
            {"type": "object", "required": ["sheets", "domain"],
             "properties": {"sheets": _sheets, "domain": _domain_schema}},
        ]},
        "random": {"type": "object", "properties": {
            "count": {"type": "integer", "minimum": 1},
            "Q": {"type": "integer", "minimum": 1}, "n": {"type": "integer", "minimum": 1},
            "k": {"type": "integer", "minimum": 1}}},
        "zeta": _strings,
        "test_function": {"type": "string"},
        "tangent_field": _strings,
        "weight": {"type": "string"},
        "s": {"type": "number", "exclusiveMinimum": 0},
        "phi": _strings,
        "eps": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "quad_order": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "grid": {"type": "integer", "minimum": 2},
        "n_random": {"type": "integer", "minimum": 0},
        "c0": {"type": "number", "exclusiveMinimum": 0},
        "checks": {"type": "object", "properties": {
            "min_slope": {"type": "number"}, "min_r2": {"type": "number"},
            "max_C": {"type": "number"}, "max_C_spread": {"type": "number"},
            "closed_form_residual": {"type": "string"}, "closed_form_tol": {"type": "number"},
            "fd_rel_tol": {"type": "number"}}},
    },
    "allOf": [
        {"if": {"properties": {"experiment": {"enum": ["expansion", "excess", "variation"]}}},
         "then": {"required": ["functional", "eps"]}},
    ],
}

SUBCOMMAND_KIND = {"expand": "expansion", "excess": "excess", "vary": "variation",
                   "verify-commutation": "commutation", "reparam": "reparam"}
KIND_FUNCTIONALS = {
    "expansion": {"mass", "weighted_mass"},
    "excess": {"curvilinear", "cylindrical"},
    "variation": {"graph_variation", "outer_variation", "inner_variation"},
}


class ConfigError(ValueError):
    pass


# -- io ----------------------------------------------------------------------

def _fmt(x) -> str:
    return format(float(x), ".17g")


def _clean(obj):
    """JSON-safe, deterministic: floats as they are, non-finite as strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _write(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _csv_path(out: str | None) -> str | None:
    return None if out is None else str(Path(out).with_suffix(".csv"))


def load_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"missing file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_config(path: str) -> dict:
    cfg = load_json(path)
    errors = sorted(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        msg = "; ".join(f"{'/'.join(str(p) for p in e.path) or '<root>'}: {e.message}" for e in errors)
        raise ConfigError(f"schema violation: {msg}")
    eps = cfg.get("eps")
    if eps is not None and any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("schema violation: eps: grid must be strictly decreasing")
    func = cfg.get("functional")
    kind = cfg["experiment"]
    if func is not None and kind in KIND_FUNCTIONALS and func not in KIND_FUNCTIONALS[kind]:
        raise ConfigError(f"schema violation: functional {func!r} does not belong to experiment {kind!r}")
    return cfg


def _domain(spec: dict) -> Domain:
    if "box" in spec:
        lo, hi = spec["box"]
        return Domain.box(lo, hi)
    return Domain.ball(spec["ball"]["center"], spec["ball"]["radius"])


def _manifold(cfg: dict) -> BaseManifold:
    if "manifold" not in cfg:
        raise ConfigError("schema violation: this functional needs 'manifold'")
    m = cfg["manifold"]
    return BaseManifold.from_strings(m["phi"], _domain(m["domain"]))


def _bundle(cfg: dict) -> AnalyticSheetBundle:
    spec = cfg.get("map")
    if not isinstance(spec, dict):
        raise ConfigError("schema violation: this functional needs an inline analytic 'map'")
    return AnalyticSheetBundle.from_strings(spec["sheets"], _domain(spec["domain"]))


def _field(cfg: dict, M: BaseManifold) -> var.NormalQField:
    if "field" not in cfg:
        raise ConfigError("schema violation: this functional needs 'field'")
    return var.NormalQField.from_strings(M, cfg["field"]["sheets"])


def load_pa_map(spec, base_dir: Path) -> PAQMap:
    if spec == "sample":
        return sample_map()
    path = Path(spec)
    if not path.is_absolute():
        path = base_dir / path
    return PAQMap.from_json(load_json(str(path)))


# -- experiments ----------------------------------------------------------------

def _expansion_fn(cfg: dict, order: int):
    func = cfg["functional"]
    if func in ("mass", "weighted_mass", "curvilinear"):
        M = _manifold(cfg)
        NF = _field(cfg, M)
        if func == "mass":
            return lambda e: var.mass_expansion(NF.scaled(e), order)
        if func == "curvilinear":
            return lambda e: var.curvilinear_excess(NF.scaled(e), order)
        g = VectorExpr([cfg.get("weight", "1")], M.m)
        return lambda e: var.weighted_mass(NF.scaled(e), g=lambda X: g.value(X)[:, 0], order=order)[1]
    if func == "cylindrical":
        f = _bundle(cfg)
        s = cfg.get("s", 1.0)
        return lambda e: var.cylindrical_excess(f, s, e, order)
    if func == "graph_variation":
        f = _bundle(cfg)
        if "zeta" not in cfg:
            raise ConfigError("schema violation: graph_variation needs 'zeta'")
        zeta = VectorExpr(cfg["zeta"], f.m, f.n)
        return lambda e: var.graph_variation(f, zeta, e, order)[0]
    M = _manifold(cfg)
    NF = _field(cfg, M)
    if func == "outer_variation":
        if "test_function" not in cfg:
            raise ConfigError("schema violation: outer_variation needs 'test_function'")
        w = VectorExpr([cfg["test_function"]], M.m)
        return lambda e: var.outer_variation(NF.scaled(e), w, order)[0]
    if "tangent_field" not in cfg:
        raise ConfigError("schema violation: inner_variation needs 'tangent_field'")
    y = VectorExpr(cfg["tangent_field"], M.m)
    return lambda e: var.inner_variation(NF.scaled(e), y, order)[0]


def run_sweep(cfg: dict, order: int) -> tuple[dict, str, bool]:
    fn = _expansion_fn(cfg, order)
    sw = var.sweep(fn, cfg["eps"])
    checks = cfg.get("checks", {})
    outcome = {}
    if "min_slope" in checks:
        outcome["slope"] = sw.slope is not None and sw.slope.slope >= checks["min_slope"]
    if "min_r2" in checks:
        outcome["r2"] = sw.slope is not None and sw.slope.r2 >= checks["min_r2"]
    if "max_C" in checks:
        outcome["max_C"] = sw.constant.max <= checks["max_C"]
    if "max_C_spread" in checks:
        outcome["C_spread"] = sw.constant.spread <= checks["max_C_spread"]
    closed = None
    if "closed_form_residual" in checks:
        e = sp.Symbol("e")
        expr = sp.lambdify(e, sp.sympify(checks["closed_form_residual"], locals={"e": e}), "math")
        tol = checks.get("closed_form_tol", 1e-9)
        closed = [float(expr(r.eps)) for r in sw.reports]
        outcome["closed_form"] = all(abs(r.residual - c) <= tol for r, c in zip(sw.reports, closed))
    if "fd_rel_tol" in checks:
        outcome["fd_agreement"] = all(r.extra.get("relative_gap", 0.0) <= checks["fd_rel_tol"] for r in sw.reports)
    report = {"experiment": cfg["experiment"], "functional": cfg["functional"],
              "quad_order": order, "sweep": sw.to_json(), "checks": outcome}
    keys = list(sw.reports[0].main_terms)
    header = ["eps", "oracle"] + keys + ["residual", "bound_rhs", "fitted_C"]
    if closed is not None:
        header.append("closed_form_residual")
    rows = []
    for i, r in enumerate(sw.reports):
        row = [r.eps, r.oracle] + [r.main_terms[k] for k in keys] + [r.residual, r.bound_rhs, r.fitted_C]
        if closed is not None:
            row.append(closed[i])
        rows.append(row)
    return report, _csv_text(header, rows), all(outcome.values())


def run_commutation(cfg: dict, base_dir: Path, seed: int) -> tuple[dict, str, bool]:
    maps = []
    if "map" in cfg:
        if not isinstance(cfg["map"], str):
            raise ConfigError("schema violation: commutation needs a PA map path or 'sample'")
        maps.append(("map", load_pa_map(cfg["map"], base_dir)))
    if "random" in cfg:
        r = cfg["random"]
        rng = np.random.default_rng(seed)
        for i in range(r.get("count", 10)):
            Q = int(rng.integers(1, r.get("Q", 3) + 1))
            n = int(rng.integers(1, r.get("n", 2) + 1))
            k = int(rng.integers(1, r.get("k", 4) + 1))
            maps.append((f"random_{i}", random_pa_map(rng, 2, n, Q, k)))
    if not maps:
        maps.append(("sample", sample_map()))
    rows, reports = [], []
    for name, F in maps:
        rep = cur.verify_boundary_commutation(F)
        reports.append({"name": name, **rep.to_json()})
        rows.append([name, F.Q, F.n, len(F.mesh.simplices), rep.boundary_cells, len(rep.mismatched), rep.exact])
    exact = all(r["exact"] for r in reports)
    report = {"experiment": "commutation", "exact": exact, "maps": reports}
    text = _csv_text(["name", "Q", "n", "simplices", "boundary_cells", "mismatched", "exact"], rows)
    return report, text, exact


def run_reparam(F: PAQMap, phi: list[str], s: float | None, grid: int, n_random: int,
                 seed: int, c0: float) -> tuple[dict, str, bool]:
    V = F.mesh.as_float()
    center = (V.max(axis=0) + V.min(axis=0)) / 2
    radius = s if s is not None else 0.5 * float(np.min(V.max(axis=0) - V.min(axis=0))) / 2
    M = BaseManifold.from_strings(phi, Domain.ball(center.tolist(), radius))
    res = rp.reparametrize(M, F, grid=grid, n_random=n_random, seed=seed, c0=c0)
    out = res.to_json()
    out["banner"] = None if res.hypothesis_ok else "hypothesis violated: estimates are informative only"
    out["samples"] = res.samples.tolist()
    out["N"] = [q.as_array().tolist() for q in res.N]
    rows = [[e.name, e.holds, e.value, e.explicit_constant, " ".join(_fmt(c) for c in e.worst_point)]
            for e in res.ledger]
    text = _csv_text(["estimate", "holds", "value", "explicit_constant", "worst_point"], rows)
    explicit_ok = all(e.holds for e in res.ledger if e.explicit_constant)
    return out, text, explicit_ok


# -- baseline -----------------------------------------------------------------------

DEFAULT_TOLERANCES = {"*": {"abs": 1e-9, "rel": 1e-9}, "fitted_C": {"factor": 2.0}}


def _tol_for(key: str, tolerances: dict) -> dict:
    return tolerances.get(key, tolerances.get("*", DEFAULT_TOLERANCES["*"]))


def baseline_check(report, baseline, tolerances: dict | None = None, path: str = "") -> list[dict]:
    """Field-wise differences beyond tolerance; an empty list means no drift."""
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    diffs: list[dict] = []
    key = path.rsplit("/", 1)[-1] if path else ""
    if isinstance(baseline, dict):
        if not isinstance(report, dict):
            return [{"field": path, "issue": "type", "baseline": "object", "report": type(report).__name__}]
        for k in sorted(baseline):
            sub = f"{path}/{k}"
            if k not in report:
                diffs.append({"field": sub, "issue": "missing"})
            else:
                diffs.extend(baseline_check(report[k], baseline[k], tol, sub))
        for k in sorted(set(report) - set(baseline)):
            diffs.append({"field": f"{path}/{k}", "issue": "unexpected"})
        return diffs
    if isinstance(baseline, list):
        if not isinstance(report, list) or len(report) != len(baseline):
            return [{"field": path, "issue": "length"}]
        for i, (a, b) in enumerate(zip(report, baseline)):
            diffs.extend(baseline_check(a, b, tol, f"{path}/{i}"))
        return diffs
    if isinstance(baseline, bool) or not isinstance(baseline, (int, float)):
        if report != baseline:
            diffs.append({"field": path, "issue": "changed", "baseline": baseline, "report": report})
        return diffs
    if isinstance(report, bool) or not isinstance(report, (int, float)):
        return [{"field": path, "issue": "type", "baseline": baseline, "report": report}]
    t = _tol_for(key, tol)
    a, b = float(report), float(baseline)
    if "factor" in t:
        ok = (a == b) or (a > 0 and b > 0 and max(a / b, b / a) <= t["factor"])
    else:
        ok = abs(a - b) <= t.get("abs", 0.0) + t.get("rel", 0.0) * abs(b)
    if not ok:
        diffs.append({"field": path, "issue": "drift", "baseline": b, "report": a})
    return diffs


# -- entry point ------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qcurrents", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_):
        sp_.add_argument("--out", help="JSON output path (a CSV is written next to it)")
        sp_.add_argument("--seed", type=int)
        sp_.add_argument("--quad-order", type=int)
        sp_.add_argument("--threads", type=int, help="accepted for compatibility; evaluation is serial")
        return sp_

    pf = common(sub.add_parser("push-forward", help="current T_F (or the graph current) of a PA map"))
    pf.add_argument("--map", required=True, help="PA map JSON, or 'sample'")
    pf.add_argument("--graph", action="store_true", help="push forward x -> (x, F(x))")

    bd = common(sub.add_parser("boundary", help="boundary of a simplicial current"))
    bd.add_argument("--current", required=True)

    vc = common(sub.add_parser("verify-commutation", help="check boundary of T_F against T_{F|boundary}"))
    vc.add_argument("--map", help="PA map JSON, or 'sample'")
    vc.add_argument("--config")

    for name, helptext in (("expand", "mass expansions"), ("excess", "excess expansions"),
                           ("vary", "first variations")):
        e = common(sub.add_parser(name, help=helptext))
        e.add_argument("--config", "--experiment", dest="config", required=True)

    r = common(sub.add_parser("reparam", help="reparametrize a PA graph over a curved base"))
    r.add_argument("--map")
    r.add_argument("--phi", help="components of phi separated by ';'")
    r.add_argument("--s", type=float, help="radius of the base ball")
    r.add_argument("--grid", type=int, default=33)
    r.add_argument("--n-random", type=int, default=1000)
    r.add_argument("--c0", type=float, default=rp.DEFAULT_C0)
    r.add_argument("--config")

    b = sub.add_parser("baseline", help="compare a report against a baseline")
    b.add_argument("--report", required=True)
    b.add_argument("--baseline", required=True)
    b.add_argument("--tolerances")
    b.add_argument("--out")
    return p


def _emit(args, report, text) -> None:
    _write(args.out, dumps(report))
    if args.out is not None and text is not None:
        _write(_csv_path(args.out), text)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"qcurrents: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (rp.FiberError, rp.TiltError) as exc:
        print(f"qcurrents: {exc}", file=sys.stderr)
        return EXIT_FAIL


def thread_cap(requested: int | None) -> int:
    """Effective worker cap: --threads bounded by QCURRENTS_THREADS. Evaluation
    is serial either way, so the cap never changes results."""
    env = os.environ.get("QCURRENTS_THREADS")
    cap = None
    if env:
        try:
            cap = int(env)
        except ValueError as exc:
            raise ConfigError(f"QCURRENTS_THREADS must be an integer, got {env!r}") from exc
    n = requested if requested is not None else (cap or 1)
    if n < 1 or (cap is not None and cap < 1):
        raise ConfigError("thread counts must be positive")
    return min(n, cap) if cap else n


def _dispatch(args) -> int:
    cmd = args.command
    if cmd != "baseline":
        thread_cap(args.threads)
    if cmd == "baseline":
        rep, base = load_json(args.report), load_json(args.baseline)
        tol = load_json(args.tolerances) if args.tolerances else None
        diffs = baseline_check(rep, base, tol)
        _write(args.out, dumps({"diff": diffs}))
        return EXIT_OK if not diffs else EXIT_FAIL

    cfg, base_dir = {}, Path.cwd()
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        base_dir = Path(args.config).resolve().parent
        want = SUBCOMMAND_KIND.get(cmd)
        if want is not None and cfg["experiment"] != want:
            raise ConfigError(f"schema violation: {cmd} expects experiment {want!r}, got {cfg['experiment']!r}")
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    order = args.quad_order or cfg.get("quad_order", var.DEFAULT_ORDER)

    if cmd == "push-forward":
        F = load_pa_map(args.map, base_dir)
        T = cur.graph_current(F) if args.graph else cur.push_forward(F)
        _emit(args, {"current": T.to_json(), "mass": cur.mass(T), "cells": len(T.cells)}, None)
        return EXIT_OK
    if cmd == "boundary":
        data = load_json(args.current)
        T = cur.SimplicialCurrent.from_json(data.get("current", data))
        B = cur.boundary(T)
        _emit(args, {"current": B.to_json(), "cells": len(B.cells)}, None)
        return EXIT_OK
    if cmd == "verify-commutation":
        if args.map:
            cfg = dict(cfg, map=args.map)
        report, text, ok = run_commutation(cfg, base_dir, seed)
    elif cmd in ("expand", "excess", "vary"):
        report, text, ok = run_sweep(cfg, order)
    else:  # reparam
        if args.config:
            spec = cfg.get("map")
            if not isinstance(spec, str) or "phi" not in cfg:
                raise ConfigError("schema violation: reparam needs a PA map path and 'phi'")
            F, phi = load_pa_map(spec, base_dir), cfg["phi"]
            s, grid, nr, c0 = cfg.get("s"), cfg.get("grid", 33), cfg.get("n_random", 1000), cfg.get("c0", rp.DEFAULT_C0)
        else:
            if not args.map or not args.phi:
                raise ConfigError("reparam needs --map and --phi (or --config)")
            F, phi = load_pa_map(args.map, base_dir), [t.strip() for t in args.phi.split(";")]
            s, grid, nr, c0 = args.s, args.grid, args.n_random, args.c0
        report, text, ok = run_reparam(F, phi, s, grid, nr, seed, c0)
    report["seed"] = seed
    _emit(args, report, text)
    return EXIT_OK if ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
