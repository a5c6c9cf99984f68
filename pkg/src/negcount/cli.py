"""``negcount`` command line: config-driven tasks with JSON/CSV reports.

Exit codes: 0 success, 1 usage or validation error, 2 numerical
non-convergence, 3 invariant violation (including failed acceptance criteria).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__, acceptance, bounds, continuum1d, kernels, spectra, walks, witnesses
from .core import (
    InvariantViolation,
    ModelSpec,
    NumericalError,
    Potential,
    ValidationError,
    make_potential,
    read_potential,
)
from .operators import GeneratorTable, assemble_h0, subtract_potential, write_matrix

TASKS = ("count", "bound", "resolvent", "heat", "walk", "witness", "continuum", "verify")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_INVARIANT = 0, 1, 2, 3


class ConfigError(ValidationError):
    """Malformed configuration; the message names the offending field or line."""


# --------------------------------------------------------------------------
# config parsing


def load_config(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg.setdefault("_base_dir", str(Path(path).resolve().parent))
    return cfg


def _field(mapping: Mapping, key: str, where: str, default: Any = ...):
    if key in mapping:
        return mapping[key]
    if default is ...:
        raise ConfigError(f"missing field '{where}.{key}'")
    return default


def _site(value):
    return tuple(value) if isinstance(value, list) else value


def parse_model(spec: Mapping) -> ModelSpec:
    if not isinstance(spec, Mapping):
        raise ConfigError("field 'model' must be an object")
    family = _field(spec, "family", "model")
    try:
        if family == "Z1":
            return ModelSpec.z1(int(spec.get("radius", 10)))
        if family == "Z2":
            return ModelSpec.z2(int(spec.get("radius", 10)))
        if family == "Fractional":
            return ModelSpec.fractional(float(_field(spec, "alpha", "model")), int(spec.get("radius", 10)))
        if family == "Hierarchical":
            return ModelSpec.hierarchical(
                int(_field(spec, "nu", "model")), float(_field(spec, "p", "model")), int(_field(spec, "levels", "model"))
            )
        if family == "GeneralGraph":
            pairs = {}
            for k, row in enumerate(_field(spec, "pairs", "model")):
                if not (isinstance(row, list) and len(row) == 3):
                    raise ConfigError(f"field 'model.pairs[{k}]' must be [x, y, h]")
                pairs[(_site(row[0]), _site(row[1]))] = float(row[2])
            table = GeneratorTable(pairs, float(_field(spec, "c0", "model")))
            table.validate()
            return ModelSpec.general(table)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise ConfigError(f"field 'model': {exc}") from None
        raise ConfigError(f"field 'model': {exc}") from None
    raise ConfigError(f"field 'model.family': unknown family {family!r}")


def parse_potential(spec, base_dir: str = ".", seed: int = 0) -> Potential:
    if spec is None:
        return Potential.zero()
    if not isinstance(spec, Mapping):
        raise ConfigError("field 'potential' must be an object")
    if "file" in spec:
        return read_potential(Path(base_dir) / spec["file"])
    kind = spec.get("kind", "explicit")
    params = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "explicit":
        rows = _field(spec, "entries", "potential")
        entries = {}
        for k, row in enumerate(rows):
            if not (isinstance(row, list) and len(row) == 2):
                raise ConfigError(f"field 'potential.entries[{k}]' must be [site, value]")
            entries[_site(row[0])] = float(row[1])
        params = {"entries": entries}
    if "sites" in params:
        params["sites"] = [_site(s) for s in params["sites"]]
    if "site" in params:
        params["site"] = _site(params["site"])
    try:
        return make_potential(kind, params, seed=seed)
    except ValidationError as exc:
        raise ConfigError(f"field 'potential': {exc}") from None


def effective_seed(cfg: Mapping, cli_seed: int | None) -> int:
    """--seed flag, then the SPECTRAL_SEED environment variable, then the config."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get("SPECTRAL_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"SPECTRAL_SEED must be an integer, got {env!r}") from None
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("field 'seed' must be an integer")
    return seed


def inputs_digest(cfg: Mapping) -> str:
    canon = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(canon, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# serialization


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings 'inf', '-inf', 'nan'."""
    if isinstance(obj, dict):
        return {_key(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def _key(k) -> str:
    if isinstance(k, tuple):
        return ",".join(str(c) for c in k)
    return str(k)


def to_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n"


def _flatten(obj, prefix: str = "") -> list:
    rows = []
    if isinstance(obj, dict):
        for k in sorted(obj, key=str):
            rows += _flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            rows += _flatten(v, f"{prefix}[{i}]")
    else:
        rows.append((prefix, obj))
    return rows


def to_csv(results: Mapping) -> str:
    """``key value`` rows; floats use the shortest round-trip repr."""
    lines = ["key value"]
    for key, value in _flatten(jsonable(results)):
        lines.append(f"{key} {value!r}" if isinstance(value, float) else f"{key} {value}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# tasks


def _task_count(model, v, params, seed, opts) -> dict:
    max_box = opts.get("max_box")
    summary = spectra.n0_count(model, v, max_radius=max_box, eigenvalues=bool(params.get("eigenvalues", True)))
    out = summary.to_dict()
    if "gamma" in params and summary.negative_eigenvalues is not None:
        out["s_gamma"] = spectra.lieb_thirring_sum(summary, float(params["gamma"]))
    if summary.method == "inertia":
        out["method"] = "dense"
    return out


def _bound_method(report, model) -> str:
    if report.method == "calibrated":
        return "calibrated"
    if report.bound_id.startswith("bargmann_1d"):
        return "closed_form"
    return kernels._METHOD[model.family]


def _task_bound(model, v, params, seed, opts) -> tuple:
    bound = _field(params, "bound", "params")
    sigma = float(params.get("sigma", 1.0))
    if bound == "bargmann_general":
        rep = bounds.bargmann_general(model, v, x0=_site(params.get("x0")) if "x0" in params else None)
    elif bound == "bargmann_1d":
        rep = bounds.bargmann_1d(v, lattice=True)
    elif bound == "clr":
        killed = params.get("killed")
        rep = bounds.clr_estimate(model, v, sigma=sigma, killed=_site(killed) if killed is not None else None)
    elif bound in bounds.FAMILY_BOUNDS:
        rep = bounds.attach_exact_alternative(bounds.family_closed_bound(bound, v, params), v, params)
    elif bound in bounds.LT_VARIANTS:
        rep = bounds.lieb_thirring_bound(
            bound,
            model,
            v,
            float(_field(params, "gamma", "params")),
            Lambda=params.get("Lambda"),
            sigma=float(params.get("sigma", 0.0)),
            x0=_site(params["x0"]) if "x0" in params else None,
        )
    else:
        raise ConfigError(f"field 'params.bound': unknown bound {bound!r}")
    out = rep.to_dict()
    out["method"] = _bound_method(rep, model)
    if params.get("check_count"):
        n0 = spectra.n0_count(model, v, eigenvalues=False).n0
        out["n0"] = n0
        if n0 > rep.value:
            raise InvariantViolation(f"bound {bound} = {rep.value} lies below N0 = {n0}")
    return out, rep


def _task_resolvent(model, v, params, seed, opts) -> dict:
    method = kernels._METHOD[model.family]
    if params.get("regularized"):
        x0 = _site(params.get("x0", model.origin()))
        sites = [_site(s) for s in _field(params, "sites", "params")]
        table = kernels.regularized_resolvent_table(model, sites, x0)
        return {"x0": x0, "values": [[s, table.table[model.normalize_site(s)]] for s in sites], "method": method}
    lam = float(_field(params, "lam", "params"))
    y = _site(params.get("y", model.origin()))
    rows = []
    for x in _field(params, "sites", "params"):
        rv = kernels.resolvent(model, lam, _site(x), y)
        rows.append([_site(x), rv.value])
    return {"lam": lam, "y": y, "values": rows, "method": method}


def _task_heat(model, v, params, seed, opts) -> dict:
    x = _site(params.get("x", model.origin()))
    ts = [float(t) for t in _field(params, "t", "params")]
    killed = params.get("killed")
    if killed is None:
        vals = [kernels.heat_diagonal(model, t, x) for t in ts]
        method = "closed_form" if model.family.value in ("Z1", "Z2") else kernels._METHOD[model.family]
    else:
        killing = kernels.Killing.point(_site(killed))
        vals = [kernels.killed_heat_diagonal(model, killing, t, x, box=opts.get("max_box")) for t in ts]
        method = "dense"
    return {"x": x, "rows": [[t, p] for t, p in zip(ts, vals)], "method": method}


def _task_walk(model, v, params, seed, opts) -> dict:
    cfg = walks.WalkConfig(
        model,
        _site(_field(params, "start", "params")),
        t_cap=float(params.get("t_cap", math.inf)),
        seed=seed,
        n_walks=int(params.get("n_walks", 1000)),
        workers=int(params.get("workers", 1)),
    )
    experiment = _field(params, "experiment", "params")
    if experiment == "hitting_time":
        stats = walks.hitting_time(cfg, _site(params.get("target", model.origin())))
    elif experiment == "laplace":
        target = _site(params.get("target", model.origin()))
        lam = float(_field(params, "lam", "params"))
        stats = walks.laplace_hitting_mc(cfg, target, lam)
        out = stats.to_dict()
        exact = kernels.resolvent(model, lam, cfg.start, target).value / kernels.resolvent(model, lam, target, target).value
        out["resolvent_ratio"] = {"value": exact, "method": kernels._METHOD[model.family]}
        return out
    elif experiment == "hitting_cdf":
        table = walks.hitting_cdf_experiment(int(_field(params, "x_norm", "params")), params.get("alpha_grid", [2, 3, 4]), cfg)
        return {"rows": table.rows, "method": "mc"}
    elif experiment == "survival":
        stats = walks.killed_survival(cfg, v if len(v) else float(params.get("q", 0.0)))
    elif experiment == "occupation":
        stats = walks.occupation_time(cfg, [_site(s) for s in _field(params, "region", "params")])
    else:
        raise ConfigError(f"field 'params.experiment': unknown experiment {experiment!r}")
    return stats.to_dict()


def _task_witness(model, v, params, seed, opts) -> dict:
    kind = _field(params, "kind", "params")
    if kind == "single_delta":
        amp = float(_field(params, "v", "params"))
        ev = witnesses.single_delta_eigenvalue(model, amp)
        return {"eigenvalue": ev, "method": "quadrature" if model.family.value != "Z1" else "closed_form"}
    if kind == "bumps":
        ks = params.get("k", [3, 4, 5, 6, 7])
        functions = [witnesses.sine_bump_1d(int(k)) for k in ks]
        cert = witnesses.certify_lower_bound(model, v, functions, allow_overlap=True)
    elif kind == "layers":
        functions = witnesses.auto_square_layers(v, int(params.get("n_layers", 3)), max_radius=int(params.get("max_radius", 4096)))
        cert = witnesses.certify_lower_bound(model, v, functions)
    elif kind == "multiwell":
        pot, cert = witnesses.sparse_multiwell(model, params.get("amplitudes", [1.0, 0.5, 0.25]))
        out = cert.to_dict()
        out["potential"] = [[s, val] for s, val in pot.items()]
        out["method"] = "dense"
        return out
    else:
        raise ConfigError(f"field 'params.kind': unknown witness {kind!r}")
    out = cert.to_dict()
    if params.get("confirm_radius"):
        out["box_count"] = witnesses.box_count(model, v, int(params["confirm_radius"]))
    out["method"] = "dense"
    return out


def _task_continuum(model, v, params, seed, opts, base_dir=".") -> dict:
    if "square_well" in params:
        sw = params["square_well"]
        grid = continuum1d.square_well(float(_field(sw, "depth", "params.square_well")), float(sw.get("a", 1.0)))
    elif "file" in params:
        grid = continuum1d.GridPotential.read(Path(base_dir) / params["file"])
    else:
        grid = continuum1d.GridPotential(_field(params, "nodes", "params"), _field(params, "values", "params"))
    rows = []
    for sigma in params.get("sigmas", [1.0]):
        rows.append(continuum1d.verify_continuum_bounds(grid, float(sigma)).to_dict())
    return {"count": rows[0]["count"] if rows else continuum1d.prufer_count(grid).node_count, "comparisons": rows, "method": "quadrature"}


def run_config(cfg: Mapping, seed: int | None = None, max_box: int | None = None, emit_contributions: bool = False) -> dict:
    """Validate and execute one task; returns the RunReport dictionary."""
    task = _field(cfg, "task", "config")
    if task not in TASKS:
        raise ConfigError(f"field 'task': unknown task {task!r}; choose from {', '.join(TASKS)}")
    params = cfg.get("params", {}) or {}
    if not isinstance(params, Mapping):
        raise ConfigError("field 'params' must be an object")
    base_dir = cfg.get("_base_dir", ".")
    seed = effective_seed(cfg, seed)
    opts = {"max_box": max_box if max_box is not None else params.get("max_box")}
    t0 = time.perf_counter()
    if task == "verify":
        results = [r.to_dict() for r in acceptance.run_suite(params.get("suite"), seed)]
        payload = {"criteria": results, "passed": all(r["passed"] for r in results)}
    elif task == "continuum":
        payload = _task_continuum(None, None, params, seed, opts, base_dir)
    else:
        model = parse_model(_field(cfg, "model", "config"))
        v = parse_potential(cfg.get("potential"), base_dir, seed)
        handler = {
            "count": _task_count,
            "bound": _task_bound,
            "resolvent": _task_resolvent,
            "heat": _task_heat,
            "walk": _task_walk,
            "witness": _task_witness,
        }[task]
        out = handler(model, v, params, seed, opts)
        if task == "bound":
            payload, rep = out
            if emit_contributions:
                payload["contributions"] = [[s, val] for s, val in sorted(rep.contributions.items(), key=lambda kv: str(kv[0]))]
        else:
            payload = out
    echo = {k: v for k, v in cfg.items() if not k.startswith("_")}
    echo["seed"] = seed
    return {
        "task": echo,
        "inputs_digest": inputs_digest(echo),
        "results": jsonable(payload),
        "tool_version": __version__,
        "wall_time": time.perf_counter() - t0,
    }


# --------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="negcount", description="Counting and bounding negative eigenvalues of H0 - V.")
    p.add_argument("--version", action="version", version=f"negcount {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the config seed and SPECTRAL_SEED")
        sp.add_argument("--out", default=None, help="write the report here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default=None)

    r = sub.add_parser("run", help="execute a task described by a JSON config")
    r.add_argument("config")
    common(r)
    r.add_argument("--emit-contributions", action="store_true", help="include per-site bound contributions")
    r.add_argument("--max-box", type=int, default=None, help="largest box radius for counts and killed kernels")

    v = sub.add_parser("verify", help="run the acceptance suite (optionally one suite tag or criterion)")
    v.add_argument("suite", nargs="?", default=None)
    common(v)

    m = sub.add_parser("export-matrix", help="write the truncated H0 - V of a config as text triplets")
    m.add_argument("config")
    m.add_argument("--out", required=True)

    t = sub.add_parser("export-rtilde", help="write R~(x, x0) over a site list as CSV")
    t.add_argument("config")
    t.add_argument("--out", default=None)
    return p


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _report_text(report: dict, fmt: str) -> str:
    if fmt == "csv":
        return to_csv(report["results"])
    return to_json(report)


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    report = run_config(cfg, seed=args.seed, max_box=args.max_box, emit_contributions=args.emit_contributions)
    out_cfg = cfg.get("output", {}) or {}
    fmt = args.format or out_cfg.get("format", "json")
    if fmt not in ("json", "csv"):
        raise ConfigError("field 'output.format' must be 'json' or 'csv'")
    out = args.out or out_cfg.get("path")
    if out and not args.out:
        out = str(Path(cfg["_base_dir"]) / out)
    _emit(_report_text(report, fmt), out)
    if cfg.get("task") == "verify" and not report["results"]["passed"]:
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_verify(args) -> int:
    try:
        acceptance.select(args.suite)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seed = effective_seed({}, args.seed)
    results = acceptance.run_suite(args.suite, seed, echo=lambda line: print(line, file=sys.stderr))
    summary = {
        "suite": args.suite or "all",
        "seed": seed,
        "passed": all(r.passed for r in results),
        "failed": [f"AC{r.number:02d}" for r in results if not r.passed],
        "criteria": [r.to_dict() for r in results],
    }
    text = to_csv(summary) if args.format == "csv" else to_json(summary)
    _emit(text, args.out)
    if summary["failed"]:
        print(f"failed criteria: {', '.join(summary['failed'])}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_export_matrix(args) -> int:
    cfg = load_config(args.config)
    model = parse_model(_field(cfg, "model", "config"))
    v = parse_potential(cfg.get("potential"), cfg["_base_dir"], effective_seed(cfg, None))
    write_matrix(subtract_potential(assemble_h0(model), v.normalized(model)), args.out)
    return EXIT_OK


def _cmd_export_rtilde(args) -> int:
    cfg = load_config(args.config)
    model = parse_model(_field(cfg, "model", "config"))
    params = cfg.get("params", {}) or {}
    x0 = _site(params.get("x0", model.origin()))
    sites = params.get("sites")
    if sites is None:
        sites = model.sites()
    table = kernels.regularized_resolvent_table(model, [_site(s) for s in sites], x0)
    _emit(table.to_csv(), args.out)
    return EXIT_OK


def main(argv: list | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {
        "run": _cmd_run,
        "verify": _cmd_verify,
        "export-matrix": _cmd_export_matrix,
        "export-rtilde": _cmd_export_rtilde,
    }[args.command]
    try:
        return handler(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
