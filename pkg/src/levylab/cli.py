"""Command-line experiment driver.

Every command reads a JSON scenario (``--scenario``), writes ``report.json``
and any CSV tables into ``--out``, and exits with 0 on success, 2 on an
invalid scenario or violated precondition, 3 when a computation diverges.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np

from . import conditions, coupling, gallery
from .binning import Binning
from .levy_noise import InfiniteMassError
from .models import ModelError, model_from_config
from .sde_core import TEST_FUNCTIONS, DivergenceError, ExplosionError, SimParams, simulate_batch

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE = 0, 2, 3

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"oneOf": [_NUM, {"type": "array", "items": _NUM, "minItems": 1}]}
_INCREASING = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}

SCENARIO_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "properties": {
        "model": {
            "type": "object",
            "properties": {
                "name": {"type": "string"},
                "params": {"type": "object"},
                "measure": {"type": "object"},
                "convention": {"enum": ["ito", "raw"]},
            },
            "required": ["name"],
            "additionalProperties": False,
        },
        "sim": {
            "type": "object",
            "properties": {
                "dt": _POS, "horizon": _POS,
                "truncation": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "n_paths": {"type": "integer", "minimum": 1},
            },
            "required": ["dt", "horizon"],
            "additionalProperties": False,
        },
        "x0": _VEC, "x": _VEC, "y": _VEC, "mu1": _VEC, "mu2": _VEC, "x_star": _VEC,
        "obs_times": _INCREASING,
        "t_grid": _INCREASING,
        "binning": {
            "type": "object",
            "properties": {
                "lower": _VEC, "upper": _VEC, "origin": _VEC, "width": _VEC,
                "counts": {"oneOf": [{"type": "integer", "minimum": 1},
                                     {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
            },
            "required": ["counts"],
        },
        "phi": {
            "type": "object",
            "properties": {"name": {"enum": sorted(TEST_FUNCTIONS)}, "q": _POS, "c": _NUM},
            "required": ["name"],
        },
        "grid": {
            "type": "object",
            "properties": {"lower": _NUM, "upper": _NUM, "n": {"type": "integer", "minimum": 3}},
            "required": ["lower", "upper", "n"],
        },
        "alpha_grid": {"type": "array", "items": _POS, "minItems": 1},
        "gamma": _POS,
        "t_star": _POS,
        "svd_tol": _POS,
        "epsilon": {"oneOf": [_POS, {"type": "array", "items": _POS, "minItems": 1}]},
        "radii": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "t": _POS,
        "n_points": {"type": "integer", "minimum": 1},
        "R": _POS, "T": _POS,
        "max_cycles": {"type": "integer", "minimum": 1},
        "n_runs": {"type": "integer", "minimum": 1},
        "n_aux": {"type": "integer", "minimum": 1},
        "horizon": _POS,
        "burn_in": {"type": "number", "minimum": 0},
        "n_boot": {"type": "integer", "minimum": 2},
        "rate": {
            "type": "object",
            "properties": {
                "alpha": _POS, "gamma": _POS, "T": _POS, "sup_phi": _POS,
                "c": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
            "required": ["alpha", "gamma", "T", "delta", "sup_phi"],
            "additionalProperties": False,
        },
        "gallery": {"type": "object"},
    },
    "additionalProperties": False,
}

REQUIRED = {
    "simulate": ["model", "sim", "x0"],
    "check-r": ["model", "phi", "grid", "alpha_grid"],
    "check-n": ["model", "x_star"],
    "check-s": ["model", "sim", "x_star", "radii", "t", "epsilon"],
    "couple": ["model", "sim", "mu1", "mu2", "R", "T", "binning"],
    "tv-curve": ["model", "sim", "x", "y", "t_grid", "binning"],
    "invariant": ["model", "sim", "x0", "horizon", "binning"],
    "rate-bound": ["rate"],
    "gallery": [],
    "report": [],
}


class ConfigError(ValueError):
    pass


def validate_scenario(cfg: dict, command: str | None = None) -> None:
    try:
        jsonschema.validate(cfg, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"scenario invalid at {where}: {exc.message}") from None
    missing = [k for k in REQUIRED.get(command, []) if k not in cfg]
    if missing:
        raise ConfigError(f"command {command!r} needs scenario keys: {', '.join(missing)}")
    if "t_grid" in cfg and np.any(np.diff(cfg["t_grid"]) <= 0):
        raise ConfigError("t_grid must be strictly increasing")
    if "obs_times" in cfg and np.any(np.diff(cfg["obs_times"]) < 0):
        raise ConfigError("obs_times must be sorted")


# ---------------------------------------------------------------------------
# output helpers


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def _versions() -> dict:
    out = {}
    for pkg in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_report(out: Path, command: str, cfg: dict, results: dict, seed: int) -> dict:
    report = {"command": command, "config": cfg, "seed": seed, "versions": _versions(),
              "results": _clean(results)}
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------------------
# commands


def _sim(cfg: dict) -> SimParams:
    s = cfg["sim"]
    return SimParams(dt=float(s["dt"]), horizon=float(s["horizon"]), truncation=float(s.get("truncation", 0.0)),
                     seed=int(s.get("seed", 0)), n_paths=int(s.get("n_paths", 1)))


def _grid(cfg: dict, m: int) -> np.ndarray:
    g = cfg["grid"]
    axis = np.linspace(g["lower"], g["upper"], g["n"])
    mesh = np.meshgrid(*([axis] * m), indexing="ij")
    return np.column_stack([a.ravel() for a in mesh])


def _phi(cfg: dict):
    spec = cfg["phi"]
    name = spec["name"]
    if name == "power_norm":
        return TEST_FUNCTIONS[name](float(spec.get("q", 2.0)))
    if name == "constant":
        return TEST_FUNCTIONS[name](float(spec.get("c", 1.0)))
    return TEST_FUNCTIONS[name]()


def cmd_simulate(cfg, model, out, args):
    params = _sim(cfg)
    obs = cfg.get("obs_times", list(np.linspace(0, params.horizon, 11)))
    res = simulate_batch(model, cfg["x0"], params, obs, workers=args.workers)
    m = model.m
    mean = np.nanmean(res.states, axis=0)
    var = np.nanvar(res.states, axis=0)
    header = ["t"] + [f"mean_{i + 1}" for i in range(m)] + [f"var_{i + 1}" for i in range(m)]
    write_csv(out / "moments.csv", header,
              ([t, *mean[j], *var[j]] for j, t in enumerate(res.obs_times)))
    return {"n_paths": res.n_paths, "n_exploded": res.n_exploded,
            "mean_jumps": float(res.n_jumps.mean()), "terminal_mean": mean[-1], "terminal_var": var[-1]}


def cmd_check_r(cfg, model, out, args):
    rep = conditions.check_R(model, _phi(cfg), _grid(cfg, model.m), cfg["alpha_grid"], cfg.get("gamma"))
    return rep.to_dict()


def cmd_check_n(cfg, model, out, args):
    route = args.route
    if route == "mc":
        if "sim" not in cfg or "t_star" not in cfg:
            raise ConfigError("route mc needs 'sim' and 't_star'")
        params = _sim(cfg)
        rep = conditions.check_N_mc(model, cfg["x_star"], float(cfg["t_star"]), params.replace(
            horizon=max(params.horizon, float(cfg["t_star"]))), svd_tol=float(cfg.get("svd_tol", 1e-9)))
    elif route == "static":
        rep = conditions.check_N_static(model, cfg["x_star"], cfg.get("epsilon"))
    else:
        rep = conditions.check_N_rank(model, cfg["x_star"])
    return {"route": route, **rep.to_dict()}


def cmd_check_s(cfg, model, out, args):
    eps = cfg["epsilon"]
    if isinstance(eps, list):
        raise ConfigError("check-s takes a single epsilon")
    rep = conditions.check_S(model, cfg["x_star"], cfg["radii"], float(cfg["t"]), float(eps), _sim(cfg),
                             n_points=int(cfg.get("n_points", 8)), workers=args.workers)
    m = model.m
    write_csv(out / "check_s.csv", ["radius"] + [f"start_{i + 1}" for i in range(m)] + ["freq_at_t", "freq_path", "n"],
              ([r.radius, *r.start, r.freq_at_t, r.freq_path, r.n_paths] for r in rep.rows))
    return rep.to_dict()


def _start(value, m):
    return np.asarray(value, dtype=float).reshape(m)


def cmd_couple(cfg, model, out, args):
    params = _sim(cfg)
    binning = Binning.from_config(cfg["binning"])
    n_runs = int(cfg.get("n_runs", 100))
    records = coupling.switching_coupling_runs(
        model, _start(cfg["mu1"], model.m), _start(cfg["mu2"], model.m), float(cfg["R"]), float(cfg["T"]),
        n_runs, params, binning, n_aux=int(cfg.get("n_aux", 400)), max_cycles=int(cfg.get("max_cycles", 50)))
    t_grid = cfg.get("t_grid", list(np.linspace(0, params.horizon, 21)))
    tail = coupling.beta_mixing_tail(records, t_grid)
    write_csv(out / "beta_tail.csv", ["t", "tail", "n"], ([t, v, tail.n] for t, v in zip(tail.t, tail.tail)))
    q = np.array([r.Q_star for r in records if r.glued], dtype=float)
    quant = {str(p): (float(np.quantile(q, p)) if len(q) else None) for p in (0.1, 0.25, 0.5, 0.75, 0.9)}
    return {"n_runs": n_runs, "glue_fraction": len(q) / n_runs, "Q_star_quantiles": quant,
            "records": [r.summary() for r in records]}


def cmd_tv_curve(cfg, model, out, args):
    params = _sim(cfg)
    binning = Binning.from_config(cfg["binning"])
    curve = coupling.tv_decay_curve(model, _start(cfg["x"], model.m), _start(cfg["y"], model.m), cfg["t_grid"],
                                    params.replace(horizon=max(cfg["t_grid"])), binning,
                                    n_boot=int(cfg.get("n_boot", 200)), workers=args.workers)
    write_csv(out / "tv_curve.csv", ["t", "tv", "stderr"], zip(curve.t, curve.tv, curve.stderr))
    return {"C1_emp": curve.C1_emp, "C2_emp": curve.C2_emp, "slope_pvalue": curve.fit.slope_pvalue,
            "fit_status": curve.fit.status, "fit_points": curve.fit.n_points, "noise_floor": curve.noise_floor,
            "n_paths": curve.n_paths}


def cmd_invariant(cfg, model, out, args):
    params = _sim(cfg)
    binning = Binning.from_config(cfg["binning"])
    law = coupling.khasminskii_average(model, _start(cfg["x0"], model.m), float(cfg["horizon"]), params, binning,
                                       burn_in=float(cfg.get("burn_in", 0.0)), workers=args.workers)
    centres = binning.cell_centers()
    write_csv(out / "invariant.csv", ["cell"] + [f"center_{i + 1}" for i in range(model.m)] + ["mass"],
              ([i, *centres[i], law.masses[i]] for i in range(binning.n_cells)))
    return {"time_mean": law.time_mean, "time_variance": law.time_variance, "overflow_mass": law.overflow_mass,
            "horizon": law.horizon, "burn_in": law.burn_in}


def cmd_rate_bound(cfg, model, out, args):
    r = cfg["rate"]
    rb = coupling.theoretical_rate_bound(r["alpha"], r["gamma"], r.get("c", 0.5), r["T"], r["delta"], r["sup_phi"])
    return rb.to_dict()


def cmd_gallery(cfg, model, out, args):
    overrides = dict(cfg.get("gallery", {}))
    if args.params:
        try:
            overrides.update(json.loads(args.params))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--params is not valid JSON: {exc}") from None
    if args.p is not None:
        overrides["p"] = args.p
    seed = args.seed if args.seed is not None else overrides.pop("seed", 0)
    name = args.example
    try:
        if name == "5.3":
            rep = gallery.run_example_5_3(seed=seed, **overrides)
        elif name == "5.1":
            rep = gallery.run_example_5_1(seed=seed, workers=args.workers, **overrides)
            write_csv(out / "trace.csv", ["t", "mean"], zip(rep.trace_t, rep.trace_mean))
        elif name == "5.2":
            rep = gallery.run_example_5_2(seed=seed, workers=args.workers, **overrides)
        else:
            sim = overrides.pop("sim", None)
            params = SimParams(**{"dt": 0.05, "horizon": 10.0, "n_paths": 100_000, **(sim or {}), "seed": seed})
            rep = gallery.run_prop_0_1(overrides.pop("drift", None), overrides.pop("measure", None), params,
                                       workers=args.workers, **overrides)
            if rep.t:
                write_csv(out / "tv_curve.csv", ["t", "tv", "stderr"], zip(rep.t, rep.tv, rep.stderr))
    except TypeError as exc:
        raise ConfigError(f"bad gallery parameters: {exc}") from None
    return rep.to_dict()


def cmd_report(cfg, model, out, args):
    path = out / "report.json"
    if not path.exists():
        raise ConfigError(f"no report.json in {out}")
    rep = json.loads(path.read_text())
    validate_scenario(rep["config"], rep["command"] if rep["command"] != "gallery" else None)
    print(json.dumps({"command": rep["command"], "seed": rep["seed"], "results": rep["results"]},
                     indent=2, sort_keys=True))
    return None


COMMANDS = {
    "simulate": cmd_simulate, "check-r": cmd_check_r, "check-n": cmd_check_n, "check-s": cmd_check_s,
    "couple": cmd_couple, "tv-curve": cmd_tv_curve, "invariant": cmd_invariant,
    "rate-bound": cmd_rate_bound, "gallery": cmd_gallery, "report": cmd_report,
}
NEEDS_MODEL = {"simulate", "check-r", "check-n", "check-s", "couple", "tv-curve", "invariant"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levylab", description="Jump-SDE ergodicity experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", type=Path, help="JSON scenario file")
    common.add_argument("--seed", type=int, help="overrides sim.seed")
    common.add_argument("--workers", type=int, default=1, help="threads; never changes results")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "check-n":
            p.add_argument("--route", choices=["mc", "static", "rank"], default="mc")
        if name == "gallery":
            p.add_argument("example", choices=["5.1", "5.2", "5.3", "prop01"])
            p.add_argument("--p", type=float, help="kernel parameter of the circle example")
            p.add_argument("--params", help="JSON object of parameter overrides")
    return parser


def _load_scenario(args) -> dict:
    if args.scenario is None:
        return {}
    try:
        return json.loads(Path(args.scenario).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from None


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_scenario(args)
        if args.seed is not None and "sim" in cfg:
            cfg["sim"]["seed"] = args.seed
        if args.command != "report":
            validate_scenario(cfg, args.command)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        model = model_from_config(cfg["model"]) if args.command in NEEDS_MODEL else None
        args.out.mkdir(parents=True, exist_ok=True)
        results = COMMANDS[args.command](cfg, model, args.out, args)
        if results is not None:
            seed = cfg.get("sim", {}).get("seed", args.seed if args.seed is not None else 0)
            write_report(args.out, args.command, cfg, results, seed)
            print(json.dumps({"command": args.command, "out": str(args.out / "report.json")}))
        return EXIT_OK
    except (DivergenceError, ExplosionError, InfiniteMassError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, ModelError, gallery.PreconditionError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv=None) -> None:
    sys.exit(run_command(argv))
