"""Configuration-driven experiment runner.

One JSON file describes one experiment; ``obsent run`` executes it and
writes the ledger CSV, a summary JSON and (for fluctuation runs) the
detailed-fluctuation-theorem CSV.  Exit codes: 0 success, 1 error, 2
assertion failure in strict mode.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import tolerances as tol
from .dynamics import trotter_propagator
from .errors import ConfigInvalid, ObsentError
from .fluct import (
    central_relation_check,
    detailed_ft_histograms,
    export_histograms_csv,
    forward_two_point,
    ift_average,
    reversed_two_point,
)
from .graining import energy_graining
from .lawsuite import (
    conjecture_report,
    hierarchy_violations,
    run_isolated,
    run_multibath,
    run_open,
    run_open_generalized,
    run_particle,
)
from .linalg import DensityMatrix
from .models import ModelSpec, build
from .thermo import coarse_gibbs_probabilities, effective_beta, gibbs_state

RUN_KINDS = ("isolated", "open", "open_generalized", "multibath", "particle",
             "fluctuation")

DEFAULT_CONFIG = {
    "run": "open",
    "assertions": "strict",
    "model": ModelSpec().to_dict(),
    "grid": {"t_max": 10.0, "steps": 200},
    "delta": 0.8,
    "anchor": None,
    "beta0": 1.0,
    "betas": None,
    "mus": None,
    "system_basis": "eigenbasis",
    "initial": {
        "kind": "diag",          # diag | pure | gibbs | joint | joint_gibbs
        "probabilities": [1.0, 0.0],
        "amplitudes": None,
        "beta": 1.0,
        "joint": None,
    },
    "output": {
        "ledger_csv": "ledger.csv",
        "summary_json": "summary.json",
        "ft_csv": "ft.csv",
    },
}


def _merge_defaults(user: dict, defaults: dict, path="") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigInvalid(f"unknown field {here!r}", field=here)
        if isinstance(defaults[key], dict) and isinstance(value, dict) \
                and key != "model":
            out[key] = _merge_defaults(value, defaults[key], here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}", field="<path>") from exc
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}",
                            field="<json>") from exc
    if not isinstance(user, dict):
        raise ConfigInvalid("config must be a JSON object", field="<json>")
    merged = _merge_defaults(user, DEFAULT_CONFIG)
    if "model" in user:
        base = ModelSpec().to_dict()
        for key in user["model"]:
            if key not in base:
                raise ConfigInvalid(f"unknown field model.{key}",
                                    field=f"model.{key}")
        base.update(user["model"])
        merged["model"] = base
    return merged


def validate_config(cfg: dict) -> ModelSpec:
    """Schema and physics validation; returns the parsed model spec."""
    if cfg["run"] not in RUN_KINDS:
        raise ConfigInvalid(f"run must be one of {RUN_KINDS}", field="run")
    if cfg["assertions"] not in ("strict", "report-only"):
        raise ConfigInvalid("assertions must be 'strict' or 'report-only'",
                            field="assertions")
    grid = cfg["grid"]
    if not isinstance(grid.get("steps"), int) or grid["steps"] < 1:
        raise ConfigInvalid("grid.steps must be an integer >= 1",
                            field="grid.steps")
    if not (isinstance(grid.get("t_max"), (int, float))
            and grid["t_max"] >= 0):
        raise ConfigInvalid("grid.t_max must be a non-negative number",
                            field="grid.t_max")
    if not (isinstance(cfg["delta"], (int, float)) and cfg["delta"] > 0):
        raise ConfigInvalid("delta must be a positive number", field="delta")
    if cfg["system_basis"] not in ("eigenbasis", "fixed"):
        raise ConfigInvalid("system_basis must be 'eigenbasis' or 'fixed'",
                            field="system_basis")
    try:
        spec = ModelSpec.from_dict(cfg["model"])
        spec.validate()
    except (ObsentError, TypeError) as exc:
        raise ConfigInvalid(f"model invalid: {exc}", field="model") from exc

    run = cfg["run"]
    n_baths = len(spec.bath_sites) if spec.kind != "custom" else 0
    if run in ("open", "open_generalized", "fluctuation") and n_baths != 1:
        raise ConfigInvalid(f"{run} runs need a single-bath model",
                            field="model.bath_sites")
    if run == "multibath":
        betas = cfg.get("betas")
        if not betas or len(betas) != n_baths:
            raise ConfigInvalid("betas must list one temperature per bath",
                                field="betas")
    if run == "particle":
        if spec.kind != "hopping_particle":
            raise ConfigInvalid("particle runs need a hopping_particle model",
                                field="model.kind")
        betas, mus = cfg.get("betas"), cfg.get("mus")
        if not betas or len(betas) != n_baths:
            raise ConfigInvalid("betas must list one temperature per bath",
                                field="betas")
        if not mus or len(mus) != n_baths:
            raise ConfigInvalid("mus must list one potential per bath",
                                field="mus")
        # physics check without executing: conservation and commutation
        model = build(spec, 1.0, 1)
        _ = [  # raises NonCommuting through the graining constructor
            energy_graining(h, cfg["delta"]) for h in model.h_baths]
        from .thermo import joint_spectrum
        for h_b, n_b in zip(model.h_baths, model.n_baths):
            joint_spectrum(h_b, n_b)
        h0 = model.protocol.hamiltonian_at(0)
        dev = float(np.max(np.abs(
            h0.matrix @ model.n_total_full.matrix
            - model.n_total_full.matrix @ h0.matrix)))
        if dev > tol.COMMUTATOR:
            raise ConfigInvalid(
                f"model does not conserve total particle number (dev {dev:.3e})",
                field="model")
    out = cfg["output"]
    for key, value in out.items():
        if value is None:
            continue
        parent = os.path.dirname(os.path.abspath(value)) or "."
        if not os.access(parent, os.W_OK):
            raise ConfigInvalid(f"output path {value!r} is not writable",
                                field=f"output.{key}")
    return spec


def _initial_isolated(cfg, model):
    init = cfg["initial"]
    h0 = model.protocol.grid_hamiltonian(0)
    kind = init["kind"]
    if kind == "gibbs" or (kind == "diag" and init.get("probabilities") is None):
        return gibbs_state(h0, float(init.get("beta", 1.0)))
    if kind == "pure":
        amp = init.get("amplitudes")
        if amp is None:
            raise ConfigInvalid("initial.amplitudes required for kind 'pure'",
                                field="initial.amplitudes")
        v = np.array([complex(a[0], a[1]) if isinstance(a, (list, tuple))
                      else complex(a) for a in amp])
        if v.size != model.dim:
            raise ConfigInvalid("initial.amplitudes has the wrong length",
                                field="initial.amplitudes")
        v = v / np.linalg.norm(v)
        return DensityMatrix(np.outer(v, v.conj()), model.dims)
    if kind == "diag":
        p = np.asarray(init["probabilities"], dtype=np.float64)
        if p.size != model.dim:
            raise ConfigInvalid(
                "initial.probabilities must cover the full space for "
                "isolated runs", field="initial.probabilities")
        return DensityMatrix(np.diag(p.astype(np.complex128)), model.dims)
    if kind == "gibbs_member":
        x0 = energy_graining(h0, cfg["delta"], cfg["anchor"])
        from .entropy import equilibrium_projection
        dist = coarse_gibbs_probabilities(x0, float(init.get("beta", 1.0)))
        return DensityMatrix(equilibrium_projection(dist, x0).matrix,
                             model.dims, validate=False)
    raise ConfigInvalid(f"initial.kind {kind!r} unsupported for isolated runs",
                        field="initial.kind")


def _system_probabilities(cfg, d_s):
    p = cfg["initial"].get("probabilities")
    if p is None:
        p = [1.0] + [0.0] * (d_s - 1)
    p = np.asarray(p, dtype=np.float64)
    if p.size != d_s:
        raise ConfigInvalid("initial.probabilities must have one entry per "
                            "system basis state", field="initial.probabilities")
    if abs(float(p.sum()) - 1.0) > 1e-8 or np.any(p < 0):
        raise ConfigInvalid("initial.probabilities must be a distribution",
                            field="initial.probabilities")
    return p


def _joint_table(cfg, model):
    """Initial (system, bath-window) weights for generalized/fluctuation runs."""
    init = cfg["initial"]
    d_s = 2
    x_b = energy_graining(model.h_baths[0], cfg["delta"], cfg["anchor"])
    if init["kind"] == "joint":
        table = np.asarray(init["joint"], dtype=np.float64)
        if table.shape != (d_s, x_b.n_outcomes):
            raise ConfigInvalid(
                f"initial.joint must have shape ({d_s}, {x_b.n_outcomes}) "
                "for this model and delta", field="initial.joint")
        return table, x_b
    if init["kind"] in ("joint_gibbs", "diag"):
        p_s = _system_probabilities(cfg, d_s)
        beta = float(init.get("beta", cfg["beta0"]))
        p_b = coarse_gibbs_probabilities(x_b, beta).probabilities
        return np.outer(p_s, p_b), x_b
    raise ConfigInvalid(f"initial.kind {init['kind']!r} unsupported here",
                        field="initial.kind")


def _execute(cfg: dict) -> tuple[int, dict]:
    spec = validate_config(cfg)
    run = cfg["run"]
    grid = (float(cfg["grid"]["t_max"]), int(cfg["grid"]["steps"]))
    model = build(spec, grid[0], grid[1])
    delta = float(cfg["delta"])
    anchor = cfg["anchor"]
    basis = cfg["system_basis"]
    extra = {}

    if run == "isolated":
        rho0 = _initial_isolated(cfg, model)
        ledger = run_isolated(model, model.protocol, grid, delta,
                              rho0=rho0, anchor=anchor)
    elif run == "open":
        p_s = _system_probabilities(cfg, 2)
        ledger = run_open(model, model.protocol, grid, delta,
                          float(cfg["beta0"]), rho_s0=p_s,
                          system_basis=basis, anchor=anchor)
    elif run == "open_generalized":
        table, _ = _joint_table(cfg, model)
        ledger = run_open_generalized(model, model.protocol, grid, delta,
                                      table, system_basis=basis,
                                      anchor=anchor,
                                      beta_ref=float(cfg["beta0"]))
        extra["conjecture"] = conjecture_report(ledger)["max_abs"]
    elif run == "multibath":
        p_s = _system_probabilities(cfg, 2)
        ledger = run_multibath(model, model.protocol, grid, delta,
                               [float(b) for b in cfg["betas"]], rho_s0=p_s,
                               system_basis=basis, anchor=anchor)
    elif run == "particle":
        ledger = run_particle(model, grid, delta,
                              [float(b) for b in cfg["betas"]],
                              [float(m) for m in cfg["mus"]],
                              system_basis=basis, anchor=anchor)
    else:  # fluctuation
        table, _ = _joint_table(cfg, model)
        ledger = run_open_generalized(model, model.protocol, grid, delta,
                                      table, system_basis=basis,
                                      anchor=anchor,
                                      beta_ref=float(cfg["beta0"]))
        u = trotter_propagator(model.protocol)
        fwd = forward_two_point(ledger.initial_state, u,
                                ledger.graining_initial,
                                ledger.graining_final)
        rev = reversed_two_point(fwd, model.protocol)
        ift = ift_average(fwd)
        central = central_relation_check(fwd, rev)
        ft_table, condition = detailed_ft_histograms(fwd, rev)
        ratio_dev = max(
            (abs(row[3] - row[4]) / row[4] for row in ft_table
             if np.isfinite(row[3]) and row[1] > 1e-12), default=0.0)
        extra["fluctuation"] = {
            "ift_average": ift,
            "ift_residual": abs(ift - 1.0),
            "central_relation_residual": central,
            "detailed_ratio_max_rel_dev": ratio_dev,
            "mean_delta_s": fwd.mean_delta_s(),
            "mean_delta_s_vs_sigma_a": abs(fwd.mean_delta_s()
                                           - float(ledger.series("sigma_a")[-1])),
            "initial_condition_matches": condition,
        }
        if cfg["output"]["ft_csv"]:
            export_histograms_csv(ft_table, cfg["output"]["ft_csv"])

    if cfg["output"]["ledger_csv"]:
        ledger.to_csv(cfg["output"]["ledger_csv"])
    summary = ledger.summary()
    summary.update(extra)

    violations = hierarchy_violations(ledger)
    if run == "fluctuation":
        fl = extra["fluctuation"]
        if fl["ift_residual"] > tol.IFT_RESIDUAL:
            violations.append(
                f"integral_fluctuation_theorem off by {fl['ift_residual']:.3e}")
        if fl["central_relation_residual"] > tol.CENTRAL_RELATION:
            violations.append("central_relation off by "
                              f"{fl['central_relation_residual']:.3e}")
        if fl["detailed_ratio_max_rel_dev"] > tol.DETAILED_FT_REL:
            violations.append("detailed_ft_ratio off by "
                              f"{fl['detailed_ratio_max_rel_dev']:.3e}")
    summary["violations"] = violations
    if cfg["output"]["summary_json"]:
        with open(cfg["output"]["summary_json"], "w", encoding="utf-8",
                  newline="\n") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")

    if violations and cfg["assertions"] == "strict":
        for v in violations:
            print(f"VIOLATED: {v}", file=sys.stderr)
        return 2, summary
    return 0, summary


def cmd_run(paths, jobs=None) -> int:
    if len(paths) == 1:
        try:
            code, _ = _execute(load_config(paths[0]))
        except ObsentError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        return code

    max_workers = jobs or int(os.environ.get("OBSENT_THREADS", "0")) or None

    def one(path):
        try:
            return _execute(load_config(path))[0]
        except ObsentError as exc:
            print(f"error in {path}: {exc}", file=sys.stderr)
            return 1

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        codes = list(pool.map(one, paths))
    return max(codes)


def cmd_validate(path) -> int:
    try:
        validate_config(load_config(path))
    except ObsentError as exc:
        field = getattr(exc, "field", None)
        where = f" (field: {field})" if field else ""
        print(f"invalid: {exc}{where}", file=sys.stderr)
        return 1
    print("ok")
    return 0


def cmd_temperature(path, energy: float) -> int:
    try:
        cfg = load_config(path)
        spec = validate_config(cfg)
        model = build(spec, 1.0, 1)
        eff = effective_beta(model.protocol.grid_hamiltonian(0), energy)
    except ObsentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    t_star = float("inf") if eff.beta_star == 0 else 1.0 / eff.beta_star
    print(f"beta_star = {eff.beta_star:.12g}")
    print(f"T_star = {t_star:.12g}")
    print(f"residual = {eff.residual:.3e}")
    if eff.saturated:
        print("saturated: target at a spectral edge")
    return 0


def cmd_print_defaults() -> int:
    print(json.dumps(DEFAULT_CONFIG, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="obsent",
        description="exact coarse-grained quantum thermodynamics runs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one or more experiment configs")
    p_run.add_argument("config", nargs="+")
    p_run.add_argument("--sweep", action="store_true",
                       help="run multiple configs in parallel")
    p_run.add_argument("--jobs", type=int, default=None,
                       help="parallel workers (default: OBSENT_THREADS)")

    p_val = sub.add_parser("validate", help="validate a config without running")
    p_val.add_argument("config")

    p_temp = sub.add_parser("temperature",
                            help="effective temperature for a target energy")
    p_temp.add_argument("config")
    p_temp.add_argument("energy", type=float)

    sub.add_parser("print-defaults", help="show the full default config")

    args = parser.parse_args(argv)
    if args.command == "run":
        if len(args.config) > 1 and not args.sweep:
            print("error: multiple configs need --sweep", file=sys.stderr)
            return 1
        return cmd_run(args.config, jobs=args.jobs)
    if args.command == "validate":
        return cmd_validate(args.config)
    if args.command == "temperature":
        return cmd_temperature(args.config, args.energy)
    if args.command == "print-defaults":
        return cmd_print_defaults()
    return 1


if __name__ == "__main__":
    sys.exit(main())
