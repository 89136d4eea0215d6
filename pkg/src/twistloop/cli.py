"""Command-line front end: spectrum / berry / chern / verify.

Outputs are deterministic for a fixed config and seed: CSV for curves and
spectra (12 significant digits, fixed column order), JSON for summaries,
every file stamped with the artifact version and the config hash.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import invariants as inv
from . import verify as verify_mod
from .config import METHODS, RunConfig, load_config
from .errors import ConfigError, TwistloopError
from .solver import ManifoldRule


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _write_csv(path, columns, rows, cfg: RunConfig):
    with open(path, "w") as fh:
        fh.write(f"# twistloop {__version__} config={cfg.config_hash()}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _write_json(path, payload, cfg: RunConfig):
    body = {"artifact_version": __version__, "config_hash": cfg.config_hash(),
            "config": cfg.canonical()}
    body.update(payload)
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# spectrum

def cmd_spectrum(cfg: RunConfig) -> int:
    model = cfg.model
    eigensets = inv.solve_sectors(model, k=cfg.states_per_sector, seed=cfg.seed)
    rows = []
    for m, es in enumerate(eigensets):
        K = 2.0 * math.pi * m / model.cells
        for n in range(es.count):
            rows.append({"phi": model.phi, "K_index": m, "K": K, "n": n,
                         "energy": float(es.values[n])})
    path = os.path.join(cfg.out_dir, "spectrum.csv")
    _write_csv(path, ["phi", "K_index", "K", "n", "energy"], rows, cfg)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# berry sweep

def _berry_point(cfg: RunConfig, phi: float) -> dict:
    model = cfg.model.with_phi(phi)
    rule = cfg.manifold_rule()
    methods = cfg.methods
    row = {"phi": phi}
    min_gap = math.inf

    sector_methods = {"cm-wilson", "m-matrix", "many-body-shortcut"}
    eigensets = None
    parity = None
    if sector_methods & set(methods) or "tbc-boundary" in methods \
            or "tbc-periodic" in methods or cfg.subtract_polarization:
        eigensets = inv.solve_sectors(model, k=inv._sector_k(rule), seed=cfg.seed)
        manifold = inv.sector_manifold(model, rule, eigensets=eigensets)
        parity = inv.flow_permutation_parity(manifold.momenta, model)

    sweep = None
    pbar = None
    trace_rows = []
    if "tbc-boundary" in methods or cfg.subtract_polarization or cfg.trace:
        sweep = inv.BoundarySweep(model, cfg.theta_steps, rule, seed=cfg.seed)
        pbar, _ = inv.classical_polarization(model, rule=rule, sweep=sweep)
        row["pbar"] = pbar
        min_gap = min(min_gap, sweep.min_gap)

    for method in methods:
        if method == "tbc-boundary":
            total, _sv, _ud = inv._chain_phase(sweep.frames, sweep.frames[0])
            val = inv.wrap_phase(-total + (math.pi if parity < 0 else 0.0))
            row[method] = val
        else:
            res = inv.berry_phase(model, method, rule, theta_steps=cfg.theta_steps,
                                  eigensets=eigensets, seed=cfg.seed,
                                  flow_parity=parity)
            row[method] = res.value
            min_gap = min(min_gap, res.min_gap)
        if cfg.subtract_polarization and method != "tbc-boundary":
            row[method + "-adj"] = inv.wrap_phase(row[method] - 2.0 * math.pi * pbar)
    row["min_gap"] = min_gap
    if cfg.trace and sweep is not None:
        lead = cfg.methods[0]
        for th, es, gap in zip(sweep.thetas, sweep.energies, sweep.gaps):
            trace_rows.append({"phi": phi, "theta": float(th),
                               "energy_min": float(np.min(es)),
                               "energy_max": float(np.max(es)),
                               "gap": float(gap), "berry_phase": row.get(lead, 0.0)})
    return row, trace_rows


def _berry_task(args):
    cfg, index, phi = args
    row, trace_rows = _berry_point(cfg, phi)
    return index, row, trace_rows


def cmd_berry(cfg: RunConfig) -> int:
    phis = cfg.phis()
    tasks = [(cfg, i, p) for i, p in enumerate(phis)]
    if cfg.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = sorted(pool.map(_berry_task, tasks), key=lambda r: r[0])
    else:
        results = [_berry_task(t) for t in tasks]
    rows = [row for _i, row, _t in results]
    trace_rows = [tr for _i, _row, trs in results for tr in trs]
    columns = ["phi"]
    for m in cfg.methods:
        columns.append(m)
        if cfg.subtract_polarization and m != "tbc-boundary":
            columns.append(m + "-adj")
    if cfg.subtract_polarization or "tbc-boundary" in cfg.methods:
        columns.append("pbar")
    columns.append("min_gap")
    path = os.path.join(cfg.out_dir, "berry.csv")
    _write_csv(path, columns, rows, cfg)
    print(f"wrote {path} ({len(rows)} rows)")
    if cfg.trace:
        tpath = os.path.join(cfg.out_dir, "berry_trace.csv")
        _write_csv(tpath, ["phi", "theta", "energy_min", "energy_max", "gap",
                           "berry_phase"], trace_rows, cfg)
        print(f"wrote {tpath} ({len(trace_rows)} rows)")
    return 0


# ---------------------------------------------------------------------------
# chern

def cmd_chern(cfg: RunConfig) -> int:
    model = cfg.model
    manifolds = [("band " + str(b), ManifoldRule(bands=(b,))) for b in cfg.bands] \
        or [("manifold", cfg.manifold_rule())]
    results = []
    for name, rule in manifolds:
        for method in cfg.methods:
            c = inv.chern_winding(model, method=method, rule=rule,
                                  phi_steps=cfg.phi_steps,
                                  theta_steps=cfg.theta_steps, seed=cfg.seed)
            results.append({"manifold": name, "method": method, "chern": c.value,
                            "max_step": c.max_step, "points": c.grid["points"]})
            print(f"{name:12s} {method:20s} C = {c.value:+d}")
    if cfg.plaquette:
        rules = [rule for _name, rule in manifolds]
        plq = inv.chern_plaquette(model, rules, theta_steps=cfg.plaquette_steps,
                                  phi_steps=cfg.plaquette_steps, seed=cfg.seed)
        for (name, _rule), c in zip(manifolds, plq):
            results.append({"manifold": name, "method": "plaquette", "chern": c.value,
                            "max_step": c.max_step})
            print(f"{name:12s} {'plaquette':20s} C = {c.value:+d}")
    path = os.path.join(cfg.out_dir, "chern.json")
    _write_json(path, {"results": results}, cfg)
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# verify

def cmd_verify(cfg: RunConfig) -> int:
    checks = verify_mod.run_suite(cfg.model, cfg.manifold_rule(),
                                  theta_steps=cfg.theta_steps, seed=cfg.seed)
    failed = 0
    report = []
    for c in checks:
        status = "SKIP" if c.skipped else ("PASS" if c.passed else "FAIL")
        if not c.passed:
            failed += 1
        print(f"{status:4s} {c.name:32s} residual={c.residual:.3e} tol={c.tolerance:.3e}"
              + (f"  ({c.detail})" if c.detail else ""))
        report.append({"name": c.name, "passed": c.passed, "skipped": c.skipped,
                       "residual": c.residual, "tolerance": c.tolerance,
                       "detail": c.detail})
    path = os.path.join(cfg.out_dir, "verify.json")
    _write_json(path, {"checks": report, "failed": failed}, cfg)
    print(f"wrote {path}")
    return 1 if failed else 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="twistloop",
        description="Topological invariants of interacting 1D lattice models "
                    "via twisted boundaries and c.m. momentum Wilson loops.")
    parser.add_argument("--version", action="version", version=f"twistloop {__version__}")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in ("spectrum", "berry", "chern", "verify"):
        p = sub.add_parser(task)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--method", help="comma-separated Berry-phase methods "
                                        f"(choose from {', '.join(METHODS)})")
        p.add_argument("--phi-steps", type=int, dest="phi_steps")
        p.add_argument("--theta-steps", type=int, dest="theta_steps")
        p.add_argument("--bands", help="comma-separated per-sector band indices")
        p.add_argument("--manifold-size", type=int, dest="manifold_size")
        p.add_argument("--out", dest="out_dir", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--print-config", action="store_true",
                       help="echo the resolved configuration and exit")
    return parser


def _overrides(args) -> dict:
    ov = {"task": args.task}
    if args.method:
        ov["methods"] = tuple(s.strip() for s in args.method.split(",") if s.strip())
    if args.bands:
        ov["bands"] = tuple(int(s) for s in args.bands.split(","))
    for key in ("phi_steps", "theta_steps", "manifold_size", "out_dir", "seed", "threads"):
        val = getattr(args, key, None)
        if val is not None:
            ov[key] = val
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.print_config:
            print(json.dumps(cfg.canonical(), indent=2, sort_keys=True))
            return 0
        os.makedirs(cfg.out_dir, exist_ok=True)
        handler = {"spectrum": cmd_spectrum, "berry": cmd_berry,
                   "chern": cmd_chern, "verify": cmd_verify}[cfg.task]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TwistloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
