"""Command-line entry points: generate, train, eval, benchmark.

Every command takes a --seed and derives named substreams from it, records
its flags in a JSON manifest, and writes machine-first outputs (CSV/JSON).
Verbosity is controlled by the DCDI_LOG environment variable
(error|info|debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import metrics as metrics_mod
from .densities import ConditionalModelBank
from .graph import is_acyclic, load_adjacency_csv, save_adjacency_csv
from .scm import make_plan, read_dataset, sample_scm, sample_data, write_dataset
from .scores import family_from_lists
from .training import (TrainConfig, default_lambda_grid, default_lambda_r_grid,
                       select_hyperparameters, train, write_curves_csv,
                       write_report)

log = logging.getLogger("dagfit")


def _setup_logging():
    level = os.environ.get("DCDI_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise SystemExit(f"DCDI_LOG must be one of {sorted(levels)}, got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s")


def _dump_json(doc, path=None):
    text = json.dumps(doc, sort_keys=True, indent=2)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_generate(args):
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 0]))
    scm = sample_scm(args.nodes, args.edges_per_node, args.mechanism, rng)
    plan = make_plan(scm, args.intervention, rng, known_targets=not args.unknown)
    ds = sample_data(scm, plan, args.samples, rng)
    write_dataset(ds, args.out)
    manifest = {
        "command": "generate",
        "nodes": args.nodes,
        "edges_per_node": args.edges_per_node,
        "mechanism": args.mechanism,
        "intervention": args.intervention,
        "known_targets": not args.unknown,
        "samples": args.samples,
        "seed": args.seed,
        "regimes": plan.family.K,
        "true_edges": int(scm.dag.sum()),
        "out": args.out,
        "files": sorted(os.listdir(args.out)),
    }
    _dump_json(manifest, os.path.join(args.out, "manifest.json"))
    return 0


def _config_from_args(args):
    if args.config:
        with open(args.config) as fh:
            cfg = TrainConfig.from_json(json.load(fh))
    else:
        cfg = TrainConfig()
    overrides = {"score_type": args.score, "density": args.density, "seed": args.seed}
    if args.lam is not None:
        overrides["lam"] = args.lam
    if args.lam_r is not None:
        overrides["lam_r"] = args.lam_r
    if args.max_iters is not None:
        overrides["max_iters"] = args.max_iters
    return replace(cfg, **overrides)


def cmd_train(args):
    ds = read_dataset(args.data)
    cfg = _config_from_args(args)
    if cfg.score_type in ("known-imperfect", "known-perfect") and ds.family.K < 2:
        raise SystemExit("train: known-intervention score requires interventional regimes")
    if cfg.score_type == "unknown-perfect" and int(ds.regimes.max()) < 1:
        raise SystemExit("train: unknown-target score requires at least two regimes")
    report = train(cfg, ds)
    os.makedirs(args.out, exist_ok=True)
    save_adjacency_csv(os.path.join(args.out, "adjacency.csv"), report.dag)
    save_adjacency_csv(os.path.join(args.out, "edge_probs.csv"), report.edge_probs,
                       binary=False)
    if report.target_probs is not None:
        np.savetxt(os.path.join(args.out, "target_probs.csv"), report.target_probs,
                   fmt="%.17g", delimiter=",")
    write_report(report, os.path.join(args.out, "report.json"))
    if args.curves:
        write_curves_csv(report, os.path.join(args.out, "curves.csv"))
    report.model.bank.save(os.path.join(args.out, "model.json"))
    manifest = {
        "command": "train",
        "data": args.data,
        "status": report.status,
        "iterations": report.iterations,
        "heldout_nll": report.heldout_nll,
        "config": cfg.to_json(),
        "out": args.out,
    }
    _dump_json(manifest, os.path.join(args.out, "manifest.json"))
    return 0


def _load_family(path, d):
    with open(path) as fh:
        raw = json.load(fh)
    return family_from_lists([[int(v) - 1 for v in t] for t in raw], d)


def cmd_eval(args):
    est = load_adjacency_csv(args.estimate).astype(bool)
    truth = None
    if args.truth:
        truth = load_adjacency_csv(args.truth).astype(bool)
    family = None
    if args.interventions and truth is not None:
        family = _load_family(args.interventions, est.shape[0])
    nll = None
    if args.data:
        ds = read_dataset(args.data)
        run_dir = os.path.dirname(args.estimate)
        model_path = args.model or os.path.join(run_dir, "model.json")
        if os.path.exists(model_path):
            bank = ConditionalModelBank.load(model_path)
            targets_path = os.path.join(run_dir, "target_probs.csv")
            if bank.perfect_masked and os.path.exists(targets_path):
                # unknown-target model: regimes follow the learned targets
                r = (np.loadtxt(targets_path, delimiter=",", ndmin=2) > 0.5).astype(float)
            elif ds.family is not None:
                r = ds.family.R
            else:
                r = np.zeros((int(ds.regimes.max()) + 1, est.shape[0]))
            fn = metrics_mod.model_log_density(bank, est.astype(np.float64), r)
            nll = metrics_mod.heldout_nll(fn, ds.X, ds.regimes)
        else:
            log.info("no model document found at %s; skipping NLL", model_path)
    report = metrics_mod.metrics_report(g_true=truth, g_est=est, family=family, nll=nll)
    _dump_json(report, args.out)
    return 0


def _benchmark_cell(task):
    cell, repeat, seed = task
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    scm = sample_scm(cell["nodes"], cell["edges_per_node"], cell["mechanism"], rng)
    plan = make_plan(scm, cell["intervention"], rng,
                     known_targets=cell.get("known", True))
    ds = sample_data(scm, plan, cell["samples"], rng)
    base = TrainConfig(score_type=cell.get("score", "known-perfect"),
                       density=cell.get("density", "gaussian"), seed=seed)
    if "max_iters" in cell:
        base = replace(base, max_iters=cell["max_iters"])
    grid = cell.get("lambda_grid", default_lambda_grid())
    grid_r = cell.get("lambda_r_grid", default_lambda_r_grid())
    best_cfg, reports = select_hyperparameters(grid, ds, base, lambda_rs=grid_r)
    best = min((r for r in reports if r is not None), key=lambda r: r.heldout_nll)
    summary = metrics_mod.metrics_report(g_true=scm.dag, g_est=best.dag,
                                         family=plan.family)
    return {
        "cell": cell.get("name", "cell"),
        "repeat": repeat,
        "seed": seed,
        "lambda": best_cfg.lam,
        "shd": summary["shd"],
        "sid": summary["sid"],
        "status": best.status,
    }


def cmd_benchmark(args):
    with open(args.suite) as fh:
        suite = json.load(fh)
    cells = suite["cells"]
    tasks = []
    for ci, cell in enumerate(cells):
        for rep in range(args.repeats):
            tasks.append((cell, rep, args.seed + 1000 * ci + rep))
    results = [None] * len(tasks)
    failures = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futs = [pool.submit(_benchmark_cell, t) for t in tasks]
            for i, fut in enumerate(futs):
                try:
                    results[i] = fut.result()
                except Exception as e:  # cell failures recorded, suite continues
                    failures.append({"task": i, "error": str(e)})
    else:
        for i, t in enumerate(tasks):
            try:
                results[i] = _benchmark_cell(t)
            except Exception as e:
                failures.append({"task": i, "error": str(e)})
    rows = [r for r in results if r is not None]
    table = {}
    for cell in cells:
        name = cell.get("name", "cell")
        got = [r for r in rows if r["cell"] == name]
        if not got:
            continue
        shds = np.array([r["shd"] for r in got], dtype=np.float64)
        sids = np.array([r["sid"] for r in got if r["sid"] is not None],
                        dtype=np.float64)
        table[name] = {
            "runs": len(got),
            "shd_mean": float(shds.mean()),
            "shd_std": float(shds.std()),
            "sid_mean": float(sids.mean()) if sids.size else None,
            "sid_std": float(sids.std()) if sids.size else None,
        }
    os.makedirs(args.out, exist_ok=True)
    doc = {"command": "benchmark", "seed": args.seed, "repeats": args.repeats,
           "cells": table, "runs": rows, "failures": failures}
    _dump_json(doc, os.path.join(args.out, "benchmark.json"))
    with open(os.path.join(args.out, "benchmark.csv"), "w") as fh:
        fh.write("cell,runs,shd_mean,shd_std,sid_mean,sid_std\n")
        for name in sorted(table):
            t = table[name]
            fh.write(f"{name},{t['runs']},{t['shd_mean']},{t['shd_std']},"
                     f"{t['sid_mean']},{t['sid_std']}\n")
    return 1 if failures and not rows else 0


def build_parser():
    p = argparse.ArgumentParser(prog="dagfit",
                                description="causal DAG learning from interventional data")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="sample a ground-truth model and dataset")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--edges-per-node", type=float, required=True)
    g.add_argument("--mechanism", choices=["linear", "anm", "nn"], required=True)
    g.add_argument("--intervention", choices=["perfect", "imperfect", "none"],
                   required=True)
    tgt = g.add_mutually_exclusive_group()
    tgt.add_argument("--known", dest="unknown", action="store_false", default=False)
    tgt.add_argument("--unknown", dest="unknown", action="store_true")
    g.add_argument("--samples", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="fit the model and emit the learned graph")
    t.add_argument("--data", required=True)
    t.add_argument("--score", choices=["known-imperfect", "known-perfect",
                                       "unknown-perfect"], required=True)
    t.add_argument("--density", choices=["gaussian", "dsf"], default="gaussian")
    t.add_argument("--config", help="JSON config file with defaults to override")
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--lambda-r", dest="lam_r", type=float)
    t.add_argument("--max-iters", dest="max_iters", type=int)
    t.add_argument("--curves", action="store_true", help="also write curves.csv")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score an estimated graph against the truth")
    e.add_argument("--estimate", required=True)
    e.add_argument("--truth")
    e.add_argument("--interventions")
    e.add_argument("--data", help="dataset directory, enables held-out NLL")
    e.add_argument("--model", help="model.json produced by train (default: next to estimate)")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("benchmark", help="run generate/select/train/eval grids")
    b.add_argument("--suite", required=True, help="JSON condition matrix")
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.set_defaults(fn=cmd_benchmark)
    return p


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
