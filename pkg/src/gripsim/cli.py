"""Command line entry point: collect, train, eval, simulate, sweep, report.

Exit codes: 0 success, 1 bad input (flags, files, config, schema), 2 the
run itself failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import classifier, datagen, harness
from .core import CLASSES, ConfigError, RunConfig, dump_config, load_config, read_csv, write_csv
from .features import FeatureError, FeatureLayout
from .physics import OBJECTS

log = logging.getLogger("gripsim")

CONFIG_ENV = "GRIPSIM_CONFIG"
TEST_FRACTION = 0.2


class UsageError(Exception):
    """Bad input detected by the CLI itself (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; here that is a validation error
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


VALIDATION_ERRORS = (UsageError, ConfigError, classifier.ModelError, harness.HarnessError, FeatureError,
                     FileNotFoundError)


def resolve_config(path: str | None) -> RunConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    if not Path(path).exists():
        raise FileNotFoundError(f"config file {path} not found")
    return load_config(path)


def _need_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} {path} not found")
    return p


# ---------------------------------------------------------------------------
# Subcommands

def cmd_collect(args, cfg: RunConfig) -> int:
    t0 = time.time()
    out = Path(args.out)
    _, manifest = datagen.run_campaign(cfg, out)
    dump_config(cfg, out / "config.yaml")
    trials = len({row["trial_id"] for row in manifest})
    print(f"collected {trials} trials / {len(manifest)} finger-trials into {out} in {time.time() - t0:.1f} s")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    if args.tau_f < 1:
        raise UsageError(f"--tau-f must be >= 1 (got {args.tau_f})")
    streams = datagen.load_campaign(_need_file(args.data, "data directory"))
    variants = {recs[0].frame.variant for recs in streams.values()}
    if len(variants) != 1:
        raise UsageError(f"{args.data} mixes sensor variants {sorted(variants)}")
    variant = variants.pop()
    keys = list(streams)
    train_keys, test_keys = datagen.split_keys(keys, TEST_FRACTION, cfg.seed)
    tau_h = cfg.classifier.tau_h
    X, y = datagen.build_training_set([streams[k] for k in train_keys], tau_h, args.tau_f)
    c = cfg.classifier
    model = classifier.train(X, y, FeatureLayout(variant, tau_h), args.tau_f, learning_rate=c.learning_rate,
                             epochs=c.epochs, l2=c.l2, seed=cfg.seed)
    meta = dict(model.meta, split_seed=cfg.seed, test_fraction=TEST_FRACTION,
                test_keys=[[t, f] for t, f in test_keys])
    model = replace(model, meta=meta)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    classifier.save_model(model, args.out)
    print(f"trained {variant} model (tau_h={tau_h}, tau_f={args.tau_f}) on {len(y)} windows, "
          f"final loss {meta['final_loss']:.4f} -> {args.out}")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    model = classifier.load_model(_need_file(args.model, "model"))
    streams = datagen.load_campaign(_need_file(args.data, "data directory"))
    if args.all:
        keys = list(streams)
    else:
        held = model.meta.get("test_keys")
        if held is None:
            raise UsageError("model carries no held-out split; pass --all to evaluate on every finger-trial")
        keys = [(t, int(f)) for t, f in held]
        missing = [k for k in keys if k not in streams]
        if missing:
            raise UsageError(f"held-out finger-trial {missing[0]} is not in {args.data}")
    variant = streams[keys[0]][0].frame.variant
    model.check_layout(FeatureLayout(variant, model.layout.tau_h))
    X, y = datagen.build_training_set([streams[k] for k in keys], model.layout.tau_h, model.tau_f)
    ev = classifier.evaluate(model, X, y)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    classifier.write_evaluation_csv(ev, args.out)
    print(f"accuracy {ev.accuracy:.4f}, slip recall {ev.recall[0]:.4f} on {len(y)} windows -> {args.out}")
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    if not 1 <= args.fingers <= 5:
        raise UsageError(f"--fingers must be in 1..5 (got {args.fingers})")
    if args.object not in OBJECTS:
        _bad_object(args.object)
    model = classifier.load_model(_need_file(args.model, "model"))
    run_cfg = replace(cfg, finger_count=args.fingers, object_id=args.object, sensor_variant=model.variant,
                      disturbance=args.disturbance, seed=cfg.seed if args.seed is None else args.seed)
    if args.partner:
        if args.fingers != 1:
            raise UsageError("--partner runs use a single robot finger (--fingers 1)")
        report = harness.run_partner_stabilization(run_cfg, model, args.object, args.partner,
                                                   duration=args.duration)
    else:
        report = harness.run_stabilization(run_cfg, model, args.object, args.fingers, args.disturbance,
                                           duration=args.duration)
    report.save(args.out)
    dump_config(run_cfg, Path(args.out) / "config.yaml")
    s = report.summary
    print(f"{s['object']} with {s['fingers']} finger(s): max displacement {s['max_displacement'] * 1e3:.2f} mm, "
          f"settled force {s['settled_force_ratio']:.2f} x F*, {'dropped' if s['dropped'] else 'held'} -> {args.out}")
    return 0


def _bad_object(name: str):
    raise UsageError(f"unknown object {name!r}; choose from {', '.join(sorted(OBJECTS))}")


def load_grid(path: Path) -> dict:
    try:
        grid = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed grid {path}: {exc}") from None
    known = {"fingers", "objects", "tau_f", "seeds", "models", "disturbance", "duration"}
    if not isinstance(grid, dict):
        raise ConfigError(f"grid {path} must be a mapping")
    unknown = set(grid) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in grid {path}: {', '.join(sorted(unknown))}")
    if not grid.get("models"):
        raise ConfigError(f"grid {path} lists no models")
    return grid


def cmd_sweep(args, cfg: RunConfig) -> int:
    grid_path = _need_file(args.grid, "grid file")
    grid = load_grid(grid_path)
    models = {}
    for entry in grid["models"]:
        p = Path(entry)
        if not p.is_absolute():
            p = grid_path.parent / p
        m = classifier.load_model(_need_file(str(p), "model"))
        models[(m.variant, m.tau_f)] = m
    fingers = [int(n) for n in grid.get("fingers", (2, 3, 4, 5))]
    for n in fingers:
        if not 1 <= n <= 5:
            raise UsageError(f"grid finger counts must be in 1..5 (got {n})")
    objects = [str(o) for o in grid.get("objects", ("ball", "box", "tuna_can", "plastic_cup"))]
    for o in objects:
        if o not in OBJECTS:
            _bad_object(o)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    rows = harness.sweep(cfg, models, fingers=fingers, objects=objects,
                         tau_fs=grid.get("tau_f"), seeds=[int(s) for s in grid.get("seeds", (0, 1, 2))],
                         disturbances=grid.get("disturbance"), duration=grid.get("duration"), out_csv=args.out)
    ok = sum(bool(r["success"]) for r in rows)
    print(f"{len(rows)} runs, {ok} successful -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Report

def _md_table(header: Sequence[str], rows: Sequence[Sequence]) -> list[str]:
    def cell(v):
        if isinstance(v, float):
            return f"{v:.4g}"
        return str(v)
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(cell(v) for v in r) + " |" for r in rows]
    return lines


def _is_eval_csv(path: Path) -> bool:
    with open(path) as fh:
        return fh.readline().strip() == "class,precision,recall,support"


def _is_sweep_csv(path: Path) -> bool:
    with open(path) as fh:
        return fh.readline().strip().split(",") == harness.SWEEP_COLUMNS


def cmd_report(args, cfg: RunConfig) -> int:
    root = _need_file(args.inp, "input directory")
    out = Path(args.out)
    data_dir = out.parent / f"{out.stem}_data"
    lines = [f"# Run report: {root}", ""]
    found = 0

    manifests = sorted(root.rglob("manifest.csv"))
    if manifests:
        lines += ["## Data collection", ""]
        rows = []
        for m in manifests:
            mrows = read_csv(m)
            trials = len({r["trial_id"] for r in mrows})
            totals = [sum(int(r[c.value]) for r in mrows) for c in CLASSES]
            rows.append([str(m.parent.relative_to(root)) or ".", trials, len(mrows), *totals])
        lines += _md_table(["dataset", "trials", "finger-trials", *[c.value for c in CLASSES]], rows) + [""]
        found += len(manifests)

    csvs = sorted(p for p in root.rglob("*.csv") if p.name not in ("manifest.csv", "trace.csv"))
    evals = [p for p in csvs if _is_eval_csv(p)]
    if evals:
        lines += ["## Classifier evaluation", ""]
        for p in evals:
            rows = read_csv(p)
            lines += [f"`{p.relative_to(root)}`", ""]
            lines += _md_table(["class", "precision", "recall", "support"],
                               [[r["class"], float(r["precision"]), float(r["recall"]), int(r["support"])]
                                for r in rows]) + [""]
        found += len(evals)

    runs = sorted(root.rglob("report.json"))
    if runs:
        lines += ["## Stabilization runs", ""]
        data_dir.mkdir(parents=True, exist_ok=True)
        table, plot_rows = [], []
        for p in runs:
            s = json.loads(p.read_text())
            name = str(p.parent.relative_to(root)) or "."
            table.append([name, s["object"], s["fingers"], s["variant"], s["max_displacement"] * 1e3,
                          "yes" if s["dropped"] else "no", s["settled_force_ratio"], s["slip_fraction"],
                          s["peak_force"]])
            plot_rows.append({"run": name, "object": s["object"], "fingers": s["fingers"],
                              "max_displacement_mm": s["max_displacement"] * 1e3, "dropped": s["dropped"],
                              "settled_force_ratio": s["settled_force_ratio"], "slip_fraction": s["slip_fraction"],
                              "peak_force": s["peak_force"]})
            trace = p.parent / "trace.csv"
            if trace.exists():
                trows = read_csv(trace)
                cols = ["t", "disp_y", "ext_y"] + [c for c in trows[0] if c.startswith("force_")]
                safe = name.replace("/", "_").replace(".", "run")
                write_csv(data_dir / f"forces_{safe}.csv", trows, cols)
        lines += _md_table(["run", "object", "fingers", "variant", "max disp (mm)", "dropped", "force / F*",
                            "slip fraction", "peak force (N)"], table) + [""]
        write_csv(data_dir / "runs.csv", plot_rows)
        found += len(runs)

    sweeps = [p for p in csvs if _is_sweep_csv(p)]
    if sweeps:
        lines += ["## Sweeps", ""]
        data_dir.mkdir(parents=True, exist_ok=True)
        for p in sweeps:
            rows = read_csv(p)
            cells: dict[tuple[int, str], list[dict]] = {}
            for r in rows:
                cells.setdefault((int(r["fingers"]), r["object"]), []).append(r)
            table, plot_rows = [], []
            for (n, o), rs in sorted(cells.items()):
                succ = float(np.mean([int(r["success"]) for r in rs]))
                disp = float(np.max([float(r["max_displacement"]) for r in rs])) * 1e3
                ratio = float(np.mean([float(r["settled_force_ratio"]) for r in rs]))
                table.append([n, o, len(rs), succ, disp, ratio])
                plot_rows.append({"fingers": n, "object": o, "runs": len(rs), "success_rate": succ,
                                  "max_displacement_mm": disp, "mean_force_ratio": ratio})
            total = float(np.mean([int(r["success"]) for r in rows]))
            lines += [f"`{p.relative_to(root)}`: {len(rows)} runs, success rate {total:.3f}", ""]
            lines += _md_table(["fingers", "object", "runs", "success rate", "max disp (mm)", "mean force / F*"],
                               table) + [""]
            write_csv(data_dir / f"sweep_{p.stem}.csv", plot_rows)
        found += len(sweeps)

    if not found:
        raise UsageError(f"nothing to report in {root}: no manifest.csv, evaluation CSV, report.json or sweep CSV")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines).rstrip() + "\n")
    print(f"report on {found} artifact(s) -> {out}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gripsim", description="Tactile slip prediction and per-finger grip stabilization.")
    p.add_argument("--config", help=f"YAML run config (default: ${CONFIG_ENV}, else built-in defaults)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    # --config is also accepted after the subcommand; SUPPRESS keeps an absent one from clearing the global value
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML run config")

    s = sub.add_parser("collect", parents=[common], help="run the data collection campaign")
    s.add_argument("--out", required=True, help="output directory for trial JSONL files and manifest.csv")

    s = sub.add_parser("train", parents=[common], help="train a slip predictor on a collected campaign")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="model JSON path")
    s.add_argument("--tau-f", type=int, default=None, help="prediction horizon in frames (default: config)")

    s = sub.add_parser("eval", parents=[common], help="evaluate a model on its held-out finger-trials")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="metrics CSV path")
    s.add_argument("--all", action="store_true", help="evaluate on every finger-trial instead of the held-out split")

    s = sub.add_parser("simulate", parents=[common], help="closed-loop stabilization run")
    s.add_argument("--model", required=True)
    s.add_argument("--object", required=True)
    s.add_argument("--fingers", type=int, required=True)
    s.add_argument("--disturbance", default="default", help="schedule name or YAML file")
    s.add_argument("--out", required=True)
    s.add_argument("--duration", type=float, default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--partner", choices=sorted(harness.PARTNER_SCENARIOS), default=None,
                   help="scripted partner-finger scenario (single robot finger)")

    s = sub.add_parser("sweep", parents=[common], help="grid of stabilization runs")
    s.add_argument("--grid", required=True, help="YAML grid file")
    s.add_argument("--out", required=True, help="metrics CSV path")

    s = sub.add_parser("report", parents=[common], help="markdown tables and plot-ready CSVs from existing outputs")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True, help="markdown path")
    return p


COMMANDS = {"collect": cmd_collect, "train": cmd_train, "eval": cmd_eval, "simulate": cmd_simulate,
            "sweep": cmd_sweep, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args.config)
        if args.command == "train" and args.tau_f is None:
            args.tau_f = cfg.classifier.tau_f
        return COMMANDS[args.command](args, cfg)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level guard turns any crash into exit code 2
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
