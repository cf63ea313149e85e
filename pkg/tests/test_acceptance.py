"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal
summary. Run this file on its own with ``python3 tests/test_acceptance.py``
or ``pytest tests/test_acceptance.py``.
"""

import math
import sys
import time
from dataclasses import replace

import numpy as np
import pytest
import yaml

import oracles
from conftest import ACCEPTANCE_LINES, timed_cli
from gripsim import cli, datagen
from gripsim.classifier import evaluate, fit_threshold_baseline, loss_and_grad
from gripsim.controller import FingerControllerState, command_speed, command_velocity, update_statistic
from gripsim.core import ControllerParams, Label, RunConfig, read_csv
from gripsim.harness import partner_checks, run_stabilization
from gripsim.physics import get_object, min_stabilizing_force


def record(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
    print(ACCEPTANCE_LINES[-1])
    assert passed, detail


def test_1_campaign_arithmetic(default_collect):
    rows = read_csv(default_collect.path / "manifest.csv")
    trials = {r["trial_id"] for r in rows}
    files = sorted(default_collect.path.glob("*.jsonl"))
    ok = (default_collect.code == 0 and len(trials) == 18 and len(rows) == 54 and len(files) == 18
          and default_collect.seconds < 120.0)
    record(1, "campaign arithmetic", ok,
           f"{len(trials)} trials, {len(rows)} finger-trials, {len(files)} files in {default_collect.seconds:.1f} s "
           f"(need 18 / 54, < 120 s)")


def test_2_classifier_quality(default_collect, default_train, default_eval, biotac_model):
    metrics = {r["class"]: r for r in read_csv(default_eval.path)}
    accuracy = float(metrics["accuracy"]["precision"])
    slip_recall = float(metrics["slip"]["recall"])

    streams = datagen.load_campaign(default_collect.path)
    test_keys = [(t, int(f)) for t, f in biotac_model.meta["test_keys"]]
    train_keys = [k for k in streams if k not in set(test_keys)]
    X, y = datagen.build_training_set([streams[k] for k in train_keys], 10, 3)
    Xt, yt = datagen.build_training_set([streams[k] for k in test_keys], 10, 3)
    baseline = fit_threshold_baseline(X, y, slot=0)
    base_acc = float(np.mean(baseline.predict(Xt) == yt))
    direct = evaluate(biotac_model, Xt, yt)
    seconds = default_train.seconds + default_eval.seconds
    ok = (accuracy >= 0.90 and slip_recall >= 0.85 and base_acc <= 0.80 and biotac_model.tau_f == 3
          and direct.accuracy == accuracy and seconds < 60.0)
    record(2, "classifier quality", ok,
           f"accuracy {accuracy:.4f} (>= 0.90), slip recall {slip_recall:.4f} (>= 0.85), p_dc-threshold "
           f"baseline {base_acc:.4f} (<= 0.80), train+eval {seconds:.1f} s (< 60 s)")


def test_3_gradient_check():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        n, d = int(rng.integers(5, 15)), int(rng.integers(2, 6))
        X = rng.standard_normal((n, d))
        y = np.concatenate([np.arange(3), rng.integers(0, 3, n - 3)])
        w = rng.uniform(0.2, 3.0, n)
        W, b = rng.standard_normal((3, d)), rng.standard_normal(3)
        l2 = float(rng.uniform(0, 0.1))
        _, gW, gb = loss_and_grad(W, b, X, y, w, l2)
        f = lambda: oracles.weighted_ce_loss(W, b, X, y, w, l2)  # noqa: E731
        num = np.concatenate([oracles.central_difference(f, W).ravel(), oracles.central_difference(f, b)])
        ana = np.concatenate([gW.ravel(), gb])
        worst = max(worst, float(np.linalg.norm(ana - num) / np.linalg.norm(num)))
    record(3, "gradient check", worst < 1e-5, f"worst relative error {worst:.2e} over 20 instances (< 1e-5)")


def test_4_controller_units():
    p = ControllerParams()
    s0 = FingerControllerState(params=p)
    checks = {
        "slip adds s_slip": update_statistic(s0, Label.SLIP).l == 0.2,
        "no_contact holds": update_statistic(s0, Label.NO_CONTACT).l == 0.0,
        "contact subtracts": update_statistic(replace(s0, l=1.0), Label.CONTACT).l == 1.0 - 0.02,
        "upper clamp": update_statistic(replace(s0, l=5.0), Label.SLIP).l == 5.0,
        "lower clamp": update_statistic(replace(s0, l=-5.0), Label.CONTACT).l == -5.0,
        "speed is beta at l=0": command_speed(s0) == p.beta,
        "beta 0.001 at l=0": np.array_equal(
            command_velocity(FingerControllerState(params=replace(p, beta=0.001)), (0.0, -1.0)), [0.0, -0.001]),
        "floor speed": command_speed(replace(s0, l=-5.0)) == p.beta * math.exp(-5.0),
        "ceiling speed": command_speed(replace(s0, l=5.0)) == p.beta * math.exp(5.0),
        "alpha 2, l 0.5": math.isclose(command_speed(FingerControllerState(l=0.5, params=replace(p, alpha=2.0))),
                                       p.beta * math.e, rel_tol=1e-15),
    }
    try:
        command_velocity(s0, (1.0, 0.1))
        checks["non-unit normal rejected"] = False
    except ValueError:
        checks["non-unit normal rejected"] = True
    failed = [k for k, v in checks.items() if not v]
    record(4, "slip statistic and velocity law", not failed,
           f"{len(checks) - len(failed)}/{len(checks)} cases" + (f", failed: {failed}" if failed else ""))


def test_5_equilibrium(biotac_model):
    block = get_object("block")
    f_star = min_stabilizing_force(block, 2)
    t0 = time.perf_counter()
    r = run_stabilization(RunConfig(), biotac_model, block, 2, "none", duration=60.0)
    seconds = time.perf_counter() - t0
    s = r.summary
    per_finger = s["settled_force_per_finger"]
    ratios = [f / f_star for f in per_finger]
    ok = (abs(f_star - 4.905) < 1e-12 and all(1.0 <= q <= 1.5 for q in ratios) and s["slip_fraction"] < 0.02
          and seconds < 60.0)
    record(5, "equilibrium force", ok,
           f"F* {f_star:.3f} N, settled per-finger force / F* = {', '.join(f'{q:.3f}' for q in ratios)} "
           f"(in [1, 1.5]), slip fraction {s['slip_fraction']:.4f} (< 0.02), {seconds:.1f} s")


def test_6_multi_finger_generalization(default_train, sp_model_path, pipeline_dir):
    grid = pipeline_dir / "acceptance_grid.yaml"
    grid.write_text(yaml.safe_dump({
        "fingers": [2, 3, 4, 5], "objects": ["ball", "box", "tuna_can", "plastic_cup"], "seeds": [0, 1, 2],
        "models": [str(default_train.path), str(sp_model_path)], "disturbance": "default"}))
    out = pipeline_dir / "acceptance_sweep.csv"
    code, seconds = timed_cli(["sweep", "--grid", str(grid), "--out", str(out)])
    rows = read_csv(out) if code == 0 else []
    ok_runs = [r for r in rows if r["success"] == "1" and r["dropped"] == "0"
               and float(r["max_displacement"]) < 0.030]
    rate = len(ok_runs) / len(rows) if rows else 0.0
    cup5 = [r for r in rows if r["fingers"] == "5" and r["object"] == "plastic_cup"]
    cup_ok = len(cup5) == 3 and all(r["within_budget"] == "1" for r in cup5)
    unseen = [r for r in rows if r["object"] in ("tuna_can", "plastic_cup")]
    seen = [r for r in rows if r["object"] in ("ball", "box")]
    rate_of = lambda rs: sum(r in ok_runs for r in rs) / len(rs) if rs else 0.0  # noqa: E731
    ok = len(rows) == 48 and rate >= 0.90 and cup_ok
    peak = max((float(r["peak_force"]) for r in cup5), default=float("nan"))
    record(6, "multi-finger generalization", ok,
           f"{len(ok_runs)}/{len(rows)} runs held ({rate:.3f}, >= 0.90; train objects {rate_of(seen):.3f}, "
           f"unseen {rate_of(unseen):.3f}), 5-finger cup peak {peak:.2f} N vs budget "
           f"{get_object('plastic_cup').deformation_budget():.1f} N, {seconds:.0f} s")


def test_7_independence(biotac_model):
    cfg = RunConfig()
    base = run_stabilization(cfg, biotac_model, "tuna_can", 4, "default")
    identical = True
    for order in ([3, 2, 1, 0], [1, 3, 0, 2]):
        other = run_stabilization(cfg, biotac_model, "tuna_can", 4, "default", order=order)
        identical &= all(getattr(base, k).tobytes() == getattr(other, k).tobytes()
                         for k in ("forces", "stats", "commands", "displacement", "sliding"))
        identical &= base.labels == other.labels
    reads = base.summary["cross_finger_reads"]
    consumed = {i: {got for _, own, got in base.audit if own == i} for i in range(4)}
    ok = reads == 0 and identical and all(consumed[i] == {i} for i in range(4))
    record(7, "independence audit", ok,
           f"{reads} cross-finger reads over {len(base.audit)} frame deliveries, "
           f"trajectories {'bit-identical' if identical else 'differ'} under 2 tick-order permutations")


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_8_determinism(default_collect, default_train, pipeline_dir):
    again = pipeline_dir / "data_again"
    assert cli.main(["collect", "--out", str(again)]) == 0
    same_data = _tree_bytes(default_collect.path) == _tree_bytes(again)

    model_again = pipeline_dir / "model_again.json"
    assert cli.main(["train", "--data", str(again), "--out", str(model_again), "--tau-f", "3"]) == 0
    same_model = default_train.path.read_bytes() == model_again.read_bytes()

    reports = []
    for k, model in enumerate((default_train.path, model_again)):
        out = pipeline_dir / f"sim_{k}"
        assert cli.main(["simulate", "--model", str(model), "--object", "box", "--fingers", "3",
                         "--seed", "4", "--out", str(out)]) == 0
        assert cli.main(["report", "--in", str(out), "--out", str(pipeline_dir / f"sim_{k}.md")]) == 0
        reports.append(_tree_bytes(out))
    same_reports = reports[0] == reports[1]
    md = [(pipeline_dir / f"sim_{k}.md").read_text().splitlines()[1:] for k in range(2)]
    same_md = md[0] == md[1]
    ok = same_data and same_model and same_reports and same_md
    record(8, "determinism", ok,
           f"dataset {'identical' if same_data else 'differs'} ({len(_tree_bytes(again))} files), model "
           f"{'identical' if same_model else 'differs'}, run reports {'identical' if same_reports else 'differ'}, "
           f"markdown {'identical' if same_md else 'differs'}")


def test_9_partner_finger(biotac_model):
    results = partner_checks(RunConfig(), biotac_model)
    ok = len(results) == 3 and all(r.passed for r in results)
    record(9, "partner finger", ok, "; ".join(f"{r.name} {'ok' if r.passed else 'FAILED'} ({r.detail})"
                                              for r in results))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
