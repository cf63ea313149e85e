"""Closed-loop grip stabilization experiments.

Every finger runs its own :class:`FingerController` on its own sensor
frames. The only coupling between fingers is the shared object inside
:func:`physics.step`. Controllers tick at their sensor's frame rate and the
physics at ``dt`` with the last command held in between. Within a tick all
controllers read the same pre-step state and the commands are applied
together, so the order they are ticked in does not matter.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .classifier import SlipModel
from .controller import FingerController
from .core import RunConfig, fork_rng, get_variant, write_csv
from .physics import ObjectSpec, get_object, layout, make_world, min_stabilizing_force, step
from .sensor import sample_sensor, synth_frame

log = logging.getLogger(__name__)

DROP_THRESHOLD = 0.030  # m
RELEASE_START = 1.5  # s; object is handed over from here...
RELEASE_RAMP = 6.0  # ...with gravity phased in over this long
SETTLE_AFTER = 5.0  # s a disturbance (or the handover) keeps a window out of "settled"
VARIANT_FOR_FINGERS = {1: "BioTac", 2: "BioTac", 3: "BioTac", 4: "BioTac", 5: "BioTacSP"}


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class Disturbance:
    start: float  # s
    end: float
    force: tuple[float, float]  # N on the object

    def __post_init__(self):
        if not self.end > self.start >= 0:
            raise ValueError("disturbance needs 0 <= start < end")
        if not all(math.isfinite(f) for f in self.force):
            raise ValueError("disturbance force must be finite")


@dataclass(frozen=True)
class PartnerPush:
    """A partner finger clamped opposite the robot finger, pushing the object along the load axis.

    The push ramps linearly from ``f_start`` to ``f_end`` (N, negative is
    down) between ``start`` and ``end`` and holds ``f_end`` afterwards until
    the next entry.
    """

    start: float
    end: float
    f_start: float
    f_end: float

    def force(self, t: float) -> float:
        if t <= self.start:
            return self.f_start
        if t >= self.end:
            return self.f_end
        return self.f_start + (self.f_end - self.f_start) * (t - self.start) / (self.end - self.start)


@dataclass(frozen=True)
class DisturbanceSchedule:
    pulses: tuple[Disturbance, ...] = ()
    partner: tuple[PartnerPush, ...] = ()

    def force(self, t: float) -> tuple[float, float]:
        fx = fy = 0.0
        for d in self.pulses:
            if d.start <= t < d.end:
                fx += d.force[0]
                fy += d.force[1]
        active = [p for p in self.partner if p.start <= t]
        if active:
            fy += active[-1].force(t)
        return fx, fy

    def check(self, duration: float) -> None:
        for d in self.pulses:
            if d.end > duration:
                raise HarnessError(f"disturbance [{d.start}, {d.end}] s runs past the {duration} s run")
        for p in self.partner:
            if p.start > duration:
                raise HarnessError(f"partner entry at {p.start} s starts after the {duration} s run")

    def quiet_mask(self, times: np.ndarray) -> np.ndarray:
        """True where no disturbance is active or was active within SETTLE_AFTER seconds."""
        mask = times >= RELEASE_START + RELEASE_RAMP + SETTLE_AFTER
        for d in self.pulses:
            mask &= ~((times >= d.start) & (times < d.end + SETTLE_AFTER))
        return mask


SCHEDULES = {
    "none": DisturbanceSchedule(),
    "default": DisturbanceSchedule(pulses=(
        Disturbance(15.0, 17.0, (0.0, -1.0)),  # push down
        Disturbance(20.0, 21.0, (0.5, 0.0)),  # lateral shove
    )),
}


def schedule_from_dict(d: Mapping) -> DisturbanceSchedule:
    pulses = tuple(Disturbance(float(p["start"]), float(p["end"]), (float(p["force"][0]), float(p["force"][1])))
                   for p in d.get("pulses", ()))
    partner = tuple(PartnerPush(float(p["start"]), float(p["end"]), float(p["f_start"]), float(p["f_end"]))
                    for p in d.get("partner", ()))
    return DisturbanceSchedule(pulses, partner)


def get_schedule(ref: str | DisturbanceSchedule | None) -> DisturbanceSchedule:
    if ref is None:
        return SCHEDULES["none"]
    if isinstance(ref, DisturbanceSchedule):
        return ref
    if ref in SCHEDULES:
        return SCHEDULES[ref]
    path = Path(ref)
    if path.exists():
        return schedule_from_dict(yaml.safe_load(path.read_text()) or {})
    raise HarnessError(f"unknown disturbance schedule {ref!r}; use one of {sorted(SCHEDULES)} or a YAML file")


@dataclass
class RunReport:
    summary: dict
    times: np.ndarray  # control tick times (s)
    forces: np.ndarray  # (ticks, fingers) normal force
    stats: np.ndarray  # (ticks, fingers) slip statistic l
    commands: np.ndarray  # (ticks, fingers) commanded speed
    labels: list[list[str]]  # per tick, per finger predicted label
    displacement: np.ndarray  # (ticks, 2) object displacement
    sliding: np.ndarray  # (ticks,) fraction of physics steps since previous tick with the object sliding
    external: np.ndarray  # (ticks, 2) disturbance plus partner force on the object (N)
    audit: list[tuple[int, int, int]] = field(default_factory=list)  # (tick, controller finger, frame finger)

    def trace_rows(self) -> list[dict]:
        rows = []
        n = self.forces.shape[1]
        for k, t in enumerate(self.times):
            row = {"t": float(t), "disp_x": float(self.displacement[k, 0]), "disp_y": float(self.displacement[k, 1]),
                   "sliding": float(self.sliding[k]), "ext_x": float(self.external[k, 0]),
                   "ext_y": float(self.external[k, 1])}
            for i in range(n):
                row[f"force_{i}"] = float(self.forces[k, i])
                row[f"l_{i}"] = float(self.stats[k, i])
                row[f"cmd_{i}"] = float(self.commands[k, i])
                row[f"label_{i}"] = self.labels[k][i]
            rows.append(row)
        return rows

    def log_records(self) -> list[dict]:
        """Per tick, per finger controller record: statistic, label, command, normal force."""
        return [{"t": float(t), "finger": i, "l": float(self.stats[k, i]), "label": self.labels[k][i],
                 "command": float(self.commands[k, i]), "normal_force": float(self.forces[k, i])}
                for k, t in enumerate(self.times) for i in range(self.forces.shape[1])]

    def save(self, out_dir: str | Path) -> None:
        """Write report.json, trace.csv and the controller log controller.jsonl."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.summary, indent=1, sort_keys=True) + "\n")
        write_csv(out / "trace.csv", self.trace_rows())
        with open(out / "controller.jsonl", "w") as fh:
            for rec in self.log_records():
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def _gravity_scale(t: float) -> float:
    if t < RELEASE_START:
        return 0.0
    return min(1.0, (t - RELEASE_START) / RELEASE_RAMP)


def run_stabilization(cfg: RunConfig, model: SlipModel, obj: ObjectSpec | str, finger_count: int,
                      disturbances: str | DisturbanceSchedule | None = "default", *,
                      duration: float | None = None, seed: int | None = None,
                      order: Sequence[int] | None = None, partner: bool = False,
                      normals: Sequence[tuple[float, float]] | None = None) -> RunReport:
    """Hold ``obj`` with ``finger_count`` independent slip controllers.

    ``order`` permutes the sequence controllers are ticked in (results must
    not depend on it). ``partner`` clamps an opposing partner contact on the
    far side of a single robot finger.
    """
    obj = get_object(obj) if isinstance(obj, str) else obj
    variant = get_variant(cfg.sensor_variant)
    if model.variant != variant.name:
        raise HarnessError(f"model was trained on {model.variant} features but the run uses {variant.name}")
    if model.layout.tau_h != cfg.classifier.tau_h:
        raise HarnessError(f"model window tau_h={model.layout.tau_h} differs from config tau_h={cfg.classifier.tau_h}")
    normals = tuple(normals) if normals is not None else layout(finger_count)
    if len(normals) != finger_count:
        raise HarnessError(f"{finger_count} fingers but {len(normals)} contact sites")
    duration = cfg.duration if duration is None else duration
    seed = cfg.seed if seed is None else seed
    schedule = get_schedule(disturbances)
    schedule.check(duration)
    order = list(range(finger_count)) if order is None else list(order)
    if sorted(order) != list(range(finger_count)):
        raise HarnessError("order must be a permutation of the finger ids")

    dt = cfg.dt
    substeps = max(1, round(variant.frame_period / dt))
    n_steps = int(round(duration / dt))
    world = make_world(obj, normals=normals, gap=0.001, wall=partner, wall_mu=obj.friction_mu if partner else 0.0,
                       gravity_scale=0.0)
    sensors = [sample_sensor(fork_rng(seed, f"sensor/model/{i}")) for i in range(finger_count)]
    noise = [fork_rng(seed, f"sensor/noise/{i}") for i in range(finger_count)]
    controllers = [FingerController(i, model, cfg.controller, site_normal=normals[i], approach=normals[i])
                   for i in range(finger_count)]

    world, states, _ = step(world, [0.0] * finger_count, 0.0)
    prev_states = list(states)
    commands = [0.0] * finger_count
    n_ticks = (n_steps + substeps - 1) // substeps
    times = np.empty(n_ticks)
    forces = np.empty((n_ticks, finger_count))
    stats = np.empty((n_ticks, finger_count))
    cmds = np.empty((n_ticks, finger_count))
    disp = np.empty((n_ticks, 2))
    ext = np.empty((n_ticks, 2))
    sliding = np.zeros(n_ticks)
    labels: list[list[str]] = []
    audit: list[tuple[int, int, int]] = []
    peak = np.zeros(finger_count)
    max_disp = 0.0
    pos = (0.0, 0.0)
    slid_steps = 0

    for k in range(n_steps):
        t = k * dt
        if k % substeps == 0:
            j = k // substeps
            if j > 0:
                sliding[j - 1] = slid_steps / substeps
            slid_steps = 0
            new_cmd = list(commands)
            for i in order:
                frame = synth_frame(states[i], variant, noise[i], t=j, model=sensors[i], previous=prev_states[i])
                new_cmd[i] = controllers[i].observe(frame)
                audit.append((j, controllers[i].finger_id, frame.finger))
            commands = new_cmd  # barrier: all fingers decided on the same pre-step state
            prev_states = list(states)
            times[j] = t
            forces[j] = [s.normal_force for s in states]
            stats[j] = [c.state.l for c in controllers]
            cmds[j] = commands
            disp[j] = pos
            ext[j] = schedule.force(t)
            labels.append([c.label.value for c in controllers])
        g = _gravity_scale(t)
        if world.gravity_scale != g:
            world = replace(world, gravity_scale=g)
        prev_y = pos[1]
        world, states, pos = step(world, commands, dt, external=schedule.force(t))
        if pos[1] != prev_y:
            slid_steps += 1
        for i, s in enumerate(states):
            if s.normal_force > peak[i]:
                peak[i] = s.normal_force
        d = math.hypot(*pos)
        if d > max_disp:
            max_disp = d
    sliding[n_ticks - 1] = slid_steps / substeps

    f_star = min_stabilizing_force(obj, normals, clamp_mu=world.wall_mu)
    quiet = schedule.quiet_mask(times)
    if quiet.any():
        settled_force = float(forces[quiet].mean())
        slip_fraction = float(sliding[quiet].mean())
    else:
        settled_force = float("nan")
        slip_fraction = float("nan")
    budget = obj.deformation_budget()
    summary = {
        "object": obj.id,
        "fingers": finger_count,
        "variant": variant.name,
        "tau_f": model.tau_f,
        "seed": seed,
        "duration": duration,
        "max_displacement": max_disp,
        "final_displacement": [pos[0], pos[1]],
        "dropped": bool(max_disp > DROP_THRESHOLD),
        "f_star": f_star,
        "settled_force": settled_force,
        "settled_force_per_finger": [float(forces[quiet, i].mean()) if quiet.any() else float("nan")
                                     for i in range(finger_count)],
        "settled_force_ratio": settled_force / f_star if f_star > 0 else float("nan"),
        "slip_fraction": slip_fraction,
        "slip_fraction_total": float(sliding.mean()),
        "peak_force": float(peak.max()),
        "peak_force_per_finger": peak.tolist(),
        "deformation_budget": budget,
        "within_budget": bool(peak.max() < budget),
        "cross_finger_reads": sum(1 for _, own, got in audit if own != got),
    }
    summary["success"] = bool(not summary["dropped"] and max_disp < DROP_THRESHOLD)
    return RunReport(summary, times, forces, stats, cmds, labels, disp, sliding, ext, audit)


# ---------------------------------------------------------------------------
# Partner finger

PARTNER_OBJECT = "box"
PARTNER_ONSET = 8.0  # s; partner joins once the handover has settled

PARTNER_SCENARIOS = {
    "constant": (DisturbanceSchedule(partner=(PartnerPush(PARTNER_ONSET, PARTNER_ONSET + 5.0, 0.0, -3.0),)), 40.0),
    "ramp": (DisturbanceSchedule(partner=(PartnerPush(PARTNER_ONSET, PARTNER_ONSET + 10.0, 0.0, -6.0),)), 25.0),
    "release": (DisturbanceSchedule(partner=(PartnerPush(PARTNER_ONSET, PARTNER_ONSET + 10.0, 0.0, -6.0),
                                             PartnerPush(25.0, 25.5, -6.0, 0.0))), 85.0),
}


def run_partner_stabilization(cfg: RunConfig, model: SlipModel, obj: ObjectSpec | str = PARTNER_OBJECT,
                              schedule: str | DisturbanceSchedule = "constant", *,
                              duration: float | None = None, seed: int | None = None) -> RunReport:
    """One robot finger holding ``obj`` against a scripted partner finger.

    The partner is a position-clamped contact opposite the robot finger
    (same friction as the object) that also pushes the object along the
    load axis following ``schedule``, which may name a
    :data:`PARTNER_SCENARIOS` entry.
    """
    if isinstance(schedule, str) and schedule in PARTNER_SCENARIOS:
        schedule, default_duration = PARTNER_SCENARIOS[schedule]
    else:
        schedule = get_schedule(schedule)
        default_duration = cfg.duration
    if not schedule.partner:
        raise HarnessError("partner run needs at least one partner entry in the schedule")
    return run_stabilization(cfg, model, obj, 1, schedule, partner=True, seed=seed,
                             duration=default_duration if duration is None else duration)


def partner_f_star(obj: ObjectSpec | str, push: float) -> float:
    """Robot force that just holds the object's weight plus a downward partner push."""
    obj = get_object(obj) if isinstance(obj, str) else obj
    return min_stabilizing_force(obj, 1, obj.weight + abs(push), clamp_mu=obj.friction_mu)


def max_drawdown(values: np.ndarray) -> float:
    """Largest drop below the running maximum (0 for a non-decreasing trace)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return 0.0
    return float(np.max(np.maximum.accumulate(values) - values))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def partner_checks(cfg: RunConfig, model: SlipModel, obj: ObjectSpec | str = PARTNER_OBJECT,
                   seed: int | None = None) -> list[CheckResult]:
    """Run the three scripted partner scenarios and judge each one.

    ``constant``: 3 N push; mean robot force once settled lies within
    [0.9, 1.5] of the force that balances weight plus push, and no drop.
    ``ramp``: 0 to 6 N over 10 s; the force trace during the ramp never
    falls more than 1 % of its peak below its running maximum.
    ``release``: 6 N push removed; force then falls (ends below its value
    at release) toward, and never below, the weight-only balance force.
    """
    obj = get_object(obj) if isinstance(obj, str) else obj
    out = []

    r = run_partner_stabilization(cfg, model, obj, "constant", seed=seed)
    push = PARTNER_SCENARIOS["constant"][0].partner[-1]
    f_bal = partner_f_star(obj, push.f_end)
    late = r.times >= push.end + SETTLE_AFTER
    mean_f = float(r.forces[late, 0].mean())
    ok = 0.9 * f_bal <= mean_f <= 1.5 * f_bal and not r.summary["dropped"]
    out.append(CheckResult("constant", ok, f"settled {mean_f:.3f} N vs balance {f_bal:.3f} N, "
                                           f"max displacement {r.summary['max_displacement'] * 1e3:.2f} mm"))

    r = run_partner_stabilization(cfg, model, obj, "ramp", seed=seed)
    push = PARTNER_SCENARIOS["ramp"][0].partner[-1]
    during = (r.times >= push.start) & (r.times <= push.end)
    f = r.forces[during, 0]
    dd = max_drawdown(f)
    ok = dd <= 0.01 * f.max() and f[-1] > f[0] and not r.summary["dropped"]
    out.append(CheckResult("ramp", ok, f"force {f[0]:.3f} -> {f[-1]:.3f} N, largest dip {dd:.4f} N"))

    r = run_partner_stabilization(cfg, model, obj, "release", seed=seed)
    off = PARTNER_SCENARIOS["release"][0].partner[-1]
    f_res = partner_f_star(obj, 0.0)
    after = r.times >= off.end
    f = r.forces[after, 0]
    ok = (f[-1] < f[0] and f.min() >= f_res and abs(f[-1] - f_res) < abs(f[0] - f_res)
          and not r.summary["dropped"])
    out.append(CheckResult("release", ok, f"force {f[0]:.3f} -> {f[-1]:.3f} N, residual balance {f_res:.3f} N"))
    return out


# ---------------------------------------------------------------------------
# Sweeps

SWEEP_COLUMNS = ["fingers", "object", "tau_f", "seed", "variant", "success", "dropped", "max_displacement",
                 "settled_force_ratio", "slip_fraction", "peak_force", "deformation_budget", "within_budget"]


def sweep(cfg: RunConfig, models: Mapping[tuple[str, int], SlipModel], *,
          fingers: Sequence[int] = (2, 3, 4, 5), objects: Sequence[str] = ("ball", "box", "tuna_can", "plastic_cup"),
          tau_fs: Sequence[int] | None = None, seeds: Sequence[int] = (0, 1, 2),
          disturbances: str | DisturbanceSchedule | None = None, duration: float | None = None,
          out_csv: str | Path | None = None) -> list[dict]:
    """One stabilization run per (fingers, object, tau_f, seed) cell.

    ``models`` maps (sensor variant, tau_f) to a trained model; the variant
    for each finger count comes from :data:`VARIANT_FOR_FINGERS`.
    """
    tau_fs = (cfg.classifier.tau_f,) if tau_fs is None else tuple(tau_fs)
    disturbances = cfg.disturbance if disturbances is None else disturbances
    for n in fingers:
        if not 1 <= n <= 5:
            raise HarnessError(f"finger count must be in 1..5 (got {n})")
        for tf in tau_fs:
            if (VARIANT_FOR_FINGERS[n], tf) not in models:
                raise HarnessError(f"no model for {VARIANT_FOR_FINGERS[n]} with tau_f={tf}")
    for o in objects:
        get_object(o)
    rows = []
    for n in fingers:
        variant = VARIANT_FOR_FINGERS[n]
        for o in objects:
            for tf in tau_fs:
                for seed in seeds:
                    run_cfg = replace(cfg, seed=seed, finger_count=n, sensor_variant=variant, object_id=o)
                    s = run_stabilization(run_cfg, models[(variant, tf)], o, n, disturbances, duration=duration).summary
                    row = {"fingers": n, "object": o, "tau_f": tf, "seed": seed, "variant": variant}
                    row.update({k: s[k] for k in SWEEP_COLUMNS if k in s})
                    rows.append(row)
                    log.info("sweep %s", row)
    if out_csv is not None:
        write_csv(out_csv, rows, SWEEP_COLUMNS)
    return rows
