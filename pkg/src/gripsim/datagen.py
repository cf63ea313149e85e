"""Simulated tactile data collection on a clamped object.

A trial runs three fingers at once through: idle (contactless, used for
grounding), flex until contact, PID to a target pressure, then surveying
motions along the surface in piecewise-constant random segments. Each frame
is labelled automatically from grounded pressure and fingertip travel, and
ground truth from the simulator is kept alongside.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .controller import PID
from .core import (CLASSES, CLASS_INDEX, FrameRecord, Label, RunConfig, fork_rng, get_variant,
                   read_jsonl, write_csv, write_jsonl)
from .features import extract_stream, ground, to_stream
from .physics import get_object, layout, make_world, step
from .sensor import sample_sensor, synth_frame

log = logging.getLogger(__name__)

ALLOWED_PRESSURES = (20.0, 50.0, 80.0)
IDLE_TIME = 1.0
APPROACH_SPEED = 0.005
START_GAP = 0.002
CONTACT_TIMEOUT = 3.0
SURVEY_START = 4.0


class ContactTimeout(RuntimeError):
    pass


@dataclass(frozen=True)
class LabelingRule:
    t_contact: float = 10.0
    delta_x: float = 2e-5
    window: float = 0.03  # s of fingertip travel considered

    def __post_init__(self):
        if not (self.t_contact > 0 and self.delta_x > 0 and self.window > 0):
            raise ValueError("t_contact, delta_x and window must be > 0")


@dataclass(frozen=True)
class TrialSpec:
    object_id: str
    pressure: float
    seed: int
    fingers: tuple[int, ...] = (0, 1, 2)
    survey_speed: tuple[float, float] = (0.001, 0.005)
    segment: float = 0.5
    dwell_prob: float = 0.5
    duration: float = 30.0
    variant: str = "BioTac"
    dt: float = 0.001
    rule: LabelingRule = field(default_factory=LabelingRule)
    trial_id: str = "trial"

    def __post_init__(self):
        if self.pressure not in ALLOWED_PRESSURES:
            raise ValueError(f"target pressure must be one of {ALLOWED_PRESSURES} (got {self.pressure})")
        if len(self.fingers) != 3:
            raise ValueError("data collection uses exactly three fingers")
        if self.duration <= SURVEY_START:
            raise ValueError(f"trial duration must exceed the {SURVEY_START} s setup phase")
        lo, hi = self.survey_speed
        if not 0 <= lo <= hi:
            raise ValueError("survey speed range must satisfy 0 <= lo <= hi")


@dataclass
class TrialResult:
    spec: TrialSpec
    records: dict[int, list[FrameRecord]]
    survey_start: int  # first frame index of the surveying phase
    contact_frame: dict[int, int]


def auto_label(p_dc: float, displacement: float, rule: LabelingRule) -> Label:
    """Label one frame from grounded pressure and fingertip travel over the label window."""
    if p_dc <= rule.t_contact:
        return Label.NO_CONTACT
    if displacement > rule.delta_x:
        return Label.SLIP
    return Label.CONTACT


def surface_travel(a: Sequence[float], b: Sequence[float], normal: Sequence[float]) -> float:
    """Fingertip travel from ``a`` to ``b`` along the object surface.

    The component along the contact normal is indentation, not sliding.
    """
    dx, dy = b[0] - a[0], b[1] - a[1]
    nx, ny = normal
    return abs(-ny * dx + nx * dy)


def _segment_speeds(rng: np.random.Generator, spec: TrialSpec, n_segments: int) -> list[float]:
    lo, hi = spec.survey_speed
    out = []
    for _ in range(n_segments):
        dwell = rng.random() < spec.dwell_prob
        mag = rng.uniform(lo, hi)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        out.append(0.0 if dwell else sign * mag)
    return out


def run_trial(spec: TrialSpec) -> TrialResult:
    variant = get_variant(spec.variant)
    obj = get_object(spec.object_id)
    n = len(spec.fingers)
    world = make_world(obj, normals=layout(3), gap=START_GAP, fixed=True)
    substeps = max(1, round(variant.frame_period / spec.dt))
    frame_dt = substeps * spec.dt
    n_frames = int(round(spec.duration / frame_dt))
    survey_frame = int(round(SURVEY_START / frame_dt))
    idle_frames = int(round(IDLE_TIME / frame_dt))
    timeout_frame = int(round((IDLE_TIME + CONTACT_TIMEOUT) / frame_dt))
    label_lag = max(1, int(round(spec.rule.window / frame_dt)))
    seg_frames = max(1, int(round(spec.segment / frame_dt)))

    sensors = [sample_sensor(fork_rng(spec.seed, f"sensor/model/{f}")) for f in spec.fingers]
    noise = [fork_rng(spec.seed, f"sensor/noise/{f}") for f in spec.fingers]
    n_seg = (n_frames - survey_frame) // seg_frames + 1
    speeds = [_segment_speeds(fork_rng(spec.seed, f"survey/{f}"), spec, n_seg) for f in spec.fingers]
    pids = [PID() for _ in range(n)]

    phase = ["idle"] * n
    contact_frame: dict[int, int] = {}
    normal_cmd = [0.0] * n
    tan_cmd = [0.0] * n
    records: dict[int, list[FrameRecord]] = {f: [] for f in spec.fingers}
    baseline = [0.0] * n
    positions: list[list[tuple[float, float]]] = [[] for _ in range(n)]

    states = None
    prev_states = None
    for j in range(n_frames):
        if states is None:
            world, states, _ = step(world, normal_cmd, 0.0, tangential_commands=tan_cmd)
        for i, f in enumerate(spec.fingers):
            c = states[i]
            cs = type(c)(finger_id=f, in_contact=c.in_contact, normal_force=c.normal_force,
                         tangential_load=c.tangential_load, slip_speed=c.slip_speed,
                         fingertip_pos=c.fingertip_pos, contact_normal=c.contact_normal)
            prev = None if prev_states is None else prev_states[i]
            frame = synth_frame(cs, variant, noise[i], t=j, model=sensors[i], previous=prev)
            if j == 0:
                baseline[i] = frame.p_dc
            p = frame.p_dc - baseline[i]
            positions[i].append(cs.fingertip_pos)
            a = positions[i][max(0, j - label_lag)]
            disp = surface_travel(a, cs.fingertip_pos, cs.contact_normal)
            records[f].append(FrameRecord(frame, cs, auto_label(p, disp, spec.rule)))

            # phase machine for the next frame's commands
            if phase[i] == "idle" and j + 1 >= idle_frames:
                phase[i] = "approach"
            elif phase[i] == "approach" and p > spec.rule.t_contact:
                phase[i] = "pid"
                contact_frame[f] = j
            if phase[i] == "approach" and j + 1 >= timeout_frame:
                raise ContactTimeout(f"{spec.trial_id}: finger {f} found no contact within {CONTACT_TIMEOUT} s")
            if phase[i] == "idle":
                normal_cmd[i] = 0.0
            elif phase[i] == "approach":
                normal_cmd[i] = APPROACH_SPEED
            else:
                normal_cmd[i] = pids[i].step(p, spec.pressure, frame_dt)
            if j + 1 >= survey_frame and phase[i] == "pid":
                tan_cmd[i] = speeds[i][(j + 1 - survey_frame) // seg_frames]
            else:
                tan_cmd[i] = 0.0
        if j + 1 == survey_frame and len(contact_frame) < n:
            missing = [f for f in spec.fingers if f not in contact_frame]
            raise ContactTimeout(f"{spec.trial_id}: fingers {missing} never reached the pressure phase")
        prev_states = states
        for _ in range(substeps):
            world, states, _ = step(world, normal_cmd, spec.dt, tangential_commands=tan_cmd)
    return TrialResult(spec, records, survey_frame, contact_frame)


# ---------------------------------------------------------------------------
# Training set assembly

def stream_examples(records: Sequence[FrameRecord], tau_h: int, tau_f: int) -> tuple[np.ndarray, np.ndarray]:
    """(features, label index) pairs for one finger-trial.

    The window ending at frame t is paired with the label recorded at
    t + tau_f; grounding uses the trial's first (contactless) frame.
    """
    L = len(records)
    if L < tau_h + tau_f:
        raise ValueError(f"stream of {L} frames is shorter than tau_h + tau_f = {tau_h + tau_f}")
    s = ground(to_stream([r.frame for r in records]))
    X = extract_stream(s, tau_h)[: L - tau_h - tau_f + 1]
    y = np.array([CLASS_INDEX[r.label] for r in records[tau_h - 1 + tau_f:]], dtype=np.int64)
    return X, y


def build_training_set(streams: Iterable[Sequence[FrameRecord]], tau_h: int, tau_f: int,
                       ) -> tuple[np.ndarray, np.ndarray]:
    Xs, ys = [], []
    for recs in streams:
        X, y = stream_examples(recs, tau_h, tau_f)
        Xs.append(X)
        ys.append(y)
    if not Xs:
        raise ValueError("no streams given")
    return np.concatenate(Xs), np.concatenate(ys)


def class_counts(records: Sequence[FrameRecord], gt: bool = False) -> dict[str, int]:
    counts = {c.value: 0 for c in CLASSES}
    for r in records:
        counts[(r.gt_label if gt else r.label).value] += 1
    return counts


def label_agreement(records: Iterable[FrameRecord]) -> float:
    total = agree = 0
    for r in records:
        total += 1
        agree += r.label is r.gt_label
    return agree / total


# ---------------------------------------------------------------------------
# Campaign

def campaign_specs(cfg: RunConfig) -> list[TrialSpec]:
    cp = cfg.campaign
    rule = LabelingRule(cp.t_contact, cp.delta_x, cp.label_window)
    specs = []
    for obj in cp.objects:
        for p in cp.pressures:
            for k in range(cp.trials_per_cell):
                tid = f"{obj}_p{int(p)}_{k}"
                seed = int(fork_rng(cfg.seed, f"campaign/{tid}").integers(2**31))
                specs.append(TrialSpec(object_id=obj, pressure=float(p), seed=seed, fingers=tuple(cp.fingers),
                                       survey_speed=tuple(cp.survey_speed), segment=cp.segment,
                                       dwell_prob=cp.dwell_prob, duration=cp.duration,
                                       variant=cfg.sensor_variant, dt=cfg.dt, rule=rule, trial_id=tid))
    return specs


MANIFEST_COLUMNS = ["trial_id", "finger", "object", "pressure", "seed", "variant", "frames",
                    "slip", "contact", "no_contact", "file"]


def run_campaign(cfg: RunConfig, out_dir: str | Path | None = None) -> tuple[list[TrialResult], list[dict]]:
    """Run every trial of the campaign; optionally write trial JSONL files and the manifest."""
    results, manifest = [], []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for spec in campaign_specs(cfg):
        res = run_trial(spec)
        results.append(res)
        fname = f"{spec.trial_id}.jsonl"
        if out is not None:
            n_frames = len(next(iter(res.records.values())))
            ordered = (res.records[f][j] for j in range(n_frames) for f in spec.fingers)
            write_jsonl(out / fname, ordered)
        for f in spec.fingers:
            counts = class_counts(res.records[f])
            manifest.append({"trial_id": spec.trial_id, "finger": f, "object": spec.object_id,
                             "pressure": spec.pressure, "seed": spec.seed, "variant": spec.variant,
                             "frames": len(res.records[f]), **counts, "file": fname})
        log.info("trial %s done", spec.trial_id)
    if out is not None:
        write_csv(out / "manifest.csv", manifest, MANIFEST_COLUMNS)
    return results, manifest


def load_campaign(data_dir: str | Path) -> dict[tuple[str, int], list[FrameRecord]]:
    """Finger-trial streams keyed by (trial_id, finger), in manifest order."""
    from .core import read_csv
    d = Path(data_dir)
    manifest_path = d / "manifest.csv"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path} not found; run `collect` first")
    rows = read_csv(manifest_path)
    streams: dict[tuple[str, int], list[FrameRecord]] = {}
    cache: dict[str, dict[int, list[FrameRecord]]] = {}
    for row in rows:
        fname = row["file"]
        if fname not in cache:
            per: dict[int, list[FrameRecord]] = {}
            for rec in read_jsonl(d / fname):
                per.setdefault(rec.frame.finger, []).append(rec)
            cache = {fname: per}
        streams[(row["trial_id"], int(row["finger"]))] = cache[fname][int(row["finger"])]
    return streams


def split_keys(keys: Sequence, test_fraction: float = 0.2, seed: int = 0) -> tuple[list, list]:
    """Deterministic hold-out split at finger-trial granularity."""
    keys = list(keys)
    rng = fork_rng(seed, "split")
    order = rng.permutation(len(keys))
    n_test = max(1, int(round(test_fraction * len(keys))))
    test = sorted(order[:n_test].tolist())
    train = sorted(order[n_test:].tolist())
    return [keys[i] for i in train], [keys[i] for i in test]
