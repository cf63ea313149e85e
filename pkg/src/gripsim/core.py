"""Shared domain types, seeded RNG forking, run configuration and file formats."""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np
import yaml


class ConfigError(ValueError):
    """Raised when a config file is malformed or violates an invariant."""


class Label(str, Enum):
    SLIP = "slip"
    CONTACT = "contact"
    NO_CONTACT = "no_contact"


# Frozen order: index 0 wins argmax ties.
CLASSES: tuple[Label, ...] = (Label.SLIP, Label.CONTACT, Label.NO_CONTACT)
CLASS_INDEX = {c: i for i, c in enumerate(CLASSES)}


@dataclass(frozen=True)
class SensorVariant:
    name: str
    electrode_count: int
    frame_rate: float
    p_ac_batch_size: int
    p_ac_rate: float

    @property
    def frame_period(self) -> float:
        return 1.0 / self.frame_rate


BIOTAC = SensorVariant("BioTac", electrode_count=19, frame_rate=100.0, p_ac_batch_size=22, p_ac_rate=2200.0)
# 4.545 kHz analog rate over 1 kHz frames, rounded up to a fixed batch of 5.
BIOTAC_SP = SensorVariant("BioTacSP", electrode_count=22, frame_rate=1000.0, p_ac_batch_size=5, p_ac_rate=4545.0)
VARIANTS = {v.name: v for v in (BIOTAC, BIOTAC_SP)}


def get_variant(name: str) -> SensorVariant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown sensor variant {name!r}; expected one of {sorted(VARIANTS)}") from None


@dataclass(frozen=True)
class SensorFrame:
    """One multi-channel tactile sample from one fingertip."""

    t: int
    finger: int
    variant: str
    p_dc: float
    p_ac: tuple[float, ...]
    electrodes: tuple[float, ...]
    t_dc: float
    t_ac: float

    def __post_init__(self):
        v = get_variant(self.variant)
        if len(self.p_ac) != v.p_ac_batch_size:
            raise ValueError(f"p_ac batch has {len(self.p_ac)} samples, {v.name} needs {v.p_ac_batch_size}")
        if len(self.electrodes) != v.electrode_count:
            raise ValueError(f"{len(self.electrodes)} electrodes, {v.name} has {v.electrode_count}")


@dataclass(frozen=True)
class ContactState:
    """Ground-truth contact physics for one finger after a step."""

    finger_id: int
    in_contact: bool
    normal_force: float
    tangential_load: float
    slip_speed: float
    fingertip_pos: tuple[float, float]
    contact_normal: tuple[float, float]


# ---------------------------------------------------------------------------
# RNG

def fork_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for one subsystem.

    Streams are keyed by (seed, label) only, so adding a new label never
    shifts the draws seen by an existing one.
    """
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))


# ---------------------------------------------------------------------------
# Config

@dataclass(frozen=True)
class ControllerParams:
    alpha: float = 1.0
    beta: float = 0.002
    s_slip: float = 0.2
    s_not_slip: float = 0.02
    l_min: float = -5.0
    l_max: float = 5.0


@dataclass(frozen=True)
class ClassifierParams:
    tau_h: int = 10
    tau_f: int = 3
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4


@dataclass(frozen=True)
class CampaignParams:
    objects: tuple[str, ...] = ("ball", "box")
    pressures: tuple[float, ...] = (20.0, 50.0, 80.0)
    trials_per_cell: int = 3
    fingers: tuple[int, ...] = (0, 1, 2)
    duration: float = 30.0
    t_contact: float = 10.0
    delta_x: float = 2e-5
    label_window: float = 0.03
    survey_speed: tuple[float, float] = (0.001, 0.005)
    segment: float = 0.5
    dwell_prob: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dt: float = 0.001
    sensor_variant: str = "BioTac"
    finger_count: int = 2
    object_id: str = "ball"
    duration: float = 30.0
    disturbance: str = "default"
    controller: ControllerParams = field(default_factory=ControllerParams)
    classifier: ClassifierParams = field(default_factory=ClassifierParams)
    campaign: CampaignParams = field(default_factory=CampaignParams)

    def __post_init__(self):
        validate_config(self)

    @property
    def variant(self) -> SensorVariant:
        return get_variant(self.sensor_variant)


def validate_config(cfg: RunConfig) -> None:
    if not cfg.dt > 0:
        raise ConfigError(f"dt must be > 0 (got {cfg.dt})")
    if not 1 <= cfg.finger_count <= 5:
        raise ConfigError(f"finger_count must be in 1..5 (got {cfg.finger_count})")
    get_variant(cfg.sensor_variant)
    c = cfg.classifier
    if c.tau_h < 1:
        raise ConfigError(f"tau_h must be >= 1 (got {c.tau_h})")
    if c.tau_f < 1:
        raise ConfigError(f"tau_f must be >= 1 (got {c.tau_f})")
    if c.epochs < 0 or c.learning_rate <= 0 or c.l2 < 0:
        raise ConfigError("classifier needs epochs >= 0, learning_rate > 0, l2 >= 0")
    p = cfg.controller
    for name in ("alpha", "beta", "s_slip", "s_not_slip"):
        if not getattr(p, name) > 0:
            raise ConfigError(f"controller.{name} must be > 0 (got {getattr(p, name)})")
    if not p.l_min <= 0 <= p.l_max:
        raise ConfigError(f"controller clamp needs l_min <= 0 <= l_max (got {p.l_min}, {p.l_max})")
    if cfg.duration <= 0:
        raise ConfigError(f"duration must be > 0 (got {cfg.duration})")
    cp = cfg.campaign
    if cp.trials_per_cell < 1 or cp.duration <= 0 or cp.t_contact <= 0 or cp.delta_x <= 0:
        raise ConfigError("campaign needs trials_per_cell >= 1 and positive duration, t_contact, delta_x")
    if not set(cp.pressures) <= {20.0, 50.0, 80.0}:
        raise ConfigError(f"campaign pressures must come from {{20, 50, 80}} (got {list(cp.pressures)})")


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for k, v in data.items():
        if isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return kwargs


def config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    top = dict(_build(RunConfig, data or {}, "config"))
    try:
        for key, cls in (("controller", ControllerParams), ("classifier", ClassifierParams),
                         ("campaign", CampaignParams)):
            if key in top:
                top[key] = cls(**_build(cls, top[key], key))
        if "campaign" in top:
            cp = top["campaign"]
            top["campaign"] = replace(cp, pressures=tuple(float(p) for p in cp.pressures))
        return RunConfig(**top)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a YAML run config."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return config_from_dict(data or {})


def config_to_dict(cfg: RunConfig) -> dict:
    def plain(v):
        if isinstance(v, tuple):
            return [plain(x) for x in v]
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        return v
    return plain(asdict(cfg))


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))


# ---------------------------------------------------------------------------
# Dataset records (JSON Lines)

@dataclass(frozen=True)
class FrameRecord:
    frame: SensorFrame
    contact: ContactState
    label: Label

    @property
    def gt_label(self) -> Label:
        if not self.contact.in_contact:
            return Label.NO_CONTACT
        return Label.SLIP if self.contact.slip_speed > 0 else Label.CONTACT


def frame_to_dict(rec: FrameRecord) -> dict:
    f, c = rec.frame, rec.contact
    return {
        "t": f.t,
        "finger": f.finger,
        "variant": f.variant,
        "p_dc": f.p_dc,
        "p_ac": list(f.p_ac),
        "electrodes": list(f.electrodes),
        "t_dc": f.t_dc,
        "t_ac": f.t_ac,
        "gt_contact": c.in_contact,
        "gt_slip": c.slip_speed > 0,
        "auto_label": rec.label.value,
        "pos": list(c.fingertip_pos),
        # Extra ground truth beyond the required keys; readers ignore what they don't need.
        "gt_normal_force": c.normal_force,
        "gt_tangential_load": c.tangential_load,
        "gt_slip_speed": c.slip_speed,
        "normal": list(c.contact_normal),
    }


def write_jsonl_frame(rec: FrameRecord) -> str:
    """Serialize one record as a single JSON line (no trailing newline)."""
    return json.dumps(frame_to_dict(rec), separators=(",", ":"), allow_nan=False)


def read_jsonl_frame(line: str) -> FrameRecord:
    d = json.loads(line)
    frame = SensorFrame(
        t=d["t"], finger=d["finger"], variant=d["variant"], p_dc=d["p_dc"],
        p_ac=tuple(d["p_ac"]), electrodes=tuple(d["electrodes"]), t_dc=d["t_dc"], t_ac=d["t_ac"],
    )
    slip_speed = d.get("gt_slip_speed", 1.0 if d["gt_slip"] else 0.0)
    contact = ContactState(
        finger_id=d["finger"], in_contact=d["gt_contact"], normal_force=d.get("gt_normal_force", 0.0),
        tangential_load=d.get("gt_tangential_load", 0.0), slip_speed=slip_speed,
        fingertip_pos=tuple(d["pos"]), contact_normal=tuple(d.get("normal", (0.0, 0.0))),
    )
    return FrameRecord(frame, contact, Label(d["auto_label"]))


def write_jsonl(path: str | Path, records: Iterable[FrameRecord]) -> int:
    n = 0
    with open(path, "w") as fh:
        for rec in records:
            fh.write(write_jsonl_frame(rec))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[FrameRecord]:
    with open(path) as fh:
        for line in fh:
            if line.strip():
                yield read_jsonl_frame(line)


# ---------------------------------------------------------------------------
# Metrics CSV

def write_csv(path: str | Path, rows: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return int(v)
    return v


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
