"""Per-finger reactive grip control.

Each finger keeps a leaky slip statistic ``l`` that rises by ``s_slip`` on
every predicted slip, falls by ``s_not_slip`` on every predicted contact
and holds when no contact is predicted. The finger then moves along its
contact normal at ``beta * exp(alpha * l)``. Nothing here looks at any other
finger: a :class:`FingerController` owns one finger id and refuses frames
from anyone else.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .classifier import SlipModel, predict_many
from .core import CLASSES, ControllerParams, Label, SensorFrame
from .features import FeatureLayout, WindowBuffer


class FrameOwnershipError(ValueError):
    """A controller was handed a frame recorded by a different finger."""


@dataclass(frozen=True)
class FingerControllerState:
    l: float = 0.0
    params: ControllerParams = field(default_factory=ControllerParams)
    speed: float = 0.0

    def __post_init__(self):
        p = self.params
        if min(p.alpha, p.beta, p.s_slip, p.s_not_slip) <= 0:
            raise ValueError("controller parameters must be strictly positive")
        if not p.l_min <= 0 <= p.l_max:
            raise ValueError("clamp bounds must satisfy l_min <= 0 <= l_max")


def update_statistic(state: FingerControllerState, label: Label) -> FingerControllerState:
    p = state.params
    label = Label(label)
    if label is Label.SLIP:
        l = state.l + p.s_slip
    elif label is Label.CONTACT:
        l = state.l - p.s_not_slip
    else:
        return state
    return replace(state, l=min(p.l_max, max(p.l_min, l)))


def command_speed(state: FingerControllerState) -> float:
    p = state.params
    return p.beta * math.exp(p.alpha * state.l)


def command_velocity(state: FingerControllerState, normal: Sequence[float]) -> np.ndarray:
    n = np.asarray(normal, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError(f"contact normal must be unit length (|n| = {np.linalg.norm(n)})")
    return command_speed(state) * n


def _normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def estimate_contact_normal(site_normal: Sequence[float] | None, approach: Sequence[float],
                            touched: bool = True) -> np.ndarray:
    """Contact normal from the finger's site geometry.

    Falls back to the approach direction for a finger that has never touched.
    """
    if touched and site_normal is not None:
        return _normalize(site_normal)
    return _normalize(approach)


def electrode_centroid_normal(electrodes: Sequence[float], approach: Sequence[float],
                              spread: float = 0.5) -> np.ndarray:
    """Normal estimate from the deformation centroid on the fingertip.

    The grounded electrode pattern is projected onto the ring of electrode
    angles; its circular mean tilts the approach direction by at most
    ``spread`` radians. No deformation returns the approach direction.
    """
    e = np.asarray(electrodes, dtype=float)
    ang = np.linspace(0.0, 2 * np.pi, len(e), endpoint=False)
    w = np.clip(e, 0.0, None)
    a = _normalize(approach)
    if w.sum() <= 0:
        return a
    c, s = (w * np.cos(ang)).sum(), (w * np.sin(ang)).sum()
    r = math.hypot(c, s) / w.sum()
    tilt = spread * r * math.sin(math.atan2(s, c))
    ct, st = math.cos(tilt), math.sin(tilt)
    return np.array([ct * a[0] - st * a[1], st * a[0] + ct * a[1]])


@dataclass
class PID:
    """PID on grounded pressure producing a speed along the contact normal."""

    kp: float = 2.5e-4
    ki: float = 5e-4
    kd: float = 0.0
    integral_limit: float = 4.0  # anti-windup, in pressure-units * s
    max_speed: float = 0.02
    integral: float = 0.0
    prev_error: float | None = None

    def step(self, measured: float, target: float, dt: float) -> float:
        if not target > 0:
            raise ValueError("target pressure must be > 0")
        err = target - measured
        self.integral = min(self.integral_limit, max(-self.integral_limit, self.integral + err * dt))
        deriv = 0.0 if self.prev_error is None else (err - self.prev_error) / dt
        self.prev_error = err
        u = self.kp * err + self.ki * self.integral + self.kd * deriv
        return min(self.max_speed, max(-self.max_speed, u))


def pid_pressure_regulate(pid: PID, measured: float, target: float, dt: float) -> float:
    return pid.step(measured, target, dt)


class FingerController:
    """Slip-predicting grip controller for exactly one finger.

    Feed it that finger's raw frames in order; the first frame it sees is
    taken as the contactless grounding baseline.
    """

    def __init__(self, finger_id: int, model: SlipModel, params: ControllerParams | None = None, *,
                 site_normal: Sequence[float] | None = None, approach: Sequence[float] = (1.0, 0.0)):
        self.finger_id = finger_id
        self.model = model
        self.layout = model.layout
        self.state = FingerControllerState(params=params or ControllerParams())
        self.site_normal = site_normal
        self.approach = tuple(approach)
        self.window: WindowBuffer | None = None
        self.touched = False
        self.label = Label.NO_CONTACT
        self.frames_seen: list[int] = []  # finger id of every frame consumed (audit trail)

    def observe(self, frame: SensorFrame) -> float:
        """Consume one frame and return the commanded speed along the normal."""
        if frame.finger != self.finger_id:
            raise FrameOwnershipError(f"controller for finger {self.finger_id} got a frame from finger {frame.finger}")
        if self.window is None:
            self.model.check_layout(FeatureLayout(frame.variant, self.layout.tau_h))
            self.window = WindowBuffer(frame.variant, self.layout.tau_h)
        self.frames_seen.append(frame.finger)
        self.window.push(frame)
        if self.window.full:
            x = self.window.features()
            self.label = CLASSES[int(predict_many(self.model, x[None])[0])]
        else:
            self.label = Label.NO_CONTACT
        if self.label is not Label.NO_CONTACT:
            self.touched = True
        self.state = update_statistic(self.state, self.label)
        speed = command_speed(self.state)
        self.state = replace(self.state, speed=speed)
        return speed

    def normal(self) -> np.ndarray:
        return estimate_contact_normal(self.site_normal, self.approach, self.touched)
