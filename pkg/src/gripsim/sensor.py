"""Synthetic BioTac-style tactile frames driven by ground-truth contact state."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ContactState, SensorFrame, SensorVariant


@dataclass(frozen=True)
class SensorModel:
    """Per-sensor constants.

    ``gain_dc`` maps 2/5/8 N onto the 20/50/80 unit pressure targets.
    """

    gain_dc: float = 10.0
    baseline_dc: float = 400.0
    noise_dc: float = 0.5
    ac_floor: float = 2.0  # RMS of p_ac with no slip
    ac_slip_gain: float = 2000.0  # RMS per (N * m/s) of slip under load
    ac_spike: float = 40.0  # transient amplitude on contact make/break
    electrode_baseline: float = 100.0
    electrode_gain: float = 3.0  # per N, at profile peak
    electrode_shear: float = 1.0  # per N of tangential load
    noise_electrode: float = 0.5
    temp_dc: float = 2000.0
    temp_ac: float = 0.0
    noise_temp: float = 1.0
    profile_phase: float = 0.0  # contact location on the fingertip, radians


DEFAULT_SENSOR = SensorModel()

# Short FIR shaping slip vibration into the mid/high band.
_VIB_TAPS = np.array([1.0, -1.0, 0.5])
_VIB_TAPS = _VIB_TAPS / np.sqrt(np.sum(_VIB_TAPS**2))


def electrode_profile(count: int, phase: float = 0.0) -> np.ndarray:
    """Spatial weight of each electrode for a contact at ``phase`` (peak 1)."""
    ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
    return 0.5 * (1.0 + np.cos(ang - phase))


def shear_profile(count: int, phase: float = 0.0) -> np.ndarray:
    ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
    return np.sin(ang - phase)


@lru_cache(maxsize=64)
def _profiles(count: int, phase: float) -> tuple[np.ndarray, np.ndarray]:
    return electrode_profile(count, phase), shear_profile(count, phase)


def sample_sensor(rng: np.random.Generator) -> SensorModel:
    """A sensor instance with its own offsets; grounding removes them."""
    return SensorModel(
        baseline_dc=float(rng.uniform(300.0, 500.0)),
        electrode_baseline=float(rng.uniform(80.0, 120.0)),
        temp_dc=float(rng.uniform(1900.0, 2100.0)),
        profile_phase=float(rng.uniform(0.0, 2 * np.pi)),
    )


def synth_frame(contact: ContactState, variant: SensorVariant, rng: np.random.Generator, *,
                t: int = 0, model: SensorModel = DEFAULT_SENSOR,
                previous: ContactState | None = None) -> SensorFrame:
    f = contact.normal_force if contact.in_contact else 0.0
    v = contact.slip_speed if contact.in_contact else 0.0
    shear = contact.tangential_load if contact.in_contact else 0.0

    p_dc = model.baseline_dc + model.gain_dc * f + model.noise_dc * rng.standard_normal()

    m = variant.p_ac_batch_size
    floor = model.ac_floor * rng.standard_normal(m)
    vib_rms = model.ac_slip_gain * v * f
    raw = rng.standard_normal(m + len(_VIB_TAPS) - 1)
    vib = vib_rms * np.convolve(raw, _VIB_TAPS, mode="valid")
    p_ac = floor + vib
    if previous is not None and previous.in_contact != contact.in_contact:
        p_ac[0] += model.ac_spike

    ne = variant.electrode_count
    press, twist = _profiles(ne, model.profile_phase)
    electrodes = (model.electrode_baseline
                  + model.electrode_gain * f * press
                  + model.electrode_shear * shear * twist
                  + model.noise_electrode * rng.standard_normal(ne))

    t_dc = model.temp_dc + model.noise_temp * rng.standard_normal()
    t_ac = model.temp_ac + model.noise_temp * rng.standard_normal()
    return SensorFrame(
        t=t, finger=contact.finger_id, variant=variant.name, p_dc=float(p_dc),
        p_ac=tuple(p_ac.tolist()), electrodes=tuple(electrodes.tolist()),
        t_dc=float(t_dc), t_ac=float(t_ac),
    )
