"""Window feature map for slip prediction.

Frames are expected to be grounded already (per-trial baseline removed from
p_dc and electrodes, see :func:`ground`). Amplitude-like slots are log
compressed with ``log1p`` so slip under heavy load does not swamp the scale.

Slot order is frozen; saved models carry ``LAYOUT_VERSION`` and refuse to
load against a different one.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import SensorFrame, get_variant

LAYOUT_VERSION = 1
SLOTS = (
    "p_dc_mean",
    "p_dc_slope",
    "p_ac_rms",
    "p_ac_rms_delta",
    "p_ac_band_low",
    "p_ac_band_mid",
    "p_ac_band_high",
    "electrode_mean_delta",
    "electrode_spatial_var",
    "contact_fraction",
)
N_FEATURES = len(SLOTS)
CONTACT_ELECTRODE_LEVEL = 1.0  # grounded mean electrode deviation that counts as touching


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureLayout:
    variant: str
    tau_h: int
    version: int = LAYOUT_VERSION

    @property
    def size(self) -> int:
        return N_FEATURES


@dataclass(frozen=True)
class Stream:
    """Column arrays for one finger's frames."""

    variant: str
    t: np.ndarray
    p_dc: np.ndarray
    p_ac: np.ndarray  # (L, batch)
    electrodes: np.ndarray  # (L, n_electrodes)

    def __len__(self):
        return len(self.t)


def to_stream(frames: Sequence[SensorFrame]) -> Stream:
    if not frames:
        raise FeatureError("empty frame sequence")
    variants = {f.variant for f in frames}
    if len(variants) != 1:
        raise FeatureError(f"mixed sensor variants in one stream: {sorted(variants)}")
    fingers = {f.finger for f in frames}
    if len(fingers) != 1:
        raise FeatureError(f"frames from several fingers in one stream: {sorted(fingers)}")
    return Stream(
        variant=frames[0].variant,
        t=np.array([f.t for f in frames], dtype=np.int64),
        p_dc=np.array([f.p_dc for f in frames], dtype=float),
        p_ac=np.array([f.p_ac for f in frames], dtype=float),
        electrodes=np.array([f.electrodes for f in frames], dtype=float),
    )


def ground(stream: Stream, baseline: int = 0) -> Stream:
    """Subtract the frame at index ``baseline`` (a contactless frame) from p_dc and electrodes."""
    return Stream(stream.variant, stream.t, stream.p_dc - stream.p_dc[baseline], stream.p_ac,
                  stream.electrodes - stream.electrodes[baseline])


def ground_frame(frame: SensorFrame, baseline: SensorFrame) -> SensorFrame:
    return SensorFrame(
        t=frame.t, finger=frame.finger, variant=frame.variant, p_dc=frame.p_dc - baseline.p_dc,
        p_ac=frame.p_ac, electrodes=tuple(e - b for e, b in zip(frame.electrodes, baseline.electrodes)),
        t_dc=frame.t_dc, t_ac=frame.t_ac,
    )


@lru_cache(maxsize=None)
def _hann(n: int) -> np.ndarray:
    w = np.hanning(n)
    w.flags.writeable = False
    return w


@lru_cache(maxsize=None)
def _band_edges(n: int) -> tuple[tuple[int, int], ...]:
    k = np.arange(n // 2 + 1)
    frac = k / n  # fraction of the sampling rate; Nyquist at 0.5
    edges = []
    for lo, hi in ((0.0, 1 / 6), (1 / 6, 1 / 3), (1 / 3, 0.5 + 1e-12)):
        idx = np.nonzero((frac > lo) & (frac <= hi))[0]
        edges.append((int(idx[0]), int(idx[-1]) + 1) if len(idx) else (0, 0))
    return tuple(edges)


def _features(p_dc: np.ndarray, p_ac: np.ndarray, elec: np.ndarray, period: float) -> np.ndarray:
    """Core map over a batch of windows.

    p_dc: (W, H); p_ac: (W, H, m); elec: (W, H, E). Returns (W, N_FEATURES).
    """
    w, h = p_dc.shape
    out = np.empty((w, N_FEATURES))
    # sums over explicit counts rather than .mean(): this runs once per control tick
    out[:, 0] = p_dc.sum(axis=1) / h
    if h > 1:
        tc = (np.arange(h) - (h - 1) / 2.0) * period
        out[:, 1] = (p_dc - out[:, :1]) @ tc / (tc @ tc)
    else:
        out[:, 1] = 0.0

    sq = np.square(p_ac).sum(axis=2)  # (W, H) per-frame energy
    m = p_ac.shape[2]
    out[:, 2] = np.log1p(np.sqrt(sq.sum(axis=1) / (h * m)))
    if h > 1:
        half = h // 2
        first = np.sqrt(sq[:, :half].sum(axis=1) / (half * m))
        last = np.sqrt(sq[:, half:].sum(axis=1) / ((h - half) * m))
        out[:, 3] = np.log1p(last) - np.log1p(first)
    else:
        out[:, 3] = 0.0

    flat = p_ac.reshape(w, -1)
    n = flat.shape[1]
    spec = np.square(np.abs(np.fft.rfft(flat * _hann(n), axis=1))) / n
    for j, (a, b) in enumerate(_band_edges(n)):
        out[:, 4 + j] = np.log1p(spec[:, a:b].sum(axis=1) / (b - a)) if b > a else 0.0

    e = elec.shape[2]
    frame_mean = elec.sum(axis=2) / e
    out[:, 7] = frame_mean[:, -1] - frame_mean[:, 0]
    site_mean = elec.sum(axis=1) / h
    site_dev = site_mean - (site_mean.sum(axis=1) / e)[:, None]
    out[:, 8] = np.square(site_dev).sum(axis=1) / e
    out[:, 9] = (frame_mean > CONTACT_ELECTRODE_LEVEL).sum(axis=1) / h
    return out


def extract(window: Sequence[SensorFrame], tau_h: int | None = None) -> np.ndarray:
    """Feature vector for one window of contiguous, grounded frames."""
    if tau_h is not None and len(window) != tau_h:
        raise FeatureError(f"window has {len(window)} frames, expected tau_h={tau_h}")
    s = to_stream(window)
    if np.any(np.diff(s.t) != 1):
        raise FeatureError("window frames are not contiguous in t")
    period = get_variant(s.variant).frame_period
    v = _features(s.p_dc[None], s.p_ac[None], s.electrodes[None], period)[0]
    if not np.all(np.isfinite(v)):
        raise FeatureError("non-finite feature")
    return v


def extract_stream(stream: Stream, tau_h: int) -> np.ndarray:
    """Features for every full window of a stream; row j covers frames j..j+tau_h-1."""
    if len(stream) < tau_h:
        raise FeatureError(f"stream of {len(stream)} frames is shorter than tau_h={tau_h}")
    period = get_variant(stream.variant).frame_period
    p_dc = sliding_window_view(stream.p_dc, tau_h)
    p_ac = np.moveaxis(sliding_window_view(stream.p_ac, tau_h, axis=0), -1, 1)
    elec = np.moveaxis(sliding_window_view(stream.electrodes, tau_h, axis=0), -1, 1)
    return _features(np.ascontiguousarray(p_dc), np.ascontiguousarray(p_ac), np.ascontiguousarray(elec), period)


class WindowBuffer:
    """Rolling window of one finger's grounded frames, kept as arrays.

    The first frame pushed becomes the grounding baseline. Equivalent to
    calling :func:`extract` on the last ``tau_h`` grounded frames, without
    rebuilding the arrays every tick.
    """

    def __init__(self, variant: str, tau_h: int):
        v = get_variant(variant)
        self.variant = variant
        self.tau_h = tau_h
        self.period = v.frame_period
        self.p_dc = np.zeros((1, tau_h))
        self.p_ac = np.zeros((1, tau_h, v.p_ac_batch_size))
        self.elec = np.zeros((1, tau_h, v.electrode_count))
        self.count = 0
        self.last_t: int | None = None
        self.base_dc = 0.0
        self.base_elec: np.ndarray | None = None

    @property
    def full(self) -> bool:
        return self.count >= self.tau_h

    def push(self, frame: SensorFrame) -> None:
        if frame.variant != self.variant:
            raise FeatureError(f"{frame.variant} frame pushed into a {self.variant} window")
        if self.last_t is not None and frame.t != self.last_t + 1:
            raise FeatureError(f"frame t={frame.t} does not follow t={self.last_t}")
        elec = np.asarray(frame.electrodes, dtype=float)
        if self.base_elec is None:
            self.base_dc = frame.p_dc
            self.base_elec = elec
        self.p_dc[0, :-1] = self.p_dc[0, 1:]
        self.p_ac[0, :-1] = self.p_ac[0, 1:]
        self.elec[0, :-1] = self.elec[0, 1:]
        self.p_dc[0, -1] = frame.p_dc - self.base_dc
        self.p_ac[0, -1] = frame.p_ac
        self.elec[0, -1] = elec - self.base_elec
        self.count += 1
        self.last_t = frame.t

    def features(self) -> np.ndarray:
        if not self.full:
            raise FeatureError(f"window holds {self.count} of {self.tau_h} frames")
        return _features(self.p_dc, self.p_ac, self.elec, self.period)[0]


@dataclass(frozen=True)
class Normalizer:
    mean: tuple[float, ...]
    std: tuple[float, ...]  # 0 marks a constant slot

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        mean = np.asarray(self.mean)
        std = np.asarray(self.std)
        safe = np.where(std > 0, std, 1.0)
        return np.where(std > 0, (x - mean) / safe, 0.0)


def fit_normalizer(data: np.ndarray) -> Normalizer:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise FeatureError("cannot fit a normalizer on an empty dataset")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    # relative threshold so rounding noise on a constant slot is treated as constant
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 0.0)
    return Normalizer(tuple(mean.tolist()), tuple(std.tolist()))


def apply_normalizer(norm: Normalizer, x: np.ndarray) -> np.ndarray:
    return norm.apply(x)
