"""Forward emission model: synthesize sensor traces from toolpaths.

A deliberately simple stand-in for a printer recorded by a phone:

* acoustic: one tone per segment whose fundamental depends on (axis,
  direction, speed class) and whose amplitude grows with feed, band-limited
  extrusion hiss while printing, and white background noise that grows with
  the sensor distance;
* magnetic: the active stepper's field at the sensor, falling off with the
  cube of the nozzle-sensor distance, rippling with the motor's electrical
  angle, plus a small direction-dependent component on the z axis.

Nothing here is a physical model of a specific printer. All levels are
configurable through :class:`SimConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .gcode import (
    DEFAULT_FEED_MAP,
    DEFAULT_SPEED_BOUNDARY,
    Direction,
    MovementLabel,
    Plane,
    Toolpath,
    build_toolpath,
)
from .ingest import DEFAULT_FRAME_MS, SensorTrace, magnetic_count

DISTANCE_PRESETS = (15.0, 20.0, 30.0)  # cm
REFERENCE_DISTANCE_CM = 15.0

_BASE_TONES = {
    ("X", "Slow"): 420.0,
    ("X", "Fast"): 1150.0,
    ("Y", "Slow"): 560.0,
    ("Y", "Fast"): 1400.0,
    ("Z", "Slow"): 300.0,
    ("Z", "Fast"): 760.0,
}
_DETUNED = {"XRight", "YUp"}
DETUNE = 1.03


def default_tone_map() -> dict:
    """(axis, direction or None, speed class) -> fundamental in Hz."""
    tones = {}
    for (axis, speed), f0 in _BASE_TONES.items():
        if axis == "Z":
            tones[("Z", None, speed)] = f0
            continue
        for direction in Direction:
            if direction.axis.value == axis:
                tones[(axis, direction.value, speed)] = f0 * (DETUNE if direction.value in _DETUNED else 1.0)
    return tones


def tone_key(label: MovementLabel) -> tuple:
    if label.plane is Plane.Z:
        return ("Z", None, label.speed_class.value)
    return (label.axis.value, label.direction.value, label.speed_class.value)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Emission model parameters.

    ``noise_db`` is the background noise level (std = 10**(noise_db/20)) at
    the 15 cm reference distance; None disables acoustic noise. Distances are
    in cm, positions of the sensor in cm relative to the bed origin.
    """

    seed: int = 0
    acoustic_rate: float = 8000.0
    magnetic_rate: float = 100.0
    distance_cm: float = 15.0
    sensor_pos: Optional[tuple] = None  # cm; None -> 45 degrees off the bed origin
    noise_db: Optional[float] = -7.0
    noise_growth: float = 1.0  # acoustic noise std grows as (distance / 15 cm) ** noise_growth
    mag_noise_uT: float = 0.6
    tone_map: dict = field(default_factory=default_tone_map)
    tone_gain: float = 1.0
    harmonic: float = 0.35
    hiss_db: float = -10.0
    hiss_band: tuple = (2000.0, 3800.0)
    field_ref_uT: float = 18.0
    field_ref_mm: float = 150.0
    ripple: float = 0.10
    z_ripple: float = 0.15
    dir_bias: float = 0.15
    cycles_per_mm: tuple = (12.7, 11.3, 31.3)
    feed_ref: float = 600.0

    def __post_init__(self):
        if self.acoustic_rate <= 0 or self.magnetic_rate <= 0:
            raise ValueError("sample rates must be positive")
        if self.distance_cm <= 0:
            raise ValueError("distance_cm must be positive")
        if self.mag_noise_uT < 0:
            raise ValueError("mag_noise_uT must be non-negative")
        if not 0 <= self.hiss_band[0] < self.hiss_band[1] <= self.acoustic_rate / 2:
            raise ValueError("hiss band must lie inside [0, Nyquist]")
        by_pair = {}
        for (axis, _direction, speed), f0 in self.tone_map.items():
            by_pair.setdefault((axis, speed), set()).add(f0)
        firsts = {}
        for pair, freqs in by_pair.items():
            for f0 in freqs:
                if f0 in firsts and firsts[f0] != pair:
                    raise ValueError(f"tone {f0} Hz is shared by {firsts[f0]} and {pair}")
                firsts[f0] = pair

    @property
    def sensor_mm(self) -> np.ndarray:
        if self.sensor_pos is not None:
            return np.asarray(self.sensor_pos, dtype=float) * 10.0
        d = self.distance_cm * 10.0 / math.sqrt(2.0)
        return np.array([-d, -d, 0.0])

    @property
    def noise_std(self) -> float:
        if self.noise_db is None:
            return 0.0
        return 10.0 ** (self.noise_db / 20.0) * (self.distance_cm / REFERENCE_DISTANCE_CM) ** self.noise_growth

    def zero_noise(self) -> "SimConfig":
        return replace(self, noise_db=None, mag_noise_uT=0.0)


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in ("noise_db", "sensor_pos") and raw.lower() in ("none", ""):
        return None
    if key in ("sensor_pos", "hiss_band", "cycles_per_mm"):
        return tuple(float(v) for v in raw.split(","))
    if key == "seed":
        return int(raw)
    return float(raw)


def parse_sim_config(text: str, base: SimConfig = SimConfig()) -> SimConfig:
    """Parse ``key = value`` lines into a SimConfig (``#`` starts a comment).

    Keys are SimConfig field names. Tones are set individually with
    ``tone.<axis>.<direction>.<speed> = Hz`` using ``-`` as the Z direction,
    e.g. ``tone.X.XLeft.Slow = 420``. Tuples are comma separated.
    """
    known = {f.name for f in fields(SimConfig)} - {"tone_map"}
    updates, tones = {}, dict(base.tone_map)
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key.startswith("tone."):
            parts = key.split(".")
            if len(parts) != 4:
                raise ValueError(f"config line {lineno}: tone keys look like tone.X.XLeft.Slow")
            _, axis, direction, speed = parts
            tones[(axis, None if direction == "-" else direction, speed)] = float(raw)
        elif key in known:
            try:
                updates[key] = _parse_value(key, raw)
            except ValueError:
                raise ValueError(f"config line {lineno}: bad value for {key}: {raw!r}") from None
        else:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
    return replace(base, tone_map=tones, **updates)


def load_sim_config(path, base: SimConfig = SimConfig()) -> SimConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_sim_config(fh.read(), base)


# ---------------------------------------------------------------------------
# Emission


def _timeline(t: Toolpath):
    durations = np.array([s.duration for s in t.segments])
    bounds = np.concatenate([[0.0], np.cumsum(durations)])
    return durations, bounds


def trace_lengths(t: Toolpath, cfg: SimConfig) -> tuple:
    """(acoustic samples, magnetometer samples) the simulator produces for ``t``."""
    _, bounds = _timeline(t)
    n = int(round(bounds[-1] * cfg.acoustic_rate))
    return n, magnetic_count(n, cfg.acoustic_rate, cfg.magnetic_rate)


def _segment_index(times, bounds):
    # samples within 1 ns of a boundary belong to the later segment
    return np.clip(np.searchsorted(bounds, times + 1e-9, side="right") - 1, 0, len(bounds) - 2)


def _band_noise(rng, n, rate, band):
    white = rng.standard_normal(n)
    if n == 0:
        return white
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    keep = (freqs >= band[0]) & (freqs <= band[1])
    fraction = max(np.count_nonzero(keep) / len(freqs), 1e-12)
    return np.fft.irfft(np.where(keep, spec, 0.0), n=n) / math.sqrt(fraction)


def simulate_emissions(t: Toolpath, cfg: SimConfig = SimConfig()) -> SensorTrace:
    """Synthesize the acoustic and magnetometer channels for a toolpath.

    Deterministic for a fixed ``cfg.seed``.
    """
    if len(t.segments) == 0:
        raise SimulationError("cannot simulate an empty toolpath")
    rng = np.random.default_rng(cfg.seed)
    durations, bounds = _timeline(t)
    n_a, n_m = trace_lengths(t, cfg)
    labels = [s.label for s in t.segments]
    feeds = np.array([s.feed for s in t.segments])
    extruding = np.array([s.extruding for s in t.segments], dtype=float)

    # acoustic channel
    seg_a = _segment_index(np.arange(n_a) / cfg.acoustic_rate, bounds)
    f0 = np.array([cfg.tone_map[tone_key(lab)] for lab in labels])
    amp = cfg.tone_gain * np.sqrt(feeds / cfg.feed_ref)
    phase = 2.0 * np.pi * np.cumsum(f0[seg_a]) / cfg.acoustic_rate
    tone = amp[seg_a] * (np.sin(phase) + cfg.harmonic * np.sin(2.0 * phase))
    tone_rms = amp * math.sqrt((1.0 + cfg.harmonic**2) / 2.0)
    hiss_level = tone_rms * 10.0 ** (cfg.hiss_db / 20.0) * extruding
    hiss = _band_noise(rng, n_a, cfg.acoustic_rate, cfg.hiss_band) * hiss_level[seg_a]
    acoustic = tone + hiss
    if cfg.noise_std > 0:
        acoustic = acoustic + rng.standard_normal(n_a) * cfg.noise_std

    # magnetic channel
    tm = np.arange(n_m) / cfg.magnetic_rate
    seg_m = _segment_index(tm, bounds)
    starts = np.array([s.start for s in t.segments], dtype=float)
    ends = np.array([s.end for s in t.segments], dtype=float)
    frac = np.clip((tm - bounds[seg_m]) / durations[seg_m], 0.0, 1.0)
    pos = starts[seg_m] + frac[:, None] * (ends[seg_m] - starts[seg_m])
    dist = np.linalg.norm(pos - cfg.sensor_mm, axis=1)
    strength = cfg.field_ref_uT * (cfg.field_ref_mm / dist) ** 3

    unit = (ends - starts) / np.linalg.norm(ends - starts, axis=1)[:, None]
    u = unit[seg_m]
    angle = 2.0 * np.pi * pos * np.asarray(cfg.cycles_per_mm)
    bx = strength * np.abs(u[:, 0]) * (1.0 + cfg.ripple * np.cos(angle[:, 0]))
    by = strength * np.abs(u[:, 1]) * (1.0 + cfg.ripple * np.cos(angle[:, 1]))
    bz = strength * (cfg.dir_bias * (u[:, 0] + u[:, 1]) + cfg.z_ripple * np.abs(u[:, 2]) * np.cos(angle[:, 2]))
    magnetic = np.column_stack([bx, by, bz])
    if cfg.mag_noise_uT > 0:
        magnetic = magnetic + rng.normal(0.0, cfg.mag_noise_uT, size=magnetic.shape)

    return SensorTrace(acoustic, cfg.acoustic_rate, magnetic, cfg.magnetic_rate)


def crop_trace(trace: SensorTrace, start_s: float) -> SensorTrace:
    """Drop everything before ``start_s``, which must fall on a magnetometer tick."""
    ticks = start_s * trace.magnetic_rate
    if start_s < 0 or abs(ticks - round(ticks)) > 1e-9:
        raise ValueError("crop start must be a non-negative multiple of the magnetometer period")
    m0 = int(round(ticks))
    a0 = int(round(start_s * trace.acoustic_rate))
    return SensorTrace(
        trace.acoustic[a0:], trace.acoustic_rate, trace.magnetic[m0:], trace.magnetic_rate, trace.start_time + start_s
    )


def label_trace(
    t: Toolpath, cfg: SimConfig = SimConfig(), frame_ms: float = DEFAULT_FRAME_MS, start_s: float = 0.0
) -> list:
    """Ground-truth label per frame: the segment covering most of the frame.

    ``start_s`` shifts the frame grid as :func:`crop_trace` does. The frame
    count matches :func:`printleak.ingest.align_channels` on the (cropped)
    simulated trace; ties in coverage go to the earlier segment.
    """
    if len(t.segments) == 0:
        return []
    _, bounds = _timeline(t)
    n_a, n_m = trace_lengths(t, cfg)
    n_a -= int(round(start_s * cfg.acoustic_rate))
    n_m -= int(round(start_s * cfg.magnetic_rate))
    na = int(math.floor(cfg.acoustic_rate * frame_ms / 1000.0 + 1e-9))
    nm = int(math.floor(cfg.magnetic_rate * frame_ms / 1000.0 + 1e-9))
    count = max(min(n_a // na, n_m // nm), 0) if na and nm else 0
    frame_s = na / cfg.acoustic_rate
    labels = []
    for i in range(count):
        lo, hi = start_s + i * frame_s, start_s + (i + 1) * frame_s
        overlap = np.minimum(bounds[1:], hi) - np.maximum(bounds[:-1], lo)
        labels.append(t.segments[int(np.argmax(overlap))].label)
    return labels


def x_sweep_toolpath(length_mm: float = 100.0, feed: float = 1800.0, passes: int = 2) -> Toolpath:
    """Nozzle sweeping along X from the bed origin and back, no extrusion."""
    moves = []
    for i in range(passes):
        x = length_mm if i % 2 == 0 else 0.0
        moves.append(((x, 0.0, 0.0), feed, False))
    return build_toolpath((0.0, 0.0, 0.0), moves)


def training_toolpath(
    seed: int = 0,
    frames_per_class: int = 1000,
    frame_ms: float = DEFAULT_FRAME_MS,
    feed_map: dict = DEFAULT_FEED_MAP,
    z_feed: float = 60.0,
    region: tuple = (0.0, 50.0),
    z_range: tuple = (0.2, 5.0),
    min_frames: int = 2,
    max_frames: int = 12,
    speed_boundary: float = DEFAULT_SPEED_BOUNDARY,
    steps_per_frame: int = 1,
) -> Toolpath:
    """Random walk covering every movement class for training data.

    Each of XLeft, XRight, YUp, YDown and Z receives roughly
    ``frames_per_class`` frames. Segment durations are whole multiples of
    ``frame_ms / steps_per_frame``: with the default of 1 no frame straddles
    two movements, larger values mimic a recorder that is not synchronized
    with the printer. XY segments draw header and speed
    class independently and uniformly; Z segments move at ``z_feed`` without
    extrusion, rising unless that would leave ``z_range``.
    """
    rng = np.random.default_rng(seed)
    frame_s = frame_ms / 1000.0
    tick_s = frame_s / steps_per_frame
    lo, hi = region
    classes = ["XLeft", "XRight", "YUp", "YDown", "Z"]
    counts = dict.fromkeys(classes, 0)
    origin = ((lo + hi) / 2.0, (lo + hi) / 2.0, z_range[0])
    pos = np.array(origin)
    moves = []
    while min(counts.values()) < frames_per_class:
        open_classes = [c for c in classes if counts[c] < frames_per_class]
        cls = open_classes[rng.integers(len(open_classes))]
        n = int(rng.integers(min_frames * steps_per_frame, max_frames * steps_per_frame + 1))
        if cls == "Z":
            feed, extruding = z_feed, False
        else:
            feed = feed_map["Fast"] if rng.random() < 0.5 else feed_map["Slow"]
            extruding = bool(rng.random() < 0.5)
        step = feed / 60.0 * tick_s
        if cls != "Z":
            n = max(min_frames * steps_per_frame, min(n, int((hi - lo) / 2.0 // step)))
        length = n * step
        target = pos.copy()
        if cls == "Z":
            target[2] += length if pos[2] + length <= z_range[1] else -length
        else:
            k = 0 if cls.startswith("X") else 1
            sign = 1.0 if cls in ("XRight", "YUp") else -1.0
            if not lo <= pos[k] + sign * length <= hi:
                sign = -sign
                cls = {"XLeft": "XRight", "XRight": "XLeft", "YUp": "YDown", "YDown": "YUp"}[cls]
            target[k] += sign * length
        moves.append((tuple(target), feed, extruding))
        counts[cls] += n / steps_per_frame
        pos = target
    return build_toolpath(origin, moves, speed_boundary)
