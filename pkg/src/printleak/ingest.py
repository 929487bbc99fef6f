"""Sensor log I/O and frame alignment.

The interchange format is a CSV sampled at the acoustic rate::

    time_s,ax,bx_uT,by_uT,bz_uT

``ax`` is linear acoustic amplitude; the magnetometer columns hold the most
recent magnetometer sample (zero-order hold) between magnetometer ticks.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

CSV_COLUMNS = ("time_s", "ax", "bx_uT", "by_uT", "bz_uT")
DEFAULT_MAGNETIC_RATE = 100.0
DEFAULT_FRAME_MS = 100.0


class SchemaError(ValueError):
    """The CSV does not follow the sensor log schema."""


class TraceDataError(ValueError):
    """Values inside a sensor log are inconsistent (bad numbers, time order)."""


def magnetic_count(n_acoustic: int, acoustic_rate: float, magnetic_rate: float) -> int:
    """Number of magnetometer ticks ``j/magnetic_rate`` inside the acoustic time span."""
    if n_acoustic <= 0:
        return 0
    span = (n_acoustic - 1) / acoustic_rate
    return int(math.floor(span * magnetic_rate + 1e-9)) + 1


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SensorTrace:
    """Time-aligned acoustic and magnetometer recording.

    ``acoustic`` is an (N,) amplitude array, ``magnetic`` an (M, 3) array of
    (bx, by, bz) in microtesla. Both start at ``start_time``.
    """

    acoustic: np.ndarray
    acoustic_rate: float
    magnetic: np.ndarray
    magnetic_rate: float = DEFAULT_MAGNETIC_RATE
    start_time: float = 0.0

    def __post_init__(self):
        acoustic = _readonly(self.acoustic).reshape(-1)
        magnetic = _readonly(self.magnetic).reshape(-1, 3)
        object.__setattr__(self, "acoustic", acoustic)
        object.__setattr__(self, "magnetic", magnetic)
        object.__setattr__(self, "acoustic_rate", float(self.acoustic_rate))
        object.__setattr__(self, "magnetic_rate", float(self.magnetic_rate))
        if self.acoustic_rate < 1000:
            raise ValueError("acoustic_rate must be at least 1000 Hz")
        if self.magnetic_rate <= 0:
            raise ValueError("magnetic_rate must be positive")
        a_dur = len(acoustic) / self.acoustic_rate
        m_dur = len(magnetic) / self.magnetic_rate
        if abs(a_dur - m_dur) > 1.0 / self.magnetic_rate + 1.0 / self.acoustic_rate:
            raise ValueError(f"channel durations disagree: acoustic {a_dur:.4f} s, magnetic {m_dur:.4f} s")

    @property
    def duration(self) -> float:
        return len(self.acoustic) / self.acoustic_rate

    @property
    def acoustic_db(self) -> np.ndarray:
        """Gain in dB, ``20 log10(|x| + 1e-12)``."""
        return 20.0 * np.log10(np.abs(self.acoustic) + 1e-12)

    def allclose(self, other: "SensorTrace", atol: float = 1e-6) -> bool:
        return (
            self.acoustic.shape == other.acoustic.shape
            and self.magnetic.shape == other.magnetic.shape
            and abs(self.acoustic_rate - other.acoustic_rate) <= atol * max(1.0, self.acoustic_rate)
            and abs(self.magnetic_rate - other.magnetic_rate) <= atol * max(1.0, self.magnetic_rate)
            and abs(self.start_time - other.start_time) <= atol
            and np.allclose(self.acoustic, other.acoustic, rtol=0, atol=atol)
            and np.allclose(self.magnetic, other.magnetic, rtol=0, atol=atol)
        )


@dataclass(frozen=True, eq=False)
class Frame:
    """One analysis window of both channels."""

    acoustic: np.ndarray
    magnetic: np.ndarray
    acoustic_rate: float
    magnetic_rate: float = DEFAULT_MAGNETIC_RATE
    index: int = 0


# ---------------------------------------------------------------------------
# CSV


def write_sensor_csv(trace: SensorTrace, stream) -> None:
    """Write ``trace`` to a text stream in the sensor log schema (LF endings)."""
    stream.write(",".join(CSV_COLUMNS) + "\n")
    n = len(trace.acoustic)
    if n == 0:
        return
    idx = np.arange(n)
    times = trace.start_time + idx / trace.acoustic_rate
    held = np.floor(idx * (trace.magnetic_rate / trace.acoustic_rate) + 1e-9).astype(int)
    held = np.clip(held, 0, max(len(trace.magnetic) - 1, 0))
    mag = trace.magnetic[held] if len(trace.magnetic) else np.zeros((n, 3))
    rows = []
    for t, a, (bx, by, bz) in zip(times, trace.acoustic, mag):
        rows.append(f"{t:.9f},{a:.12g},{bx:.12g},{by:.12g},{bz:.12g}\n")
    stream.write("".join(rows))


def read_sensor_csv(
    stream,
    magnetic_rate: float = DEFAULT_MAGNETIC_RATE,
    acoustic_rate: Optional[float] = None,
) -> SensorTrace:
    """Read a sensor log and resample both channels onto uniform grids.

    The acoustic rate is inferred from the time column unless given. The
    magnetometer rate is not recorded in the file, so it is a parameter
    (100 Hz by default). Both channels are linearly interpolated onto their
    nominal grids starting at the first timestamp.
    """
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty file, expected a header row") from None
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    if tuple(header) != CSV_COLUMNS:
        raise SchemaError(f"header must be exactly {','.join(CSV_COLUMNS)}")

    values = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(CSV_COLUMNS):
            raise TraceDataError(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        try:
            parsed = [float(c) for c in row]
        except ValueError:
            raise TraceDataError(f"line {lineno}: malformed number") from None
        if not all(math.isfinite(v) for v in parsed):
            raise TraceDataError(f"line {lineno}: non-finite value")
        if values and parsed[0] <= values[-1][0]:
            raise TraceDataError(f"line {lineno}: time {parsed[0]} is not after {values[-1][0]} (non-monotone)")
        values.append(parsed)

    data = np.array(values, dtype=float).reshape(-1, len(CSV_COLUMNS))
    n = len(data)
    if acoustic_rate is None:
        if n < 2:
            raise SchemaError("need at least two rows to infer the acoustic rate")
        acoustic_rate = (n - 1) / (data[-1, 0] - data[0, 0])
        nearest = round(acoustic_rate)
        if abs(acoustic_rate - nearest) <= 1e-6 * acoustic_rate:
            acoustic_rate = float(nearest)
    if n == 0:
        return SensorTrace(np.zeros(0), acoustic_rate, np.zeros((0, 3)), magnetic_rate)

    t0 = data[0, 0]
    t_rows = data[:, 0]
    grid_a = t0 + np.arange(n) / acoustic_rate
    if np.max(np.abs(t_rows - grid_a)) <= 0.01 / acoustic_rate:
        on_grid = data  # already uniform up to timestamp rounding
    else:
        on_grid = np.column_stack([grid_a] + [np.interp(grid_a, t_rows, data[:, k]) for k in (1, 2, 3, 4)])

    m = magnetic_count(n, acoustic_rate, magnetic_rate)
    pos = np.arange(m) * (acoustic_rate / magnetic_rate)
    snapped = np.round(pos)
    pos = np.where(np.abs(pos - snapped) < 1e-6, snapped, pos)
    pos = np.minimum(pos, n - 1)
    rows = np.arange(n)
    magnetic = np.column_stack([np.interp(pos, rows, on_grid[:, k]) for k in (2, 3, 4)])
    return SensorTrace(on_grid[:, 1], acoustic_rate, magnetic, magnetic_rate, start_time=t0)


# ---------------------------------------------------------------------------
# Framing


def frame_sizes(trace: SensorTrace, frame_ms: float = DEFAULT_FRAME_MS) -> tuple:
    """(acoustic samples per frame, magnetic samples per frame, frame count)."""
    if frame_ms <= 0:
        raise ValueError("frame_ms must be positive")
    na = int(math.floor(trace.acoustic_rate * frame_ms / 1000.0 + 1e-9))
    nm = int(math.floor(trace.magnetic_rate * frame_ms / 1000.0 + 1e-9))
    if nm < 2:
        raise ValueError(
            f"{frame_ms} ms frames hold {nm} magnetometer sample(s); at least 2 are needed for statistics"
        )
    if na < 2:
        raise ValueError(f"{frame_ms} ms frames hold fewer than 2 acoustic samples")
    count = min(len(trace.acoustic) // na, len(trace.magnetic) // nm)
    return na, nm, count


def frame_arrays(trace: SensorTrace, frame_ms: float = DEFAULT_FRAME_MS) -> tuple:
    """Stacked frames: acoustic (F, Na) and magnetic (F, Nm, 3) views."""
    na, nm, count = frame_sizes(trace, frame_ms)
    acoustic = trace.acoustic[: count * na].reshape(count, na)
    magnetic = trace.magnetic[: count * nm].reshape(count, nm, 3)
    return acoustic, magnetic


def align_channels(trace: SensorTrace, frame_ms: float = DEFAULT_FRAME_MS) -> list:
    """Cut a trace into consecutive non-overlapping frames; the partial tail is dropped."""
    acoustic, magnetic = frame_arrays(trace, frame_ms)
    return [
        Frame(acoustic[i], magnetic[i], trace.acoustic_rate, trace.magnetic_rate, i)
        for i in range(len(acoustic))
    ]
