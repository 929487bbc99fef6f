"""G-code parsing, toolpath interpretation and emission.

Only the motion subset is understood: G0/G1 linear moves, G28 homing and the
G21/G90/G92 state words that slicers put in file headers. Coordinates are
absolute millimetres, feed rates are mm/min.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence

import numpy as np

DEFAULT_SPEED_BOUNDARY = 2400.0  # mm/min
DEFAULT_FEED_MAP = {"Slow": 600.0, "Fast": 3000.0}  # mm/min, class -> nominal feed
CONTIGUITY_TOL = 1e-9  # mm
EXTRUSION_PER_MM = 0.05  # filament mm per path mm, emitted files only


class GCodeError(ValueError):
    """Malformed or unsupported G-code. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class Plane(str, enum.Enum):
    Z = "Z"
    XY = "XY"


class Axis(str, enum.Enum):
    X = "X"
    Y = "Y"


class Direction(str, enum.Enum):
    XLeft = "XLeft"
    XRight = "XRight"
    YUp = "YUp"
    YDown = "YDown"

    @property
    def axis(self) -> Axis:
        return Axis.X if self.value.startswith("X") else Axis.Y


class Header(str, enum.Enum):
    Printing = "Printing"
    Positioning = "Positioning"


class SpeedClass(str, enum.Enum):
    Slow = "Slow"
    Fast = "Fast"


@dataclass(frozen=True)
class MovementLabel:
    """Taxonomy label of one movement: plane, axis, direction, header, speed."""

    plane: Plane
    axis: Optional[Axis] = None
    direction: Optional[Direction] = None
    header: Header = Header.Positioning
    speed_class: SpeedClass = SpeedClass.Slow

    def __post_init__(self):
        object.__setattr__(self, "plane", Plane(self.plane))
        object.__setattr__(self, "header", Header(self.header))
        object.__setattr__(self, "speed_class", SpeedClass(self.speed_class))
        if self.axis is not None:
            object.__setattr__(self, "axis", Axis(self.axis))
        if self.direction is not None:
            object.__setattr__(self, "direction", Direction(self.direction))
        if self.plane is Plane.XY:
            if self.axis is None or self.direction is None:
                raise ValueError("XY label needs both axis and direction")
            if self.direction.axis is not self.axis:
                raise ValueError(f"direction {self.direction.value} does not lie on axis {self.axis.value}")
        elif self.axis is not None or self.direction is not None:
            raise ValueError("Z label cannot carry an axis or direction")

    @property
    def shape_key(self) -> tuple:
        """(plane, axis, direction): the geometric part of the label."""
        return (self.plane, self.axis, self.direction)

    @property
    def run_key(self) -> tuple:
        """Fields that must agree for two frames to belong to one segment."""
        return (self.plane, self.axis, self.direction, self.header)

    def to_string(self) -> str:
        axis = self.axis.value if self.axis else "-"
        direction = self.direction.value if self.direction else "-"
        return f"{self.plane.value}/{axis}/{direction}/{self.header.value}/{self.speed_class.value}"

    @classmethod
    def from_string(cls, text: str) -> "MovementLabel":
        parts = text.strip().split("/")
        if len(parts) != 5:
            raise ValueError(f"bad label {text!r}")
        plane, axis, direction, header, speed = parts
        return cls(
            plane,
            None if axis == "-" else axis,
            None if direction == "-" else direction,
            header,
            speed,
        )

    def __str__(self):
        return self.to_string()


@dataclass(frozen=True)
class GCommand:
    """One parsed G-code line.

    ``opcode`` is one of G0, G1, G28, G21, G90, G92 or ``M`` for pass-through
    records (M-codes kept verbatim in ``text``). For G28, an axis present with
    no value is stored as 0.0 (home that axis).
    """

    opcode: str
    x: Optional[float] = None
    y: Optional[float] = None
    z: Optional[float] = None
    e: Optional[float] = None
    f: Optional[float] = None
    line: int = 0
    text: str = ""

    def __post_init__(self):
        values = [self.x, self.y, self.z, self.e, self.f]
        if self.opcode in ("G0", "G1") and all(v is None for v in values):
            raise GCodeError(f"{self.opcode} without any X/Y/Z/E/F word", self.line or None)
        for v in values:
            if v is not None and not math.isfinite(v):
                raise GCodeError("non-finite value", self.line or None)
        if self.f is not None and self.f <= 0:
            raise GCodeError("feed rate must be positive", self.line or None)


@dataclass(frozen=True)
class MotionSegment:
    start: tuple
    end: tuple
    feed: float
    extruding: bool
    layer: int = 0
    label: Optional[MovementLabel] = None

    @property
    def delta(self) -> np.ndarray:
        return np.subtract(self.end, self.start, dtype=float)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.delta))

    @property
    def duration(self) -> float:
        """Seconds at constant feed (no acceleration model)."""
        return self.length * 60.0 / self.feed


@dataclass(frozen=True)
class Toolpath:
    segments: tuple = ()
    origin: tuple = (0.0, 0.0, 0.0)
    units: str = "mm"

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        prev = self.origin if self.segments else None
        for i, seg in enumerate(self.segments):
            if max(abs(a - b) for a, b in zip(prev, seg.start)) > CONTIGUITY_TOL:
                raise ValueError(f"segment {i} does not start where the previous one ends")
            prev = seg.end

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, i):
        return self.segments[i]

    @property
    def duration(self) -> float:
        return float(sum(s.duration for s in self.segments))


# ---------------------------------------------------------------------------
# Parsing

_WORD_RE = re.compile(r"([A-Za-z])\s*([^A-Za-z\s]*)")
_PAREN_RE = re.compile(r"\([^)]*\)")
_CHECKSUM_RE = re.compile(r"\*\d*\s*$")
_SUPPORTED_G = {0: "G0", 1: "G1", 21: "G21", 28: "G28", 90: "G90", 92: "G92"}
_UNSUPPORTED_G = {
    2: "arcs are not supported",
    3: "arcs are not supported",
    20: "inch units are not supported",
    91: "relative positioning is not supported",
}


def _strip_comments(line: str) -> str:
    line = line.split(";", 1)[0]
    line = _PAREN_RE.sub(" ", line)
    if "(" in line:  # unterminated comment runs to end of line
        line = line.split("(", 1)[0]
    return _CHECKSUM_RE.sub("", line).strip()


def _number(letter: str, raw: str, lineno: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise GCodeError(f"malformed number for {letter}: {raw!r}", lineno) from None
    if not math.isfinite(value):
        raise GCodeError(f"non-finite value for {letter}", lineno)
    return value


def parse_line(line: str, lineno: int = 0) -> Optional[GCommand]:
    """Parse one line; returns None for blank and comment-only lines."""
    code = _strip_comments(line)
    if not code:
        return None
    words = _WORD_RE.findall(code)
    leftover = _WORD_RE.sub("", code).strip()
    if leftover or not words:
        raise GCodeError(f"unparseable text {code!r}", lineno)
    words = [(letter.upper(), raw) for letter, raw in words]
    if words[0][0] == "N":  # line-number word
        words = words[1:]
        if not words:
            return None
    letter, raw = words[0]
    if letter == "M":
        _number("M", raw, lineno)
        return GCommand("M", line=lineno, text=code)
    if letter != "G":
        raise GCodeError(f"unknown command word {letter}{raw}", lineno)

    gnum = _number("G", raw, lineno)
    if gnum != int(gnum):
        raise GCodeError(f"unknown G-word G{raw}", lineno)
    gnum = int(gnum)
    if gnum in _UNSUPPORTED_G:
        raise GCodeError(f"G{gnum}: {_UNSUPPORTED_G[gnum]}", lineno)
    if gnum not in _SUPPORTED_G:
        raise GCodeError(f"unknown G-word G{gnum}", lineno)
    opcode = _SUPPORTED_G[gnum]

    fields = {}
    allowed = {"G0": "XYZEF", "G1": "XYZEF", "G28": "XYZ", "G92": "XYZE", "G21": "", "G90": ""}[opcode]
    for letter, raw in words[1:]:
        if letter not in allowed:
            raise GCodeError(f"word {letter} not allowed in {opcode}", lineno)
        if letter.lower() in fields:
            raise GCodeError(f"duplicate {letter} word", lineno)
        if opcode == "G28" and raw == "":
            fields[letter.lower()] = 0.0
        else:
            fields[letter.lower()] = _number(letter, raw, lineno)
    return GCommand(opcode, line=lineno, text=code, **fields)


def parse_gcode(text: str | Iterable[str]) -> list:
    """Parse G-code text (a string or an iterable of lines) into GCommands.

    Raises :class:`GCodeError` carrying the 1-based line number on malformed
    numbers and unknown or unsupported G-words.
    """
    lines = text.splitlines() if isinstance(text, str) else text
    commands = []
    for lineno, line in enumerate(lines, start=1):
        cmd = parse_line(line.rstrip("\r\n"), lineno)
        if cmd is not None:
            commands.append(cmd)
    return commands


# ---------------------------------------------------------------------------
# Interpretation


def classify_segment(s: MotionSegment, speed_boundary: float = DEFAULT_SPEED_BOUNDARY) -> MovementLabel:
    """Label a segment by dominant axis, sign, extrusion flag and feed.

    Z wins only when |dz| is strictly larger than both |dx| and |dy|; an exact
    |dx| == |dy| tie goes to X. Feeds at or above ``speed_boundary`` are Fast.
    """
    dx, dy, dz = s.delta
    if dx == 0 and dy == 0 and dz == 0:
        raise ValueError("cannot classify a zero-length segment")
    header = Header.Printing if s.extruding else Header.Positioning
    speed = SpeedClass.Fast if s.feed >= speed_boundary else SpeedClass.Slow
    if abs(dz) > max(abs(dx), abs(dy)):
        return MovementLabel(Plane.Z, header=header, speed_class=speed)
    if abs(dx) >= abs(dy):
        direction = Direction.XLeft if dx < 0 else Direction.XRight
        return MovementLabel(Plane.XY, Axis.X, direction, header, speed)
    direction = Direction.YUp if dy > 0 else Direction.YDown
    return MovementLabel(Plane.XY, Axis.Y, direction, header, speed)


def to_toolpath(
    commands: Sequence[GCommand],
    start: Sequence[float] = (0.0, 0.0, 0.0),
    speed_boundary: float = DEFAULT_SPEED_BOUNDARY,
) -> Toolpath:
    """Run a command stream through a modal absolute-mode interpreter.

    Absent coordinates and feed inherit the previous values. ``G92`` may set
    X/Y/Z only before the first segment (it defines the origin); ``G28`` homes
    to ``start`` and produces a travel segment if the nozzle was elsewhere.
    """
    pos = tuple(float(c) for c in start)
    origin = pos
    feed = None
    e_pos = 0.0
    layer = 0
    segments = []

    for cmd in commands:
        if cmd.opcode in ("M", "G21", "G90"):
            continue
        if cmd.opcode == "G92":
            if cmd.e is not None:
                e_pos = cmd.e
            if any(v is not None for v in (cmd.x, cmd.y, cmd.z)):
                if segments:
                    raise GCodeError("G92 may only set X/Y/Z before the first move", cmd.line or None)
                pos = tuple(c if v is None else v for c, v in zip(pos, (cmd.x, cmd.y, cmd.z)))
                origin = pos
            continue

        extruding = False
        if cmd.opcode == "G28":
            homed = (cmd.x, cmd.y, cmd.z)
            if all(v is None for v in homed):
                target = tuple(float(c) for c in start)
            else:
                target = tuple(s if v is not None else p for p, s, v in zip(pos, start, homed))
        else:
            if cmd.f is not None:
                feed = cmd.f
            target = tuple(p if v is None else v for p, v in zip(pos, (cmd.x, cmd.y, cmd.z)))
            if cmd.e is not None:
                extruding = cmd.e > e_pos
                e_pos = cmd.e

        if target == pos:
            continue
        if feed is None:
            raise GCodeError("no feed rate established", cmd.line or None)
        if target[2] > pos[2]:
            layer += 1
        seg = MotionSegment(pos, target, feed, extruding, layer)
        segments.append(replace(seg, label=classify_segment(seg, speed_boundary)))
        pos = target

    if not segments:
        origin = pos
    return Toolpath(tuple(segments), origin)


def toolpath_from_gcode(text, start=(0.0, 0.0, 0.0), speed_boundary=DEFAULT_SPEED_BOUNDARY) -> Toolpath:
    return to_toolpath(parse_gcode(text), start, speed_boundary)


def build_toolpath(origin, moves, speed_boundary: float = DEFAULT_SPEED_BOUNDARY) -> Toolpath:
    """Chain ``(end, feed, extruding)`` moves from ``origin`` into a labelled Toolpath."""
    pos = tuple(float(c) for c in origin)
    layer = 0
    segments = []
    for end, feed, extruding in moves:
        end = tuple(float(c) for c in end)
        if end[2] > pos[2]:
            layer += 1
        seg = MotionSegment(pos, end, float(feed), bool(extruding), layer)
        segments.append(replace(seg, label=classify_segment(seg, speed_boundary)))
        pos = end
    return Toolpath(tuple(segments), origin)


# ---------------------------------------------------------------------------
# Emission


def _fmt(v: float) -> str:
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def emit_gcode(t: Toolpath) -> str:
    """Render a Toolpath as absolute-mode G1 lines.

    Output is deterministic: X/Y/Z with 3 decimals, E (cumulative) with 5
    decimals on extruding moves, F as an integer.
    """
    ox, oy, oz = t.origin
    lines = [
        f"; toolpath, {len(t.segments)} segments",
        "G21",
        "G90",
        f"G92 X{_fmt(ox)} Y{_fmt(oy)} Z{_fmt(oz)} E0",
    ]
    e_total = 0.0
    for seg in t.segments:
        x, y, z = seg.end
        words = [f"G1 X{_fmt(x)} Y{_fmt(y)} Z{_fmt(z)}"]
        if seg.extruding:
            e_total += max(seg.length * EXTRUSION_PER_MM, 1e-4)
            words.append(f"E{e_total:.5f}")
        words.append(f"F{int(round(seg.feed))}")
        lines.append(" ".join(words))
    lines.append("; end")
    return "\n".join(lines) + "\n"
