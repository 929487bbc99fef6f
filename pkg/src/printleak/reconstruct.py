"""From per-frame labels back to a toolpath, and how far it is from the truth."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gcode import DEFAULT_FEED_MAP, Direction, Header, MovementLabel, Plane, Toolpath, build_toolpath
from .ingest import DEFAULT_FRAME_MS

DEFAULT_LAYER_HEIGHT = 0.2  # mm per detected Z run

_UNIT = {
    Direction.XLeft: (-1.0, 0.0, 0.0),
    Direction.XRight: (1.0, 0.0, 0.0),
    Direction.YUp: (0.0, 1.0, 0.0),
    Direction.YDown: (0.0, -1.0, 0.0),
}


def _vote(values: list, window: int) -> list:
    half = window // 2
    out = []
    for i, own in enumerate(values):
        votes = Counter(values[max(0, i - half) : i + half + 1])
        winner, count = max(votes.items(), key=lambda kv: kv[1])
        out.append(winner if 2 * count > sum(votes.values()) else own)
    return out


def smooth_labels(labels: Sequence[MovementLabel], window: int = 3) -> list:
    """Sliding majority vote; output length is preserved.

    The shape (plane, axis, direction), the header and the speed class are
    voted separately, mirroring the independent cascade decisions, so one
    wrong field does not shield another from correction. The window is
    truncated at both ends; a field with no strict majority keeps its value.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd number")
    labels = list(labels)
    shapes = _vote([lab.shape_key for lab in labels], window)
    headers = _vote([lab.header for lab in labels], window)
    speeds = _vote([lab.speed_class for lab in labels], window)
    return [MovementLabel(*shape, h, s) for shape, h, s in zip(shapes, headers, speeds)]


def _runs(labels: list) -> list:
    """[start, stop) index pairs of maximal equal-run_key runs."""
    bounds, i = [], 0
    while i < len(labels):
        j = i + 1
        while j < len(labels) and labels[j].run_key == labels[i].run_key:
            j += 1
        bounds.append((i, j))
        i = j
    return bounds


def absorb_short_runs(labels: Sequence[MovementLabel], min_frames: int = 2) -> list:
    """Relabel XY runs shorter than ``min_frames`` with a neighbouring run's label.

    A lone frame between two movements is almost always a boundary frame or
    a misclassification; keeping it would add a spurious segment. The
    neighbour on the same axis wins, otherwise the preceding run. Z runs are
    kept whatever their length, since a layer change may span a single frame.
    """
    labels = list(labels)
    if min_frames <= 1:
        return labels
    while True:
        runs = _runs(labels)
        short = [
            k for k, (i, j) in enumerate(runs)
            if j - i < min_frames and labels[i].plane is Plane.XY and len(runs) > 1
        ]
        if not short:
            return labels
        k = short[0]
        i, j = runs[k]
        prev = labels[runs[k - 1][0]] if k > 0 else None
        nxt = labels[runs[k + 1][0]] if k + 1 < len(runs) else None
        own_axis = labels[i].axis
        if prev is not None and prev.axis is own_axis:
            donor = prev
        elif nxt is not None and nxt.axis is own_axis:
            donor = nxt
        else:
            donor = prev if prev is not None else nxt
        labels[i:j] = [donor] * (j - i)


@dataclass(frozen=True)
class PredictedSegment:
    label: MovementLabel
    n_frames: int
    duration: float  # s
    inferred_feed: float  # mm/min
    inferred_length: float  # mm

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("a segment spans at least one frame")


def segment_labels(
    labels: Sequence[MovementLabel],
    frame_ms: float = DEFAULT_FRAME_MS,
    feed_map: dict = DEFAULT_FEED_MAP,
    layer_height: float = DEFAULT_LAYER_HEIGHT,
) -> list:
    """Collapse maximal runs of equal (plane, axis, direction, header) into segments.

    The majority speed class of a run picks its feed from ``feed_map`` (ties
    go to the class seen first). Z runs always climb ``layer_height``; their
    feed is whatever covers that height in the run's duration.
    """
    segments = []
    i = 0
    labels = list(labels)
    frame_s = frame_ms / 1000.0
    while i < len(labels):
        j = i
        key = labels[i].run_key
        while j < len(labels) and labels[j].run_key == key:
            j += 1
        run = labels[i:j]
        speeds = Counter(lab.speed_class for lab in run)
        top = max(speeds.values())
        speed = next(lab.speed_class for lab in run if speeds[lab.speed_class] == top)
        label = MovementLabel(run[0].plane, run[0].axis, run[0].direction, run[0].header, speed)
        duration = (j - i) * frame_s
        if label.plane is Plane.Z:
            length = layer_height
            feed = length * 60.0 / duration
        else:
            feed = float(feed_map[speed.value])
            length = feed * duration / 60.0
        segments.append(PredictedSegment(label, j - i, duration, feed, length))
        i = j
    return segments


def segments_to_toolpath(segs: Sequence[PredictedSegment], start=(0.0, 0.0, 0.0)) -> Toolpath:
    """Chain segments head to tail; Z segments always move up."""
    pos = np.array(start, dtype=float)
    moves = []
    for s in segs:
        unit = (0.0, 0.0, 1.0) if s.label.plane is Plane.Z else _UNIT[s.label.direction]
        pos = np.round(pos + s.inferred_length * np.array(unit), 9)  # 1 nm grid, as emitted paths use
        moves.append((tuple(pos), s.inferred_feed, s.label.header is Header.Printing))
    return build_toolpath(tuple(float(c) for c in start), moves)


# ---------------------------------------------------------------------------
# Mean tendency error


@dataclass(frozen=True)
class MteResult:
    """Normative score plus the alternates.

    ``pairs`` holds (original index, reconstructed index, relative error).
    """

    percent: float
    length_weighted: float
    signed: float
    pairs: tuple
    unmatched_original: tuple
    unmatched_reconstructed: tuple


def _shape(seg) -> tuple:
    return seg.label.shape_key


def _greedy_alignment(orig_keys, rec_keys) -> list:
    pairs, cursor = [], 0
    for i, key in enumerate(orig_keys):
        for j in range(cursor, len(rec_keys)):
            if rec_keys[j] == key:
                pairs.append((i, j))
                cursor = j + 1
                break
    return pairs


def _dp_alignment(orig_keys, rec_keys, cost) -> list:
    """Order-preserving matching of minimum total error (unmatched = 1 each)."""
    n, m = len(orig_keys), len(rec_keys)
    best = np.zeros((n + 1, m + 1))
    best[:, 0] = np.arange(n + 1)
    best[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            options = [best[i - 1, j] + 1.0, best[i, j - 1] + 1.0]
            if orig_keys[i - 1] == rec_keys[j - 1]:
                options.append(best[i - 1, j - 1] + cost(i - 1, j - 1))
            best[i, j] = min(options)
    pairs, i, j = [], n, m
    while i > 0 and j > 0:
        if orig_keys[i - 1] == rec_keys[j - 1] and best[i, j] == best[i - 1, j - 1] + cost(i - 1, j - 1):
            pairs.append((i - 1, j - 1))
            i, j = i - 1, j - 1
        elif best[i, j] == best[i - 1, j] + 1.0:
            i -= 1
        else:
            j -= 1
    return pairs[::-1]


def mte_details(reconstructed: Toolpath, original: Toolpath, matching: str = "greedy") -> MteResult:
    """Mean tendency error with its breakdown.

    Segments are paired in order on (plane, axis, direction). ``matching``
    is ``"greedy"`` (each original segment takes the next reconstructed one
    of the same shape) or ``"optimal"`` (order-preserving alignment of
    least total error). A pair scores |len_rec - len_orig| / len_orig; an
    unpaired segment on either side scores 1. The percentage is the mean
    over pairs and unpaired segments.
    """
    if len(original) == 0:
        raise ValueError("original toolpath is empty")
    orig = list(original.segments)
    rec = list(reconstructed.segments)
    ok, rk = [_shape(s) for s in orig], [_shape(s) for s in rec]
    lo = np.array([s.length for s in orig])
    lr = np.array([s.length for s in rec])

    def cost(i, j):
        return abs(lr[j] - lo[i]) / lo[i]

    if matching == "greedy":
        pairs = _greedy_alignment(ok, rk)
    elif matching == "optimal":
        pairs = _dp_alignment(ok, rk, cost)
    else:
        raise ValueError(f"unknown matching {matching!r}")

    matched_o = {i for i, _ in pairs}
    matched_r = {j for _, j in pairs}
    free_o = tuple(i for i in range(len(orig)) if i not in matched_o)
    free_r = tuple(j for j in range(len(rec)) if j not in matched_r)
    errors = [cost(i, j) for i, j in pairs]
    count = len(pairs) + len(free_o) + len(free_r)
    percent = 100.0 * (sum(errors) + len(free_o) + len(free_r)) / count
    weighted = 100.0 * (
        sum(abs(lr[j] - lo[i]) for i, j in pairs) + lo[list(free_o)].sum() + lr[list(free_r)].sum()
    ) / lo.sum()
    signed = 100.0 * float(np.mean([(lr[j] - lo[i]) / lo[i] for i, j in pairs])) if pairs else 0.0
    return MteResult(
        float(percent),
        float(weighted),
        signed,
        tuple((i, j, float(e)) for (i, j), e in zip(pairs, errors)),
        free_o,
        free_r,
    )


def mean_tendency_error(reconstructed: Toolpath, original: Toolpath, matching: str = "greedy") -> float:
    """MTE in percent; the original toolpath is the ground truth."""
    return mte_details(reconstructed, original, matching).percent


# ---------------------------------------------------------------------------
# Overlay


@dataclass(frozen=True)
class Overlay:
    """XY polylines per layer; ``lines[source][layer]`` is an (n, 2) array."""

    lines: dict

    def rows(self):
        for source in sorted(self.lines):
            for layer in sorted(self.lines[source]):
                for k, (x, y) in enumerate(self.lines[source][layer]):
                    yield source, layer, k, float(x), float(y)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["source", "layer", "point", "x_mm", "y_mm"])
        for source, layer, k, x, y in self.rows():
            w.writerow([source, layer, k, f"{x:.4f}", f"{y:.4f}"])
        return buf.getvalue()

    def to_svg(self, size_px: int = 480, margin_mm: float = 2.0) -> str:
        pts = np.array([(x, y) for *_, x, y in self.rows()]) if any(True for _ in self.rows()) else np.zeros((1, 2))
        lo = pts.min(axis=0) - margin_mm
        span = float(max((pts.max(axis=0) + margin_mm - lo).max(), 1e-9))
        scale = size_px / span
        colors = {"original": "#1f77b4", "reconstructed": "#d62728"}
        dashes = {"original": "", "reconstructed": ' stroke-dasharray="6 3"'}
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size_px}" height="{size_px}" '
            f'viewBox="0 0 {size_px} {size_px}">',
            f'<rect width="{size_px}" height="{size_px}" fill="white"/>',
        ]
        for source in sorted(self.lines):
            color = colors.get(source, "#555555")
            for layer in sorted(self.lines[source]):
                xy = self.lines[source][layer]
                coords = " ".join(
                    f"{(x - lo[0]) * scale:.2f},{size_px - (y - lo[1]) * scale:.2f}" for x, y in xy
                )
                out.append(
                    f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"'
                    f'{dashes.get(source, "")} opacity="0.8"><title>{source} layer {layer}</title></polyline>'
                )
        for i, (source, color) in enumerate(sorted(colors.items())):
            out.append(f'<text x="8" y="{16 + 14 * i}" font-size="12" fill="{color}">{source}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"


def _layer_polylines(t: Toolpath) -> dict:
    lines = {}
    for seg in t.segments:
        if seg.label is not None and seg.label.plane is Plane.Z:
            continue
        pts = lines.setdefault(seg.layer, [seg.start[:2]])
        if tuple(pts[-1]) != tuple(seg.start[:2]):
            pts.append(seg.start[:2])
        pts.append(seg.end[:2])
    return {layer: np.array(pts, dtype=float) for layer, pts in lines.items()}


def compare_overlay(reconstructed: Toolpath, original: Toolpath) -> Overlay:
    return Overlay({"original": _layer_polylines(original), "reconstructed": _layer_polylines(reconstructed)})


# ---------------------------------------------------------------------------
# Report


@dataclass(frozen=True)
class ReconstructionReport:
    reconstructed: Toolpath
    mte: MteResult
    accuracies: dict = field(default_factory=dict)
    overlay: Optional[Overlay] = None
    original: Optional[Toolpath] = None

    @property
    def mte_percent(self) -> float:
        return self.mte.percent

    def segment_rows(self) -> list:
        """(kind, original idx, reconstructed idx, shape, len_orig, len_rec, rel_err) per entry."""
        rows = []
        orig = self.original.segments if self.original is not None else ()
        rec = self.reconstructed.segments
        for i, j, e in self.mte.pairs:
            rows.append(("matched", i, j, _shape_name(orig[i]), orig[i].length, rec[j].length, e))
        for i in self.mte.unmatched_original:
            rows.append(("missing", i, "", _shape_name(orig[i]), orig[i].length, "", 1.0))
        for j in self.mte.unmatched_reconstructed:
            rows.append(("extra", "", j, _shape_name(rec[j]), "", rec[j].length, 1.0))
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "original_idx", "reconstructed_idx", "shape", "len_original_mm", "len_reconstructed_mm", "rel_error"])
        for kind, i, j, shape, a, b, e in self.segment_rows():
            w.writerow([kind, i, j, shape, _num(a), _num(b), f"{e:.6f}"])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"segments: original {len(self.original) if self.original is not None else '?'}, "
            f"reconstructed {len(self.reconstructed)}",
            f"MTE: {self.mte.percent:.2f}%",
            f"  length-weighted: {self.mte.length_weighted:.2f}%",
            f"  signed (matched only): {self.mte.signed:+.2f}%",
            f"  unmatched: {len(self.mte.unmatched_original)} original, {len(self.mte.unmatched_reconstructed)} reconstructed",
        ]
        if self.accuracies:
            lines.append("node accuracy:")
            lines += [f"  {k:<8} {100 * v:6.2f}%" for k, v in self.accuracies.items()]
        return "\n".join(lines) + "\n"


def _shape_name(seg) -> str:
    lab = seg.label
    return lab.plane.value if lab.plane is Plane.Z else lab.direction.value


def _num(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def reconstruct(
    labels: Sequence[MovementLabel],
    start=(0.0, 0.0, 0.0),
    frame_ms: float = DEFAULT_FRAME_MS,
    window: int = 3,
    feed_map: dict = DEFAULT_FEED_MAP,
    layer_height: float = DEFAULT_LAYER_HEIGHT,
    min_run: int = 2,
) -> Toolpath:
    """Per-frame labels to a toolpath starting at ``start``.

    Labels are majority-smoothed, then XY runs shorter than ``min_run``
    frames are absorbed into a neighbour before segmentation.
    """
    smoothed = smooth_labels(labels, window) if window > 1 else list(labels)
    smoothed = absorb_short_runs(smoothed, min_run)
    return segments_to_toolpath(segment_labels(smoothed, frame_ms, feed_map, layer_height), start)
