"""Hierarchical movement classifier built from six binary GBDT nodes.

Decision order for one frame::

    layer (Z | XY)
      XY -> axial (X | Y) -> dir_x (XLeft | XRight)  or  dir_y (YUp | YDown)
    header (Printing | Positioning)   always
    speed  (Slow | Fast)              always

Each node sees only its own feature columns and is trained only on the
frames it is responsible for (dir_x on X-axis frames, and so on).
"""

from __future__ import annotations

import csv
import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .features import FeatureVector, MfccConfig, acoustic_columns, magnetic_columns
from .gbdt import GbdtParams, Dataset, ModelFormatError, dumps_model, loads_model, train
from .gcode import Axis, Direction, Header, MovementLabel, Plane, SpeedClass

NODES = ("layer", "axial", "dir_x", "dir_y", "header", "speed")
NODE_CLASSES = {
    "layer": ("Z", "XY"),
    "axial": ("X", "Y"),
    "dir_x": ("XLeft", "XRight"),
    "dir_y": ("YUp", "YDown"),
    "header": ("Printing", "Positioning"),
    "speed": ("Slow", "Fast"),
}
TRAIN_FRACTION = 0.25

CASCADE_MAGIC = b"PLCASC\x00\x00"
CASCADE_VERSION = 1
_PREFIX = struct.Struct("<8sHI")


class CascadeError(ValueError):
    """A cascade is incomplete or a cascade file is invalid."""


class MissingClassError(ValueError):
    """Training data lacks one of a node's two classes."""


def default_masks(cfg: MfccConfig = MfccConfig()) -> dict:
    """Column lists per node: magnetic for geometry, acoustic for header and speed."""
    acoustic = acoustic_columns(cfg)
    magnetic = magnetic_columns(cfg)
    return {
        "layer": acoustic + magnetic,
        "axial": magnetic,
        "dir_x": magnetic,
        "dir_y": magnetic,
        "header": acoustic,
        "speed": acoustic,
    }


def node_target(node: str, label: MovementLabel) -> Optional[int]:
    """Class index of ``label`` at ``node``, or None when the node does not apply."""
    if node == "layer":
        value = label.plane.value
    elif node == "axial":
        if label.plane is not Plane.XY:
            return None
        value = label.axis.value
    elif node in ("dir_x", "dir_y"):
        wanted = Axis.X if node == "dir_x" else Axis.Y
        if label.axis is not wanted:
            return None
        value = label.direction.value
    elif node == "header":
        value = label.header.value
    elif node == "speed":
        value = label.speed_class.value
    else:
        raise KeyError(node)
    return NODE_CLASSES[node].index(value)


@dataclass(frozen=True)
class NodeScore:
    """Exact counts for one node; ``confusion[true][pred]``."""

    correct: int
    total: int
    confusion: tuple

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else float("nan")

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int = 2) -> "NodeScore":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        conf = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(conf, (y_true, y_pred), 1)
        return cls(int(np.trace(conf)), int(conf.sum()), tuple(tuple(int(v) for v in r) for r in conf))


@dataclass(eq=False)
class CascadeModel:
    models: dict  # node -> GbdtModel
    masks: dict  # node -> list of column indices
    scores: dict  # node -> NodeScore on held-out frames
    n_features: int
    names: list = field(default_factory=list)

    def __post_init__(self):
        missing = [n for n in NODES if n not in self.models]
        if missing:
            raise CascadeError(f"cascade lacks node(s): {', '.join(missing)}")
        for node in NODES:
            mask = list(self.masks[node])
            if not mask or min(mask) < 0 or max(mask) >= self.n_features:
                raise CascadeError(f"{node} mask does not fit {self.n_features} features")

    @property
    def accuracies(self) -> dict:
        return {n: self.scores[n].accuracy for n in NODES if n in self.scores}

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([self.scores[n].accuracy for n in NODES]))


def _as_matrix(X) -> np.ndarray:
    if isinstance(X, FeatureVector):
        return X.as_array()[None, :]
    X = np.asarray(X, dtype=float)
    return X[None, :] if X.ndim == 1 else X


def _stratified_split(y: np.ndarray, fraction: float, rng) -> tuple:
    train_idx, test_idx = [], []
    for k in np.unique(y):
        members = np.flatnonzero(y == k)
        members = members[rng.permutation(len(members))]
        n_train = min(len(members), max(1, int(round(fraction * len(members)))))
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def node_dataset(node: str, X, labels: Sequence[MovementLabel]) -> tuple:
    """Rows relevant to ``node`` and their class indices."""
    targets = [node_target(node, lab) for lab in labels]
    rows = np.array([i for i, t in enumerate(targets) if t is not None], dtype=np.int64)
    y = np.array([t for t in targets if t is not None], dtype=np.int64)
    return np.asarray(X)[rows] if len(rows) else np.zeros((0, np.asarray(X).shape[1])), y


def train_cascade(
    X,
    labels: Sequence[MovementLabel],
    params: GbdtParams = GbdtParams(),
    masks: Optional[dict] = None,
    train_fraction: float = TRAIN_FRACTION,
    seed: int = 0,
    names: Optional[Sequence[str]] = None,
) -> CascadeModel:
    """Train every node on a stratified ``train_fraction`` of its frames.

    The remaining frames give each node's held-out score. Raises
    :class:`MissingClassError` naming the node when one of its classes is absent.
    """
    X = _as_matrix(X)
    if len(X) != len(labels):
        raise ValueError("one label per feature row is required")
    masks = default_masks() if masks is None else masks
    models, scores = {}, {}
    for i, node in enumerate(NODES):
        Xn, yn = node_dataset(node, X, labels)
        present = set(yn.tolist())
        for k, name in enumerate(NODE_CLASSES[node]):
            if k not in present:
                raise MissingClassError(f"{node} missing class {name}")
        rng = np.random.default_rng([seed, i])
        tr, te = _stratified_split(yn, train_fraction, rng)
        node_params = GbdtParams(**{**params.__dict__, "seed": params.seed + i})
        model = train(Dataset(Xn[tr], yn[tr], 2, masks[node]), node_params)
        models[node] = model
        if len(te):
            scores[node] = NodeScore.from_predictions(yn[te], model.predict_class(Xn[te]))
        else:
            scores[node] = NodeScore(0, 0, ((0, 0), (0, 0)))
    return CascadeModel(models, {n: list(masks[n]) for n in NODES}, scores, X.shape[1], list(names or []))


def _node_predict(c: CascadeModel, node: str, X: np.ndarray, rows: np.ndarray, visited) -> np.ndarray:
    if visited is not None and len(rows):
        visited.append(node)
    if len(rows) == 0:
        return np.zeros(0, dtype=np.int64)
    return c.models[node].predict_class(X[rows])


def classify_frames(c: CascadeModel, X, visited: Optional[list] = None) -> list:
    """Labels for every row of X, each node evaluated only where the order reaches it.

    When ``visited`` is a list, the names of evaluated nodes are appended.
    """
    X = _as_matrix(X)
    if X.shape[1] != c.n_features:
        raise ValueError(f"expected {c.n_features} features, got {X.shape[1]}")
    n = len(X)
    everyone = np.arange(n)
    is_xy = _node_predict(c, "layer", X, everyone, visited) == 1
    xy_rows = np.flatnonzero(is_xy)
    on_y = np.zeros(n, dtype=bool)
    on_y[xy_rows] = _node_predict(c, "axial", X, xy_rows, visited) == 1
    x_rows = np.flatnonzero(is_xy & ~on_y)
    y_rows = np.flatnonzero(is_xy & on_y)
    direction = np.empty(n, dtype=object)
    direction[x_rows] = [NODE_CLASSES["dir_x"][k] for k in _node_predict(c, "dir_x", X, x_rows, visited)]
    direction[y_rows] = [NODE_CLASSES["dir_y"][k] for k in _node_predict(c, "dir_y", X, y_rows, visited)]
    header = _node_predict(c, "header", X, everyone, visited)
    speed = _node_predict(c, "speed", X, everyone, visited)

    out = []
    for i in range(n):
        h = Header(NODE_CLASSES["header"][header[i]])
        s = SpeedClass(NODE_CLASSES["speed"][speed[i]])
        if is_xy[i]:
            axis = Axis.Y if on_y[i] else Axis.X
            out.append(MovementLabel(Plane.XY, axis, Direction(direction[i]), h, s))
        else:
            out.append(MovementLabel(Plane.Z, None, None, h, s))
    return out


def classify_frame(c: CascadeModel, v, visited: Optional[list] = None) -> MovementLabel:
    return classify_frames(c, _as_matrix(v)[:1], visited)[0]


# ---------------------------------------------------------------------------
# Evaluation


@dataclass(frozen=True)
class CascadeReport:
    scores: dict  # node -> NodeScore
    full_correct: int
    full_total: int

    @property
    def mean_accuracy(self) -> float:
        vals = [s.accuracy for s in self.scores.values() if s.total]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def full_accuracy(self) -> float:
        return self.full_correct / self.full_total if self.full_total else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "class_0", "class_1", "correct", "total", "accuracy", "n00", "n01", "n10", "n11"])
        for node, s in self.scores.items():
            (a, b), (c, d) = s.confusion
            w.writerow([node, *NODE_CLASSES[node], s.correct, s.total, f"{s.accuracy:.6f}", a, b, c, d])
        w.writerow(["mean", "", "", "", "", f"{self.mean_accuracy:.6f}", "", "", "", ""])
        w.writerow(["full_label", "", "", self.full_correct, self.full_total, f"{self.full_accuracy:.6f}", "", "", "", ""])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = ["node     classes                    accuracy   correct/total"]
        for node, s in self.scores.items():
            classes = " vs ".join(NODE_CLASSES[node])
            lines.append(f"{node:<8} {classes:<26} {100 * s.accuracy:7.2f}%   {s.correct}/{s.total}")
        lines.append(f"{'mean':<8} {'':<26} {100 * self.mean_accuracy:7.2f}%")
        lines.append(f"{'full':<8} {'all five fields':<26} {100 * self.full_accuracy:7.2f}%   {self.full_correct}/{self.full_total}")
        lines.append("")
        for node, s in self.scores.items():
            a, b = NODE_CLASSES[node]
            w = max(len(a), len(b), 8)
            lines.append(f"{node} confusion (rows true, columns predicted)")
            lines.append(f"  {'':<{w}} {a:>{w}} {b:>{w}}")
            for name, row in zip((a, b), s.confusion):
                lines.append(f"  {name:<{w}} {row[0]:>{w}} {row[1]:>{w}}")
        return "\n".join(lines) + "\n"


def evaluate_cascade(c: CascadeModel, X, labels: Sequence[MovementLabel]) -> CascadeReport:
    """Score every node on the frames it is responsible for, plus whole-label accuracy."""
    X = _as_matrix(X)
    scores = {}
    for node in NODES:
        Xn, yn = node_dataset(node, X, labels)
        pred = c.models[node].predict_class(Xn) if len(yn) else np.zeros(0, dtype=np.int64)
        scores[node] = NodeScore.from_predictions(yn, pred)
    predicted = classify_frames(c, X) if len(X) else []
    correct = sum(p == t for p, t in zip(predicted, labels))
    return CascadeReport(scores, int(correct), len(labels))


# ---------------------------------------------------------------------------
# Cascade files
#
# magic | uint16 version | uint32 header length | JSON header
# | per node in NODES order: uint32 length, gbdt model bytes | uint32 CRC-32


def dumps_cascade(c: CascadeModel) -> bytes:
    header = {
        "nodes": list(NODES),
        "classes": {n: list(NODE_CLASSES[n]) for n in NODES},
        "masks": {n: [int(v) for v in c.masks[n]] for n in NODES},
        "scores": {n: {"correct": s.correct, "total": s.total, "confusion": [list(r) for r in s.confusion]}
                   for n, s in c.scores.items()},
        "n_features": int(c.n_features),
        "names": list(c.names),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [_PREFIX.pack(CASCADE_MAGIC, CASCADE_VERSION, len(head)), head]
    for node in NODES:
        blob = dumps_model(c.models[node])
        parts.append(struct.pack("<I", len(blob)))
        parts.append(blob)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads_cascade(data: bytes) -> CascadeModel:
    if len(data) < _PREFIX.size + 4:
        raise CascadeError("cascade file truncated")
    magic, version, head_len = _PREFIX.unpack_from(data)
    if magic != CASCADE_MAGIC:
        raise CascadeError("not a cascade file (bad magic)")
    if version != CASCADE_VERSION:
        raise CascadeError(f"unsupported cascade version {version}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CascadeError("cascade file checksum mismatch")
    pos = _PREFIX.size
    try:
        header = json.loads(body[pos : pos + head_len])
    except ValueError:
        raise CascadeError("cascade header is not valid JSON") from None
    pos += head_len
    models = {}
    for node in NODES:
        if pos + 4 > len(body):
            raise CascadeError("cascade file truncated")
        (n,) = struct.unpack_from("<I", body, pos)
        pos += 4
        try:
            models[node] = loads_model(body[pos : pos + n])
        except ModelFormatError as exc:
            raise CascadeError(f"{node} model: {exc}") from None
        pos += n
    scores = {
        n: NodeScore(v["correct"], v["total"], tuple(tuple(r) for r in v["confusion"]))
        for n, v in header["scores"].items()
    }
    return CascadeModel(models, header["masks"], scores, header["n_features"], header["names"])


def save_cascade(c: CascadeModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_cascade(c))


def load_cascade(path) -> CascadeModel:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CascadeError(f"cannot read cascade file {path}: {exc.strerror}") from None
    return loads_cascade(data)


# ---------------------------------------------------------------------------
# Frame label files: ``frame_idx,label`` with labels in MovementLabel string form


def write_label_csv(stream, labels: Sequence[MovementLabel]) -> None:
    stream.write("frame_idx,label\n")
    stream.write("".join(f"{i},{lab.to_string()}\n" for i, lab in enumerate(labels)))


def read_label_csv(stream) -> list:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["frame_idx", "label"]:
        raise ValueError("label file must start with 'frame_idx,label'")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 2 or int(row[0]) != len(out):
            raise ValueError(f"line {lineno}: expected consecutive frame_idx,label")
        out.append(MovementLabel.from_string(row[1]))
    return out
