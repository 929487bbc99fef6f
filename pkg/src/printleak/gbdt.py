"""Multiclass gradient boosted decision trees.

Softmax boosting: every round fits one regression tree per class to the
gradient of the multiclass log-loss, with second-order (Newton) leaf values
``-sum(g) / (sum(h) + lambda)``. Splits are found by exact greedy search over
the sorted unique values of each feature; a row goes left when its value is
``<=`` the threshold. Thresholds sit midway between consecutive distinct
training values, so unseen values in the gap are split evenly.

Model files are a small binary container::

    magic "PLGBDT\\0\\0" | uint16 version | uint32 header length
    | JSON header | int32 feature, left, right | float64 threshold, value
    | uint32 CRC-32 of everything before it

All integers little-endian. The JSON header holds the parameters, class
count, feature mask, base scores, loss curve and the node count of every tree.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

MAGIC = b"PLGBDT\x00\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sHI")


class ModelFormatError(ValueError):
    """A model file is truncated, corrupt or from an unsupported version."""


@dataclass(frozen=True)
class GbdtParams:
    n_rounds: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_leaf: int = 5
    subsample: float = 1.0
    reg_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.n_rounds < 0 or self.max_depth < 0 or self.min_leaf < 1:
            raise ValueError("n_rounds, max_depth must be >= 0 and min_leaf >= 1")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of features with integer class labels.

    ``feature_mask`` lists the columns the model may split on; None means all.
    """

    X: np.ndarray
    y: np.ndarray
    n_classes: int
    feature_mask: Optional[Sequence[int]] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if X.ndim != 2 or len(X) != len(y):
            raise ValueError("X must be (n, d) with one label per row")
        if len(y) and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError("class indices must lie in [0, n_classes)")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        mask = np.arange(X.shape[1]) if self.feature_mask is None else np.asarray(self.feature_mask, dtype=np.int64)
        if len(mask) and (mask.min() < 0 or mask.max() >= X.shape[1]):
            raise ValueError("feature mask refers to a missing column")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_mask", mask)


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of X."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return node
            go_left = X[rows, np.where(internal, feat, 0)] <= self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)


@dataclass(eq=False)
class GbdtModel:
    n_classes: int
    n_features: int
    learning_rate: float
    base_scores: np.ndarray
    trees: list  # trees[class] -> list of Tree, equal length per class
    feature_mask: np.ndarray
    params: GbdtParams = field(default_factory=GbdtParams)
    loss_curve: list = field(default_factory=list)

    @property
    def n_rounds(self) -> int:
        return len(self.trees[0]) if self.trees else 0

    def _as_matrix(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def decision_function(self, X) -> np.ndarray:
        X = self._as_matrix(X)
        scores = np.tile(self.base_scores, (len(X), 1))
        for k in range(self.n_classes):
            for tree in self.trees[k]:
                scores[:, k] += self.learning_rate * tree.predict(X)
        return scores

    def predict_proba(self, X) -> np.ndarray:
        single = np.asarray(X).ndim == 1
        p = _softmax(self.decision_function(X))
        return p[0] if single else p

    def predict_class(self, X):
        p = self.predict_proba(X)
        return np.argmax(p, axis=-1)  # first maximum -> lowest index on ties


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_loss(scores: np.ndarray, y: np.ndarray) -> float:
    z = scores - scores.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(log_p[np.arange(len(y)), y]))


class _TreeBuilder:
    """Depth-first exact greedy growth on presorted columns.

    Every node carries, per feature, the row indices of its members in
    ascending feature order; children inherit them by a stable partition, so
    nothing is re-sorted below the root.
    """

    def __init__(self, XT: np.ndarray, columns: np.ndarray, params: GbdtParams):
        self.XT = XT  # (d, n) masked columns
        self.columns = columns  # global feature index of each row of XT
        self.params = params
        self.order = np.argsort(XT, axis=1, kind="stable")
        self.sorted_x = np.take_along_axis(XT, self.order, axis=1)

    def build(self, g: np.ndarray, h: np.ndarray, member: Optional[np.ndarray] = None) -> Tree:
        self.g, self.h = g, h
        self.nodes = []
        if member is None or member.all():
            idx, xs = self.order, self.sorted_x
        else:
            keep = member[self.order]
            d, n_node = self.order.shape[0], int(np.count_nonzero(member))
            idx = self.order[keep].reshape(d, n_node)
            xs = self.sorted_x[keep].reshape(d, n_node)
        self._grow(idx, xs, 0)
        feature, threshold, left, right, value = zip(*self.nodes)
        return Tree(
            np.array(feature, dtype=np.int32),
            np.array(threshold, dtype=np.float64),
            np.array(left, dtype=np.int32),
            np.array(right, dtype=np.int32),
            np.array(value, dtype=np.float64),
        )

    def _leaf(self, rows) -> int:
        G = float(self.g[rows].sum())
        H = float(self.h[rows].sum())
        self.nodes.append((-1, 0.0, -1, -1, -G / (H + self.params.reg_lambda)))
        return len(self.nodes) - 1

    def _grow(self, idx, xs, depth) -> int:
        slot = len(self.nodes)
        self.nodes.append(None)
        rows = idx[0]
        G = float(self.g[rows].sum())
        H = float(self.h[rows].sum())
        p = self.params
        j = -1
        n_node = idx.shape[1]
        if depth < p.max_depth and idx.shape[0] > 0 and n_node >= max(2, 2 * p.min_leaf):
            j, i = _best_split(idx, xs, self.g, self.h, G, H, p.reg_lambda, p.min_leaf)
        if j < 0:
            self.nodes[slot] = (-1, 0.0, -1, -1, -G / (H + p.reg_lambda))
            return slot
        thr = _midpoint(float(xs[j, i]), float(xs[j, i + 1]))
        goes_left = self.XT[j] <= thr
        if depth + 1 >= p.max_depth:
            # children are leaves: only their gradient sums are needed
            left_rows = rows[goes_left[rows]]
            right_rows = rows[~goes_left[rows]]
            left = self._leaf(left_rows)
            right = self._leaf(right_rows)
        else:
            li, lx, ri, rx = _partition(idx, xs, goes_left, i + 1)
            left = self._grow(li, lx, depth + 1)
            right = self._grow(ri, rx, depth + 1)
        self.nodes[slot] = (int(self.columns[j]), thr, left, right, 0.0)
        return slot


_TIE_RTOL = 1e-9
_PRIOR_PSEUDOCOUNT = 1e-3  # keeps absent classes finite without diluting present ones


def _midpoint(lo: float, hi: float) -> float:
    mid = lo + (hi - lo) / 2.0
    return mid if lo <= mid < hi else lo  # adjacent floats: fall back to the lower value


@numba.njit(cache=True)
def _best_split(idx, xs, g, h, G, H, lam, min_leaf):
    """Scan every feature's sorted member list; return (feature row, position) or (-1, -1).

    Candidate thresholds sit between distinct consecutive values. The first
    maximum wins, so ties go to the lowest feature, then the lowest threshold.
    Gains equal up to summation-order rounding count as ties.
    Zero-gain splits are accepted (XOR-like targets need them); the small
    tolerance absorbs rounding in gradient sums that cancel exactly in theory.
    """
    d, n = idx.shape
    parent = G * G / (H + lam)
    best, bj, bi = -np.inf, -1, -1
    for j in range(d):
        GL = 0.0
        HL = 0.0
        for i in range(n - 1):
            r = idx[j, i]
            GL += g[r]
            HL += h[r]
            if i + 1 < min_leaf or n - i - 1 < min_leaf or not xs[j, i] < xs[j, i + 1]:
                continue
            GR = G - GL
            HR = H - HL
            gain = GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent
            if bj < 0 or gain > best + _TIE_RTOL * abs(best):
                best, bj, bi = gain, j, i
    if bj < 0 or not best >= -1e-12 * (parent + 1e-12):
        return -1, -1
    return bj, bi


@numba.njit(cache=True)
def _partition(idx, xs, goes_left, n_left):
    """Stable split of every feature's sorted member list into left and right."""
    d, n = idx.shape
    li = np.empty((d, n_left), dtype=idx.dtype)
    lx = np.empty((d, n_left))
    ri = np.empty((d, n - n_left), dtype=idx.dtype)
    rx = np.empty((d, n - n_left))
    for j in range(d):
        a = 0
        b = 0
        for i in range(n):
            r = idx[j, i]
            if goes_left[r]:
                li[j, a] = r
                lx[j, a] = xs[j, i]
                a += 1
            else:
                ri[j, b] = r
                rx[j, b] = xs[j, i]
                b += 1
    return li, lx, ri, rx


def train(d: Dataset, params: GbdtParams = GbdtParams()) -> GbdtModel:
    """Fit a softmax GBDT. Deterministic for fixed ``params.seed``."""
    X, y, K = d.X, d.y, d.n_classes
    n = len(y)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    columns = np.asarray(d.feature_mask, dtype=np.int64)
    XT = np.ascontiguousarray(X[:, columns].T)
    builder = _TreeBuilder(XT, columns, params)
    rng = np.random.default_rng(params.seed)

    counts = np.bincount(y, minlength=K).astype(float)
    base = np.log((counts + _PRIOR_PSEUDOCOUNT) / (n + K * _PRIOR_PSEUDOCOUNT))
    scores = np.tile(base, (n, 1))
    onehot = np.zeros((n, K))
    onehot[np.arange(n), y] = 1.0
    trees = [[] for _ in range(K)]
    loss_curve = [_log_loss(scores, y)]

    for _ in range(params.n_rounds):
        if params.subsample < 1.0:
            member = rng.random(n) < params.subsample
            if not member.any():
                member[rng.integers(n)] = True
        else:
            member = None
        p = _softmax(scores)
        grad = p - onehot
        hess = np.maximum(p * (1.0 - p), 1e-16)
        step = np.zeros_like(scores)
        for k in range(K):
            tree = builder.build(grad[:, k], hess[:, k], member)
            trees[k].append(tree)
            step[:, k] = tree.predict(X)
        scores = scores + params.learning_rate * step
        loss_curve.append(_log_loss(scores, y))

    return GbdtModel(K, X.shape[1], params.learning_rate, base, trees, columns, params, loss_curve)


def predict_proba(m: GbdtModel, v) -> np.ndarray:
    return m.predict_proba(v)


def predict_class(m: GbdtModel, v):
    return m.predict_class(v)


# ---------------------------------------------------------------------------
# Serialization


def dumps_model(m: GbdtModel) -> bytes:
    all_trees = [t for k in range(m.n_classes) for t in m.trees[k]]
    header = {
        "n_classes": m.n_classes,
        "n_features": m.n_features,
        "learning_rate": m.learning_rate,
        "base_scores": [float(b) for b in m.base_scores],
        "feature_mask": [int(c) for c in m.feature_mask],
        "params": asdict(m.params),
        "loss_curve": [float(v) for v in m.loss_curve],
        "rounds": m.n_rounds,
        "node_counts": [len(t.feature) for t in all_trees],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)), blob]
    for name, dtype in (("feature", "<i4"), ("left", "<i4"), ("right", "<i4"), ("threshold", "<f8"), ("value", "<f8")):
        arrays = [getattr(t, name) for t in all_trees]
        flat = np.concatenate(arrays) if arrays else np.zeros(0)
        parts.append(np.ascontiguousarray(flat, dtype=dtype).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads_model(data: bytes) -> GbdtModel:
    if len(data) < _PREFIX.size + 4:
        raise ModelFormatError("model data truncated")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError("bad magic bytes: not a GBDT model file")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {FORMAT_VERSION})")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ModelFormatError("checksum mismatch: model data truncated or corrupt")
    try:
        header = json.loads(body[_PREFIX.size : _PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ModelFormatError("unreadable model header") from None
    counts = header["node_counts"]
    total = int(sum(counts))
    offset = _PREFIX.size + hlen
    expected = offset + total * (4 * 3 + 8 * 2)
    if len(body) != expected:
        raise ModelFormatError("model data truncated")
    arrays = {}
    for name, dtype, size in (("feature", "<i4", 4), ("left", "<i4", 4), ("right", "<i4", 4), ("threshold", "<f8", 8), ("value", "<f8", 8)):
        arrays[name] = np.frombuffer(body, dtype=dtype, count=total, offset=offset).astype(dtype[1:])
        offset += total * size

    K, rounds = header["n_classes"], header["rounds"]
    trees, start = [[] for _ in range(K)], 0
    for i, c in enumerate(counts):
        sl = slice(start, start + c)
        trees[i // rounds].append(Tree(*(arrays[k][sl] for k in ("feature", "threshold", "left", "right", "value"))))
        start += c
    return GbdtModel(
        n_classes=K,
        n_features=header["n_features"],
        learning_rate=header["learning_rate"],
        base_scores=np.array(header["base_scores"], dtype=float),
        trees=trees,
        feature_mask=np.array(header["feature_mask"], dtype=np.int64),
        params=GbdtParams(**header["params"]),
        loss_curve=list(header["loss_curve"]),
    )


def save_model(m: GbdtModel, stream) -> None:
    """Write ``m`` to a binary stream."""
    stream.write(dumps_model(m))


def load_model(stream) -> GbdtModel:
    return loads_model(stream.read())
