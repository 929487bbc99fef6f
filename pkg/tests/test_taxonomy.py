import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from printleak.features import feature_names
from printleak.gbdt import GbdtParams
from printleak.gcode import Axis, Direction, Header, MovementLabel, Plane, SpeedClass
from printleak.pipeline import featurize, train_on_simulation
from printleak.simulate import SimConfig, label_trace, simulate_emissions, training_toolpath
from printleak.taxonomy import (
    NODES,
    CascadeError,
    MissingClassError,
    NodeScore,
    classify_frame,
    classify_frames,
    dumps_cascade,
    evaluate_cascade,
    load_cascade,
    loads_cascade,
    read_label_csv,
    save_cascade,
    train_cascade,
    write_label_csv,
)

FAST = GbdtParams(n_rounds=20, max_depth=3, learning_rate=0.3)
ALL_LABELS = [
    MovementLabel(Plane.Z, header=h, speed_class=s) for h in Header for s in SpeedClass
] + [
    MovementLabel(Plane.XY, d.axis, d, h, s) for d in Direction for h in Header for s in SpeedClass
]


def synthetic(n_per_label=12, seed=0, drop=None):
    """Feature rows that encode each label field in its own columns, plus noise."""
    rng = np.random.default_rng(seed)
    labels = [lab for lab in ALL_LABELS if lab.direction is not drop or drop is None] * n_per_label
    X = rng.normal(0, 0.1, (len(labels), 30))
    for i, lab in enumerate(labels):
        X[i, 18] += lab.plane is Plane.XY
        X[i, 19] += lab.axis is Axis.Y
        X[i, 20] += lab.direction in (Direction.XRight, Direction.YUp)
        X[i, 0] += lab.header is Header.Printing
        X[i, 1] += lab.speed_class is SpeedClass.Fast
    return X, labels


def _toy_cache():
    # hypothesis tests cannot take function-scoped fixtures, so share one trained toy cascade
    cache = {}

    def get():
        if "c" not in cache:
            X, labels = synthetic()
            cache["c"] = (train_cascade(X, labels, FAST, seed=1), X, labels)
        return cache["c"]

    return get


TOY_CACHE = _toy_cache()


@pytest.fixture(scope="module")
def toy():
    return TOY_CACHE()


@pytest.fixture(scope="module")
def zero_noise():
    sim = SimConfig(seed=3).zero_noise()
    cascade = train_on_simulation(sim, frames_per_class=200, synchronized=True)
    return cascade, sim


def test_toy_cascade_learns(toy):
    c, X, labels = toy
    assert set(c.models) == set(NODES)
    assert all(0.5 < a <= 1.0 for a in c.accuracies.values())
    report = evaluate_cascade(c, X, labels)
    assert report.full_accuracy >= 0.95


def test_missing_class_names_node():
    X, labels = synthetic(drop=Direction.YUp)
    with pytest.raises(MissingClassError, match="dir_y missing class YUp"):
        train_cascade(X, labels, FAST)


def test_masks_confine_splits(toy):
    c, _, _ = toy
    for node in NODES:
        used = {int(f) for k in c.models[node].trees for t in k for f in t.feature if f >= 0}
        assert used <= set(c.masks[node])
    assert c.masks["header"] == list(range(18)) and c.masks["axial"] == list(range(18, 30))


@settings(max_examples=40)
@given(st.integers(0, 2**31 - 1))
def test_at_most_one_direction_node_per_frame(seed):
    X = np.random.default_rng(seed).normal(0.5, 0.6, (1, 30))
    c, _, _ = TOY_CACHE()
    visited = []
    lab = classify_frame(c, X[0], visited)
    assert not {"dir_x", "dir_y"} <= set(visited)
    assert len(visited) <= 5 and visited[0] == "layer"
    if lab.plane is Plane.Z:
        assert lab.axis is None and lab.direction is None
        assert "axial" not in visited
    else:
        assert lab.direction.axis is lab.axis


def test_batch_equals_single(toy):
    c, X, _ = toy
    batch = classify_frames(c, X[:40])
    assert batch == [classify_frame(c, row) for row in X[:40]]
    assert classify_frame(c, X[0]) == classify_frame(c, X[0])


def test_training_deterministic():
    X, labels = synthetic(seed=4)
    a = dumps_cascade(train_cascade(X, labels, FAST, seed=2))
    b = dumps_cascade(train_cascade(X, labels, FAST, seed=2))
    assert a == b


def test_node_score_arithmetic():
    y = np.zeros(100, dtype=int)
    pred = y.copy()
    pred[17] = 1
    s = NodeScore.from_predictions(y, pred)
    assert (s.correct, s.total, s.accuracy) == (99, 100, 0.99)
    assert s.confusion == ((99, 1), (0, 0))
    assert NodeScore.from_predictions(y, y).accuracy == 1.0


def test_report_formats(toy):
    c, X, labels = toy
    report = evaluate_cascade(c, X, labels)
    csv_text = report.to_csv()
    assert csv_text.splitlines()[0].startswith("node,class_0,class_1")
    assert sum(line.split(",")[0] in NODES for line in csv_text.splitlines()) == 6
    text = report.to_text()
    assert all(node in text for node in NODES) and "confusion" in text


def test_container_round_trip(toy, tmp_path):
    c, X, _ = toy
    path = tmp_path / "c.bin"
    save_cascade(c, path)
    back = load_cascade(path)
    assert classify_frames(back, X) == classify_frames(c, X)
    assert back.accuracies == c.accuracies and back.masks == c.masks
    assert dumps_cascade(back) == dumps_cascade(c)


def test_container_errors(toy, tmp_path):
    c, _, _ = toy
    data = dumps_cascade(c)
    with pytest.raises(CascadeError):
        loads_cascade(b"NOTACASC" + data[8:])
    with pytest.raises(CascadeError):
        loads_cascade(data[: len(data) // 2])
    with pytest.raises(CascadeError):
        load_cascade(tmp_path / "missing.bin")


def test_label_csv_round_trip():
    buf = io.StringIO()
    write_label_csv(buf, ALL_LABELS)
    buf.seek(0)
    assert read_label_csv(buf) == ALL_LABELS
    with pytest.raises(ValueError):
        read_label_csv(io.StringIO("idx,lab\n"))


def test_zero_noise_cascade_is_perfect(zero_noise):
    c, _ = zero_noise
    assert all(a == 1.0 for a in c.accuracies.values())
    assert c.names == feature_names()


def test_zero_noise_frames_classified(zero_noise):
    c, sim = zero_noise
    walk = training_toolpath(seed=77, frames_per_class=20)
    X, _ = featurize(simulate_emissions(walk, sim))
    truth = label_trace(walk, sim)
    pred = classify_frames(c, X[: len(truth)])
    assert pred == truth
    z_rows = [i for i, lab in enumerate(truth) if lab.plane is Plane.Z]
    assert classify_frame(c, X[z_rows[0]]).axis is None
