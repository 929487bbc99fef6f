import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from printleak.gbdt import (
    Dataset,
    GbdtParams,
    ModelFormatError,
    dumps_model,
    load_model,
    loads_model,
    predict_class,
    predict_proba,
    save_model,
    train,
)


def xor_data():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    return Dataset(X, [0, 1, 1, 0], 2)


def blobs(seed=0, n=200, k=2, spread=0.6):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-4, 4, (k, 3))
    y = np.arange(n) % k
    return centers[y] + rng.normal(0, spread, (n, 3)), y


def test_xor_memorized_at_depth_two():
    m = train(xor_data(), GbdtParams(n_rounds=50, max_depth=2, learning_rate=0.5, min_leaf=1))
    assert list(m.predict_class(xor_data().X)) == [0, 1, 1, 0]


def test_single_class_is_degenerate_not_error():
    X = np.random.default_rng(1).standard_normal((30, 4))
    m = train(Dataset(X, np.ones(30, dtype=int), 2), GbdtParams(n_rounds=10))
    p = m.predict_proba(np.random.default_rng(2).standard_normal((50, 4)))
    assert np.all(m.predict_class(X) == 1)
    assert np.all(p[:, 1] >= 0.99)


def test_blob_held_out_accuracy():
    X, y = blobs(0, 400)
    m = train(Dataset(X[:200], y[:200], 2))
    assert np.mean(m.predict_class(X[200:]) == y[200:]) >= 0.99


def test_loss_non_increasing():
    X, y = blobs(3, 300, k=3, spread=2.0)
    m = train(Dataset(X, y, 3))
    curve = np.array(m.loss_curve)
    assert len(curve) == 201
    assert np.all(np.diff(curve) <= 1e-12)


def test_untrained_equal_priors():
    m = train(Dataset(np.zeros((4, 1)), [0, 1, 0, 1], 2), GbdtParams(n_rounds=0))
    assert np.allclose(m.predict_proba(np.zeros(1)), [0.5, 0.5])
    assert predict_class(m, np.zeros(1)) == 0  # tie -> lowest index


def test_zero_variance_feature_never_split():
    X, y = blobs(4, 100)
    X = np.column_stack([np.full(100, 7.0), X])
    m = train(Dataset(X, y, 2), GbdtParams(n_rounds=20))
    used = np.concatenate([t.feature for k in m.trees for t in k])
    assert 0 not in used


def test_feature_mask_respected():
    X, y = blobs(5, 100)
    m = train(Dataset(X, y, 2, feature_mask=[1]), GbdtParams(n_rounds=20))
    used = {int(f) for k in m.trees for t in k for f in t.feature if f >= 0}
    assert used <= {1}


def test_depth_bounded():
    X, y = blobs(6, 200, k=3, spread=3.0)
    m = train(Dataset(X, y, 3), GbdtParams(n_rounds=5, max_depth=2, min_leaf=1))
    assert max(t.depth for k in m.trees for t in k) <= 2


def test_predictions_match_tree_walk_oracle():
    X, y = blobs(7, 150, k=3, spread=1.5)
    m = train(Dataset(X, y, 3), GbdtParams(n_rounds=30))
    probe = np.random.default_rng(8).uniform(-6, 6, (40, 3))
    p = predict_proba(m, probe)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    for row, got in zip(probe, p):
        assert np.allclose(got, oracles.tree_walk_proba(m, row), rtol=1e-12, atol=1e-15)


INCREASING = (np.exp, np.log, lambda v: v**3 + 2 * v, lambda v: 1e6 * v - 3.0)


def test_monotone_transform_invariance():
    rng = np.random.default_rng(9)
    X = rng.uniform(0.1, 3.0, (50, 2))
    y = (X[:, 0] * X[:, 1] > 1.5).astype(int)
    probe = X  # thresholds sit midway between node-local values, so unseen points may route differently
    params = GbdtParams(n_rounds=30, min_leaf=2)
    base = train(Dataset(X, y, 2), params).predict_class(probe)
    for f in INCREASING:
        Xt, pt = X.copy(), probe.copy()
        Xt[:, 0], pt[:, 0] = f(X[:, 0]), f(probe[:, 0])
        assert np.array_equal(train(Dataset(Xt, y, 2), params).predict_class(pt), base)


@given(st.integers(0, 10_000), st.sampled_from(range(len(INCREASING))), st.integers(0, 2))
def test_monotone_transform_property(seed, which, column):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.5, 2.0, (30, 3))
    y = rng.integers(0, 3, 30)
    probe = X
    params = GbdtParams(n_rounds=8, min_leaf=2)
    base = train(Dataset(X, y, 3), params).predict_class(probe)
    f = INCREASING[which]
    Xt, pt = X.copy(), probe.copy()
    Xt[:, column], pt[:, column] = f(X[:, column]), f(probe[:, column])
    assert np.array_equal(train(Dataset(Xt, y, 3), params).predict_class(pt), base)


@given(st.integers(0, 10_000), st.integers(4, 64))
def test_memorizes_consistent_small_sets(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, (n, 3)).astype(float)
    y = rng.integers(0, 3, n)
    _, first = np.unique(X, axis=0, return_inverse=True)
    first = first.ravel()
    y = y[np.array([np.flatnonzero(first == g)[0] for g in first])]  # same x -> same y
    m = train(Dataset(X, y, 3), GbdtParams(n_rounds=60, max_depth=6, learning_rate=0.5, min_leaf=1))
    assert np.array_equal(m.predict_class(X), y)


def test_save_load_identical_predictions():
    X, y = blobs(10, 300, k=3, spread=1.2)
    m = train(Dataset(X, y, 3), GbdtParams(n_rounds=40))
    buf = io.BytesIO()
    save_model(m, buf)
    buf.seek(0)
    back = load_model(buf)
    probe = np.random.default_rng(11).uniform(-8, 8, (1000, 3))
    assert np.array_equal(back.predict_proba(probe), m.predict_proba(probe))
    assert back.loss_curve == m.loss_curve and back.params == m.params


def test_serialization_deterministic():
    X, y = blobs(12, 100)
    params = GbdtParams(n_rounds=15, subsample=0.7, seed=5)
    assert dumps_model(train(Dataset(X, y, 2), params)) == dumps_model(train(Dataset(X, y, 2), params))


def test_corrupt_files_rejected():
    X, y = blobs(13, 60)
    data = dumps_model(train(Dataset(X, y, 2), GbdtParams(n_rounds=3)))
    with pytest.raises(ModelFormatError, match="magic"):
        loads_model(b"XXXXXXXX" + data[8:])
    with pytest.raises(ModelFormatError):
        loads_model(data[:-10])
    with pytest.raises(ModelFormatError, match="version"):
        loads_model(data[:8] + b"\x09\x00" + data[10:])
    flipped = bytearray(data)
    flipped[len(data) // 2] ^= 0xFF
    with pytest.raises(ModelFormatError):
        loads_model(bytes(flipped))


def test_invalid_inputs():
    with pytest.raises(ValueError):
        train(Dataset(np.zeros((0, 2)), [], 2))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ValueError):
        GbdtParams(learning_rate=0)
    m = train(xor_data(), GbdtParams(n_rounds=1))
    with pytest.raises(ValueError):
        m.predict_proba(np.zeros(3))
