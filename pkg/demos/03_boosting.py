"""Gradient boosted trees on two toy problems: Gaussian blobs and XOR."""
import io

import numpy as np

from printleak.gbdt import Dataset, GbdtParams, load_model, save_model, train

rng = np.random.default_rng(0)
centres = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
y = rng.integers(0, 3, 600)
X = centres[y] + rng.normal(size=(600, 2))
model = train(Dataset(X, y, 3), GbdtParams(n_rounds=50))
print("blob training accuracy:", np.mean(model.predict_class(X) == y))
print("log-loss, first and last round:", model.loss_curve[0], model.loss_curve[-1])

xor_X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 5, dtype=float)
xor_y = (xor_X[:, 0] != xor_X[:, 1]).astype(int)
xor = train(Dataset(xor_X, xor_y, 2), GbdtParams(n_rounds=30, max_depth=2, min_leaf=1, learning_rate=0.5))
print("XOR predictions:", xor.predict_class(xor_X[:4]))

buf = io.BytesIO()
save_model(model, buf)
buf.seek(0)
print("reloaded model agrees:", np.array_equal(load_model(buf).predict_proba(X), model.predict_proba(X)))
