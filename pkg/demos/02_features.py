"""Simulate a short recording and look at the 30 per-frame features."""
import numpy as np

from printleak.features import feature_names
from printleak.pipeline import featurize, square_toolpath
from printleak.simulate import SimConfig, simulate_emissions

trace = simulate_emissions(square_toolpath(layers=1), SimConfig(seed=1))
X, quality = featurize(trace)
print(f"{len(X)} frames of {X.shape[1]} features; flagged frames: {int(np.count_nonzero(quality))}")
for name, mean, std in zip(feature_names(), X.mean(axis=0), X.std(axis=0)):
    print(f"  {name:<16} mean {mean:12.4g}  std {std:10.4g}")
