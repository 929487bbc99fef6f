"""Seeded random toolpaths and sensor traces for round-trip checks."""

import numpy as np

from printleak.gcode import build_toolpath
from printleak.ingest import SensorTrace

FEEDS = (600.0, 1200.0, 1800.0, 2400.0, 3000.0, 4500.0)


def random_toolpath(rng, max_moves=12):
    """Axis-aligned and diagonal moves on a 1 um grid, occasional layer changes."""
    origin = tuple(np.round(rng.uniform(0, 100, 3), 3))
    pos = np.array(origin)
    moves = []
    for _ in range(int(rng.integers(0, max_moves + 1))):
        kind = rng.integers(4)
        step = np.zeros(3)
        if kind == 0:
            step[0] = rng.uniform(-30, 30)
        elif kind == 1:
            step[1] = rng.uniform(-30, 30)
        elif kind == 2:
            step[:2] = rng.uniform(-30, 30, 2)
        else:
            step[2] = rng.choice([0.2, 0.3, 1.0])
        end = np.round(pos + step, 3)
        if np.all(end == pos):
            continue
        moves.append((tuple(end), float(rng.choice(FEEDS)), bool(rng.integers(2)) and kind != 3))
        pos = end
    return build_toolpath(origin, moves)


def random_trace(rng):
    rate = float(rng.choice([1000.0, 4000.0, 8000.0]))
    mrate = float(rng.choice([50.0, 100.0]))
    n = int(rng.integers(0, 3 * int(rate / mrate) + 1)) * int(rate / mrate)
    m = n * int(mrate) // int(rate) if n else 0
    acoustic = rng.normal(0, rng.uniform(0.01, 5), n)
    magnetic = rng.normal(rng.uniform(-40, 40, 3), 2.0, (m, 3))
    return SensorTrace(acoustic, rate, magnetic, mrate)
