"""End-to-end runs: simulate, featurize, train the cascade, reconstruct, score."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .features import MfccConfig, feature_matrix, feature_names, gaussian_smooth
from .gbdt import GbdtParams
from .gcode import DEFAULT_FEED_MAP, Toolpath, build_toolpath, emit_gcode
from .ingest import DEFAULT_FRAME_MS, SensorTrace, frame_arrays
from .reconstruct import ReconstructionReport, compare_overlay, mte_details, reconstruct
from .simulate import DISTANCE_PRESETS, SimConfig, crop_trace, label_trace, simulate_emissions, training_toolpath
from .taxonomy import CascadeModel, NODES, classify_frames, dumps_cascade, train_cascade

DEFAULT_SMOOTH_SIGMA = 0.0  # frames; 0 disables (wider kernels merge the 2-frame Z moves)
CASCADE_PARAMS = GbdtParams(n_rounds=100, max_depth=3, learning_rate=0.2, min_leaf=5)
UNSYNCED_STEPS = 10  # training segment durations in 10 ms ticks when recordings are unsynchronized


def featurize(
    trace: SensorTrace,
    frame_ms: float = DEFAULT_FRAME_MS,
    cfg: MfccConfig = MfccConfig(),
    smooth_sigma: float = DEFAULT_SMOOTH_SIGMA,
) -> tuple:
    """Feature rows for every frame of a trace, optionally Gaussian-smoothed along time."""
    acoustic, magnetic = frame_arrays(trace, frame_ms)
    X, quality = feature_matrix(acoustic, magnetic, trace.acoustic_rate, cfg)
    if smooth_sigma and smooth_sigma > 0 and len(X) > 1:
        X = gaussian_smooth(X, smooth_sigma, axis=0)
    return X, quality


def square_toolpath(
    side_mm: float = 10.0,
    layers: int = 3,
    corner=(20.0, 20.0, 0.2),
    feed: float = DEFAULT_FEED_MAP["Slow"],
    z_feed: float = 60.0,
    layer_height: float = 0.2,
) -> Toolpath:
    """A printed square outline, one loop per layer, raised ``layer_height`` between loops."""
    x0, y0, z = (float(c) for c in corner)
    loop = [(x0 + side_mm, y0), (x0 + side_mm, y0 + side_mm), (x0, y0 + side_mm), (x0, y0)]
    moves = []
    for layer in range(layers):
        if layer:
            z = round(z + layer_height, 9)
            moves.append(((x0, y0, z), z_feed, False))
        moves += [((x, y, z), feed, True) for x, y in loop]
    return build_toolpath((x0, y0, float(corner[2])), moves)


def square_gcode(**kwargs) -> str:
    return emit_gcode(square_toolpath(**kwargs))


def train_on_simulation(
    sim: SimConfig,
    params: GbdtParams = CASCADE_PARAMS,
    frames_per_class: int = 1000,
    frame_ms: float = DEFAULT_FRAME_MS,
    smooth_sigma: float = DEFAULT_SMOOTH_SIGMA,
    cfg: MfccConfig = MfccConfig(),
    synchronized: bool = False,
) -> CascadeModel:
    """Simulate the balanced random-walk corpus with ``sim`` and fit a cascade on it.

    Unless ``synchronized``, segment edges fall anywhere on the 10 ms grid, so
    the corpus contains frames that straddle two movements.
    """
    steps = 1 if synchronized else UNSYNCED_STEPS
    walk = training_toolpath(sim.seed, frames_per_class, frame_ms, steps_per_frame=steps)
    trace = simulate_emissions(walk, sim)
    X, _ = featurize(trace, frame_ms, cfg, smooth_sigma)
    labels = label_trace(walk, sim, frame_ms)
    n = min(len(X), len(labels))
    return train_cascade(X[:n], labels[:n], params, seed=sim.seed, names=feature_names(cfg))


def recording_offset(seed: int, magnetic_rate: float = 100.0, frame_ms: float = DEFAULT_FRAME_MS) -> float:
    """Seeded start delay of a recording: 0 to one frame, in whole magnetometer ticks."""
    ticks = int(round(magnetic_rate * frame_ms / 1000.0))
    return int(np.random.default_rng([seed, 0x5EC]).integers(ticks)) / magnetic_rate


@dataclass(frozen=True)
class SquareRun:
    distance_cm: float
    seed: int
    cascade: CascadeModel
    report: ReconstructionReport
    predicted: list
    truth: list

    @property
    def mte_percent(self) -> float:
        return self.report.mte_percent


def run_square(
    seed: int = 0,
    distance_cm: float = 15.0,
    base: SimConfig = SimConfig(),
    params: GbdtParams = CASCADE_PARAMS,
    frames_per_class: int = 1000,
    frame_ms: float = DEFAULT_FRAME_MS,
    smooth_sigma: float = DEFAULT_SMOOTH_SIGMA,
    window: int = 3,
    matching: str = "greedy",
    cascade: Optional[CascadeModel] = None,
    start_offset_s: Optional[float] = None,
    synchronized: bool = False,
) -> SquareRun:
    """Train at one distance, then simulate and reconstruct the square there.

    Training and the square recording use independent noise streams derived
    from ``seed``. The recording starts ``start_offset_s`` after the first
    move, so frame edges need not meet segment edges; None draws it from the
    seed as a whole number of magnetometer ticks within one frame.
    ``synchronized`` models an ideal recorder: frame-aligned training segments
    and no start offset.
    """
    sim = replace(base, seed=seed, distance_cm=distance_cm)
    if cascade is None:
        cascade = train_on_simulation(sim, params, frames_per_class, frame_ms, smooth_sigma, synchronized=synchronized)
    if synchronized:
        start_offset_s = 0.0
    elif start_offset_s is None:
        start_offset_s = recording_offset(seed, sim.magnetic_rate, frame_ms)
    square = square_toolpath()
    rec_sim = replace(sim, seed=seed + 1_000_003)
    trace = crop_trace(simulate_emissions(square, rec_sim), start_offset_s)
    X, _ = featurize(trace, frame_ms, smooth_sigma=smooth_sigma)
    truth = label_trace(square, rec_sim, frame_ms, start_offset_s)
    predicted = classify_frames(cascade, X[: len(truth)])
    rebuilt = reconstruct(predicted, square.origin, frame_ms, window)
    mte = mte_details(rebuilt, square, matching)
    report = ReconstructionReport(rebuilt, mte, cascade.accuracies, compare_overlay(rebuilt, square), square)
    return SquareRun(distance_cm, seed, cascade, report, predicted, truth)


def repro_square(
    seed: int = 7,
    distances: Sequence[float] = DISTANCE_PRESETS,
    out_dir: Optional[str] = None,
    base: SimConfig = SimConfig(),
    **kwargs,
) -> dict:
    """Square experiment at every distance; writes artifacts when ``out_dir`` is given.

    Returns {distance: SquareRun}. Files per distance ``d``: ``cascade_<d>cm.bin``,
    ``reconstructed_<d>cm.gcode``, ``segments_<d>cm.csv``, ``overlay_<d>cm.csv``,
    ``overlay_<d>cm.svg``; plus ``square.gcode``, ``summary.csv`` and ``report.txt``.
    """
    runs = {float(d): run_square(seed, float(d), base, **kwargs) for d in distances}
    if out_dir is not None:
        write_repro_outputs(runs, out_dir, seed)
    return runs


def summary_table(runs: dict) -> str:
    header = "distance_cm," + ",".join(f"acc_{n}" for n in NODES) + ",acc_mean,mte_percent,mte_length_weighted,mte_signed\n"
    rows = []
    for d, run in sorted(runs.items()):
        acc = run.cascade.accuracies
        cols = [f"{d:g}"] + [f"{acc[n]:.6f}" for n in NODES] + [f"{run.cascade.mean_accuracy:.6f}"]
        m = run.report.mte
        cols += [f"{m.percent:.4f}", f"{m.length_weighted:.4f}", f"{m.signed:.4f}"]
        rows.append(",".join(cols) + "\n")
    return header + "".join(rows)


def report_text(runs: dict, seed: int) -> str:
    lines = [f"square reconstruction, 10 mm x 10 mm, 3 layers, seed {seed}", ""]
    dists = sorted(runs)
    lines.append("distance   " + "".join(f"{d:>9g} cm" for d in dists))
    lines.append("MTE        " + "".join(f"{runs[d].mte_percent:>11.2f}%"[1:] + " " for d in dists))
    lines.append("mean acc   " + "".join(f"{100 * runs[d].cascade.mean_accuracy:>11.2f}%"[1:] + " " for d in dists))
    for d in dists:
        lines += ["", f"--- {d:g} cm ---", runs[d].report.to_text().rstrip()]
    return "\n".join(lines) + "\n"


def write_repro_outputs(runs: dict, out_dir: str, seed: int) -> list:
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def put(name, data):
        path = os.path.join(out_dir, name)
        mode = "wb" if isinstance(data, bytes) else "w"
        with open(path, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        written.append(path)

    put("square.gcode", square_gcode())
    for d, run in sorted(runs.items()):
        tag = f"{d:g}cm"
        put(f"cascade_{tag}.bin", dumps_cascade(run.cascade))
        put(f"reconstructed_{tag}.gcode", emit_gcode(run.report.reconstructed))
        put(f"segments_{tag}.csv", run.report.to_csv())
        put(f"overlay_{tag}.csv", run.report.overlay.to_csv())
        put(f"overlay_{tag}.svg", run.report.overlay.to_svg())
    put("summary.csv", summary_table(runs))
    put("report.txt", report_text(runs, seed))
    return written
