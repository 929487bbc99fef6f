"""Command-line entry point: ``printleak <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model error.

A config file (``--config``) is INI with optional sections::

    [run]   frame_ms, seed, distance_cm, smooth_sigma, window, magnetic_rate
    [sim]   any simulator field, same keys as the simulator config
    [gbdt]  n_rounds, max_depth, learning_rate, min_leaf, subsample, reg_lambda

Command-line flags override the file.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import fields, replace

from . import __version__
from .features import feature_names, read_feature_csv, write_feature_csv
from .gbdt import GbdtParams, ModelFormatError
from .gcode import GCodeError, MovementLabel, emit_gcode, toolpath_from_gcode
from .ingest import SchemaError, TraceDataError, read_sensor_csv, write_sensor_csv
from .pipeline import CASCADE_PARAMS, DEFAULT_SMOOTH_SIGMA, UNSYNCED_STEPS, featurize, repro_square, report_text
from .reconstruct import ReconstructionReport, compare_overlay, mte_details, reconstruct
from .simulate import SimConfig, SimulationError, crop_trace, label_trace, parse_sim_config, simulate_emissions, training_toolpath
from .taxonomy import CascadeError, classify_frames, evaluate_cascade, load_cascade, read_label_csv, save_cascade, train_cascade, write_label_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3

RUN_DEFAULTS = {
    "frame_ms": 100.0,
    "seed": 0,
    "distance_cm": 15.0,
    "smooth_sigma": DEFAULT_SMOOTH_SIGMA,
    "window": 3,
    "magnetic_rate": 100.0,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Configuration


class RunConfig:
    """Resolved settings: defaults, then the config file, then flags."""

    def __init__(self, args):
        self.run = dict(RUN_DEFAULTS)
        self.sim = SimConfig()
        gbdt = dict(CASCADE_PARAMS.__dict__)
        if args.config:
            parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
            parser.optionxform = str  # keys such as mag_noise_uT are case sensitive
            try:
                with open(args.config, encoding="utf-8") as fh:
                    parser.read_file(fh)
            except OSError as exc:
                raise UsageError(f"cannot read config {args.config}: {exc.strerror}") from None
            except configparser.Error as exc:
                raise UsageError(f"config {args.config}: {exc.message.splitlines()[0]}") from None
            for key, raw in parser["run"].items() if parser.has_section("run") else ():
                if key not in self.run:
                    raise UsageError(f"config [run]: unknown key {key!r}")
                self.run[key] = type(RUN_DEFAULTS[key])(raw)
            if parser.has_section("sim"):
                text = "\n".join(f"{k} = {v}" for k, v in parser["sim"].items())
                try:
                    self.sim = parse_sim_config(text, self.sim)
                except ValueError as exc:
                    raise UsageError(f"config [sim]: {exc}") from None
            for key, raw in parser["gbdt"].items() if parser.has_section("gbdt") else ():
                if key not in gbdt:
                    raise UsageError(f"config [gbdt]: unknown key {key!r}")
                gbdt[key] = type(gbdt[key])(raw)
        for key in self.run:
            value = getattr(args, key, None)
            if value is not None:
                self.run[key] = value
        for key in gbdt:
            value = getattr(args, key, None)
            if value is not None:
                gbdt[key] = value
        sim_updates = {"seed": self.run["seed"], "distance_cm": self.run["distance_cm"]}
        sim_updates["magnetic_rate"] = self.run["magnetic_rate"]
        for f in fields(SimConfig):
            value = getattr(args, f"sim_{f.name}", None)
            if value is not None:
                sim_updates[f.name] = value
        self.sim = replace(self.sim, **sim_updates)
        if getattr(args, "zero_noise", False):
            self.sim = self.sim.zero_noise()
        try:
            self.gbdt = GbdtParams(**gbdt)
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    def __getattr__(self, key):
        try:
            return self.__dict__["run"][key]
        except KeyError:
            raise AttributeError(key) from None


# ---------------------------------------------------------------------------
# I/O helpers


def _read_text(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _load_trace(path, cfg):
    with open(path, encoding="utf-8", newline="") as fh:
        return read_sensor_csv(fh, magnetic_rate=cfg.magnetic_rate)


def _load_labels(path):
    with open(path, encoding="utf-8", newline="") as fh:
        try:
            return read_label_csv(fh)
        except ValueError as exc:
            raise TraceDataError(f"{path}: {exc}") from None


def _features(trace, cfg):
    X, _ = featurize(trace, cfg.frame_ms, smooth_sigma=cfg.smooth_sigma)
    return X


def _pair(X, labels, what):
    n = min(len(X), len(labels))
    if abs(len(X) - len(labels)) > 1:
        raise TraceDataError(f"{what}: {len(X)} frames but {len(labels)} labels")
    return X[:n], labels[:n]


def _triple(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected X,Y,Z") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected X,Y,Z")
    return vals


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma separated numbers") from None


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(args, cfg: RunConfig):
    if args.training_walk:
        steps = 1 if args.synchronized else UNSYNCED_STEPS
        toolpath = training_toolpath(cfg.seed, args.frames_per_class, cfg.frame_ms, steps_per_frame=steps)
    else:
        toolpath = toolpath_from_gcode(_read_text(args.gcode))
        if len(toolpath) == 0:
            raise TraceDataError(f"{args.gcode}: no moves to simulate")
    trace = simulate_emissions(toolpath, cfg.sim)
    if args.start_offset:
        trace = crop_trace(trace, args.start_offset)
    with open(args.out_trace, "w", encoding="utf-8", newline="") as fh:
        write_sensor_csv(trace, fh)
    if args.out_labels:
        with open(args.out_labels, "w", encoding="utf-8", newline="") as fh:
            write_label_csv(fh, label_trace(toolpath, cfg.sim, cfg.frame_ms, args.start_offset))
    print(f"simulated {trace.duration:.3f} s, {len(toolpath)} segments -> {args.out_trace}")


def cmd_features(args, cfg: RunConfig):
    trace = _load_trace(args.trace, cfg)
    X = _features(trace, cfg)
    labels = None
    if args.labels:
        X, labs = _pair(X, _load_labels(args.labels), args.labels)
        labels = [lab.to_string() for lab in labs]
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_feature_csv(fh, X, labels, feature_names())
    print(f"{len(X)} frames x {X.shape[1]} features -> {args.out}")


def _training_rows(args, cfg):
    if args.features:
        with open(args.features, encoding="utf-8", newline="") as fh:
            X, raw, _ = read_feature_csv(fh)
        try:
            labels = [MovementLabel.from_string(r) for r in raw]
        except ValueError as exc:
            raise TraceDataError(f"{args.features}: {exc}") from None
        return X, labels
    if not (args.trace and args.labels):
        raise UsageError("give TRACE and LABELS, or --features")
    X = _features(_load_trace(args.trace, cfg), cfg)
    return _pair(X, _load_labels(args.labels), args.labels)


def cmd_train(args, cfg: RunConfig):
    X, labels = _training_rows(args, cfg)
    cascade = train_cascade(X, labels, cfg.gbdt, seed=cfg.seed, names=feature_names())
    save_cascade(cascade, args.out)
    lines = ["held-out accuracy per node (25% train / 75% test)"]
    lines += [f"  {n:<8} {100 * a:6.2f}%  ({cascade.scores[n].correct}/{cascade.scores[n].total})"
              for n, a in cascade.accuracies.items()]
    lines.append(f"  {'mean':<8} {100 * cascade.mean_accuracy:6.2f}%")
    text = "\n".join(lines) + "\n"
    if args.report:
        _write_text(args.report, text)
    print(text, end="")


def cmd_classify(args, cfg: RunConfig):
    cascade = load_cascade(args.model)
    X = _features(_load_trace(args.trace, cfg), cfg)
    labels = classify_frames(cascade, X)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_label_csv(fh, labels)
    print(f"classified {len(labels)} frames -> {args.out}")


def cmd_reconstruct(args, cfg: RunConfig):
    cascade = load_cascade(args.model)
    X = _features(_load_trace(args.trace, cfg), cfg)
    predicted = classify_frames(cascade, X)
    original = toolpath_from_gcode(_read_text(args.original)) if args.original else None
    start = args.start or (original.origin if original is not None else (0.0, 0.0, 0.0))
    rebuilt = reconstruct(predicted, start, cfg.frame_ms, cfg.window)
    _write_text(args.out, emit_gcode(rebuilt))
    print(f"{len(predicted)} frames -> {len(rebuilt)} segments -> {args.out}")
    if original is None:
        return
    if len(original) == 0:
        raise TraceDataError(f"{args.original}: original toolpath is empty")
    mte = mte_details(rebuilt, original, args.matching)
    report = ReconstructionReport(rebuilt, mte, cascade.accuracies, compare_overlay(rebuilt, original), original)
    if args.report:
        _write_text(args.report, report.to_text())
    if args.segments_csv:
        _write_text(args.segments_csv, report.to_csv())
    if args.overlay_csv:
        _write_text(args.overlay_csv, report.overlay.to_csv())
    if args.overlay_svg:
        _write_text(args.overlay_svg, report.overlay.to_svg())
    print(report.to_text(), end="")


def cmd_evaluate(args, cfg: RunConfig):
    cascade = load_cascade(args.model)
    X = _features(_load_trace(args.trace, cfg), cfg)
    X, labels = _pair(X, _load_labels(args.labels), args.labels)
    report = evaluate_cascade(cascade, X, labels)
    if args.report:
        _write_text(args.report, report.to_text())
    if args.report_csv:
        _write_text(args.report_csv, report.to_csv())
    print(report.to_text(), end="")


def cmd_repro_square(args, cfg: RunConfig):
    runs = repro_square(
        cfg.seed,
        args.distances,
        args.out_dir,
        base=cfg.sim,
        params=cfg.gbdt,
        frame_ms=cfg.frame_ms,
        smooth_sigma=cfg.smooth_sigma,
        window=cfg.window,
        matching=args.matching,
        synchronized=args.synchronized,
    )
    text = report_text(runs, cfg.seed)
    print(text if args.verbose else text.split("\n\n---")[0] + "\n", end="")
    if args.out_dir:
        print(f"artifacts -> {args.out_dir}")


# ---------------------------------------------------------------------------
# Parser


def _add_run_flags(p, sim=False, gbdt=False):
    g = p.add_argument_group("run settings (override the config file)")
    g.add_argument("--frame-ms", dest="frame_ms", type=float, help="frame length in ms (default 100)")
    g.add_argument("--smooth-sigma", dest="smooth_sigma", type=float,
                   help="Gaussian smoothing of the feature series, in frames; 0 disables (default 0)")
    g.add_argument("--window", type=int, help="label majority-vote window, odd (default 3)")
    g.add_argument("--magnetic-rate", dest="magnetic_rate", type=float,
                   help="magnetometer rate of the sensor CSV in Hz (default 100)")
    if sim:
        s = p.add_argument_group("simulator")
        s.add_argument("--seed", type=int, help="random seed (default 0)")
        s.add_argument("--distance", dest="distance_cm", type=float, help="sensor distance in cm (default 15)")
        s.add_argument("--noise-db", dest="sim_noise_db", type=float, help="acoustic noise level at 15 cm in dB")
        s.add_argument("--mag-noise", dest="sim_mag_noise_uT", type=float, help="magnetometer noise std in uT")
        s.add_argument("--zero-noise", action="store_true", help="disable all noise")
    if gbdt:
        t = p.add_argument_group("boosting")
        if not sim:
            t.add_argument("--seed", type=int, help="split seed (default 0)")
        t.add_argument("--rounds", dest="n_rounds", type=int, help=f"boosting rounds (default {CASCADE_PARAMS.n_rounds})")
        t.add_argument("--depth", dest="max_depth", type=int, help=f"tree depth (default {CASCADE_PARAMS.max_depth})")
        t.add_argument("--learning-rate", dest="learning_rate", type=float,
                       help=f"shrinkage (default {CASCADE_PARAMS.learning_rate})")
        t.add_argument("--min-leaf", dest="min_leaf", type=int, help=f"rows per leaf (default {CASCADE_PARAMS.min_leaf})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="printleak", description="Reconstruct 3D printer toolpaths from acoustic and magnetic side channels.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="INI config file with [run], [sim] and [gbdt] sections")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("simulate", help="synthesize a sensor log (and frame labels) from G-code")
    p.add_argument("gcode", nargs="?", help="input G-code file")
    p.add_argument("--training-walk", action="store_true", help="simulate the balanced training walk instead of G-code")
    p.add_argument("--frames-per-class", type=int, default=1000, help="training walk size (default 1000)")
    p.add_argument("--synchronized", action="store_true", help="training walk segments in whole frames")
    p.add_argument("--start-offset", type=float, default=0.0, help="drop this many seconds from the start of the log")
    p.add_argument("--out-trace", required=True, help="sensor CSV to write")
    p.add_argument("--out-labels", help="frame label CSV to write")
    _add_run_flags(p, sim=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("features", help="extract per-frame features from a sensor log")
    p.add_argument("trace", help="sensor CSV")
    p.add_argument("--labels", help="frame label CSV to attach")
    p.add_argument("--out", required=True, help="feature CSV to write")
    _add_run_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", help="train the six-node cascade")
    p.add_argument("trace", nargs="?", help="sensor CSV")
    p.add_argument("labels", nargs="?", help="frame label CSV")
    p.add_argument("--features", help="labelled feature CSV instead of TRACE and LABELS")
    p.add_argument("--out", required=True, help="cascade file to write")
    p.add_argument("--report", help="accuracy report to write")
    _add_run_flags(p, gbdt=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="label every frame of a sensor log")
    p.add_argument("trace", help="sensor CSV")
    p.add_argument("--model", required=True, help="cascade file")
    p.add_argument("--out", required=True, help="frame label CSV to write")
    _add_run_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("reconstruct", help="rebuild G-code from a sensor log")
    p.add_argument("trace", help="sensor CSV")
    p.add_argument("--model", required=True, help="cascade file")
    p.add_argument("--out", required=True, help="reconstructed G-code to write")
    p.add_argument("--start", type=_triple, help="start position X,Y,Z in mm (default: origin of --original, else 0,0,0)")
    p.add_argument("--original", help="ground-truth G-code; enables the MTE report and overlay")
    p.add_argument("--matching", choices=("greedy", "optimal"), default="greedy", help="segment matching for MTE")
    p.add_argument("--report", help="text report to write")
    p.add_argument("--segments-csv", help="per-segment length errors to write")
    p.add_argument("--overlay-csv", help="overlay polylines CSV to write")
    p.add_argument("--overlay-svg", help="overlay SVG to write")
    _add_run_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="per-node accuracy and confusion matrices on labelled data")
    p.add_argument("trace", help="sensor CSV")
    p.add_argument("labels", help="frame label CSV")
    p.add_argument("--model", required=True, help="cascade file")
    p.add_argument("--report", help="text report to write")
    p.add_argument("--report-csv", help="CSV report to write")
    _add_run_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("repro-square", help="simulate, train and reconstruct the 1 cm square at 15/20/30 cm")
    p.add_argument("--distances", type=_floats, default=(15.0, 20.0, 30.0), help="comma separated cm (default 15,20,30)")
    p.add_argument("--out-dir", help="directory for models, G-code, reports and overlays")
    p.add_argument("--matching", choices=("greedy", "optimal"), default="greedy", help="segment matching for MTE")
    p.add_argument("--synchronized", action="store_true", help="ideal recorder: frame-aligned segments, no start offset")
    p.add_argument("-v", "--verbose", action="store_true", help="print the full per-distance report")
    _add_run_flags(p, sim=True, gbdt=True)
    p.set_defaults(func=cmd_repro_square)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        print("printleak: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "simulate" and not args.training_walk and not args.gcode:
            raise UsageError("give a G-code file or --training-walk")
        cfg = RunConfig(args)
        args.func(args, cfg)
    except UsageError as exc:
        print(f"printleak: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CascadeError, ModelFormatError) as exc:
        print(f"printleak: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except FileNotFoundError as exc:
        print(f"printleak: data error: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except (GCodeError, SchemaError, TraceDataError, SimulationError, ValueError, OSError) as exc:
        print(f"printleak: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
