"""Command line entry point: ``ttpredict <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training
divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, DataError, DivergenceError, InvalidArgument
from .grid import read_matrix_csv, to_iso, write_matrix_csv
from .predictors import METHODS, ExperimentConfig, WindowConfig, load_predictor, save_predictor
from .synth import ScenarioConfig, emit_detection_events, generate_scenario
from .traffic_core import DEFAULT_MAX_TRIP_HR, read_events_csv, read_segments_csv, write_events_csv, write_segments_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4


def _read_matrix(path):
    try:
        return read_matrix_csv(path)
    except OSError as exc:
        raise DataError(f"cannot read matrix {path}: {exc.strerror or exc}") from None


def cmd_generate(args):
    try:
        cfg = ScenarioConfig.load(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {args.config}: {exc.strerror or exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = generate_scenario(cfg)
    write_matrix_csv(truth, out / "truth.csv")
    write_segments_csv(cfg.segments, out / "segments.csv")
    write_events_csv(emit_detection_events(truth, cfg), out / "events.csv")
    with open(out / "scenario.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'events.csv'}, {out / 'segments.csv'} and {out / 'truth.csv'}")


def cmd_ingest(args):
    try:
        events = read_events_csv(args.events)
        segments = read_segments_csv(args.segments)
    except OSError as exc:
        raise DataError(f"{exc.filename}: {exc.strerror or exc}") from None
    m, stats = harness.ingest_events(events, segments, args.interval, args.start, args.end,
                                     args.max_trip_hours)
    write_matrix_csv(m, args.out)
    for seg, st in stats.items():
        print(f"{seg}: {st.matched} trips matched, {st.dropped_origin} unmatched origin reads, "
              f"{st.too_long} over the duration limit")
    print(f"wrote {m.shape[0]}x{m.shape[1]} matrix to {args.out}")


def cmd_train(args):
    config = ExperimentConfig.load(args.config)
    window = WindowConfig.parse(args.window)
    pred = harness.fit_method(_read_matrix(args.matrix), args.method, window, args.split, config)
    save_predictor(pred, args.model_out)
    print(f"saved {args.method} model to {args.model_out}")


def cmd_predict(args):
    try:
        pred = load_predictor(args.model)
    except OSError as exc:
        raise DataError(f"cannot read model {args.model}: {exc.strerror or exc}") from None
    starts, seg, predicted, actual = harness.forecast(pred, _read_matrix(args.matrix), args.fill)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["interval_start", "segment_id", "predicted_hr", "actual_hr"])
        for t, p, a in zip(starts, predicted, actual):
            w.writerow([to_iso(t), seg, repr(float(p)), "" if a != a else repr(float(a))])
    print(f"wrote {len(starts)} predictions to {args.out}")


def cmd_evaluate(args):
    config = ExperimentConfig.load(args.config)
    window = WindowConfig.parse(args.window)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    comp = harness.compare_methods(_read_matrix(args.matrix), methods, window, args.split, config)
    table = comp.format_table()
    print(table)
    Path(args.report).parent.mkdir(parents=True, exist_ok=True)
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(comp.to_json())
        fh.write("\n")
    if args.table:
        Path(args.table).write_text(table + "\n", encoding="utf-8")


def build_parser():
    p = argparse.ArgumentParser(prog="ttpredict", description="Segment travel time prediction.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a scenario into event, segment and truth CSVs")
    g.add_argument("--config", required=True, help="scenario JSON")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("ingest", help="match detector events into a travel time matrix")
    i.add_argument("--events", required=True)
    i.add_argument("--segments", required=True)
    i.add_argument("--interval", type=int, default=5, help="minutes (default 5)")
    i.add_argument("--start", help="first interval (ISO-8601); default: first arrival")
    i.add_argument("--end", help="end of the last interval (ISO-8601); default: last arrival")
    i.add_argument("--max-trip-hours", type=float, default=DEFAULT_MAX_TRIP_HR)
    i.add_argument("--out", required=True, help="matrix CSV")
    i.set_defaults(func=cmd_ingest)

    t = sub.add_parser("train", help="fit one method for one target segment")
    t.add_argument("--matrix", required=True)
    t.add_argument("--method", required=True, choices=METHODS)
    t.add_argument("--window", required=True, help="x,y,z")
    t.add_argument("--split", required=True, help="train on targets before this instant")
    t.add_argument("--config", help="training config JSON")
    t.add_argument("--model-out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("predict", help="apply a saved model to every window of a matrix")
    r.add_argument("--model", required=True)
    r.add_argument("--matrix", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--fill", default="drop", choices=("drop", "forward-fill", "segment-median"))
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="compare methods on a date split")
    e.add_argument("--matrix", required=True)
    e.add_argument("--methods", default="avg,linear,nn,cnn-general")
    e.add_argument("--split", required=True)
    e.add_argument("--window", default="3,2", help="x,y[,z]; without z every segment is a target")
    e.add_argument("--config", help="training config JSON")
    e.add_argument("--report", required=True, help="JSON report path")
    e.add_argument("--table", help="also write the text table here")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, InvalidArgument) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
