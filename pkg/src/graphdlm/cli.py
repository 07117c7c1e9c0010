"""Command-line interface: ``graphdlm {train,predict,evaluate,diagnostics,synth}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags, missing
files, mismatched sensors).  ``--config FILE`` reads flat ``key=value`` lines
whose keys are flag names (``train-fraction`` or ``train_fraction``); flags on
the command line override the file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import data_io, evaluation, forecaster, synthetic
from .errors import DataError, GraphDLMError, SlotError, ValidationError
from .evidence import OptimizerConfig, train
from .graph_kernels import GraphConfig, all_pairs_shortest, build_graph, build_grid, read_distance_csv
from .model import load_model, save_model

logger = logging.getLogger("graphdlm")

BOOL_KEYS = {"no_wrap", "variance", "baseline_only", "unmasked", "holdout", "verbose"}


class UsageError(Exception):
    """Bad invocation; maps to exit code 2."""


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _sigma(text: str):
    return "auto" if text == "auto" else _positive_float(text)


def _minutes_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"horizons must be comma-separated minutes, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("no horizons given")
    if min(vals) < 1:
        raise argparse.ArgumentTypeError(f"horizons must be >= 1 minute (h >= 1), got {text!r}")
    return vals


def read_config(path: str | Path) -> dict[str, str]:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def minutes_to_steps(minutes, interval_min: int) -> list[int]:
    bad = [h for h in minutes if h % interval_min]
    if bad:
        raise UsageError(f"horizons {bad} are not multiples of the {interval_min}-minute sampling interval")
    return [h // interval_min for h in minutes]


def _require_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {p}")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file providing defaults for any flag")
    common.add_argument("--threads", type=_positive_int, help="worker threads (default: all cores)")
    common.add_argument("--seed", type=int, default=0, help="random seed for optimizer restarts")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="graphdlm",
        description="Graph heat-diffusion dynamic linear model for daily-periodic sensor forecasting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="fit a model from speeds and distances")
    p.add_argument("--speeds", help="speed CSV (timestamp + one column per sensor)")
    p.add_argument("--distances", help="distance CSV with header from,to,distance")
    p.add_argument("--model", help="output model file")
    p.add_argument("--kappa", type=_positive_float, help="distance threshold in meters (default: auto)")
    p.add_argument("--sigma", type=_sigma, default="auto", help="kernel width in meters or 'auto'")
    p.add_argument("--epsilon", type=float, default=0.01, help="extreme-kernel tolerance")
    p.add_argument("--K", type=int, default=5, help="number of diffusion periods")
    p.add_argument("--max-iters", type=_positive_int, default=200, help="L-BFGS-B iteration cap per start (default 200)")
    p.add_argument("--grad-tol", type=_positive_float, default=1e-6, help="projected-gradient tolerance on the per-entry objective (default 1e-6)")
    p.add_argument("--restarts", type=_positive_int, default=3, help="initial point plus noisy-logit restarts per slot (default 3)")
    p.add_argument("--train-fraction", type=float, default=0.8, help="leading share of days used for training")
    p.add_argument("--downsample", type=_positive_int, default=1, help="average this many readings per slot")
    p.add_argument("--no-wrap", action="store_true", help="do not train the cross-midnight slot")

    p = sub.add_parser("predict", parents=[common], help="forecast from the last reading of a speeds file")
    p.add_argument("--model", help="trained model file")
    p.add_argument("--speeds", help="speed CSV; its last row is the current state")
    p.add_argument("--horizons", type=_minutes_list, default=[15, 30, 60], help="comma-separated minutes")
    p.add_argument("--variance", action="store_true", help="add predictive variances (mph^2)")
    p.add_argument("--output", help="output CSV (default: stdout)")

    p = sub.add_parser("evaluate", parents=[common], help="RMSE report on held-out days")
    p.add_argument("--model", help="trained model file")
    p.add_argument("--speeds", help="speed CSV covering the test days")
    p.add_argument("--horizons", type=_minutes_list, default=[15, 30, 60], help="comma-separated minutes")
    p.add_argument("--output-dir", help="directory for report files")
    p.add_argument("--baseline-only", action="store_true", help="report only the persistence predictor")
    p.add_argument("--unmasked", action="store_true", help="make unmasked RMSE the headline numbers")
    p.add_argument("--holdout", action="store_true", help="drop days the model was trained on")

    p = sub.add_parser("diagnostics", parents=[common], help="per-slot c_data and mixing-ratio curves")
    p.add_argument("--model", help="trained model file")
    p.add_argument("--output", help="output CSV (default: stdout)")

    p = sub.add_parser("synth", parents=[common], help="write a planted synthetic dataset")
    p.add_argument("--output-dir", help="directory for speeds.csv, distances.csv, truth.json")
    p.add_argument("--n", type=_positive_int, default=10, help="number of sensors (default 10)")
    p.add_argument("--T", type=_positive_int, default=48, help="slots per day (default 48)")
    p.add_argument("--days", type=_positive_int, default=200, help="number of days (default 200)")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    values = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    known = {a.dest: a for a in sub._actions}  # noqa: SLF001
    unknown = sorted(set(values) - set(known) - {"config"})
    if unknown:
        raise UsageError(f"unknown config keys for '{args.command}': {unknown}")
    defaults = {}
    for k, v in values.items():
        if k == "config":
            continue
        if k in BOOL_KEYS:
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        else:
            defaults[k] = v
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _load_series_for_model(path: Path, model) -> data_io.SpeedSeries:
    try:
        series = data_io.load_speeds(path, sensor_ids=model.sensor_ids)
    except DataError as exc:
        if "sensor mismatch" in str(exc):
            raise UsageError(str(exc)) from None
        raise
    if series.interval_min != model.interval_min:
        if model.interval_min % series.interval_min:
            raise UsageError(
                f"speeds sampled every {series.interval_min} min cannot match the model's {model.interval_min} min"
            )
        series = data_io.downsample(series, model.interval_min // series.interval_min)
    return series


def cmd_train(args) -> int:
    speeds = _require_file(args.speeds, "speeds")
    dists = _require_file(args.distances, "distances")
    if args.model is None:
        raise UsageError("--model is required")
    if len({Path(speeds).resolve(), Path(dists).resolve(), Path(args.model).resolve()}) < 3:
        raise UsageError("speeds, distances and model paths must be distinct")
    try:
        gcfg = GraphConfig(kappa=args.kappa, sigma=args.sigma, epsilon=args.epsilon, K=args.K)
        ocfg = OptimizerConfig(max_iters=args.max_iters, grad_tol=args.grad_tol, restarts=args.restarts, seed=args.seed)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    t0 = time.perf_counter()
    table = read_distance_csv(dists)
    series = data_io.load_speeds(speeds)
    missing = sorted(set(series.sensor_ids) - set(table.sensor_ids))
    if missing:
        raise UsageError(f"sensors without distance entries: {missing[:20]}")
    table = read_distance_csv(dists, series.sensor_ids)
    if args.downsample > 1:
        series = data_io.downsample(series, args.downsample)
    D = all_pairs_shortest(table)
    graph = build_graph(D, gcfg, table.sensor_ids)
    grid = build_grid(graph, gcfg)
    logger.info("graph: N=%d kappa=%.1f sigma=%.1f taus=%s", graph.n, graph.kappa, graph.sigma,
                np.array2string(grid.taus, precision=4))
    dt = data_io.to_day_tensor(series)
    tr, _ = data_io.split_days(dt, args.train_fraction)
    stats = data_io.fit_norm(tr)
    model = train(data_io.apply_norm(tr, stats), grid, ocfg, norm=stats, graph=graph,
                  wrap=not args.no_wrap, threads=args.threads)
    save_model(model, args.model)
    elapsed = time.perf_counter() - t0
    n_conv = sum(s.converged for s in model.slots)
    iters = [s.n_iter for s in model.slots]
    print(f"trained {len(model.slots)} slots on {tr.m} days x {tr.n} sensors (T={tr.T}, K={grid.K})")
    print(f"converged {n_conv}/{len(model.slots)} slots; iterations min/median/max "
          f"{min(iters)}/{int(np.median(iters))}/{max(iters)}")
    c = np.array([s.c_data for s in model.slots])
    print(f"c_data mean {c.mean():.4f} (min {c.min():.4f}, max {c.max():.4f})")
    print(f"wall-clock {elapsed:.2f} s -> {args.model}")
    return 0


def _load_model_arg(args):
    return load_model(_require_file(args.model, "model"))


def cmd_predict(args) -> int:
    model = _load_model_arg(args)
    series = _load_series_for_model(_require_file(args.speeds, "speeds"), model)
    steps = minutes_to_steps(args.horizons, model.interval_min)
    ts = series.timestamps[-1]
    minute = int((ts - ts.astype("datetime64[D]")) // np.timedelta64(1, "m"))
    if minute % model.interval_min:
        raise UsageError(f"last timestamp {ts} is not aligned to {model.interval_min}-minute slots")
    slot = minute // model.interval_min
    fc = forecaster.forecast(model, series.values[-1], slot, steps, variance=args.variance)
    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        header = ["timestamp", "horizon_min", "sensor_id", "prediction"] + (["variance"] if args.variance else [])
        w.writerow(header)
        stamp = str(ts).replace("T", " ")
        for i, h in enumerate(fc.horizons):
            for j, sid in enumerate(model.sensor_ids):
                row = [stamp, h * model.interval_min, sid, repr(float(fc.means[i, j]))]
                if args.variance:
                    row.append(repr(float(fc.cov_diag[i, j])))
                w.writerow(row)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_evaluate(args) -> int:
    model = _load_model_arg(args)
    series = _load_series_for_model(_require_file(args.speeds, "speeds"), model)
    steps = minutes_to_steps(args.horizons, model.interval_min)
    dt = data_io.to_day_tensor(series)
    overlap = sorted(set(str(d) for d in dt.day_labels) & set(model.train_days))
    if overlap:
        if args.holdout:
            keep = [i for i, d in enumerate(dt.day_labels) if str(d) not in set(model.train_days)]
            if not keep:
                raise UsageError("no test days remain after dropping training days")
            dt = dt.select_days(keep)
            logger.info("dropped %d training days; %d test days remain", len(overlap), dt.m)
        else:
            logger.warning("%d test days were also used for training (first %s)", len(overlap), overlap[0])
    rep = evaluation.rmse(model, dt, steps, masked=not args.unmasked, baseline_only=args.baseline_only)
    if args.output_dir:
        outdir = Path(args.output_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(rep.to_json(), encoding="utf-8")
        (outdir / "report.csv").write_text(rep.to_csv(), encoding="utf-8")
        (outdir / "per_slot.csv").write_text(rep.per_slot_csv(), encoding="utf-8")
        if rep.diagnostics is not None:
            (outdir / "diagnostics.csv").write_text(rep.diagnostics.to_csv(), encoding="utf-8")
    mode = "unmasked" if args.unmasked else "masked"
    print(f"{'horizon':>8} " + " ".join(f"{m:>10}" for m in rep.rmse))
    for i, h in enumerate(rep.horizons):
        cells = []
        for m in rep.rmse:
            v = rep.rmse[m][mode][i]
            cells.append(f"{'n/a' if v is None else f'{v:.4f}':>10}")
        print(f"{h * rep.interval_min:>5} min " + " ".join(cells))
    return 0


def cmd_diagnostics(args) -> int:
    model = _load_model_arg(args)
    text = evaluation.diagnostics_series(model).to_csv()
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    if not args.output_dir:
        raise UsageError("--output-dir is required")
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        spec = synthetic.PlantedSpec(n=args.n, T=args.T, m=args.days)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    series, truth = synthetic.generate(spec, args.seed)
    data_io.write_speeds(series, out / "speeds.csv")
    synthetic.write_distances(truth, out / "distances.csv")
    truth.write(out / "truth.json")
    print(f"wrote {out}/speeds.csv, distances.csv, truth.json (kappa={truth.graph.kappa:g}, "
          f"sigma={truth.graph.sigma:g})")
    return 0


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "diagnostics": cmd_diagnostics,
    "synth": cmd_synth,
}


def _origin(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    for fr in reversed(frames):
        if "graphdlm" in fr.filename:
            return f"graphdlm.{Path(fr.filename).stem}"
    return "graphdlm"


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"graphdlm: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"graphdlm: error: {exc}", file=sys.stderr)
        return 2
    except SlotError as exc:
        print(f"graphdlm: error [{_origin(exc.cause)}, slot {exc.slot}]: {exc.cause}", file=sys.stderr)
        return 1
    except GraphDLMError as exc:
        print(f"graphdlm: error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
