"""Command-line interface.

Subcommands
-----------
boundary   tabulate the standard, fixed-time and anytime corrections over n
simulate   run a Monte Carlo experiment (iid, shift or setsize)
calibrate  stream a CSV of scores through the calibrator, with checkpoint/resume

Exit status is 0 on success, 2 for usage errors and 1 for runtime failures.
Options may also come from a JSON file (``--config``) with the same keys as
the long option names; an explicit flag wins over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

from .boundaries import BoundaryConfig, CorrectionMethod, boundary_table
from .errors import (BandUndefinedError, CheckpointError, ConfigurationError, DomainError,
                     EmptyStateError, InfeasibleError)
from .risk_core import CalibratorState
from .shift import SHIFT_VARIANTS, GaussianRatioWeight, ShiftState

logger = logging.getLogger("anytime_crc.cli")


class UsageError(Exception):
    """Invalid command line or configuration (exit status 2)."""


# Defaults applied when neither a flag nor the config file sets a value.
COMMON_DEFAULTS = {
    "delta": 0.1,
    "loss_bound": 1.0,
    "format": "csv",
    "safe_boundary": False,
    "shift_variant": "proof",
}
BOUNDARY_DEFAULTS = {"nmax": 10**6, "points": 40, "out": "-"}
SIMULATE_DEFAULTS = {
    "iid": {"alpha": 0.05, "runs": 500, "nmax": 20_000},
    "shift": {"alpha": 0.1, "runs": 300, "nmax": 10_000},
    "setsize": {"alpha": 0.1, "runs": 20, "nmax": 100_000},
}
SIMULATE_COMMON = {
    "seed": 0, "jobs": 1, "record_every": 100, "svg": False, "weights": "importance",
    "classes": 100, "signal": 3.0, "eval_size": 4000, "no_band": False, "method": None,
}
CALIBRATE_DEFAULTS = {"method": None, "shift": False, "weight_fn": None, "out": "-",
                      "checkpoint": None, "resume": None}
EXPERIMENT_NAMES = {"iid": "iid_linear", "shift": "shift_cubic", "setsize": "setsize_multiclass"}


# ---------------------------------------------------------------------------
# parser

def _count(text: str) -> int:
    """Parse a positive count, accepting integral scientific notation such as ``1e6``."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid count: {text!r}") from None
    if not value.is_integer() or value < 1:
        raise argparse.ArgumentTypeError(f"invalid count: {text!r}")
    return int(value)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, help="tolerated risk level")
    p.add_argument("--delta", type=float, help="failure probability (default 0.1)")
    p.add_argument("--loss-bound", type=float, help="loss bound B (default 1)")
    p.add_argument("--format", choices=("csv", "json"), help="output format (default csv)")
    p.add_argument("--safe-boundary", action="store_true", default=None,
                   help="evaluate the anytime radius at max(v, m*)")
    p.add_argument("--shift-variant", choices=SHIFT_VARIANTS,
                   help="weighted correction form (default proof)")
    p.add_argument("--config", help="JSON file of option values")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anytime-crc", description="Anytime-valid conformal risk control")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("boundary", help="tabulate correction terms over n")
    _add_common(p)
    p.add_argument("--nmax", type=_count, help="largest n in the grid (default 1e6)")
    p.add_argument("--points", type=int, help="log-spaced grid points (default 40)")
    p.add_argument("--out", help="output file, '-' for stdout (default)")
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p.add_argument("experiment", choices=tuple(EXPERIMENT_NAMES), help="experiment to run")
    _add_common(p)
    p.add_argument("--method", help="correction method (default: the experiment's anytime method)")
    p.add_argument("--runs", type=_count, help="Monte Carlo runs")
    p.add_argument("--nmax", type=_count, help="largest calibration sample size")
    p.add_argument("--seed", type=int, help="64-bit seed (default 0)")
    p.add_argument("--out", help="output directory (default sim-<experiment>)")
    p.add_argument("--svg", action="store_true", default=None, help="also write risk.svg")
    p.add_argument("--jobs", type=int, help="worker threads (output does not depend on it)")
    p.add_argument("--record-every", type=int, help="trace every k-th n (default 100)")
    p.add_argument("--weights", choices=("importance", "none"),
                   help="shift: importance weights or the no-shift comparison")
    p.add_argument("--classes", type=int, help="setsize: number of classes (default 100)")
    p.add_argument("--signal", type=float, help="setsize: true-class logit boost (default 3)")
    p.add_argument("--eval-size", type=_count, help="setsize: evaluation-set size (default 4000)")
    p.add_argument("--no-band", action="store_true", default=None, help="skip lower-band checks")
    p.add_argument("--resume", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="stream a score file through the calibrator")
    p.add_argument("input", help="CSV with a 'score' (or 'y_or_score') column; '-' for stdin")
    _add_common(p)
    p.add_argument("--method", help="anytime, standard, fixed_duchi or fixed_subgamma")
    p.add_argument("--shift", action="store_true", default=None,
                   help="importance-weighted calibration (needs 'weight' or --weight-fn)")
    p.add_argument("--weight-fn", help="Gaussian density ratio 'mean_star,sd_star,mean_cal,sd_cal' "
                                       "applied to the 'x' column")
    p.add_argument("--checkpoint", help="where to write the state on exit")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", help="emission output, '-' for stdout (default)")
    p.set_defaults(func=cmd_calibrate)
    return parser


def resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge flag values over the config file over built-in defaults."""
    file_values: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        file_values = {str(k).replace("-", "_"): v for k, v in raw.items()}
        unknown = sorted(set(file_values) - set(defaults) - {"alpha"})
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    merged = {}
    for key in set(defaults) | {"alpha"}:
        flag = getattr(args, key, None)
        if flag is not None:
            if key in file_values and file_values[key] != flag:
                logger.warning("--%s=%r overrides config value %r", key.replace("_", "-"), flag,
                               file_values[key])
            merged[key] = flag
        elif key in file_values:
            merged[key] = file_values[key]
        else:
            merged[key] = defaults.get(key)
    return merged


def _open_out(path: str):
    if path == "-":
        return sys.stdout, False
    try:
        return open(path, "w", encoding="utf-8", newline="\n"), True
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _boundary_cfg(opts: dict) -> BoundaryConfig:
    try:
        return BoundaryConfig(loss_bound=float(opts["loss_bound"]), delta=float(opts["delta"]))
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------
# boundary

def cmd_boundary(args: argparse.Namespace) -> int:
    opts = resolve(args, {**COMMON_DEFAULTS, **BOUNDARY_DEFAULTS})
    if opts["alpha"] is None:
        raise UsageError("--alpha is required")
    cfg = _boundary_cfg(opts)
    try:
        rows = boundary_table(float(opts["alpha"]), cfg, int(opts["nmax"]), int(opts["points"]),
                              bool(opts["safe_boundary"]))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    from .simharness.output import dumps_json, rows_to_csv
    cols = ("n", "gamma_standard", "gamma_duchi", "gamma_anytime", "m_star")
    text = rows_to_csv(rows, cols) if opts["format"] == "csv" else dumps_json(rows)
    fh, close = _open_out(opts["out"])
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()
    return 0


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args: argparse.Namespace) -> int:
    from .simharness.experiments import SimConfig, compare_set_sizes, run_experiment
    from .simharness.output import dumps_json, rows_to_csv, write_experiment

    name = args.experiment
    defaults = {**COMMON_DEFAULTS, **SIMULATE_COMMON, **SIMULATE_DEFAULTS[name],
                "out": f"sim-{name}", "resume": None}
    opts = resolve(args, defaults)
    if opts["resume"] is not None:
        raise UsageError("simulate does not take --resume; runs are regenerated from the seed")
    try:
        cfg = SimConfig(
            experiment=EXPERIMENT_NAMES[name], method=opts["method"], alpha=float(opts["alpha"]),
            delta=float(opts["delta"]), loss_bound=float(opts["loss_bound"]),
            n_max=int(opts["nmax"]), runs=int(opts["runs"]), seed=int(opts["seed"]),
            record_every=int(opts["record_every"]), jobs=int(opts["jobs"]),
            safe_boundary=bool(opts["safe_boundary"]), shift_variant=opts["shift_variant"],
            weighting=opts["weights"], band=not opts["no_band"], classes=int(opts["classes"]),
            signal=float(opts["signal"]), eval_size=int(opts["eval_size"]))
    except (ConfigurationError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    result = run_experiment(cfg)
    if name == "setsize":
        comparison = compare_set_sizes(cfg)
        rows = comparison.rows()
        result.summary["set_size_comparison"] = {"m_star": comparison.m_star, "rows": rows}
    paths = write_experiment(result, opts["out"], opts["format"], bool(opts["svg"]))
    if name == "setsize":
        path = Path(opts["out"]) / "setsize.csv"
        cols = ("n", "size_anytime", "size_fixed", "ratio", "gamma_anytime", "gamma_fixed")
        path.write_text(rows_to_csv(rows, cols), encoding="utf-8")
        paths.append(path)
    viol = result.summary["violation_any_n"]
    logger.info("any-n violation fraction %.4f (%d/%d)", viol["fraction"], viol["count"], viol["total"])
    for p in paths:
        print(p)
    return 0


# ---------------------------------------------------------------------------
# calibrate

SCORE_COLUMNS = ("score", "y_or_score")


def _read_rows(path: str):
    """Parse the whole input first, so a malformed row changes no state."""
    fh = sys.stdin if path == "-" else open(path, newline="", encoding="utf-8")
    try:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        score_col = next((c for c in SCORE_COLUMNS if c in fields), None)
        if fields and score_col is None:
            raise DomainError(f"{path}: no 'score' or 'y_or_score' column (got {fields})")
        rows = []
        for rec in reader:
            line = reader.line_num
            try:
                score = float(rec[score_col])
                x = float(rec["x"]) if "x" in fields else None
                w = float(rec["weight"]) if "weight" in fields else None
            except (TypeError, ValueError):
                raise DomainError(f"{path}: line {line}: malformed row {rec!r}") from None
            if not math.isfinite(score) or score < 0:
                raise DomainError(f"{path}: line {line}: score must be finite and >= 0, got {score}")
            if w is not None and (not math.isfinite(w) or w < 0):
                raise DomainError(f"{path}: line {line}: weight must be finite and >= 0, got {w}")
            if x is not None and not math.isfinite(x):
                raise DomainError(f"{path}: line {line}: x must be finite")
            rows.append((line, score, x, w))
        return fields, rows
    finally:
        if fh is not sys.stdin:
            fh.close()


def _check_compatible(state, opts: dict, explicit: dict) -> None:
    pairs = [("alpha", state.alpha), ("delta", state.cfg.delta), ("loss_bound", state.cfg.B)]
    for key, have in pairs:
        want = explicit.get(key)
        if want is not None and float(want) != have:
            raise UsageError(f"checkpoint has {key}={have}, incompatible with requested {want}")
    method = explicit.get("method")
    if method is not None and isinstance(state, CalibratorState):
        if CorrectionMethod.parse(method) is not state.method:
            raise UsageError(f"checkpoint method {state.method.value!r} differs from {method!r}")
    if explicit.get("shift") and not isinstance(state, ShiftState):
        raise UsageError("checkpoint holds an unweighted calibrator; --shift is incompatible")
    if isinstance(state, ShiftState):
        variant = explicit.get("shift_variant")
        if variant is not None and variant != state.variant:
            raise UsageError(f"checkpoint shift variant {state.variant!r} differs from {variant!r}")
        if method is not None and CorrectionMethod.parse(method) is not CorrectionMethod.SHIFT_ANYTIME:
            raise UsageError("checkpoint holds a weighted calibrator; only shift_anytime applies")


def _load_checkpoint(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    kind = doc.get("kind") if isinstance(doc, dict) else None
    if kind == "shift":
        return ShiftState.from_dict(doc)
    if kind == "iid":
        return CalibratorState.from_dict(doc)
    raise CheckpointError(f"checkpoint {path} has unknown kind {kind!r}")


def _write_checkpoint(path: str, state) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(state.dumps())
            fh.write("\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc.strerror or exc}") from exc


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def cmd_calibrate(args: argparse.Namespace) -> int:
    defaults = {**COMMON_DEFAULTS, **CALIBRATE_DEFAULTS}
    opts = resolve(args, defaults)
    explicit = {k: v for k, v in opts.items() if v is not None and v != defaults.get(k)}
    fields, rows = _read_rows(args.input)
    has_weight = "weight" in fields
    if has_weight and not opts["shift"]:
        raise UsageError("input has a 'weight' column; pass --shift for weighted calibration")
    if opts["weight_fn"] and not opts["shift"]:
        raise UsageError("--weight-fn needs --shift")
    weight_fn = None
    if opts["shift"] and not has_weight:
        if not opts["weight_fn"]:
            raise UsageError("--shift needs a 'weight' column or --weight-fn")
        if "x" not in fields and rows:
            raise UsageError("--weight-fn needs an 'x' column")
        try:
            weight_fn = GaussianRatioWeight.parse(opts["weight_fn"])
        except (ConfigurationError, ValueError) as exc:
            raise UsageError(f"bad --weight-fn: {exc}") from exc

    if opts["resume"]:
        state = _load_checkpoint(opts["resume"])
        _check_compatible(state, opts, explicit)
        if isinstance(state, ShiftState) != bool(opts["shift"]) and (has_weight or weight_fn):
            raise UsageError("checkpoint and input disagree on weighted calibration")
        if isinstance(state, ShiftState) and not (has_weight or weight_fn) and rows:
            raise UsageError("resuming a weighted calibrator needs weights")
    else:
        if opts["alpha"] is None:
            raise UsageError("--alpha is required")
        cfg = _boundary_cfg(opts)
        try:
            if opts["shift"]:
                method = opts["method"]
                if method is not None and CorrectionMethod.parse(method) is not CorrectionMethod.SHIFT_ANYTIME:
                    raise UsageError("--shift uses the shift_anytime method")
                state = ShiftState(float(opts["alpha"]), cfg, variant=opts["shift_variant"])
            else:
                method = CorrectionMethod.parse(opts["method"] or "anytime")
                if method is CorrectionMethod.SHIFT_ANYTIME:
                    raise UsageError("shift_anytime needs --shift")
                state = CalibratorState(float(opts["alpha"]), cfg, method,
                                        safe_boundary=bool(opts["safe_boundary"]))
        except ConfigurationError as exc:
            raise UsageError(str(exc)) from exc

    checkpoint = opts["checkpoint"] or opts["resume"] or (
        "calibrate.ckpt.json" if args.input == "-" else f"{args.input}.ckpt.json")
    fh, close = _open_out(opts["out"])
    try:
        if opts["format"] == "csv":
            fh.write("n,gamma,lambda\n")
        for line, score, x, w in rows:
            if isinstance(state, ShiftState):
                weight = w if w is not None else float(weight_fn(x))
                lam = state.update(score, weight)
            else:
                lam = state.update(score)
            gamma = state.last_gamma
            if opts["format"] == "csv":
                fh.write(f"{state.n},{_fmt(gamma)},{_fmt(lam)}\n")
            else:
                fh.write(json.dumps({"n": state.n, "gamma": gamma,
                                     "lambda": lam if math.isfinite(lam) else "inf"}) + "\n")
    finally:
        if close:
            fh.close()
    _write_checkpoint(checkpoint, state)
    logger.info("processed %d rows; checkpoint at %s", len(rows), checkpoint)
    return 0


# ---------------------------------------------------------------------------
# entry point

def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"anytime-crc {args.command}: usage error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, CheckpointError, EmptyStateError, InfeasibleError, BandUndefinedError,
            OSError) as exc:
        print(f"anytime-crc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
