"""Command-line front end.

    empcheb bound      --dim 2 --count 100 --lambda 3
    empcheb invert     --dim 2 --count 100 --epsilon 0.25
    empcheb samplesize --dim 2 --lambda 3 --epsilon 0.3
    empcheb detect     --epsilon 0.5 --warmup 50 < stream.csv
    empcheb ellipsoid  data.csv --epsilon 0.25 [--contains points.csv]
    empcheb simulate   --family gaussian --dim 2 --count 20 --lambda 2

Output is JSON (one object per line), CSV or a human-readable listing,
selected with ``--format`` or the ``EMPCHEB_FORMAT`` environment variable.
Floats carry 17 significant digits; exact rationals are also given as "p/q".
Errors go to stderr as a single JSON line and the exit code is 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from fractions import Fraction
from typing import IO, Iterable, Iterator

import numpy as np

from . import bounds, montecarlo
from .detector import DetectorConfig, detect_stream
from .errors import (
    EmpChebError,
    EmptyInputError,
    FormatError,
    InvalidRadiusError,
    ShapeError,
)
from .geometry import ConfidenceEllipsoid, confidence_ellipsoid
from .stats import SampleStats

SCHEMA_VERSION = 1
FORMAT_ENV = "EMPCHEB_FORMAT"
DEFAULT_SEED = 20240601


class UsageError(EmpChebError):
    code = "usage_error"


# --- ingestion -------------------------------------------------------------

def _open(source) -> IO[str]:
    if source is None or source == "-":
        return sys.stdin
    if hasattr(source, "read"):
        return source
    return open(source, newline="")


def _guess_format(source, fmt):
    if fmt and fmt != "auto":
        return fmt
    name = getattr(source, "name", source) if source not in (None, "-") else ""
    return "jsonl" if str(name).endswith((".jsonl", ".ndjson", ".json")) else "csv"


def _parse_row(cells, line):
    try:
        return [float(c) for c in cells]
    except ValueError:
        bad = next(c for c in cells if not _is_number(c))
        raise FormatError(f"non-numeric cell {bad!r}", line) from None


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def iter_rows(source=None, fmt: str = "auto") -> Iterator[tuple[int, np.ndarray]]:
    """Yield (line number, sample) pairs from a CSV or JSONL source.

    CSV: one sample per row, optional header on the first row.  JSONL: one
    object per line whose "x" field is a numeric array.  Every row must have
    the length of the first.
    """
    fmt = _guess_format(source, fmt)
    fh = _open(source)
    dim = None
    seen = False
    try:
        if fmt == "csv":
            rows = ((i, r) for i, r in enumerate(csv.reader(fh), start=1))
        elif fmt == "jsonl":
            rows = ((i, line) for i, line in enumerate(fh, start=1))
        else:
            raise UsageError(f"unknown input format {fmt!r}")
        for line, raw in rows:
            if fmt == "csv":
                cells = [c.strip() for c in raw]
                if not cells or all(c == "" for c in cells):
                    continue
                if not seen and dim is None and not all(_is_number(c) for c in cells):
                    seen = True  # header
                    continue
                values = _parse_row(cells, line)
            else:
                if not raw.strip():
                    continue
                try:
                    obj = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"invalid JSON: {exc.msg}", line) from None
                x = obj.get("x") if isinstance(obj, dict) else None
                if not isinstance(x, list) or not all(
                        isinstance(v, (int, float)) and not isinstance(v, bool) for v in x):
                    raise FormatError('expected an object with a numeric array field "x"', line)
                values = [float(v) for v in x]
            seen = True
            if dim is None:
                dim = len(values)
                if dim == 0:
                    raise FormatError("empty sample", line)
            elif len(values) != dim:
                raise FormatError(f"row has {len(values)} values, expected {dim}", line)
            yield line, np.asarray(values)
    finally:
        if fh is not sys.stdin and not hasattr(source, "read"):
            fh.close()
    if dim is None:
        raise EmptyInputError("input contains no samples")


def ingest(source=None, fmt: str = "auto"):
    """All samples of a source as a (count, dim) array plus their line numbers."""
    lines, rows = [], []
    for line, x in iter_rows(source, fmt):
        lines.append(line)
        rows.append(x)
    return np.vstack(rows), lines


# --- output ----------------------------------------------------------------

def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def to_json(obj) -> str:
    """JSON with floats at 17 significant digits (non-finite become null)."""
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, Fraction):
        return json.dumps(rational_str(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def rational_str(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return fmt_float(v)
    if isinstance(v, Fraction):
        return rational_str(v)
    if isinstance(v, (list, tuple, dict)):
        return to_json(v)
    if v is None:
        return ""
    return str(v)


class Emitter:
    """Writes flat records as JSON lines, CSV rows or ``key: value`` blocks."""

    def __init__(self, fmt: str, out: IO[str]):
        self.fmt = fmt
        self.out = out
        self._csv = None
        self._n = 0

    def emit(self, rec: dict):
        rec = {"schema_version": SCHEMA_VERSION, **rec}
        if self.fmt == "json":
            self.out.write(to_json(rec) + "\n")
        elif self.fmt == "csv":
            if self._csv is None or self._csv.fieldnames != list(rec):
                if self._csv is not None:
                    self.out.write("\n")  # new record shape: new header block
                self._csv = csv.DictWriter(self.out, fieldnames=list(rec), lineterminator="\n")
                self._csv.writeheader()
            self._csv.writerow({k: _cell(v) for k, v in rec.items()})
        else:
            if self._n:
                self.out.write("\n")
            width = max(len(k) for k in rec)
            for k, v in rec.items():
                self.out.write(f"{k:<{width}}  {_cell(v)}\n")
        self._n += 1


# --- numeric argument parsing ----------------------------------------------

def parse_rational(text: str) -> Fraction:
    """Decimal or "p/q" string to an exact rational ("2.9" is exactly 29/10)."""
    try:
        value = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"not a number: {text!r}") from None
    return value


def lambda_sq_from_args(args, exact=True):
    if getattr(args, "lambda_sq", None) is not None:
        lam_sq = parse_rational(args.lambda_sq)
    elif getattr(args, "lam", None) is not None:
        lam = parse_rational(args.lam)
        if lam <= 0:
            raise InvalidRadiusError(f"lambda must be positive, got {args.lam}")
        lam_sq = lam * lam
    else:
        return None
    if lam_sq <= 0:
        raise InvalidRadiusError(f"lambda^2 must be positive, got {lam_sq}")
    return lam_sq if exact else float(lam_sq)


def _radius_fields(lam_sq):
    lam_sq = Fraction(lam_sq)
    return {"lambda_sq": float(lam_sq), "lambda_sq_exact": rational_str(lam_sq),
            "lambda": math.sqrt(lam_sq)}


def _bound_fields(b: bounds.BoundValue):
    return {"formula": b.formula.value, "value": float(b.value),
            "value_exact": rational_str(b.value) if isinstance(b.value, Fraction) else None,
            "exact": b.exact}


# --- subcommands -----------------------------------------------------------

def cmd_bound(args, em: Emitter):
    exact = args.mode == "exact"
    lam_sq = lambda_sq_from_args(args)
    if lam_sq is None:
        raise UsageError("one of --lambda or --lambda-sq is required")
    counts = _int_list(args.count, "--count")
    limit = bounds.asymptotic_bound(args.dim, lam_sq).value
    for N in counts:
        q = bounds.BoundQuery(args.dim, N, lam_sq if exact else float(lam_sq))
        b = q.evaluate(args.formula, exact=exact)
        em.emit({"command": "bound", "dim": args.dim, "count": N, **_radius_fields(lam_sq),
                 **_bound_fields(b), "limit": float(limit),
                 "gap": abs(float(b.value) - float(limit))})


def cmd_invert(args, em: Emitter):
    eps = parse_rational(args.epsilon)
    boundary = bounds.threshold_sq(args.dim, args.count, eps)
    rec = {"command": "invert", "dim": args.dim, "count": args.count, "epsilon": float(eps),
           "feasible": boundary is not None}
    if boundary is None:
        floor = bounds.min_achievable(args.dim, args.count)
        rec.update({"lambda": None, "lambda_sq_boundary": None, "lambda_sq_boundary_exact": None,
                    "safe_lambda_sq": None, "bound_at_safe": None,
                    "min_epsilon": float(floor), "min_epsilon_exact": rational_str(floor)})
    else:
        safe = bounds.safe_lambda_sq(args.dim, args.count, eps)
        b = bounds.empirical_bound(args.dim, args.count, safe)
        rec.update({"lambda": math.sqrt(boundary), "lambda_sq_boundary": float(boundary),
                    "lambda_sq_boundary_exact": rational_str(boundary), "safe_lambda_sq": safe,
                    "bound_at_safe": float(b.value), "bound_at_safe_exact": rational_str(b.value)})
    em.emit(rec)


def cmd_samplesize(args, em: Emitter):
    lam_sq = lambda_sq_from_args(args)
    if lam_sq is None:
        raise UsageError("one of --lambda or --lambda-sq is required")
    eps = parse_rational(args.epsilon)
    N = bounds.min_sample_size(args.dim, lam_sq, eps, sustained=args.sustained)
    rec = {"command": "samplesize", "dim": args.dim, **_radius_fields(lam_sq),
           "epsilon": float(eps), "sustained": args.sustained, "feasible": N is not None,
           "count": N, "bound_at_count": None}
    if N is not None:
        rec["bound_at_count"] = float(bounds.empirical_bound(args.dim, N, lam_sq).value)
    em.emit(rec)


def _target(args):
    lam_sq = lambda_sq_from_args(args, exact=False)
    if (args.epsilon is None) == (lam_sq is None):
        raise UsageError("give exactly one of --epsilon, --lambda or --lambda-sq")
    eps = float(parse_rational(args.epsilon)) if args.epsilon is not None else None
    return eps, lam_sq


def cmd_detect(args, em: Emitter):
    eps, lam_sq = _target(args)
    try:
        config = DetectorConfig(epsilon=eps, lambda_sq=lam_sq, warmup=args.warmup,
                                update_policy=args.policy)
    except ValueError as exc:
        if isinstance(exc, EmpChebError):
            raise
        raise UsageError(str(exc)) from None
    rows = iter_rows(args.input, args.input_format)
    lines = []

    def stream():
        for line, x in rows:
            lines.append(line)
            yield x

    try:
        for v in detect_stream(stream(), config):
            em.emit({"command": "detect", "index": v.index, "line": lines[v.index],
                     "distance_sq": v.distance_sq, "threshold_sq": v.threshold_sq,
                     "flagged": v.flagged, "stats_count": v.stats_count,
                     "bound_at_threshold": v.bound_at_threshold, "bound_exact": v.bound_exact})
            em.out.flush()
    except ValueError as exc:
        if isinstance(exc, EmpChebError):
            raise
        raise UsageError(str(exc)) from None


def cmd_ellipsoid(args, em: Emitter):
    eps, lam_sq = _target(args)
    data, _ = ingest(args.input, args.input_format)
    stats = SampleStats.from_samples(data)
    ell = confidence_ellipsoid(stats, epsilon=eps, lambda_sq=lam_sq)
    rec = {"command": "ellipsoid", **ell.to_record()}
    if eps is not None:
        rec["epsilon"] = eps
    em.emit(rec)
    if args.contains:
        pts, lines = ingest(args.contains, args.input_format)
        if pts.shape[1] != ell.dim:
            raise ShapeError(f"points have dimension {pts.shape[1]}, ellipsoid has {ell.dim}")
        for line, x in zip(lines, pts):
            d2 = ell.mahalanobis_sq(x)
            em.emit({"command": "contains", "line": line, "distance_sq": d2,
                     "inside": bool(d2 < ell.radius_sq)})


def _spec_from_args(args) -> montecarlo.DistributionSpec:
    d = args.dim
    if args.family == "gaussian":
        return montecarlo.gaussian(dim=d)
    if args.family == "uniform_box":
        return montecarlo.uniform_box(np.zeros(d), np.ones(d))
    if args.family == "student_t":
        return montecarlo.student_t(args.dof, dim=d)
    return montecarlo.two_point(np.zeros(d), np.ones(d), args.p)


def cmd_simulate(args, em: Emitter):
    lam_sq = lambda_sq_from_args(args)
    if lam_sq is None:
        raise UsageError("one of --lambda or --lambda-sq is required")
    spec = _spec_from_args(args)
    rep = montecarlo.validate_bound(spec, args.count, lam_sq, trials=args.trials, seed=args.seed,
                                    workers=args.workers)
    d = rep.as_dict()
    b = d.pop("bound")
    em.emit({"command": "simulate", "family": args.family, "dim": rep.dim, "count": rep.count,
             **_radius_fields(lam_sq), "trials": rep.trials, "events": rep.events,
             "empirical_frequency": rep.empirical_frequency, "bound": b["value"],
             "bound_exact": b.get("value_exact"), "mc_stderr": rep.mc_stderr,
             "slack_sigmas": rep.slack_sigmas, "pass": rep.passed,
             "rejected_trials": rep.rejected, "seed": rep.seed})


def _int_list(text, flag):
    try:
        out = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"{flag} expects an integer or comma-separated integers") from None
    if not out:
        raise UsageError(f"{flag} is empty")
    return out


# --- parser ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_radius(p, required=False):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--lambda", dest="lam", help="radius lambda (decimal or p/q)")
    g.add_argument("--lambda-sq", dest="lambda_sq", help="squared radius (decimal or p/q)")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--format", choices=["json", "csv", "human"],
                        default=os.environ.get(FORMAT_ENV, "json"),
                        help=f"output format (default: ${FORMAT_ENV} or json)")
    common.add_argument("--mode", choices=["exact", "float"], default="exact",
                        help="numeric mode for bound evaluation")

    parser = _Parser(prog="empcheb", description="Empirical multivariate Chebyshev bounds.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("bound", parents=[common], help="evaluate a probability bound")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--count", required=True, help="N, or a comma-separated list of N")
    _add_radius(p)
    p.add_argument("--formula", choices=[f.value for f in bounds.Formula], default="empirical")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("invert", parents=[common], help="smallest radius for a target probability")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--epsilon", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("samplesize", parents=[common], help="smallest N for a radius and probability")
    p.add_argument("--dim", type=int, required=True)
    _add_radius(p)
    p.add_argument("--epsilon", required=True)
    p.add_argument("--sustained", action="store_true",
                   help="smallest N from which every larger N also meets epsilon")
    p.set_defaults(func=cmd_samplesize)

    for name, func, helptext in (("detect", cmd_detect, "flag outliers in a sample stream"),
                                 ("ellipsoid", cmd_ellipsoid, "confidence ellipsoid of a data set")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("input", nargs="?", default="-", help="CSV/JSONL file, or - for stdin")
        p.add_argument("--input-format", choices=["auto", "csv", "jsonl"], default="auto")
        p.add_argument("--epsilon")
        _add_radius(p)
        p.set_defaults(func=func)
        if name == "detect":
            p.add_argument("--warmup", type=int)
            p.add_argument("--policy", choices=["always", "inliers_only", "frozen_after_warmup"],
                           default="always")
        else:
            p.add_argument("--contains", help="file of points to test for membership")

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo check of the bound")
    p.add_argument("--family", choices=["gaussian", "uniform_box", "student_t", "two_point"],
                   default="gaussian")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    _add_radius(p)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--dof", type=float, default=3.0, help="student_t degrees of freedom")
    p.add_argument("--p", type=float, default=0.4, help="two_point probability of the first value")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)
    return parser


def run(argv: Iterable[str] | None = None, stdout: IO[str] | None = None,
        stderr: IO[str] | None = None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # --help; usage errors raise UsageError instead
            return int(exc.code or 0)
        if args.format not in ("json", "csv", "human"):
            raise UsageError(f"unknown output format {args.format!r} (from ${FORMAT_ENV})")
        args.func(args, Emitter(args.format, stdout))
    except EmpChebError as exc:
        stderr.write(to_json({"schema_version": SCHEMA_VERSION, **exc.record()}) + "\n")
        return 2
    except BrokenPipeError:
        raise
    except OSError as exc:
        stderr.write(to_json({"schema_version": SCHEMA_VERSION, "error": "io_error",
                              "message": str(exc)}) + "\n")
        return 2
    return 0


def main():
    try:
        code = run()
        sys.stdout.flush()
    except BrokenPipeError:
        # downstream closed early (e.g. piped into head)
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        code = 0
    sys.exit(code)


if __name__ == "__main__":
    main()
