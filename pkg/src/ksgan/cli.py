"""Command-line entry point: ``ksgan {train,sample,eval,demo-chi-gaussian,hist}``.

Exit codes: 0 success, 1 usage or input error, 2 numeric abort during training.
``KSGAN_THREADS`` caps BLAS worker threads (default 1).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import losses, metrics
from .targets import analytic_pair_chi_gaussian, make_rng
from .trainer import ConfigError, NumericAbort, TrainConfig, sample_model, train

log = logging.getLogger("ksgan")

DEMO_MIN_N = 1000


class UsageError(Exception):
    """Bad flags or unusable inputs; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# CSV point sets


def read_points(path) -> np.ndarray:
    """Read a point-set CSV; a non-numeric first line is taken as the header."""
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    if lines:
        try:
            [float(v) for v in lines[0].split(",")]
        except ValueError:
            lines = lines[1:]
    if not lines:
        raise UsageError(f"{path}: no points")
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines]
        return np.array(rows, dtype=np.float64)
    except ValueError:
        raise UsageError(f"{path}: malformed CSV (ragged rows or non-numeric values)") from None


def write_points(path, points: np.ndarray) -> None:
    points = np.asarray(points, dtype=np.float64)
    header = ",".join(f"x{i}" for i in range(points.shape[1]))
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in points:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# 2D histograms


@dataclass
class HistogramGrid:
    """``counts[i, j]``: points with y in bin ``i`` and x in bin ``j`` (both ascending)."""
    bins: int
    bounds: tuple[float, float, float, float]
    counts: np.ndarray
    n_outside: int = 0


def histogram2d(points: np.ndarray, bins: int, bounds=None) -> HistogramGrid:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise UsageError(f"histogram needs 2D points, got shape {pts.shape}")
    if bins < 2:
        raise UsageError("--bins must be >= 2")
    if bounds is None:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        bounds = (lo[0], hi[0], lo[1], hi[1])
    xmin, xmax, ymin, ymax = (float(b) for b in bounds)
    if not (xmin < xmax and ymin < ymax):
        raise UsageError(f"bounds must satisfy xmin < xmax and ymin < ymax, got {bounds}")
    x, y = pts[:, 0], pts[:, 1]
    inside = (x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax)
    # the upper edge belongs to the last bin
    jx = np.minimum(((x[inside] - xmin) / (xmax - xmin) * bins).astype(np.int64), bins - 1)
    iy = np.minimum(((y[inside] - ymin) / (ymax - ymin) * bins).astype(np.int64), bins - 1)
    counts = np.zeros((bins, bins), dtype=np.int64)
    np.add.at(counts, (iy, jx), 1)
    return HistogramGrid(bins, (xmin, xmax, ymin, ymax), counts, int((~inside).sum()))


def pgm_bytes(grid: HistogramGrid) -> bytes:
    """8-bit binary PGM, highest y on top, counts scaled linearly by the grid max."""
    top = grid.counts.max()
    scaled = np.zeros_like(grid.counts) if top == 0 else np.rint(grid.counts * (255.0 / top))
    img = np.flipud(scaled).astype(np.uint8)
    return f"P5\n{grid.bins} {grid.bins}\n255\n".encode("ascii") + img.tobytes()


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = TrainConfig.from_json(args.config)
    if args.seed is not None:
        d = cfg.to_dict()
        d["seed"] = args.seed
        cfg = TrainConfig.from_dict(d)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved-config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    result = train(cfg, out)
    summary = {"generator_updates_total": cfg.generator_updates_total,
               "final_mmd2": result.final_mmd2, "final_mode_count": result.final_mode_count,
               "checkpoints": [str(p) for p in result.checkpoints]}
    print(json.dumps(summary))
    return 0


def cmd_sample(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    samples = sample_model(args.checkpoint, args.n, make_rng(args.seed))
    write_points(args.out, samples.points)
    return 0


def cmd_eval(args) -> int:
    a, b = read_points(args.a), read_points(args.b)
    if a.shape[1] != b.shape[1]:
        raise UsageError(f"dimension mismatch: {args.a} has {a.shape[1]} columns, {args.b} has {b.shape[1]}")
    if args.metric == "ks1d":
        if a.shape[1] != 1:
            raise UsageError("ks1d needs one-dimensional point sets")
        out = {"metric": "ks1d", "value": metrics.ks_two_sample_1d(a, b), "bandwidth": None}
    else:
        if args.bandwidth == "auto":
            bw = metrics.median_heuristic_bandwidth(np.concatenate([a, b]))
        else:
            try:
                bw = float(args.bandwidth)
            except ValueError:
                raise UsageError(f"--bandwidth must be 'auto' or a real, got {args.bandwidth!r}") from None
            if not (np.isfinite(bw) and bw > 0):
                raise UsageError(f"--bandwidth must be > 0, got {args.bandwidth}")
        out = {"metric": "mmd2", "value": metrics.mmd2(a, b, bw).mmd2, "bandwidth": bw}
    out.update(n_a=len(a), n_b=len(b))
    print(json.dumps(out))
    return 0


def cmd_demo_chi_gaussian(args) -> int:
    if args.n < DEMO_MIN_N:
        raise UsageError(f"--n must be >= {DEMO_MIN_N} for the stated tolerances, got {args.n}")
    chi, gauss = analytic_pair_chi_gaussian(args.n, make_rng(args.seed))
    one_sided, symmetric = losses.chi_gaussian_discrepancies(chi.points, gauss.points)
    print(json.dumps({"one_sided_sup": one_sided, "symmetric_gks": symmetric, "n": args.n, "seed": args.seed}))
    return 0


def cmd_hist(args) -> int:
    pts = read_points(args.inp)
    if args.bounds == ["auto"]:
        bounds = None
    else:
        if len(args.bounds) != 4:
            raise UsageError("--bounds takes 4 reals (xmin xmax ymin ymax) or 'auto'")
        try:
            bounds = tuple(float(v) for v in args.bounds)
        except ValueError:
            raise UsageError(f"--bounds values must be reals, got {args.bounds}") from None
    grid = histogram2d(pts, args.bins, bounds)
    if grid.n_outside:
        print(f"warning: {grid.n_outside} of {len(pts)} points fall outside the bounds", file=sys.stderr)
    if args.format == "pgm":
        data = pgm_bytes(grid)
    else:
        data = "".join(",".join(str(int(c)) for c in row) + "\n" for row in grid.counts).encode("ascii")
    try:
        Path(args.out).write_bytes(data)
    except OSError as e:
        raise UsageError(f"cannot write {args.out}: {e.strerror}") from None
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ksgan", description="KSGAN training and evaluation tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a generator/critic pair from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw points from a trained generator")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="two-sample statistic between CSV point sets")
    e.add_argument("metric", choices=("mmd2", "ks1d"))
    e.add_argument("--a", required=True)
    e.add_argument("--b", required=True)
    e.add_argument("--bandwidth", default="auto")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("demo-chi-gaussian", help="half-normal vs normal coverage discrepancies")
    d.add_argument("--n", type=int, default=65536)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_demo_chi_gaussian)

    h = sub.add_parser("hist", help="2D histogram of a CSV point set")
    h.add_argument("--in", dest="inp", required=True)
    h.add_argument("--bins", type=int, default=64)
    h.add_argument("--bounds", nargs="+", default=["auto"])
    h.add_argument("--out", required=True)
    h.add_argument("--format", choices=("csv", "pgm"), default="csv")
    h.set_defaults(func=cmd_hist)
    return p


def _thread_limit() -> int:
    raw = os.environ.get("KSGAN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"KSGAN_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"KSGAN_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    from threadpoolctl import threadpool_limits

    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        with threadpool_limits(limits=_thread_limit()):
            return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except ckpt.CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericAbort as e:
        print(f"numeric abort: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
