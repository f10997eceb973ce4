"""Command-line harness: dataset preparation, training, compression,
RD sweeps, and BD-rate reports.

Exit codes: 0 success, 1 usage error, 2 data error, 3 corruption or
model mismatch. Set PCGC_LOG=DEBUG|INFO|... for diagnostics. Every
command is deterministic under a fixed --seed.

CSV schemas (versioned; the first line names schema and version):
    loss-log v1:     step,D,R,L
    rd-frames v1:    frame,codec,setting,bpov,psnr_d1,psnr_d2
    rd-settings v1:  codec,setting,bpov,psnr_d1,psnr_d2
"""

import argparse
import csv
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .autodiff import AdamState
from .bitstream import CompressedBitstream
from .codec import TrainConfig, decode, encode, init_model, train
from .errors import CorruptionError, DataError, PcgcError
from .fileio import (
    load_mesh,
    load_point_cloud,
    load_voxel_grid,
    save_point_cloud,
    save_voxel_grid,
)
from .geometry import PointCloud, devoxelize, sample_surface, voxelize
from .metrics import RDCurve, RDPoint, bd_rate, symmetric_psnr
from .octree import OctreeStream, octree_decode, octree_encode

log = logging.getLogger("pcgc")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CORRUPT = 3

# canonical rate sweep, one trained model per value
DEFAULT_LAMBDA_SWEEP = (1e-4, 5e-5, 1e-5, 5e-6, 1e-6)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _write_csv(path, schema, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# pcgc-csv {schema} v1\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise DataError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def cmd_voxelize(args) -> int:
    if args.resolution % 8 != 0:
        raise DataError(
            f"resolution {args.resolution} is not divisible by 8; the learned "
            f"codec downsamples three times and requires r % 8 == 0"
        )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, name in enumerate(args.inputs):
        path = Path(name)
        if not path.exists():
            raise DataError(f"input {path} does not exist")
        if path.suffix.lower() == ".off":
            mesh = load_mesh(path)
            seed = int(np.random.SeedSequence((args.seed, i)).generate_state(1)[0])
            cloud = sample_surface(mesh, args.points, seed=seed)
        else:
            cloud = load_point_cloud(path)
        grid = voxelize(cloud, args.resolution)
        out = out_dir / (path.stem + ".pcgv")
        save_voxel_grid(grid, out)
        log.info("voxelize %s -> %s (%d voxels)", path, out, grid.occupied_count)
        print(f"{out}: {grid.occupied_count} occupied voxels at r={args.resolution}")
    return EXIT_OK


def _load_dataset(dataset_dir):
    files = sorted(Path(dataset_dir).glob("*.pcgv"))
    if not files:
        raise DataError(f"no .pcgv grids found in {dataset_dir}")
    grids = [load_voxel_grid(f) for f in files]
    resolutions = {g.resolution for g in grids}
    if len(resolutions) > 1:
        raise DataError(
            f"dataset mixes resolutions {sorted(resolutions)}; train on one"
        )
    return files, grids


def cmd_train(args) -> int:
    files, grids = _load_dataset(args.dataset)
    r = grids[0].resolution
    cfg = TrainConfig(
        lam=args.lam,
        alpha=args.alpha,
        gamma=args.gamma,
        lr=args.lr,
        beta1=args.beta1,
        beta2=args.beta2,
        batch_size=args.batch_size,
        steps=args.steps,
        seed=args.seed,
        resolution=r,
    )
    params = None
    opt = None
    if args.resume:
        params = ckpt.load_checkpoint(args.resume)
        if args.n_filters != params.n_filters:
            raise DataError(
                f"--n-filters {args.n_filters} does not match checkpoint "
                f"n_filters {params.n_filters}"
            )
        state = ckpt.load_training_state(args.resume)
        if state is not None:
            if state["resolution"] != r:
                raise DataError(
                    f"checkpoint was trained at r={state['resolution']}, "
                    f"dataset is r={r}"
                )
            opt = ckpt.adam_state_from_training(state, args.lr, args.beta1, args.beta2)
    log.info("training on %d grids (r=%d) for %d steps", len(grids), r, args.steps)
    rows = []

    def record(step, stats):
        rows.append((step, _fmt(stats.D), _fmt(stats.R), _fmt(stats.L)))
        if step % 50 == 0:
            log.info("step %d: D=%.4g R=%.4g L=%.4g", step, stats.D, stats.R, stats.L)

    params, opt = train(
        grids, cfg, params=params, opt=opt, n_filters=args.n_filters, callback=record
    )
    train_state = {"step": opt.t, "resolution": r, "m": opt.m, "v": opt.v}
    if not opt.m:  # --steps 0: checkpoint equals initialization, no moments yet
        train_state = None
    ckpt.save_checkpoint(params, args.out, train_state)
    if args.loss_log:
        _write_csv(args.loss_log, "loss-log", ("step", "D", "R", "L"), rows)
    print(f"saved checkpoint to {args.out} after {opt.t} total steps")
    return EXIT_OK


def cmd_compress(args) -> int:
    grid = load_voxel_grid(args.input)
    params = ckpt.load_checkpoint(args.checkpoint)
    stream = encode(grid, params)
    stream.save(args.out)
    print(
        f"{args.out}: {stream.total_bytes} bytes, "
        f"bpov={_fmt(stream.bpov)} ({grid.occupied_count} occupied voxels)"
    )
    return EXIT_OK


def cmd_decompress(args) -> int:
    stream = CompressedBitstream.load(args.input)
    params = ckpt.load_checkpoint(args.checkpoint)
    grid = decode(stream, params, threshold=args.threshold)
    save_point_cloud(devoxelize(grid), args.out, binary=args.binary)
    print(f"{args.out}: {grid.occupied_count} points at r={grid.resolution}")
    return EXIT_OK


def _psnr_pair(original: PointCloud, recon: PointCloud, r: int):
    """Symmetric D1/D2 PSNR, degrading to NaN when a direction is undefined
    (empty reconstruction, or too few points for normal estimation)."""
    try:
        d1 = symmetric_psnr(original, recon, r, "d1")
    except (DataError, PcgcError):
        d1 = math.nan
    try:
        d2 = symmetric_psnr(original, recon, r, "d2")
    except (DataError, PcgcError):
        d2 = math.nan
    return d1, d2


def _sweep_frame(frame_path, grid, learned, depths, stream_dir, threshold):
    original = devoxelize(grid)
    rows = []
    for label, params in learned:
        stream = encode(grid, params)
        stream.save(stream_dir / f"{frame_path.stem}_lam={label}.pcgc")
        recon = devoxelize(decode(stream, params, threshold=threshold))
        d1, d2 = _psnr_pair(original, recon, grid.resolution)
        rows.append(("learned", f"lam={label}", stream.bpov, d1, d2))
    for depth in depths:
        stream = octree_encode(grid, depth)
        stream.save(stream_dir / f"{frame_path.stem}_depth={depth}.pcgo")
        recon = octree_decode(stream)
        bpov = 8.0 * stream.total_bytes / grid.occupied_count
        d1, d2 = _psnr_pair(original, recon, grid.resolution)
        rows.append(("octree", f"depth={depth}", bpov, d1, d2))
    return rows


def cmd_rd_sweep(args) -> int:
    learned = []
    for spec in args.checkpoint or []:
        if "=" not in spec:
            raise DataError(f"--checkpoint expects LAMBDA=PATH, got '{spec}'")
        label, path = spec.split("=", 1)
        if not Path(path).exists():
            raise DataError(f"checkpoint for lambda={label} not found: {path}")
        learned.append((label, ckpt.load_checkpoint(path)))
    depths = [int(d) for d in args.depths.split(",") if d] if args.depths else []
    if not learned and not depths:
        raise DataError("rd-sweep needs at least one --checkpoint or --depths entry")
    frames = [Path(p) for p in args.inputs]
    grids = [load_voxel_grid(p) for p in frames]
    resolutions = {g.resolution for g in grids}
    if len(resolutions) > 1:
        raise DataError(f"inputs mix resolutions {sorted(resolutions)}")
    out_dir = Path(args.out_dir)
    stream_dir = out_dir / "streams"
    stream_dir.mkdir(parents=True, exist_ok=True)

    def work(i):
        return _sweep_frame(
            frames[i], grids[i], learned, depths, stream_dir, args.threshold
        )

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            per_frame = list(pool.map(work, range(len(frames))))
    else:
        per_frame = [work(i) for i in range(len(frames))]

    frame_rows = []
    for path, rows in zip(frames, per_frame):
        for codec_name, setting, bpov, d1, d2 in rows:
            frame_rows.append(
                (path.stem, codec_name, setting, _fmt(bpov), _fmt(d1), _fmt(d2))
            )
    _write_csv(
        out_dir / "per_frame.csv",
        "rd-frames",
        ("frame", "codec", "setting", "bpov", "psnr_d1", "psnr_d2"),
        frame_rows,
    )

    def aggregate(values):
        finite = [v for v in values if math.isfinite(v)]
        if finite:
            return sum(finite) / len(finite)
        if any(math.isinf(v) for v in values):
            return math.inf
        return math.nan

    setting_rows = []
    seen = []
    for rows in per_frame:
        for codec_name, setting, *_ in rows:
            if (codec_name, setting) not in seen:
                seen.append((codec_name, setting))
    for codec_name, setting in seen:
        sel = [
            row for rows in per_frame for row in rows if row[:2] == (codec_name, setting)
        ]
        bpov = sum(row[2] for row in sel) / len(sel)
        d1 = aggregate([row[3] for row in sel])
        d2 = aggregate([row[4] for row in sel])
        setting_rows.append((codec_name, setting, _fmt(bpov), _fmt(d1), _fmt(d2)))
    _write_csv(
        out_dir / "per_setting.csv",
        "rd-settings",
        ("codec", "setting", "bpov", "psnr_d1", "psnr_d2"),
        setting_rows,
    )
    print(
        f"{out_dir}: {len(frame_rows)} frame rows, {len(setting_rows)} settings "
        f"({len(frames)} frames)"
    )
    return EXIT_OK


def _curves_from_csv(path, metric):
    header, rows = _read_csv(path)
    expected = ["codec", "setting", "bpov", "psnr_d1", "psnr_d2"]
    if list(header) != expected:
        raise DataError(f"{path}: expected columns {expected}, got {list(header)}")
    by_label = {}
    for codec_name, setting, bpov, d1, d2 in rows:
        point = RDPoint(float(bpov), float(d1), float(d2))
        by_label.setdefault(codec_name, []).append(point)
    return by_label


def cmd_bd_report(args) -> int:
    metric = args.metric
    ref = _curves_from_csv(args.ref_csv, metric)
    test = _curves_from_csv(args.test_csv, metric)
    if args.ref_label and args.test_label:
        pairs = [(args.test_label, args.ref_label, args.test_label)]
    else:
        labels = [l for l in ref if l in test]
        if not labels:
            raise DataError("no common codec labels between the two CSVs")
        pairs = [(l, l, l) for l in labels]
    results = []
    failures = 0
    for name, ref_label, test_label in pairs:
        if ref_label not in ref:
            results.append((name, None, f"label '{ref_label}' missing in ref CSV"))
            failures += 1
            continue
        if test_label not in test:
            results.append((name, None, f"label '{test_label}' missing in test CSV"))
            failures += 1
            continue
        try:
            curve_ref = RDCurve(ref_label, ref[ref_label])
            curve_test = RDCurve(test_label, test[test_label])
            value = bd_rate(curve_ref, curve_test, kind=metric)
            results.append((name, value, None))
        except PcgcError as exc:
            results.append((name, None, str(exc)))
            failures += 1
    print(f"BD-rate ({metric} PSNR), test vs reference:")
    values = []
    for name, value, err in results:
        if err is None:
            print(f"  {name}: {_fmt(value)}%")
            values.append(value)
        else:
            print(f"  {name}: ERROR: {err}")
    if values:
        print(f"  mean: {_fmt(sum(values) / len(values))}%")
    return EXIT_DATA if failures else EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="pcgc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("voxelize", help="convert meshes/point clouds to voxel grids")
    p.add_argument("inputs", nargs="+", help="OFF meshes or PLY point clouds")
    p.add_argument("-r", "--resolution", type=int, required=True)
    p.add_argument("--points", type=int, default=200_000,
                   help="surface samples per mesh (default 200000)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("train", help="train a codec on a directory of grids")
    p.add_argument("dataset", help="directory containing .pcgv grids")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--lam", type=float, default=1e-4)
    p.add_argument("--alpha", type=float, default=0.9)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--n-filters", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--loss-log", help="per-step CSV (step,D,R,L)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="compress a voxel grid")
    p.add_argument("input", help=".pcgv grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decompress a bitstream to a PLY cloud")
    p.add_argument("input", help=".pcgc bitstream")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--binary", action="store_true", help="write binary PLY")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("rd-sweep", help="measure RD points over frames and settings")
    p.add_argument("inputs", nargs="+", help=".pcgv grids (frames)")
    p.add_argument("--checkpoint", action="append", metavar="LAMBDA=PATH",
                   help="repeatable: one trained checkpoint per lambda "
                        "(canonical sweep: "
                        + ", ".join(f"{l:g}" for l in DEFAULT_LAMBDA_SWEEP) + ")")
    p.add_argument("--depths", help="comma-separated octree depths")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_rd_sweep)

    p = sub.add_parser("bd-report", help="BD-rate between two per-setting CSVs")
    p.add_argument("ref_csv")
    p.add_argument("test_csv")
    p.add_argument("--metric", choices=("d1", "d2"), default="d1")
    p.add_argument("--ref-label", help="codec label to take from the ref CSV")
    p.add_argument("--test-label", help="codec label to take from the test CSV")
    p.set_defaults(func=cmd_bd_report)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("PCGC_LOG", "WARNING").upper()
    if not isinstance(getattr(logging, level, None), int):
        level = "WARNING"
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except CorruptionError as exc:
        print(f"pcgc: corruption error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except PcgcError as exc:
        print(f"pcgc: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"pcgc: i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
