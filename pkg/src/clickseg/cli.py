"""Batch command line: evaluation, one-shot segmentation, propagation,
format conversion, and the HTTP service launcher.

Exit codes: 0 success, 1 input error, 2 runtime failure.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import engines, geometry, sequence, simclick
from . import io as cio
from .core import NEGATIVE, POSITIVE, ClickSet

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2


class InputError(ValueError):
    pass


def parse_clicks(text):
    """Parse the `x,y,(+|-)` semicolon-separated click grammar."""
    clicks = ClickSet()
    if not text or not text.strip():
        raise InputError("empty click list")
    for i, part in enumerate(text.split(";"), 1):
        fields = part.strip().split(",")
        if len(fields) != 3:
            raise InputError(f"click {i}: expected x,y,(+|-), got {part.strip()!r}")
        x, y, pol = (f.strip() for f in fields)
        try:
            x, y = int(x), int(y)
        except ValueError:
            raise InputError(f"click {i}: non-integer coordinates in {part.strip()!r}")
        if pol not in ("+", "-"):
            raise InputError(f"click {i}: polarity must be + or -, got {pol!r}")
        clicks.add(x, y, POSITIVE if pol == "+" else NEGATIVE)
    if not clicks[0].is_positive:
        raise InputError("first click must be positive")
    return clicks


def parse_refs(text):
    """Parse `k:<mask.png>[,k:<mask.png>]` reference assignments."""
    refs = {}
    if not text or not text.strip():
        raise InputError("empty reference list")
    for part in text.split(","):
        frame, sep, path = part.strip().partition(":")
        if not sep:
            raise InputError(f"expected k:<mask.png>, got {part.strip()!r}")
        try:
            idx = int(frame)
        except ValueError:
            raise InputError(f"bad frame index {frame!r}")
        refs[idx] = path
    return refs


def _engine_params(args):
    kwargs = {"engine_id": args.engine}
    for name in ("seed_radius", "lam", "beta", "edge_prior_weight"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            kwargs[name] = value
    try:
        return engines.EngineParams(**kwargs)
    except ValueError as exc:
        raise InputError(str(exc))


def _add_engine_args(parser, include_oracle=False):
    ids = list(engines.ENGINE_IDS) + (["oracle"] if include_oracle else [])
    parser.add_argument("--engine", default="graphcut", choices=ids)
    parser.add_argument("--seed-radius", type=float, default=None)
    parser.add_argument("--lam", type=float, default=None,
                        help="graph cut pairwise weight")
    parser.add_argument("--beta", type=float, default=None,
                        help="random walker contrast sensitivity")
    parser.add_argument("--edge-prior-weight", type=float, default=None)


def cmd_eval(args):
    thresholds = tuple(float(t) for t in args.thresholds.split(","))
    engine = "oracle" if args.engine == "oracle" else _engine_params(args)
    try:
        report = simclick.evaluate_dataset(
            engine, args.dataset, max_clicks=args.max_clicks,
            thresholds=thresholds, workers=args.workers,
        )
    except simclick.DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    simclick.write_report_csv(report, out, max_clicks=args.max_clicks,
                              thresholds=thresholds)
    curve_path = out.with_name(out.stem + "_miou.csv")
    simclick.write_miou_csv(report, curve_path)
    for t in sorted(report.mean_noc):
        print(f"mean NoC@{round(t * 100)}: {report.mean_noc[t]:.4f} "
              f"({report.failure_count[t]} failures / {report.instance_count} instances)")
    print(f"report: {out}\nmiou curve: {curve_path}")
    if report.skipped:
        for reason in report.skipped:
            print(f"skipped: {reason}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def cmd_segment(args):
    clicks = parse_clicks(args.clicks)
    image = cio.load_image(args.image)
    params = _engine_params(args)
    try:
        out = engines.segment(params, image, clicks)
    except engines.SolverNonconvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    cio.write_mask(out.mask.astype(np.uint16), "grayscale", args.out)
    print(f"mask: {args.out} ({int(out.mask.sum())} foreground pixels)")
    return EXIT_OK


def cmd_propagate(args):
    refs = parse_refs(args.refs)
    frame_paths = sorted(
        p for ext in ("*.png", "*.ppm", "*.pgm") for p in Path(args.frames).glob(ext)
    )
    if not frame_paths:
        raise InputError(f"no frames under {args.frames}")
    frames = sequence.FrameSequence(
        frames=tuple(cio.load_image(p) for p in frame_paths)
    )
    references = {}
    for idx, path in refs.items():
        if not 0 <= idx < len(frames):
            raise InputError(f"reference frame {idx} outside 0..{len(frames) - 1}")
        references[idx] = cio.read_mask(path).labels
    params = sequence.PropagationParams(
        grid_stride=args.stride, search_window=args.search_window,
        refine_with_graphcut=args.refine,
    )
    try:
        results = sequence.propagate(frames, references, params)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    paths = sequence.write_frame_masks(results, args.out)
    print(f"wrote {len(paths)} masks to {args.out}")
    return EXIT_OK


def cmd_convert(args):
    if args.what == "volume2frames":
        volume, spacing = sequence.read_volume(args.volume)
        frames = sequence.volume_to_frames(volume, args.axis, spacing)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(frames.frames):
            cio.write_image(frame, out / f"slice{i:05d}.png")
        print(f"wrote {len(frames)} slices to {out}")
    elif args.what == "frames2volume":
        slices = sequence.read_slice_dir(args.frames)
        volume = sequence.frames_to_volume(list(slices), args.axis)
        sequence.write_volume(volume, args.out)
        print(f"wrote volume {volume.shape} to {args.out}")
    else:  # mask2coco
        mask_paths = sorted(Path(args.masks).glob("*.png"))
        if not mask_paths:
            raise InputError(f"no masks under {args.masks}")
        project = cio.ProjectState()
        seen = set()
        for p in mask_paths:
            mask = cio.read_mask(p)
            project.add_image(p.name, mask.width, mask.height)
            for lab in sorted(int(v) for v in np.unique(mask.labels) if v):
                if lab not in seen:
                    seen.add(lab)
                    project.categories.append(
                        cio.Category(id=lab, comment=f"label{lab}")
                    )
                polys = geometry.extract_polygons(
                    mask.labels == lab, args.epsilon, category_id=lab
                )
                project.polygons.setdefault(p.name, []).extend(polys)
        Path(args.out).write_text(cio.coco_dumps(cio.export_coco(project)),
                                  encoding="utf-8")
        print(f"wrote COCO to {args.out}")
    return EXIT_OK


def cmd_serve(args):
    import asyncio

    import uvicorn

    from .service import ServiceConfig, create_app

    config = ServiceConfig(engine_id=args.engine, save_dir=args.save_dir,
                           workers=args.workers, autosave=args.autosave)
    app = create_app(config)
    server = uvicorn.Server(uvicorn.Config(app, host=args.host, port=args.port,
                                           log_level="warning"))

    async def run():
        task = asyncio.create_task(server.serve())
        while not server.started and not task.done():
            await asyncio.sleep(0.01)
        if server.started:
            sock = server.servers[0].sockets[0]
            host, port = sock.getsockname()[:2]
            print(f"listening on http://{host}:{port}", flush=True)
        await task

    asyncio.run(run())
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="clickseg",
        description="Interactive segmentation toolkit: evaluation harness, "
                    "one-shot segmentation, propagation, converters, service.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("eval", help="run the NoC/mIoU benchmark on a dataset")
    p.add_argument("--dataset", required=True,
                   help="directory with images/ and masks/ subfolders")
    _add_engine_args(p, include_oracle=True)
    p.add_argument("--max-clicks", type=int, default=simclick.MAX_CLICKS)
    p.add_argument("--thresholds", default="0.85,0.90")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="per-instance CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="segment one image from a click list")
    p.add_argument("--image", required=True)
    p.add_argument("--clicks", required=True,
                   help="semicolon-separated x,y,(+|-) list; first must be +")
    _add_engine_args(p)
    p.add_argument("--out", required=True, help="output grayscale mask PNG")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("propagate", help="propagate reference masks through frames")
    p.add_argument("--frames", required=True, help="directory of frame images")
    p.add_argument("--refs", required=True,
                   help="k:<mask.png>[,k:<mask.png>] reference masks")
    p.add_argument("--out", required=True, help="output mask directory")
    p.add_argument("--stride", type=int, default=4)
    p.add_argument("--search-window", type=int, default=48)
    p.add_argument("--refine", action="store_true",
                   help="graph-cut cleanup of transferred masks")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("convert", help="volume/frame/COCO conversions")
    what = p.add_subparsers(dest="what", required=True)
    v2f = what.add_parser("volume2frames")
    v2f.add_argument("--volume", required=True, help=".vol header path")
    v2f.add_argument("--axis", type=int, default=0)
    v2f.add_argument("--out", required=True)
    v2f.set_defaults(func=cmd_convert)
    f2v = what.add_parser("frames2volume")
    f2v.add_argument("--frames", required=True, help="directory of slice PNGs")
    f2v.add_argument("--axis", type=int, default=0)
    f2v.add_argument("--out", required=True, help=".vol header path")
    f2v.set_defaults(func=cmd_convert)
    m2c = what.add_parser("mask2coco")
    m2c.add_argument("--masks", required=True, help="directory of label masks")
    m2c.add_argument("--epsilon", type=float, default=geometry.DEFAULT_EPSILON)
    m2c.add_argument("--out", required=True, help="COCO JSON path")
    m2c.set_defaults(func=cmd_convert)

    p = sub.add_parser("serve", help="launch the annotation HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8972)
    p.add_argument("--engine", default="graphcut", choices=engines.ENGINE_IDS)
    p.add_argument("--save-dir", default=".")
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--autosave", action="store_true")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors (printing valid choices); the CLI
        # contract reports input errors as exit 1
        return EXIT_INPUT if exc.code == 2 else exc.code
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, cio.UnsupportedFormat,
            cio.CorruptFile, ValueError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
