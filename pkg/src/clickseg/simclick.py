"""Deterministic click simulation and NoC/mIoU benchmarking.

The simulator places the first click at the interior-most point of the
object, then each following click at the interior-most point of the largest
error component (positive in missed regions, negative in spurious ones).
Sessions cap at 20 clicks and report NoC at the 0.85/0.90 thresholds.
"""

import concurrent.futures
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engines
from .core import POSITIVE, NEGATIVE, Click, ClickSet, connected_components, distance_transform, iou
from .io import load_image, read_binary_mask

MAX_CLICKS = 20
THRESHOLDS = (0.85, 0.90)


class EmptyGroundTruth(ValueError):
    pass


class NoErrorRegion(ValueError):
    pass


class DatasetError(RuntimeError):
    pass


@dataclass
class SessionTrace:
    instance_id: str
    iou_after_click: list  # length == max_clicks, padded with the final value
    noc: dict  # threshold -> clicks needed (max_clicks when unreached)
    reached: dict  # threshold -> bool
    clicks: list = field(default_factory=list)


@dataclass
class BenchmarkReport:
    dataset_id: str
    engine_id: str
    mean_noc: dict
    miou_curve: list
    failure_count: dict
    instance_count: int
    traces: list = field(default_factory=list)
    skipped: list = field(default_factory=list)


def _interior_point(mask):
    """Distance-transform argmax; row-major argmax breaks ties at smallest (y, x)."""
    dt = distance_transform(mask)
    flat = int(np.argmax(dt))
    y, x = divmod(flat, mask.shape[1])
    return x, y


def first_click(gt):
    gt = np.asarray(gt) != 0
    if not gt.any():
        raise EmptyGroundTruth("ground truth mask is empty")
    x, y = _interior_point(gt)
    return Click(x=x, y=y, polarity=POSITIVE, ordinal=0)


def next_click(pred, gt, ordinal=0):
    """Click at the center of the largest error component.

    False negatives and false positives are labeled separately with
    8-connectivity; ties prefer false negatives, then the smaller
    component id. The click lands on the component's distance-transform
    argmax (ties at smallest (y, x)).
    """
    pred = np.asarray(pred) != 0
    gt = np.asarray(gt) != 0
    fn = gt & ~pred
    fp = pred & ~gt
    if not fn.any() and not fp.any():
        raise NoErrorRegion("prediction equals ground truth")

    best = None  # (area, 0 for FN / 1 for FP, component id, mask)
    for kind, err in ((0, fn), (1, fp)):
        if not err.any():
            continue
        labels, areas = connected_components(err, connectivity=8)
        cid = int(np.argmax(areas)) + 1  # argmax -> smallest id on ties
        key = (-int(areas[cid - 1]), kind, cid)
        if best is None or key < best[0]:
            best = (key, labels == cid, kind)
    _, component, kind = best
    x, y = _interior_point(component)
    return Click(x=x, y=y, polarity=POSITIVE if kind == 0 else NEGATIVE, ordinal=ordinal)


def _oracle_segment(gt):
    conf = (np.asarray(gt) != 0).astype(np.float64)
    return engines.EngineOutput(
        mask=conf >= 0.5, confidence=conf, edge=engines.edge_from_mask(conf >= 0.5)
    )


def run_session(engine, image, gt, instance_id="instance", max_clicks=MAX_CLICKS,
                thresholds=THRESHOLDS, segment_fn=None):
    """Simulate one interactive annotation session against ground truth.

    ``engine`` is an EngineParams, or the string "oracle" for the
    harness-testing engine that returns the ground truth immediately.
    The edge prior chains between rounds, starting from zeros.
    """
    gt = np.asarray(gt) != 0
    thresholds = tuple(sorted(thresholds))
    if segment_fn is None:
        if engine == "oracle":
            def segment_fn(clicks, prior):
                return _oracle_segment(gt)
        else:
            def segment_fn(clicks, prior):
                return engines.segment(engine, image, clicks, prior)

    clicks = ClickSet()
    prior = None
    ious = []
    noc = {t: max_clicks for t in thresholds}
    reached = {t: False for t in thresholds}
    placed = []
    try:
        for k in range(1, max_clicks + 1):
            if k == 1:
                click = first_click(gt)
            else:
                click = next_click(out.mask, gt, ordinal=len(clicks))
            clicks.add(click.x, click.y, click.polarity)
            placed.append(click)
            out = segment_fn(clicks, prior)
            prior = out.edge
            score = iou(out.mask, gt)
            ious.append(score)
            for t in thresholds:
                if not reached[t] and score >= t:
                    reached[t] = True
                    noc[t] = k
            if all(reached.values()):
                break
    except (engines.SolverNonconvergence, engines.NoPositiveClick) as exc:
        raise DatasetError(f"session {instance_id} aborted at click {len(clicks)}: {exc}") from exc

    while len(ious) < max_clicks:
        ious.append(ious[-1])
    return SessionTrace(
        instance_id=instance_id, iou_after_click=ious, noc=noc, reached=reached,
        clicks=placed,
    )


# ---------------------------------------------------------------------------
# dataset evaluation
# ---------------------------------------------------------------------------

def discover_instances(root):
    """Pair `<root>/images/<name>.(png|ppm)` with `<root>/masks/<name>[__k].png`.

    Returns (pairs, problems): pairs as (instance_id, image_path, mask_path),
    sorted by instance id.
    """
    root = Path(root)
    images_dir = root / "images"
    masks_dir = root / "masks"
    if not images_dir.is_dir() or not masks_dir.is_dir():
        raise DatasetError(f"dataset needs images/ and masks/ under {root}")
    by_stem = {}
    for ext in ("*.png", "*.ppm", "*.pgm"):
        for p in sorted(images_dir.glob(ext)):
            by_stem.setdefault(p.stem, p)
    pairs = []
    problems = []
    masks = sorted(masks_dir.glob("*.png"))
    if not masks:
        raise DatasetError(f"no masks found under {masks_dir}")
    for mask_path in masks:
        stem = mask_path.stem.split("__")[0]
        image_path = by_stem.get(stem)
        if image_path is None:
            problems.append(f"mask {mask_path.name} has no matching image")
            continue
        pairs.append((mask_path.stem, image_path, mask_path))
    pairs.sort(key=lambda t: t[0])
    return pairs, problems


def _run_instance(engine, instance_id, image_path, mask_path, max_clicks, thresholds):
    image = load_image(image_path)
    gt = read_binary_mask(mask_path)
    if gt.shape != (image.height, image.width):
        raise DatasetError(
            f"{instance_id}: mask {gt.shape} does not match image "
            f"{(image.height, image.width)}"
        )
    return run_session(engine, image, gt, instance_id=instance_id,
                       max_clicks=max_clicks, thresholds=thresholds)


def evaluate_dataset(engine, dataset_dir, max_clicks=MAX_CLICKS,
                     thresholds=THRESHOLDS, workers=1, dataset_id=None):
    """Run one session per (image, instance mask) pair and aggregate.

    Sessions are independent; aggregation sorts by instance id so the
    report is identical for any worker count.
    """
    thresholds = tuple(sorted(thresholds))
    pairs, problems = discover_instances(dataset_dir)
    engine_id = engine if isinstance(engine, str) else engine.engine_id

    traces = []
    skipped = list(problems)
    if workers <= 1:
        for instance_id, image_path, mask_path in pairs:
            try:
                traces.append(_run_instance(engine, instance_id, image_path,
                                             mask_path, max_clicks, thresholds))
            except (DatasetError, EmptyGroundTruth, OSError, ValueError) as exc:
                skipped.append(f"{instance_id}: {exc}")
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_instance, engine, iid, ip, mp, max_clicks, thresholds): iid
                for iid, ip, mp in pairs
            }
            for fut in concurrent.futures.as_completed(futures):
                iid = futures[fut]
                try:
                    traces.append(fut.result())
                except (DatasetError, EmptyGroundTruth, OSError, ValueError) as exc:
                    skipped.append(f"{iid}: {exc}")
    traces.sort(key=lambda t: t.instance_id)
    skipped.sort()
    if not traces:
        raise DatasetError(f"no usable instances under {dataset_dir}")

    mean_noc = {t: float(np.mean([tr.noc[t] for tr in traces])) for t in thresholds}
    failure_count = {t: sum(1 for tr in traces if not tr.reached[t]) for t in thresholds}
    curve = np.mean([tr.iou_after_click for tr in traces], axis=0)
    return BenchmarkReport(
        dataset_id=dataset_id or Path(dataset_dir).name,
        engine_id=engine_id,
        mean_noc=mean_noc,
        miou_curve=[float(v) for v in curve],
        failure_count=failure_count,
        instance_count=len(traces),
        traces=traces,
        skipped=skipped,
    )


def _noc_header(thresholds):
    return [f"noc{round(t * 100)}" for t in thresholds]


def write_report_csv(report, path, max_clicks=MAX_CLICKS, thresholds=THRESHOLDS):
    """Per-instance rows plus a `mean` summary row; LF line endings."""
    thresholds = tuple(sorted(thresholds))
    header = ["instance"] + _noc_header(thresholds) + [
        f"iou{k}" for k in range(1, max_clicks + 1)
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for tr in report.traces:
            writer.writerow(
                [tr.instance_id]
                + [tr.noc[t] for t in thresholds]
                + [f"{v:.6f}" for v in tr.iou_after_click]
            )
        writer.writerow(
            ["mean"]
            + [f"{report.mean_noc[t]:.6f}" for t in thresholds]
            + [f"{v:.6f}" for v in report.miou_curve]
        )


def write_miou_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["click", "miou"])
        for k, v in enumerate(report.miou_curve, 1):
            writer.writerow([k, f"{v:.6f}"])
