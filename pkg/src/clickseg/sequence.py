"""Video/volume mask propagation with a descriptor memory bank.

Reference frames are encoded as grid descriptors (patch statistics plus a
gradient-orientation histogram). Label transfer matches each target grid
point to its nearest memory descriptors within a spatial search window and
copies labels through the best match's displacement, so identical frames
reproduce the reference mask exactly; the k-nearest weighted votes provide
the per-pixel confidence. Volumes are handled by treating the inter-slice
axis as time.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import DimensionMismatch, LabelMask, RasterImage
from .engines import graphcut
from .engines._grid import edge_color_distances, grid_arc_structure, grid_edges
from .io import read_mask, write_mask
from ._kernels import bk_maxflow

MEMORY_FRAMES = 8  # rolling history cap, reference excluded
ORIENTATION_BINS = 8


@dataclass
class PropagationParams:
    grid_stride: int = 4
    patch_size: int = 7
    search_window: int = 48
    knn: int = 5
    tau: float = 10.0
    refine_with_graphcut: bool = False
    refine_lambda: float = 2.0

    def __post_init__(self):
        if self.patch_size % 2 == 0:
            raise ValueError("patch_size must be odd")
        for name in ("grid_stride", "patch_size", "search_window", "knn", "tau"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True, eq=False)
class FrameSequence:
    frames: tuple  # RasterImage, uniform shape
    frame_rate_or_slice_spacing: float = 1.0

    def __post_init__(self):
        if not self.frames:
            raise ValueError("sequence needs at least one frame")
        f0 = self.frames[0]
        for f in self.frames:
            if (f.width, f.height, f.channels, f.bit_depth) != (
                f0.width, f0.height, f0.channels, f0.bit_depth
            ):
                raise DimensionMismatch("frames must share dimensions and depth")

    def __len__(self):
        return len(self.frames)


@dataclass(frozen=True, eq=False)
class GridDescriptors:
    positions: np.ndarray  # (n, 2) as (y, x) pixel coordinates
    vectors: np.ndarray  # (n, d) in [0, 1]
    labels: np.ndarray | None  # (n,) label ids when a mask was given


@dataclass
class MemoryBank:
    """Labeled descriptors plus the label masks they were sampled from."""

    reference_index: int
    frames: list = field(default_factory=list)  # (frame_index, GridDescriptors)
    masks: dict = field(default_factory=dict)  # frame_index -> labels (H, W)
    max_history: int = MEMORY_FRAMES

    def add(self, frame_index, descriptors, label_mask):
        self.frames.append((frame_index, descriptors))
        self.masks[frame_index] = np.asarray(
            label_mask.labels if isinstance(label_mask, LabelMask) else label_mask
        )
        # keep the reference plus the most recent history
        history = [f for f in self.frames if f[0] != self.reference_index]
        if len(history) > self.max_history:
            drop = history[0][0]
            self.frames = [f for f in self.frames if f[0] != drop]
            del self.masks[drop]

    def __len__(self):
        return sum(d.positions.shape[0] for _, d in self.frames)


def _grid_axes(extent, stride):
    return np.arange(stride // 2, extent, stride)


def extract_descriptors(frame, mask=None, params=PropagationParams()):
    """Grid descriptors: per-channel patch mean/std + orientation histogram."""
    scaled = frame.scaled() if isinstance(frame, RasterImage) else np.asarray(frame)
    if scaled.ndim == 2:
        scaled = scaled[:, :, None]
    h, w, c = scaled.shape
    ys = _grid_axes(h, params.grid_stride)
    xs = _grid_axes(w, params.grid_stride)
    size = params.patch_size

    means = np.empty((len(ys), len(xs), c))
    stds = np.empty_like(means)
    for ch in range(c):
        plane = scaled[:, :, ch]
        m = ndimage.uniform_filter(plane, size, mode="nearest")
        m2 = ndimage.uniform_filter(plane * plane, size, mode="nearest")
        var = np.maximum(m2 - m * m, 0.0)
        means[:, :, ch] = m[np.ix_(ys, xs)]
        stds[:, :, ch] = np.sqrt(var)[np.ix_(ys, xs)]

    gray = scaled.mean(axis=2)
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    bins = np.minimum((ang / (2.0 * np.pi) * ORIENTATION_BINS).astype(int),
                      ORIENTATION_BINS - 1)
    hist = np.empty((len(ys), len(xs), ORIENTATION_BINS))
    for b in range(ORIENTATION_BINS):
        weighted = np.where(bins == b, mag, 0.0)
        hist[:, :, b] = ndimage.uniform_filter(weighted, size, mode="nearest")[
            np.ix_(ys, xs)
        ]
    total = hist.sum(axis=2, keepdims=True)
    hist = np.divide(hist, np.maximum(total, 1e-12), where=True)

    vectors = np.concatenate([means, stds, hist], axis=2).reshape(len(ys) * len(xs), -1)
    gy_, gx_ = np.meshgrid(ys, xs, indexing="ij")
    positions = np.stack([gy_.ravel(), gx_.ravel()], axis=1)

    labels = None
    if mask is not None:
        arr = np.asarray(mask.labels if isinstance(mask, LabelMask) else mask)
        labels = arr[positions[:, 0], positions[:, 1]].astype(np.int64)
    return GridDescriptors(positions=positions, vectors=np.clip(vectors, 0.0, 1.0),
                           labels=labels)


def _refine_binary(scaled, prob, lam):
    """Graph-cut cleanup of a soft foreground probability map."""
    h, w, _ = scaled.shape
    tails, heads, lengths = grid_edges(h, w, include_diagonals=True)
    dist2 = edge_color_distances(scaled, tails, heads)
    sigma2 = max(float(dist2.mean()) if dist2.size else 0.0, 1e-6)
    caps = lam * np.exp(-dist2 / (2.0 * sigma2)) / lengths
    eps = 1e-6
    p = np.clip(prob, eps, 1.0 - eps).ravel()
    tcap = np.log(p) - np.log1p(-p)
    arc_ptr, arc_head, arc_rev, order = grid_arc_structure(h, w, True)
    rescap = np.concatenate([caps, caps])[order]
    _, side = bk_maxflow(arc_ptr, arc_head, arc_rev, rescap, tcap.astype(np.float64))
    return side.astype(bool).reshape(h, w)


def transfer_labels(frame, memory, params, target_desc=None, frame_index=None):
    """Transfer memory labels onto a frame; returns (LabelMask, confidence).

    Each target grid point takes the label patch of its best descriptor
    match (ties: smaller offset, then temporally nearer frame); match
    quality and agreement among the k nearest matches give the confidence.
    """
    if len(memory.frames) == 0:
        raise ValueError("memory bank is empty")
    scaled = frame.scaled() if isinstance(frame, RasterImage) else np.asarray(frame)
    if scaled.ndim == 2:
        scaled = scaled[:, :, None]
    h, w, _ = scaled.shape
    if target_desc is None:
        target_desc = extract_descriptors(frame, None, params)

    mem_vectors = np.concatenate([d.vectors for _, d in memory.frames])
    mem_positions = np.concatenate([d.positions for _, d in memory.frames])
    mem_frames = np.concatenate(
        [np.full(d.positions.shape[0], fi) for fi, d in memory.frames]
    )
    here = frame_index if frame_index is not None else memory.reference_index
    mem_dt = np.abs(mem_frames - here)

    out = np.zeros((h, w), np.uint16)
    conf = np.zeros((h, w))
    stride = params.grid_stride
    win = params.search_window

    for i in range(target_desc.positions.shape[0]):
        gy, gx = target_desc.positions[i]
        in_window = (
            (np.abs(mem_positions[:, 0] - gy) <= win)
            & (np.abs(mem_positions[:, 1] - gx) <= win)
        )
        idx = np.nonzero(in_window)[0]
        y0 = gy - stride // 2
        x0 = gx - stride // 2
        y1 = min(y0 + stride, h)
        x1 = min(x0 + stride, w)
        if idx.size == 0:
            continue  # cell stays label 0, confidence 0
        d2 = ((mem_vectors[idx] - target_desc.vectors[i]) ** 2).sum(axis=1)
        off2 = ((mem_positions[idx, 0] - gy) ** 2
                + (mem_positions[idx, 1] - gx) ** 2)
        order = np.lexsort((idx, mem_dt[idx], off2, d2))
        take = order[: params.knn]
        kd2 = d2[take]
        bandwidth = float(kd2.mean())
        weights = np.exp(-kd2 / bandwidth) if bandwidth > 0 else np.ones_like(kd2)

        cell_y, cell_x = np.mgrid[y0:y1, x0:x1]
        votes = np.zeros((take.size,) + cell_y.shape, np.int64)
        valid = np.zeros((take.size,) + cell_y.shape, bool)
        for j, t in enumerate(take):
            m = idx[t]
            sy = cell_y + (mem_positions[m, 0] - gy)
            sx = cell_x + (mem_positions[m, 1] - gx)
            ok = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
            src = memory.masks[int(mem_frames[m])]
            votes[j][ok] = src[sy[ok], sx[ok]]
            valid[j] = ok
        cell_labels = votes[0]
        best_ok = valid[0]
        agree = np.zeros(cell_y.shape)
        wsum = np.zeros(cell_y.shape)
        for j in range(take.size):
            wsum += np.where(valid[j], weights[j], 0.0)
            agree += np.where(valid[j] & (votes[j] == cell_labels), weights[j], 0.0)
        cell_conf = np.divide(agree, np.maximum(wsum, 1e-12))
        cell_conf[~best_ok] = 0.0
        cell_labels = np.where(best_ok, cell_labels, 0)
        out[y0:y1, x0:x1] = cell_labels
        conf[y0:y1, x0:x1] = cell_conf

    if params.refine_with_graphcut:
        labels_present = sorted(int(v) for v in np.unique(out) if v != 0)
        if labels_present:
            refined = np.zeros((h, w), np.uint16)
            score = np.full((h, w), -1.0)
            for lab in labels_present:
                prob = np.where(out == lab, conf, (1.0 - conf) / 2.0)
                fg = _refine_binary(scaled, prob, params.refine_lambda)
                claim = fg & (prob > score)
                refined[claim] = lab
                score[claim] = prob[claim]
            out = refined

    return LabelMask.from_array(out), conf


@dataclass
class FrameResult:
    mask: LabelMask
    confidence: np.ndarray
    source_reference: int


def fuse(candidates, tau=PropagationParams().tau):
    """Per-pixel weighted vote across propagated candidates.

    Each candidate is (mask, confidence, dt, reference_index); vote weight
    is confidence * exp(-dt / tau). Ties go to the temporally nearer
    reference, then the lower reference index. Label 0 votes like any other.
    """
    if not candidates:
        raise ValueError("fuse needs at least one candidate")
    shape = None
    norm = []
    for mask, conf, dt, ref in candidates:
        arr = np.asarray(mask.labels if isinstance(mask, LabelMask) else mask)
        conf = np.asarray(conf)
        if shape is None:
            shape = arr.shape
        if arr.shape != shape or conf.shape != shape:
            raise DimensionMismatch("fuse candidates must share dimensions")
        norm.append((arr, conf * np.exp(-abs(dt) / tau), abs(dt), ref))

    labels = sorted({int(v) for arr, _, _, _ in norm for v in np.unique(arr)})
    index = {lab: i for i, lab in enumerate(labels)}
    sums = np.zeros((len(labels),) + shape)
    for arr, weight, _, _ in norm:
        for lab in np.unique(arr):
            sums[index[int(lab)]][arr == lab] += weight[arr == lab]

    best = sums.max(axis=0)
    tied = (sums == best[None]).sum(axis=0) > 1
    winner_idx = np.argmax(sums, axis=0)
    if tied.any():
        lut = np.zeros(max(labels) + 1, np.int64)
        for lab, i in index.items():
            lut[lab] = i
        iy, ix = np.indices(shape)
        resolved = np.full(shape, -1, np.int64)
        for arr, _, _, _ in sorted(norm, key=lambda t: (t[2], t[3])):
            arr_idx = lut[arr]
            hit = tied & (resolved < 0) & (sums[arr_idx, iy, ix] == best)
            resolved[hit] = arr_idx[hit]
        winner_idx = np.where(tied & (resolved >= 0), resolved, winner_idx)
    out = np.asarray(labels, np.uint16)[winner_idx]
    return LabelMask.from_array(out)


def propagate(sequence, references, params=PropagationParams()):
    """Propagate reference masks across the whole sequence.

    From each reference frame, labels chain outward in both temporal
    directions with a rolling descriptor memory; frames covered by several
    references are fused.
    """
    if not references:
        raise ValueError("at least one reference frame is required")
    n = len(sequence)
    for idx in references:
        if not 0 <= idx < n:
            raise IndexError(f"reference frame {idx} outside sequence of {n}")

    target_desc = [None] * n

    def desc(i):
        if target_desc[i] is None:
            target_desc[i] = extract_descriptors(sequence.frames[i], None, params)
        return target_desc[i]

    candidates = {i: [] for i in range(n)}
    for ref_idx in sorted(references):
        ref_mask = references[ref_idx]
        ref_labels = np.asarray(
            ref_mask.labels if isinstance(ref_mask, LabelMask) else ref_mask
        )
        # reference frames keep their own annotation
        candidates[ref_idx].append(
            (ref_labels, np.ones(ref_labels.shape), 0, ref_idx)
        )
        for step in (1, -1):
            bank = MemoryBank(reference_index=ref_idx)
            ref_desc = extract_descriptors(sequence.frames[ref_idx], ref_labels, params)
            bank.add(ref_idx, ref_desc, ref_labels)
            i = ref_idx + step
            # chains stop at other references; segments between references
            # receive one candidate per flanking reference and get fused
            while 0 <= i < n and i not in references:
                try:
                    mask, conf = transfer_labels(
                        sequence.frames[i], bank, params,
                        target_desc=desc(i), frame_index=i,
                    )
                except Exception as exc:
                    raise RuntimeError(f"propagation failed at frame {i}: {exc}") from exc
                dt = abs(i - ref_idx)
                candidates[i].append((mask.labels, conf, dt, ref_idx))
                own = extract_descriptors(sequence.frames[i], mask.labels, params)
                bank.add(i, own, mask.labels)
                i += step

    results = []
    for i in range(n):
        cands = candidates[i]
        fused = fuse(cands, tau=params.tau)
        weights = [c[1] * np.exp(-c[2] / params.tau) for c in cands]
        confidence = np.clip(np.max(weights, axis=0), 0.0, 1.0)
        source = min(cands, key=lambda c: (c[2], c[3]))[3]
        results.append(FrameResult(mask=fused, confidence=confidence,
                                   source_reference=source))
    return results


# ---------------------------------------------------------------------------
# volume <-> frames
# ---------------------------------------------------------------------------

def volume_to_frames(volume, axis, spacing=1.0):
    """One single-channel 16-bit frame per slice along ``axis``."""
    vol = np.asarray(volume)
    if vol.ndim != 3:
        raise ValueError("volume must be 3-D")
    if not 0 <= axis < 3:
        raise IndexError(f"axis {axis} out of range for 3-D volume")
    moved = np.moveaxis(vol, axis, 0)
    frames = tuple(
        RasterImage.from_array(np.ascontiguousarray(sl).astype(np.uint16), bit_depth=16)
        for sl in moved
    )
    return FrameSequence(frames=frames, frame_rate_or_slice_spacing=spacing)


def frames_to_volume(masks, axis):
    """Stack per-frame label masks back into a 3-D grid along ``axis``."""
    arrays = [
        np.asarray(m.labels if isinstance(m, LabelMask) else m) for m in masks
    ]
    if not arrays:
        raise ValueError("no frames to stack")
    shape = arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise DimensionMismatch("frame dimensions differ")
    stacked = np.stack(arrays, axis=0)
    return np.moveaxis(stacked, 0, axis)


def write_volume(volume, path, spacing=1.0):
    """Text header (`.vol`) plus little-endian 16-bit raw samples (`.raw`)."""
    vol = np.asarray(volume)
    path = Path(path)
    d0, d1, d2 = vol.shape
    path.write_text(
        f"shape={d0},{d1},{d2}\nspacing={spacing}\nbit_depth=16\nbyte_order=little\n"
    )
    vol.astype("<u2").tofile(path.with_suffix(".raw"))


def read_volume(path):
    path = Path(path)
    header = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        header[key.strip()] = value.strip()
    try:
        shape = tuple(int(v) for v in header["shape"].split(","))
        spacing = float(header.get("spacing", "1.0"))
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed volume header {path}: {exc}") from exc
    if len(shape) != 3:
        raise ValueError(f"{path}: volume must be 3-D, got shape {shape}")
    if header.get("byte_order", "little") != "little":
        raise ValueError("volume container is little-endian only")
    data = np.fromfile(path.with_suffix(".raw"), dtype="<u2")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: raw size {data.size} != header shape {shape}")
    return data.reshape(shape).astype(np.uint16), spacing


def read_slice_dir(path):
    """Directory of numbered 16-bit (or 8-bit) PNG slices, sorted by name."""
    files = sorted(Path(path).glob("*.png"))
    if not files:
        raise ValueError(f"no PNG slices under {path}")
    slices = [read_mask(f).labels for f in files]
    return np.stack(slices, axis=0)


def write_frame_masks(results, out_dir, prefix="frame"):
    """Numbered grayscale PNGs, one per propagated frame."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, res in enumerate(results):
        mask = res.mask if isinstance(res, FrameResult) else res
        p = out_dir / f"{prefix}{i:05d}.png"
        write_mask(mask, "grayscale", p)
        paths.append(p)
    return paths
