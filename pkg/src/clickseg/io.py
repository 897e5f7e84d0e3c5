"""Image/mask loading, export formats, and large-image grid patching.

Supported inputs: PNG (8-bit gray/LA/RGB/RGBA and 16-bit grayscale), PPM/PGM,
and a minimal multi-band container (`.bands` text header next to a `.raw`
little-endian sample file) standing in for remote-sensing formats.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import Category, LabelMask, RasterImage
from .geometry import Polygon, group_rings, rasterize

GRID_THRESHOLD = 2000  # px; larger images get patch-grid annotation
DEFAULT_PATCH = 1024
DEFAULT_OVERLAP = 128


class UnsupportedFormat(ValueError):
    pass


class CorruptFile(ValueError):
    pass


# ---------------------------------------------------------------------------
# image loading
# ---------------------------------------------------------------------------

def load_image(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    suffix = path.suffix.lower()
    if suffix == ".bands":
        return _load_bands(path)
    if suffix in (".png", ".ppm", ".pgm"):
        return _load_pil(path)
    raise UnsupportedFormat(f"unsupported image format: {path.name}")


def _load_pil(path):
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise CorruptFile(f"cannot decode {path}: {exc}") from exc
    if img.mode in ("L", "LA", "RGB", "RGBA"):
        return RasterImage.from_array(np.asarray(img), bit_depth=8)
    if img.mode in ("I", "I;16"):
        arr = np.asarray(img).astype(np.uint16)
        return RasterImage.from_array(arr, bit_depth=16)
    if img.mode == "P":
        return RasterImage.from_array(np.asarray(img.convert("RGB")), bit_depth=8)
    raise UnsupportedFormat(f"unsupported pixel mode {img.mode!r} in {path.name}")


def _load_bands(path):
    header = {}
    try:
        for lineno, line in enumerate(path.read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if not _:
                raise CorruptFile(f"{path}:{lineno}: expected key=value")
            header[key.strip()] = value.strip()
        width = int(header["width"])
        height = int(header["height"])
        channels = int(header["channels"])
        bit_depth = int(header.get("bit_depth", "16"))
        byte_order = header.get("byte_order", "little")
    except (KeyError, ValueError) as exc:
        raise CorruptFile(f"bad bands header {path}: {exc}") from exc
    if byte_order != "little":
        raise UnsupportedFormat("bands container is little-endian only")
    if bit_depth not in (8, 16):
        raise CorruptFile(f"bands bit_depth must be 8 or 16, got {bit_depth}")
    raw = path.with_suffix(".raw")
    if not raw.exists():
        raise CorruptFile(f"missing raw sample file {raw}")
    dtype = np.dtype("<u2") if bit_depth == 16 else np.uint8
    samples = np.fromfile(raw, dtype=dtype)
    if samples.size != width * height * channels:
        raise CorruptFile(
            f"{raw}: expected {width * height * channels} samples, got {samples.size}"
        )
    arr = samples.reshape(height, width, channels)
    return RasterImage.from_array(arr, bit_depth=bit_depth)


def write_bands(image, path):
    """Write the multi-band container (header + raw little-endian samples)."""
    path = Path(path)
    header = (
        f"width={image.width}\nheight={image.height}\nchannels={image.channels}\n"
        f"bit_depth={image.bit_depth}\nbyte_order=little\n"
    )
    path.write_text(header)
    dtype = np.dtype("<u2") if image.bit_depth == 16 else np.uint8
    image.samples.astype(dtype).tofile(path.with_suffix(".raw"))


def write_image(image, path):
    """Write 8-bit (gray/RGB/RGBA) or 16-bit single-channel PNG."""
    path = Path(path)
    arr = image.samples
    if image.bit_depth == 8:
        Image.fromarray(arr[:, :, 0] if image.channels == 1 else arr).save(path)
    elif image.channels == 1:
        Image.fromarray(arr[:, :, 0].astype(np.uint16)).save(path)
    else:
        raise UnsupportedFormat("16-bit multi-channel PNG not supported; use .bands")


# ---------------------------------------------------------------------------
# display transforms
# ---------------------------------------------------------------------------

def apply_window(image, level, width):
    """Window a 16-bit single-channel image to 8 bits.

    out = clamp(round((v - (level - width/2)) / width * 255), 0, 255) with
    round-half-up, monotone in v for fixed (level, width).
    """
    if width <= 0:
        raise ValueError("window width must be positive")
    if image.channels != 1:
        raise ValueError("windowing applies to single-channel images")
    v = image.samples[:, :, 0].astype(np.float64)
    out = np.floor((v - (level - width / 2.0)) / width * 255.0 + 0.5)
    out = np.clip(out, 0, 255).astype(np.uint8)
    return RasterImage.from_array(out, bit_depth=8)


def select_bands(image, bands):
    """Map three band indices to an RGB display image.

    8-bit bands pass through; 16-bit bands are min-max rescaled per band
    (constant bands map to 0).
    """
    if len(bands) != 3:
        raise ValueError("exactly three band indices required")
    for b in bands:
        if not 0 <= b < image.channels:
            raise IndexError(f"band {b} out of range for {image.channels} channels")
    out = np.empty((image.height, image.width, 3), np.uint8)
    for i, b in enumerate(bands):
        plane = image.samples[:, :, b]
        if image.bit_depth == 8:
            out[:, :, i] = plane
        else:
            lo, hi = int(plane.min()), int(plane.max())
            if hi == lo:
                out[:, :, i] = 0
            else:
                scaled = (plane.astype(np.float64) - lo) / (hi - lo) * 255.0
                out[:, :, i] = np.floor(scaled + 0.5).astype(np.uint8)
    return RasterImage.from_array(out, bit_depth=8)


# ---------------------------------------------------------------------------
# grid patching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridLayout:
    patch_size: int
    overlap: int
    origins: tuple  # ((x, y), ...) raster order
    source_width: int
    source_height: int


def _axis_origins(extent, patch, overlap):
    if extent <= patch:
        return [0]
    stride = patch - overlap
    count = -(-(extent - overlap) // stride)  # ceil
    origins = [min(i * stride, extent - patch) for i in range(count)]
    return origins


def grid_split(image, patch_size=DEFAULT_PATCH, overlap=DEFAULT_OVERLAP):
    """Split into overlapping patches covering the image; returns (patches, layout)."""
    if not patch_size > overlap >= 0:
        raise ValueError("need patch_size > overlap >= 0")
    xs = _axis_origins(image.width, patch_size, overlap)
    ys = _axis_origins(image.height, patch_size, overlap)
    origins = tuple((x, y) for y in ys for x in xs)
    layout = GridLayout(patch_size, overlap, origins, image.width, image.height)
    patches = []
    for x, y in origins:
        sub = image.samples[y:y + patch_size, x:x + patch_size]
        patches.append(RasterImage.from_array(sub, bit_depth=image.bit_depth))
    return patches, layout


def grid_layout_for(width, height, patch_size=DEFAULT_PATCH, overlap=DEFAULT_OVERLAP):
    xs = _axis_origins(width, patch_size, overlap)
    ys = _axis_origins(height, patch_size, overlap)
    return GridLayout(patch_size, overlap, tuple((x, y) for y in ys for x in xs),
                      width, height)


def grid_stitch(patch_masks, layout):
    """Reassemble patch annotations; the earliest nonzero label wins overlaps."""
    if len(patch_masks) != len(layout.origins):
        raise ValueError(
            f"expected {len(layout.origins)} patch masks, got {len(patch_masks)}"
        )
    full = np.zeros((layout.source_height, layout.source_width), np.uint16)
    for mask, (x, y) in zip(patch_masks, layout.origins):
        labels = mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)
        ph = min(layout.patch_size, layout.source_height - y)
        pw = min(layout.patch_size, layout.source_width - x)
        if labels.shape != (ph, pw):
            raise ValueError(f"patch at ({x}, {y}) has shape {labels.shape}, want {(ph, pw)}")
        view = full[y:y + ph, x:x + pw]
        paint = (view == 0) & (labels != 0)
        view[paint] = labels[paint]
    return LabelMask.from_array(full)


# ---------------------------------------------------------------------------
# mask files
# ---------------------------------------------------------------------------

def voc_palette(n):
    """PASCAL-style pseudo-color palette: label bits interleaved into RGB."""
    if n > 256:
        raise ValueError("palette supports at most 256 labels")
    colors = []
    for label in range(n):
        r = g = b = 0
        v = label
        for shift in range(8):
            r |= ((v >> 0) & 1) << (7 - shift)
            g |= ((v >> 1) & 1) << (7 - shift)
            b |= ((v >> 2) & 1) << (7 - shift)
            v >>= 3
        colors.append((r, g, b))
    return colors


def write_mask(mask, mode, path):
    """Write a label mask as 8-bit grayscale or paletted pseudo-color PNG."""
    labels = mask.labels if isinstance(mask, LabelMask) else np.asarray(mask)
    if labels.max(initial=0) > 255:
        raise ValueError("mask labels must fit 8 bits for PNG export")
    arr = labels.astype(np.uint8)
    if mode == "grayscale":
        Image.fromarray(arr).save(path)
    elif mode == "pseudocolor":
        img = Image.fromarray(arr, mode="P")
        flat = []
        for rgb in voc_palette(256):
            flat.extend(rgb)
        img.putpalette(flat)
        img.save(path)
    else:
        raise ValueError(f"unknown mask mode {mode!r}")


def read_mask(path):
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise CorruptFile(f"cannot decode mask {path}: {exc}") from exc
    if img.mode in ("P", "L"):
        return LabelMask.from_array(np.asarray(img))
    if img.mode == "I;16":
        return LabelMask.from_array(np.asarray(img).astype(np.uint16))
    arr = np.asarray(img.convert("L"))
    return LabelMask.from_array(arr)


def read_binary_mask(path):
    """8-bit mask file; nonzero = foreground."""
    return read_mask(path).labels != 0


# ---------------------------------------------------------------------------
# categories
# ---------------------------------------------------------------------------

def categories_save(categories, path):
    lines = []
    for c in categories:
        r, g, b = c.color
        lines.append(f"{c.id}|{c.comment}|{r},{g},{b}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def categories_load(path):
    categories = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("|")
        if len(parts) != 3:
            raise CorruptFile(f"{path}:{lineno}: expected id|comment|r,g,b")
        try:
            cid = int(parts[0])
            rgb = tuple(int(v) for v in parts[2].split(","))
            if len(rgb) != 3:
                raise ValueError("color needs three components")
            categories.append(Category(id=cid, comment=parts[1], color=rgb))
        except ValueError as exc:
            raise CorruptFile(f"{path}:{lineno}: {exc}") from exc
    return categories


# ---------------------------------------------------------------------------
# project state and COCO export
# ---------------------------------------------------------------------------

@dataclass
class ImageEntry:
    path: str
    width: int
    height: int
    annotated: bool = False


@dataclass
class ProjectState:
    images: list = field(default_factory=list)  # ImageEntry
    categories: list = field(default_factory=list)  # Category
    polygons: dict = field(default_factory=dict)  # image path -> [Polygon]
    settings: dict = field(default_factory=dict)

    def add_image(self, path, width, height):
        if any(e.path == str(path) for e in self.images):
            raise ValueError(f"duplicate image path {path}")
        self.images.append(ImageEntry(str(path), width, height))

    def live_category_ids(self):
        return {c.id for c in self.categories if not c.deleted}


def export_coco(project):
    """Serialize annotations to the COCO detection-schema subset."""
    live = project.live_category_ids()
    doc = {"images": [], "categories": [], "annotations": []}
    for i, entry in enumerate(project.images, 1):
        doc["images"].append(
            {"id": i, "file_name": Path(entry.path).name,
             "width": entry.width, "height": entry.height}
        )
    for c in project.categories:
        if not c.deleted:
            doc["categories"].append({"id": c.id, "name": c.comment})
    ann_id = 1
    for i, entry in enumerate(project.images, 1):
        polys = project.polygons.get(entry.path, [])
        for cat in {p.category_id for p in polys}:
            if cat not in live:
                raise ValueError(f"polygon references missing category {cat}")
        for outer, holes in group_rings(polys):
            rings = [outer] + holes
            segmentation = [
                [float(v) for xy in ring.vertices for v in xy] for ring in rings
            ]
            xs = [x for x, _ in outer.vertices]
            ys = [y for _, y in outer.vertices]
            bbox = [min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)]
            area_mask = rasterize(rings, entry.width, entry.height)
            doc["annotations"].append(
                {
                    "id": ann_id,
                    "image_id": i,
                    "category_id": outer.category_id,
                    "segmentation": segmentation,
                    "bbox": [float(b) for b in bbox],
                    "area": float((area_mask.labels != 0).sum()),
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    return doc


def coco_dumps(doc):
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def import_coco(doc, image_dir=""):
    """Rebuild a ProjectState from a COCO document (inverse of export)."""
    project = ProjectState()
    by_id = {}
    for img in doc.get("images", []):
        path = str(Path(image_dir) / img["file_name"]) if image_dir else img["file_name"]
        project.add_image(path, img["width"], img["height"])
        by_id[img["id"]] = path
    for cat in doc.get("categories", []):
        project.categories.append(Category(id=cat["id"], comment=cat["name"]))
    for ann in doc.get("annotations", []):
        path = by_id[ann["image_id"]]
        rings = ann["segmentation"]
        for k, flat in enumerate(rings):
            verts = tuple((flat[j], flat[j + 1]) for j in range(0, len(flat), 2))
            project.polygons.setdefault(path, []).append(
                Polygon(verts, category_id=ann["category_id"], hole=k > 0)
            )
    return project
