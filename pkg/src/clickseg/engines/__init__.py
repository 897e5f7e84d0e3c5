"""Interactive segmentation backends.

All engines implement one contract: image + ordered clicks + edge prior in,
binary mask + per-pixel confidence + boundary edge map out. The returned
edge map is what callers feed back as ``prior`` on the next interaction
round (the first round uses an all-zero prior).
"""

from dataclasses import dataclass

import numpy as np

from ..core import DimensionMismatch, RasterImage
from .edge import edge_from_mask
from .geodesic_engine import geodesic_segment
from .graphcut import graphcut_segment
from .params import ENGINE_IDS, EngineParams
from .randomwalker import SolverNonconvergence, random_walker_segment
from .seeds import rasterize_clicks

__all__ = [
    "ENGINE_IDS",
    "EngineOutput",
    "EngineParams",
    "NoPositiveClick",
    "SolverNonconvergence",
    "edge_from_mask",
    "rasterize_clicks",
    "segment",
]


class NoPositiveClick(ValueError):
    """Raised when segmentation is requested without any positive click."""


@dataclass(frozen=True, eq=False)
class EngineOutput:
    mask: np.ndarray  # bool (H, W)
    confidence: np.ndarray  # float64 (H, W) in [0, 1]
    edge: np.ndarray  # float64 (H, W) in {0, 1}, 1-pixel mask boundary


def segment(engine, image, clicks, prior=None):
    """Run the selected backend and return a click-consistent EngineOutput.

    Seed disks are pinned after the solve (confidence 1 on positive disks,
    0 on negative), which every backend already satisfies in exact
    arithmetic; the pinning keeps the guarantee bit-tight under iterative
    solver tolerances.
    """
    if not isinstance(image, RasterImage):
        image = RasterImage.from_array(image)
    h, w = image.height, image.width

    clicks = list(clicks)
    if not any(c.is_positive for c in clicks):
        raise NoPositiveClick("at least one positive click is required")
    if prior is None:
        prior = np.zeros((h, w))
    else:
        prior = np.asarray(getattr(prior, "values", prior), np.float64)
        if prior.shape != (h, w):
            raise DimensionMismatch(
                f"prior shape {prior.shape} != image shape {(h, w)}"
            )

    pos_seeds, neg_seeds = rasterize_clicks(clicks, w, h, engine.seed_radius)
    scaled = image.scaled()

    if engine.engine_id == "graphcut":
        _, confidence, _ = graphcut_segment(scaled, pos_seeds, neg_seeds, prior, engine)
    elif engine.engine_id == "randomwalker":
        _, confidence = random_walker_segment(scaled, pos_seeds, neg_seeds, prior, engine)
    elif engine.engine_id == "geodesic":
        _, confidence, _, _ = geodesic_segment(scaled, pos_seeds, neg_seeds, engine)
    else:  # pragma: no cover - EngineParams already validates
        raise ValueError(f"unknown engine {engine.engine_id!r}")

    confidence = confidence.copy()
    confidence[pos_seeds] = 1.0
    confidence[neg_seeds] = 0.0
    mask = confidence >= 0.5
    return EngineOutput(mask=mask, confidence=confidence, edge=edge_from_mask(mask))
