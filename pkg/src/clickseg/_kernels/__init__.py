from ._jit import KERNEL_MODE, USE_NUMBA
from .edt import distance_transform, edt_squared
from .geodesic import geodesic_distance
from .labeling import label_components
from .maxflow import bk_maxflow, build_arc_graph

__all__ = [
    "KERNEL_MODE",
    "USE_NUMBA",
    "bk_maxflow",
    "build_arc_graph",
    "distance_transform",
    "edt_squared",
    "geodesic_distance",
    "label_components",
]
