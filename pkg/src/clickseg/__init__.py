"""clickseg: interactive segmentation annotation toolkit.

Click-driven energy-minimization engines (graph cut, random walker,
geodesic), a deterministic click simulator with NoC/mIoU reporting,
mask<->polygon editing, video/volume mask propagation, annotation export,
an HTTP session service, and a batch CLI.
"""

__version__ = "0.1.0"
