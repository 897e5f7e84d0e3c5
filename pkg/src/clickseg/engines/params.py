"""Engine selection and hyperparameters shared by all backends."""

from dataclasses import dataclass

ENGINE_IDS = ("graphcut", "randomwalker", "geodesic")

# Defaults follow common seeded-segmentation practice: lam/beta act on
# intensities scaled to [0, 1], so they are meaningful across bit depths.
DEFAULT_SEED_RADIUS = 5
DEFAULT_LAMBDA = 50.0
DEFAULT_BETA = 90.0
DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 2000
DEFAULT_EDGE_PRIOR_WEIGHT = 0.5
# Geodesic image-term gain of 1.0 on [0, 1]-scaled intensities equals the
# classic 1/255-per-8-bit-channel gain on raw values.
DEFAULT_GEODESIC_GAMMA = 1.0


@dataclass
class EngineParams:
    engine_id: str = "graphcut"
    seed_radius: int = DEFAULT_SEED_RADIUS
    lam: float = DEFAULT_LAMBDA
    beta: float = DEFAULT_BETA
    solver_tolerance: float = DEFAULT_TOLERANCE
    solver_max_iterations: int = DEFAULT_MAX_ITERATIONS
    edge_prior_weight: float = DEFAULT_EDGE_PRIOR_WEIGHT
    geodesic_gamma: float = DEFAULT_GEODESIC_GAMMA

    def __post_init__(self):
        if self.engine_id not in ENGINE_IDS:
            raise ValueError(
                f"unknown engine {self.engine_id!r}; expected one of {ENGINE_IDS}"
            )
        for name in ("seed_radius", "lam", "beta", "solver_tolerance",
                     "solver_max_iterations", "geodesic_gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.edge_prior_weight <= 1.0:
            raise ValueError("edge_prior_weight must lie in [0, 1]")
