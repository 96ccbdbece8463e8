"""Config-driven experiment harness."""
from .config import ExperimentConfig, load_config
from .geometry import HYPERPLANES, admissible_box, hyperplane_points, metric_rel_L2

__all__ = ["ExperimentConfig", "load_config", "HYPERPLANES", "admissible_box", "hyperplane_points", "metric_rel_L2"]
