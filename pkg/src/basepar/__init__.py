"""Base inertial parameters of closed-loop multibody systems at variable precision."""
from .model import Mechanism, load_mechanism, param_index, param_label, parse_param_label
from .precision import PrecisionLevel

__all__ = ["Mechanism", "PrecisionLevel", "load_mechanism", "param_index", "param_label", "parse_param_label"]
__version__ = "0.1.0"
