"""RSS localization from mmWave sector-level-sweep beam measurements.

Array model, per-beam RSS channel, Fisher information / CRLB, a damped
Gauss-Newton position estimator and room-grid Monte-Carlo sweeps.
"""

from .arraymodel import ArrayConfig, BeamSet, sls_beam_set
from .config import SimulationConfig, parse_config, serialize_config
from .estimator import EstimatorConfig, estimate
from .fisher import crlb_rmse, fim, rss_jacobian
from .rfchannel import LinkBudget, ObservationVector, Position, synthesize_observation
from .simharness import RoomSpec, crlb_field, nlse_rmse_field, sweep_over_n

__version__ = "0.1.0"

__all__ = [
    "ArrayConfig",
    "BeamSet",
    "EstimatorConfig",
    "LinkBudget",
    "ObservationVector",
    "Position",
    "RoomSpec",
    "SimulationConfig",
    "crlb_field",
    "crlb_rmse",
    "estimate",
    "fim",
    "nlse_rmse_field",
    "parse_config",
    "rss_jacobian",
    "serialize_config",
    "sls_beam_set",
    "sweep_over_n",
    "synthesize_observation",
]
