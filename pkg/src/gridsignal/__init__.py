"""Grid-network traffic signal control laboratory.

A deterministic multi-intersection traffic microsimulator with tensor state
encoding, a queue-balance expert rule, imitation pre-training, and on-policy
actor-critic fine-tuning, all reproducible bit for bit from a seed.
"""

__version__ = "0.1.0"

from .config import (
    ExperimentSpec,
    FlowProgram,
    ImitationConfig,
    NetworkConfig,
    RlConfig,
    RuleParams,
    flow_program,
)
from .network import Network, build_network
from .microsim import (
    MetricRow,
    SimState,
    StepReport,
    grouped_low_speed,
    low_speed_counts,
    metrics_snapshot,
    place_vehicle,
    reset,
    step,
    vehicle_info,
    vehicles_present,
)
from .encoder import encode_phase, encode_state
from .controllers import FixedTimeController, RuleController, rule_expert

__all__ = [
    "ExperimentSpec",
    "FixedTimeController",
    "FlowProgram",
    "ImitationConfig",
    "MetricRow",
    "Network",
    "NetworkConfig",
    "RlConfig",
    "RuleController",
    "RuleParams",
    "SimState",
    "StepReport",
    "build_network",
    "encode_phase",
    "encode_state",
    "flow_program",
    "grouped_low_speed",
    "low_speed_counts",
    "metrics_snapshot",
    "place_vehicle",
    "reset",
    "rule_expert",
    "step",
    "vehicle_info",
    "vehicles_present",
]
