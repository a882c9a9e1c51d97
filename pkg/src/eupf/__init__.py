"""Learned N6 path selection for a simulated 5G user plane function."""

from eupf.env import (
    Condition,
    DegradationEnv,
    EnvConfig,
    Interface,
    PathEnvState,
    PathParams,
    TriggerMode,
    expected_bad_fraction,
)
from eupf.datapath import (
    Datapath,
    Direction,
    PacketEvent,
    RoundTripEntry,
    SharedMaps,
    build_gtpu_header,
    parse_teid,
)

__version__ = "0.1.0"

__all__ = [
    "Condition",
    "Datapath",
    "DegradationEnv",
    "Direction",
    "EnvConfig",
    "Interface",
    "PacketEvent",
    "PathEnvState",
    "PathParams",
    "RoundTripEntry",
    "SharedMaps",
    "TriggerMode",
    "build_gtpu_header",
    "expected_bad_fraction",
    "parse_teid",
]
