"""Routing and resource-scheduling toolkit for satellite constellations."""

from constel._accel import USE_NUMBA
from constel.errors import (
    ConstelError,
    DomainError,
    InvalidScenarioError,
    NoRouteError,
    ScenarioParseError,
    UpdateAbortedError,
)

__version__ = "0.1.0"

__all__ = [
    "USE_NUMBA",
    "ConstelError",
    "DomainError",
    "InvalidScenarioError",
    "NoRouteError",
    "ScenarioParseError",
    "UpdateAbortedError",
]
