"""udsim: a desk-scale vehicle diagnostic stack.

Simulated CAN bus, ISO-TP transport, UDS codec, configurable ECU,
diagnostic tester, alteration/conformance harness, time-synchronous
trace recorder and a live console service.
"""
from importlib import resources

from .canbus import CanBus, CanFrame, CanId, validate_id
from .codec import (
    Dtc,
    NegativeResponse,
    Nrc,
    PositiveResponse,
    Request,
    SubFunction,
    format_dtc,
)
from .ecu import Ecu, EcuConfig
from .sim import World
from .tester import Connection, PollList, TesterConfig

__version__ = "0.1.0"


def default_config_path():
    """Path to the shipped demo ECU configuration."""
    return resources.files(__package__) / "configs" / "default_ecu.json"


def load_default_config() -> EcuConfig:
    return EcuConfig.from_file(default_config_path())
