"""Model-backend server for the semantic link's bridge protocol."""

from .models import CapabilityMissing, ModelHub
from .proto import Metric, Op, ProtocolError, Status
from .server import BridgeServer, start_background

__version__ = "0.1.0"

__all__ = [
    "BridgeServer",
    "CapabilityMissing",
    "Metric",
    "ModelHub",
    "Op",
    "ProtocolError",
    "Status",
    "start_background",
]
