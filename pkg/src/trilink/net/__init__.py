from .frames import Frame, FrameError, MessageType, decode_frame, encode_frame
from .meter import SessionMeter, meter_report
from .transport import (
    NET_PRESETS,
    Connection,
    LinkShaper,
    Listener,
    Role,
    SessionAborted,
    SessionLink,
    TransportError,
    dial,
    memory_pair,
    shaper_for,
)

__all__ = [
    "Frame",
    "FrameError",
    "MessageType",
    "decode_frame",
    "encode_frame",
    "SessionMeter",
    "meter_report",
    "NET_PRESETS",
    "Connection",
    "LinkShaper",
    "Listener",
    "Role",
    "SessionAborted",
    "SessionLink",
    "TransportError",
    "dial",
    "memory_pair",
    "shaper_for",
]
