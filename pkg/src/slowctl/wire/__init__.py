"""Publish/subscribe field-layer protocol: name registry, item servers,
subscriptions with snapshot-first delivery, commands, heartbeats."""
import os

from .client import (CommandResult, UpdateStream, kind_of_value, send_command,
                     subscribe)
from .frames import (MODE_RO, MODE_RW, SUB_INTERVAL, SUB_ON_CHANGE, CodecError,
                     Frame, FrameType, Status, decode_frame, encode_frame)
from .registry import (DEFAULT_REGISTRY_PORT, CollisionError, Registry,
                       RegistryClient, ServiceInfo)
from .server import ItemServer, PublishError, chunk_updates
from .transport import parse_addr

__all__ = [
    "CommandResult", "UpdateStream", "kind_of_value", "send_command", "subscribe",
    "CodecError", "Frame", "FrameType", "Status", "decode_frame", "encode_frame",
    "MODE_RO", "MODE_RW", "SUB_INTERVAL", "SUB_ON_CHANGE", "CollisionError",
    "Registry", "RegistryClient", "ServiceInfo", "DEFAULT_REGISTRY_PORT",
    "ItemServer", "PublishError", "chunk_updates", "parse_addr", "registry_from_env",
]


def registry_from_env(default: tuple[str, int] | None = None) -> tuple[str, int]:
    """Registry address from SLOWCTL_REGISTRY (host:port), else the default."""
    text = os.environ.get("SLOWCTL_REGISTRY")
    if text:
        return parse_addr(text, DEFAULT_REGISTRY_PORT)
    return default or ("127.0.0.1", DEFAULT_REGISTRY_PORT)
