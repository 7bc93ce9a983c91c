"""The single envelope type routed between operator instances."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Any, NamedTuple


class MsgKind(IntEnum):
    MINIBATCH = 1
    GRADIENT = 2
    PREDICT_REQUEST = 3
    PREDICTION = 4
    CONTROL = 5
    # plain records flowing through Map/Split/Udf stages
    RECORD = 6


class Address(NamedTuple):
    op: str
    rank: int

    def __str__(self) -> str:
        return f"{self.op}[{self.rank}]"


# kind -> payload type, filled in by the modules that own each payload
_PAYLOAD_TYPES: dict[MsgKind, type] = {}


def register_payload(kind: MsgKind, cls: type) -> type:
    _PAYLOAD_TYPES[kind] = cls
    return cls


@dataclass(frozen=True)
class Message:
    kind: MsgKind
    sender: Address
    seq: int
    payload: Any

    def __post_init__(self):
        expected = _PAYLOAD_TYPES.get(self.kind)
        if expected is not None and not isinstance(self.payload, expected):
            raise TypeError(
                f"{self.kind.name} message carries {type(self.payload).__name__}, "
                f"expected {expected.__name__}"
            )


@dataclass(frozen=True)
class Control:
    """Out-of-band signal. ``op`` is one of ``stop``, ``peer_done``, ``barrier``."""

    op: str
    value: int = 0


@dataclass(frozen=True)
class PredictRequest:
    request_id: int
    inputs: Any


@dataclass(frozen=True)
class Prediction:
    request_id: int
    served_by: int
    outputs: Any


register_payload(MsgKind.CONTROL, Control)
register_payload(MsgKind.PREDICT_REQUEST, PredictRequest)
register_payload(MsgKind.PREDICTION, Prediction)

STOP = Control("stop")
