from .channels import Channel, Inbox, RealClock, VirtualClock, broadcast_to_peers, send
from .graph import Broadcast, DataflowGraph, Edge, Forward, HashShard, OperatorSpec, OpKind, build_graph
from .messages import Address, Control, Message, MsgKind, Prediction, PredictRequest
from .runtime import ASGD, SSP, SYNC, Mode, RunStats, Runtime, run_graph
from .sharding import hash_shard

__all__ = [
    "ASGD",
    "Address",
    "Broadcast",
    "Channel",
    "Control",
    "DataflowGraph",
    "Edge",
    "Forward",
    "HashShard",
    "Inbox",
    "Message",
    "Mode",
    "MsgKind",
    "OpKind",
    "OperatorSpec",
    "Prediction",
    "PredictRequest",
    "RealClock",
    "RunStats",
    "Runtime",
    "SSP",
    "SYNC",
    "VirtualClock",
    "broadcast_to_peers",
    "build_graph",
    "hash_shard",
    "run_graph",
    "send",
]
