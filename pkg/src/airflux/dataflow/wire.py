"""Binary framing for the optional TCP transport.

Envelope (little-endian): magic u16 ``0xA1B2``, kind u8, sender operator
index u16, sender rank u32, seq u64, payload length u32, payload bytes.

Gradient payloads use a fixed binary layout (see :func:`encode_gradient`).
Every other payload kind is UTF-8 JSON; numpy arrays become nested lists.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
from typing import Sequence

import numpy as np

from .channels import Inbox
from .messages import Address, Control, Message, MsgKind, Prediction, PredictRequest

MAGIC = 0xA1B2
HEADER = struct.Struct("<HBHIQI")


class WireError(ValueError):
    pass


def encode_gradient(g) -> bytes:
    """origin u32, origin_seq u64, n u32, n x u64 clock, tag u8, then the delta.

    Dense (tag 0): length u64 + f32 values. Sparse (tag 1): row count u64,
    then per row: index u32, width u32, width x f32.
    """
    from ..learners.base import DenseDelta

    parts = [struct.pack("<IQI", g.origin, g.origin_seq, len(g.origin_clock))]
    parts.append(np.asarray(g.origin_clock, dtype="<u8").tobytes())
    d = g.delta
    if isinstance(d, DenseDelta):
        vals = np.ascontiguousarray(d.values, dtype="<f4")
        parts.append(struct.pack("<BQ", 0, vals.size))
        parts.append(vals.tobytes())
    else:
        vals = np.ascontiguousarray(d.values, dtype="<f4")
        width = vals.shape[1]
        parts.append(struct.pack("<BQ", 1, len(d.rows)))
        head = struct.Struct("<II")
        for r, row in zip(d.rows, vals):
            parts.append(head.pack(int(r), width))
            parts.append(row.tobytes())
    return b"".join(parts)


def decode_gradient(buf: bytes):
    from ..learners.base import DenseDelta, SparseDelta, freeze
    from ..model import GradientUpdate

    mv = memoryview(buf)
    origin, seq, n = struct.unpack_from("<IQI", mv, 0)
    off = 16
    clock = tuple(int(x) for x in np.frombuffer(mv, dtype="<u8", count=n, offset=off))
    off += 8 * n
    tag, count = struct.unpack_from("<BQ", mv, off)
    off += 9
    if tag == 0:
        vals = np.frombuffer(mv, dtype="<f4", count=count, offset=off).astype(np.float32)
        off += 4 * count
        delta = DenseDelta(vals)
    elif tag == 1:
        rows, values = [], []
        for _ in range(count):
            r, width = struct.unpack_from("<II", mv, off)
            off += 8
            values.append(np.frombuffer(mv, dtype="<f4", count=width, offset=off))
            off += 4 * width
            rows.append(r)
        # an empty sparse delta carries no width on the wire
        vals = np.asarray(values, dtype=np.float32) if values else np.zeros((0, 0), dtype=np.float32)
        delta = SparseDelta(np.asarray(rows, dtype=np.int64), vals)
    else:
        raise WireError(f"unknown delta format tag {tag}")
    if off != len(buf):
        raise WireError(f"{len(buf) - off} trailing bytes in gradient payload")
    # batch provenance is not part of the wire layout
    return GradientUpdate(origin, seq, clock, freeze(delta), -1)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    return obj


def encode_payload(kind: MsgKind, payload) -> bytes:
    if kind is MsgKind.GRADIENT:
        return encode_gradient(payload)
    if kind is MsgKind.CONTROL:
        body = {"op": payload.op, "value": payload.value}
    elif kind is MsgKind.MINIBATCH:
        body = {"id": payload.id, "created_ts": payload.created_ts, "pairs": _jsonable([list(p) for p in payload.pairs])}
    elif kind is MsgKind.PREDICT_REQUEST:
        body = {"request_id": payload.request_id, "inputs": _jsonable(payload.inputs)}
    elif kind is MsgKind.PREDICTION:
        body = {"request_id": payload.request_id, "served_by": payload.served_by, "outputs": _jsonable(payload.outputs)}
    else:
        body = _jsonable(payload)
    return json.dumps(body, separators=(",", ":")).encode("utf-8")


def decode_payload(kind: MsgKind, buf: bytes):
    if kind is MsgKind.GRADIENT:
        return decode_gradient(buf)
    body = json.loads(buf.decode("utf-8"))
    if kind is MsgKind.CONTROL:
        return Control(body["op"], body["value"])
    if kind is MsgKind.MINIBATCH:
        from ..learners.base import TrainingPair
        from ..stream import MiniBatch

        pairs = tuple(TrainingPair(tuple(x) if isinstance(x, list) else x, y) for x, y in body["pairs"])
        return MiniBatch(body["id"], pairs, body["created_ts"])
    if kind is MsgKind.PREDICT_REQUEST:
        return PredictRequest(body["request_id"], body["inputs"])
    if kind is MsgKind.PREDICTION:
        return Prediction(body["request_id"], body["served_by"], body["outputs"])
    return body


def encode_message(msg: Message, op_index: int) -> bytes:
    payload = encode_payload(msg.kind, msg.payload)
    return HEADER.pack(MAGIC, int(msg.kind), op_index, msg.sender.rank, msg.seq, len(payload)) + payload


def decode_header(buf: bytes) -> tuple[MsgKind, int, int, int, int]:
    magic, kind, op, rank, seq, length = HEADER.unpack(buf)
    if magic != MAGIC:
        raise WireError(f"bad magic 0x{magic:04X}")
    try:
        k = MsgKind(kind)
    except ValueError:
        raise WireError(f"unknown message kind {kind}") from None
    return k, op, rank, seq, length


def decode_message(buf: bytes, op_names: Sequence[str]) -> Message:
    kind, op, rank, seq, length = decode_header(buf[: HEADER.size])
    body = buf[HEADER.size :]
    if len(body) != length:
        raise WireError(f"payload length {len(body)} != header {length}")
    return Message(kind, Address(op_names[op], rank), seq, decode_payload(kind, body))


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks, got = [], 0
    while got < n:
        c = sock.recv(n - got)
        if not c:
            return None if got == 0 else b"".join(chunks)
        chunks.append(c)
        got += len(c)
    return b"".join(chunks)


class TcpReceiver:
    """Listens on ``host:port`` and feeds decoded frames into ``inbox``.

    Gradient and peer-control frames go to the inbox's priority lane.
    """

    def __init__(self, inbox: Inbox, op_names: Sequence[str], host: str = "127.0.0.1", port: int = 0):
        self.inbox = inbox
        self.op_names = list(op_names)
        self.errors: list[BaseException] = []
        self._srv = socket.create_server((host, port))
        self.address = self._srv.getsockname()
        self._threads: list[threading.Thread] = []
        self._accept = threading.Thread(target=self._serve, daemon=True)
        self._accept.start()

    def _serve(self) -> None:
        while True:
            try:
                conn, _ = self._srv.accept()
            except OSError:
                return
            t = threading.Thread(target=self._read, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _read(self, conn: socket.socket) -> None:
        with conn:
            while True:
                head = _recv_exact(conn, HEADER.size)
                if head is None:
                    return
                try:
                    kind, op, rank, seq, length = decode_header(head)
                    body = _recv_exact(conn, length) or b""
                    msg = decode_message(head + body, self.op_names)
                    urgent = kind is MsgKind.GRADIENT or (
                        kind is MsgKind.CONTROL and msg.payload.op in ("peer_done", "barrier")
                    )
                    self.inbox.put(msg, urgent)
                except Exception as exc:  # reported to the owner, connection dropped
                    self.errors.append(exc)
                    return

    def close(self) -> None:
        self._srv.close()
        for t in self._threads:
            t.join(timeout=2)


class TcpSender:
    """Client side of one directed channel; stamps seq like an in-process Channel."""

    def __init__(self, src: Address, op_index: int, host: str, port: int):
        self.src = src
        self.op_index = op_index
        self.sock = socket.create_connection((host, port))
        self.sent = 0

    def send(self, kind: MsgKind, payload) -> Message:
        self.sent += 1
        msg = Message(kind, self.src, self.sent, payload)
        self.sock.sendall(encode_message(msg, self.op_index))
        return msg

    def close(self) -> None:
        self.sock.close()
