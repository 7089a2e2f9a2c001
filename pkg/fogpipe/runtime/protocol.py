"""Length-prefixed binary framing between the manager and its workers.

Every frame is ``>I`` length, ``>B`` type, payload, where the length counts
the type byte plus the payload. All integers are big-endian.
"""
import asyncio
import enum
import struct
from dataclasses import dataclass
from typing      import List, Optional, Sequence, Tuple

from fogpipe.exceptions import ProtocolError

HEADER_SIZE    = 4
MAX_FRAME_SIZE = 256 * 1024 * 1024


class MessageType(enum.IntEnum):
    REGISTER     = 0x01
    PROFILE_REQ  = 0x02
    PROFILE_RESP = 0x03
    ASSIGN       = 0x04
    TENSOR       = 0x05
    DONE         = 0x06
    METRICS      = 0x07


@dataclass(frozen=True)
class WireMessage:
    type   : MessageType
    payload: bytes = b""


########################################################################
#                               Framing                                #
########################################################################

def encode_frame(message: WireMessage) -> bytes:
    return struct.pack(">IB", len(message.payload) + 1, message.type) + message.payload


def _message(kind: int, payload: bytes) -> WireMessage:
    try:
        return WireMessage(MessageType(kind), payload)
    except ValueError:
        raise ProtocolError("unknown frame type 0x{:02x}".format(kind)) from None


def _check_length(length: int):
    if length < 1:
        raise ProtocolError("frame length {} cannot hold a type byte".format(length))
    if length > MAX_FRAME_SIZE:
        raise ProtocolError("frame too large: {} bytes (max {})".format(length, MAX_FRAME_SIZE))


def decode_frame(data: bytes) -> WireMessage:
    """Decode exactly one frame from ``data``."""
    if len(data) < HEADER_SIZE + 1:
        raise ProtocolError("truncated frame header")
    (length,) = struct.unpack_from(">I", data)
    _check_length(length)
    if len(data) != HEADER_SIZE + length:
        raise ProtocolError(
            "frame declares {} bytes but carries {}".format(length, len(data) - HEADER_SIZE)
        )
    return _message(data[HEADER_SIZE], bytes(data[HEADER_SIZE + 1:]))


async def read_message(reader: asyncio.StreamReader) -> Optional[WireMessage]:
    """Read one frame, or return None on a clean end of stream."""
    try:
        header = await reader.readexactly(HEADER_SIZE)
    except asyncio.IncompleteReadError as e:
        if not e.partial:
            return None
        raise ProtocolError("connection closed inside a frame header") from None

    (length,) = struct.unpack(">I", header)
    _check_length(length)
    try:
        body = await reader.readexactly(length)
    except asyncio.IncompleteReadError:
        raise ProtocolError("connection closed inside a {}-byte frame".format(length)) from None
    return _message(body[0], bytes(body[1:]))


async def write_message(writer: asyncio.StreamWriter, message: WireMessage):
    writer.write(encode_frame(message))
    await writer.drain()


########################################################################
#                               Payloads                               #
########################################################################

class _Cursor(object):
    """Sequential big-endian reader over a payload."""

    def __init__(self, payload: bytes, kind: str):
        self.payload = payload
        self.kind    = kind
        self.offset  = 0

    def take(self, fmt: str):
        try:
            values = struct.unpack_from(fmt, self.payload, self.offset)
        except struct.error:
            raise ProtocolError("truncated {} payload".format(self.kind)) from None
        self.offset += struct.calcsize(fmt)
        return values if len(values) > 1 else values[0]

    def raw(self, size: int) -> bytes:
        if self.offset + size > len(self.payload):
            raise ProtocolError("truncated {} payload".format(self.kind))
        chunk = self.payload[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def rest(self) -> bytes:
        return self.raw(len(self.payload) - self.offset)

    def done(self):
        if self.offset != len(self.payload):
            raise ProtocolError(
                "{} trailing bytes after {} payload".format(len(self.payload) - self.offset, self.kind)
            )


def _pack_layers(layers: Sequence[Tuple[int, int]]) -> bytes:
    return struct.pack(">I", len(layers)) + b"".join(struct.pack(">IQ", l, ns) for l, ns in layers)


def _unpack_layers(cursor: _Cursor) -> Tuple[Tuple[int, int], ...]:
    count = cursor.take(">I")
    return tuple(cursor.take(">IQ") for _ in range(count))


def _decode_utf8(raw: bytes, kind: str) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        raise ProtocolError("{} payload is not valid UTF-8".format(kind)) from None


def encode_register(device_id: int, name: str) -> WireMessage:
    return WireMessage(MessageType.REGISTER, struct.pack(">I", device_id) + name.encode("utf-8"))


def decode_register(message: WireMessage) -> Tuple[int, str]:
    cursor = _Cursor(message.payload, "REGISTER")
    device_id = cursor.take(">I")
    return device_id, _decode_utf8(cursor.rest(), "REGISTER")


def encode_profile_request(reps: int, layers: Sequence[Tuple[int, int]]) -> WireMessage:
    """``layers`` holds (layer_id, emulated nanoseconds) pairs."""
    return WireMessage(MessageType.PROFILE_REQ, struct.pack(">H", reps) + _pack_layers(layers))


def decode_profile_request(message: WireMessage) -> Tuple[int, Tuple[Tuple[int, int], ...]]:
    cursor = _Cursor(message.payload, "PROFILE_REQ")
    reps   = cursor.take(">H")
    layers = _unpack_layers(cursor)
    cursor.done()
    return reps, layers


def encode_profile_response(means: Sequence[Tuple[int, int]]) -> WireMessage:
    """``means`` holds (layer_id, measured mean nanoseconds) pairs."""
    return WireMessage(MessageType.PROFILE_RESP, _pack_layers(means))


def decode_profile_response(message: WireMessage) -> Tuple[Tuple[int, int], ...]:
    cursor = _Cursor(message.payload, "PROFILE_RESP")
    means  = _unpack_layers(cursor)
    cursor.done()
    return means


@dataclass(frozen=True)
class StageAssignment:
    """One stage as shipped to its worker.

        Parameters
        ----------
        layers : tuple of (int, int)
            (layer_id, emulated nanoseconds) in execution order.

        b_mu : int
            Micro-batch size.

        cut_bytes : int
            Output bytes per sample of the stage's last layer.

        downstream : string, optional
            ``host:port`` of the next stage, None for the sink.
        """
    layers    : Tuple[Tuple[int, int], ...]
    b_mu      : int
    cut_bytes : int
    downstream: Optional[str] = None

    @property
    def compute_ns(self) -> int:
        return sum(ns for _, ns in self.layers)


def encode_assign(assignment: Optional[StageAssignment]) -> WireMessage:
    """ASSIGN frame for ``assignment``; None gives the empty acknowledgement."""
    if assignment is None:
        return WireMessage(MessageType.ASSIGN)
    endpoint = (assignment.downstream or "").encode("utf-8")
    payload  = (
        _pack_layers(assignment.layers)
        + struct.pack(">IQH", assignment.b_mu, assignment.cut_bytes, len(endpoint))
        + endpoint
    )
    return WireMessage(MessageType.ASSIGN, payload)


def decode_assign(message: WireMessage) -> Optional[StageAssignment]:
    if not message.payload:
        return None
    cursor = _Cursor(message.payload, "ASSIGN")
    layers = _unpack_layers(cursor)
    b_mu, cut_bytes, size = cursor.take(">IQH")
    endpoint = _decode_utf8(cursor.raw(size), "ASSIGN")
    cursor.done()
    return StageAssignment(layers, b_mu, cut_bytes, endpoint or None)


def encode_tensor(batch: int, logical_bytes: int, physical: bool = True) -> WireMessage:
    """TENSOR frame; zero padding of ``logical_bytes`` follows when ``physical``."""
    padding = bytes(logical_bytes) if physical else b""
    return WireMessage(MessageType.TENSOR, struct.pack(">QQ", batch, logical_bytes) + padding)


def decode_tensor(message: WireMessage) -> Tuple[int, int]:
    cursor = _Cursor(message.payload, "TENSOR")
    batch, logical_bytes = cursor.take(">QQ")
    padding = len(message.payload) - cursor.offset
    if padding not in (0, logical_bytes):
        raise ProtocolError(
            "TENSOR carries {} bytes for a {}-byte tensor".format(padding, logical_bytes)
        )
    return batch, logical_bytes


def encode_done() -> WireMessage:
    return WireMessage(MessageType.DONE)


@dataclass(frozen=True)
class MetricsReport:
    batches: int
    busy_ns: int
    wall_ns: int


def encode_metrics(report: MetricsReport) -> WireMessage:
    return WireMessage(
        MessageType.METRICS, struct.pack(">QQQ", report.batches, report.busy_ns, report.wall_ns)
    )


def decode_metrics(message: WireMessage) -> MetricsReport:
    cursor = _Cursor(message.payload, "METRICS")
    report = MetricsReport(*cursor.take(">QQQ"))
    cursor.done()
    return report


def expect(message: Optional[WireMessage], *kinds: MessageType) -> WireMessage:
    """Return ``message`` if it is one of ``kinds``, else raise ProtocolError."""
    if message is None:
        raise ProtocolError("connection closed while waiting for {}".format(
            " or ".join(kind.name for kind in kinds)))
    if message.type not in kinds:
        raise ProtocolError("expected {} but received {}".format(
            " or ".join(kind.name for kind in kinds), message.type.name))
    return message


def layer_list(layer_ids: Sequence[int], seconds: Sequence[float]) -> List[Tuple[int, int]]:
    """Pair layer ids with durations converted to whole nanoseconds."""
    return [(int(l), int(round(s * 1e9))) for l, s in zip(layer_ids, seconds)]
