"""Length-prefixed binary frames exchanged between actors and the learner.

A frame is ``u32 length (LE) | u8 type | payload`` where ``length`` counts
the type byte plus the payload. Array payloads reuse the checkpoint tensor
encoding, so weights and observations round-trip bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ..netcore import CheckpointError, decode_tensors, encode_tensors
from ..replay import Transition

PROTOCOL_VERSION = 1
MAX_FRAME = 1 << 30
_HEADER = struct.Struct("<IB")
_TRANSITION = struct.Struct("<QIqqdB")
_REQUEST = struct.Struct("<IQ")
_SNAPSHOT = struct.Struct("<QQ")
_HELLO = struct.Struct("<BI")
_SHUTDOWN = struct.Struct("<IQ")


class MsgType(IntEnum):
    TRANSITION = 1
    WEIGHTS_REQUEST = 2
    WEIGHTS_SNAPSHOT = 3
    HELLO = 4
    SHUTDOWN = 5


class ProtocolError(ValueError):
    """Malformed or unexpected frame; the connection must not be reused."""


class TruncatedFrame(ProtocolError):
    pass


@dataclass(frozen=True)
class TransitionMsg:
    seq: int
    transition: Transition
    type = MsgType.TRANSITION


@dataclass(frozen=True)
class WeightsRequest:
    worker: int
    have_version: int = 0
    type = MsgType.WEIGHTS_REQUEST


@dataclass(frozen=True)
class WeightsSnapshot:
    version: int
    step: int
    tensors: dict = field(default_factory=dict)
    type = MsgType.WEIGHTS_SNAPSHOT


@dataclass(frozen=True)
class Hello:
    worker: int
    protocol: int = PROTOCOL_VERSION
    type = MsgType.HELLO


@dataclass(frozen=True)
class Shutdown:
    worker: int = 0
    sent: int = 0
    reason: str = ""
    type = MsgType.SHUTDOWN


def _payload(msg) -> bytes:
    if isinstance(msg, TransitionMsg):
        t = msg.transition
        flags = int(bool(t.terminal)) | (int(bool(t.truncated)) << 1)
        head = _TRANSITION.pack(msg.seq, t.writer, t.episode, t.step, float(t.reward), flags)
        arrays = {"obs": np.asarray(t.obs), "action": np.asarray(t.action),
                  "next_obs": np.asarray(t.next_obs)}
        return head + encode_tensors(arrays)
    if isinstance(msg, WeightsRequest):
        return _REQUEST.pack(msg.worker, msg.have_version)
    if isinstance(msg, WeightsSnapshot):
        return _SNAPSHOT.pack(msg.version, msg.step) + encode_tensors(msg.tensors)
    if isinstance(msg, Hello):
        return _HELLO.pack(msg.protocol, msg.worker)
    if isinstance(msg, Shutdown):
        return _SHUTDOWN.pack(msg.worker, msg.sent) + msg.reason.encode("utf-8")
    raise TypeError(f"not a wire message: {type(msg).__name__}")


def encode_frame(msg) -> bytes:
    payload = _payload(msg)
    if len(payload) + 1 > MAX_FRAME:
        raise ProtocolError(f"frame of {len(payload) + 1} bytes exceeds the limit")
    return _HEADER.pack(len(payload) + 1, int(msg.type)) + payload


def _parse(kind: int, body: memoryview):
    try:
        if kind == MsgType.TRANSITION:
            seq, writer, episode, step, reward, flags = _TRANSITION.unpack_from(body)
            arrays = decode_tensors(body[_TRANSITION.size:])
            if set(arrays) != {"obs", "action", "next_obs"}:
                raise ProtocolError("transition payload has the wrong tensors")
            tr = Transition(arrays["obs"], arrays["action"], reward, arrays["next_obs"],
                            bool(flags & 1), bool(flags & 2), episode, step, writer)
            return TransitionMsg(seq, tr)
        if kind == MsgType.WEIGHTS_REQUEST:
            _exact(body, _REQUEST.size)
            return WeightsRequest(*_REQUEST.unpack_from(body))
        if kind == MsgType.WEIGHTS_SNAPSHOT:
            version, step = _SNAPSHOT.unpack_from(body)
            return WeightsSnapshot(version, step, decode_tensors(body[_SNAPSHOT.size:]))
        if kind == MsgType.HELLO:
            _exact(body, _HELLO.size)
            protocol, worker = _HELLO.unpack_from(body)
            return Hello(worker, protocol)
        if kind == MsgType.SHUTDOWN:
            worker, sent = _SHUTDOWN.unpack_from(body)
            return Shutdown(worker, sent, bytes(body[_SHUTDOWN.size:]).decode("utf-8"))
    except (struct.error, CheckpointError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"bad {MsgType(kind).name} payload: {exc}") from None
    raise ProtocolError(f"unknown message type {kind}")


def _exact(body, size):
    if len(body) != size:
        raise ProtocolError(f"payload of {len(body)} bytes, expected {size}")


def frame_length(data) -> int | None:
    """Total frame size announced by the header, or None if fewer than 5 bytes."""
    if len(data) < _HEADER.size:
        return None
    length, kind = _HEADER.unpack_from(data)
    if length < 1 or length > MAX_FRAME:
        raise ProtocolError(f"bad frame length {length}")
    if kind not in MsgType._value2member_map_:
        raise ProtocolError(f"unknown message type {kind}")
    return 4 + length


def decode_frame(data):
    """Decode exactly one complete frame."""
    view = memoryview(data)
    total = frame_length(view)
    if total is None or len(view) < total:
        raise TruncatedFrame(f"have {len(view)} bytes, frame needs {total or 'at least 5'}")
    if len(view) > total:
        raise ProtocolError(f"{len(view) - total} trailing bytes after frame")
    return _parse(view[4], view[5:total])


class FrameDecoder:
    """Incremental decoder for a byte stream; poisoned by the first error."""

    def __init__(self):
        self._buf = bytearray()
        self._error = None

    def feed(self, data) -> list:
        if self._error is not None:
            raise ProtocolError(f"stream poisoned by earlier error: {self._error}")
        self._buf += data
        out = []
        try:
            while True:
                total = frame_length(self._buf)
                if total is None or len(self._buf) < total:
                    break
                view = memoryview(self._buf)
                try:
                    msg = _parse(view[4], view[5:total])
                finally:
                    view.release()
                del self._buf[:total]
                out.append(msg)
        except ProtocolError as exc:
            self._error = exc
            raise
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def messages_equal(a, b) -> bool:
    """Bitwise equality of two decoded or constructed messages."""
    if type(a) is not type(b):
        return False
    return encode_frame(a) == encode_frame(b)
