"""Client/server messages and their length-prefixed binary framing.

A frame is::

    length   u32 big-endian, byte count of everything after this field
    type     u8 message type code
    hdr_len  u32 big-endian
    header   hdr_len bytes of UTF-8 JSON (sorted keys)
    blob     remaining bytes: a serialized snapshot, or empty

Raw series data has no message type and cannot be framed.
"""

from __future__ import annotations

import json
import socket
import struct
from dataclasses import dataclass, field
from typing import Any, ClassVar

from .clustering import ClientProfile
from .model import Level, ModelSnapshot, TrainingDelta, deserialize_snapshot, serialize_snapshot

MAX_FRAME = 64 * 1024 * 1024
_LEN = struct.Struct(">I")


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class RegisterClient:
    code: ClassVar[int] = 1
    profile: ClientProfile


@dataclass(frozen=True)
class RegisterAck:
    code: ClassVar[int] = 2
    client_id: str
    assignments: dict[str, int]
    merges: list[dict] = field(default_factory=list)


@dataclass(frozen=True)
class RequestModel:
    code: ClassVar[int] = 3
    level: Level
    cluster_key: str | None = None


@dataclass(frozen=True)
class ModelResponse:
    code: ClassVar[int] = 4
    snapshot: ModelSnapshot


@dataclass(frozen=True)
class UpdateModel:
    code: ClassVar[int] = 5
    level: Level
    cluster_key: str | None
    snapshot: ModelSnapshot
    delta: TrainingDelta
    client_id: str | None = None


@dataclass(frozen=True)
class UpdateAck:
    code: ClassVar[int] = 6
    accepted_round: int
    path: str


@dataclass(frozen=True)
class ErrorResponse:
    code: ClassVar[int] = 7
    error_code: str
    detail: str


@dataclass(frozen=True)
class RequestAssignments:
    code: ClassVar[int] = 8
    client_id: str


MESSAGE_TYPES = {cls.code: cls for cls in (
    RegisterClient, RegisterAck, RequestModel, ModelResponse,
    UpdateModel, UpdateAck, ErrorResponse, RequestAssignments,
)}


def _header_and_blob(msg) -> tuple[dict[str, Any], bytes]:
    if isinstance(msg, RegisterClient):
        p = msg.profile
        return {"profile": {"client_id": p.client_id, "latitude": p.latitude,
                            "longitude": p.longitude,
                            "orientation_azimuth": p.orientation_azimuth, "kwp": p.kwp}}, b""
    if isinstance(msg, RegisterAck):
        return {"client_id": msg.client_id, "assignments": msg.assignments,
                "merges": msg.merges}, b""
    if isinstance(msg, RequestModel):
        return {"level": Level(msg.level).value, "cluster_key": msg.cluster_key}, b""
    if isinstance(msg, ModelResponse):
        return {}, serialize_snapshot(msg.snapshot)
    if isinstance(msg, UpdateModel):
        d = msg.delta
        return {"level": Level(msg.level).value, "cluster_key": msg.cluster_key,
                "client_id": msg.client_id,
                "delta": {"samples_learned": d.samples_learned,
                          "epochs_learned": d.epochs_learned, "round": d.round}}, \
            serialize_snapshot(msg.snapshot)
    if isinstance(msg, UpdateAck):
        return {"accepted_round": msg.accepted_round, "path": msg.path}, b""
    if isinstance(msg, ErrorResponse):
        return {"code": msg.error_code, "detail": msg.detail}, b""
    if isinstance(msg, RequestAssignments):
        return {"client_id": msg.client_id}, b""
    raise ProtocolError(f"cannot encode {type(msg).__name__}")


def encode_message(msg) -> bytes:
    header, blob = _header_and_blob(msg)
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = struct.pack(">BI", msg.code, len(hdr)) + hdr + blob
    return _LEN.pack(len(body)) + body


def frame_type(frame: bytes) -> type:
    if len(frame) < 5:
        raise ProtocolError("frame too short")
    try:
        return MESSAGE_TYPES[frame[4]]
    except KeyError:
        raise ProtocolError(f"unknown message type {frame[4]}") from None


def decode_message(frame: bytes):
    if len(frame) < 4:
        raise ProtocolError("frame too short")
    (length,) = _LEN.unpack_from(frame, 0)
    if length != len(frame) - 4:
        raise ProtocolError(f"length prefix {length} does not match body size {len(frame) - 4}")
    return decode_body(frame[4:])


def decode_body(body: bytes):
    if len(body) < 5:
        raise ProtocolError("message body too short")
    code, hdr_len = struct.unpack_from(">BI", body, 0)
    cls = MESSAGE_TYPES.get(code)
    if cls is None:
        raise ProtocolError(f"unknown message type {code}")
    if 5 + hdr_len > len(body):
        raise ProtocolError("header length exceeds body")
    try:
        h = json.loads(body[5:5 + hdr_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad header: {exc}") from None
    blob = body[5 + hdr_len:]
    try:
        if cls is RegisterClient:
            return RegisterClient(ClientProfile(**h["profile"]))
        if cls is RegisterAck:
            return RegisterAck(h["client_id"], {k: int(v) for k, v in h["assignments"].items()},
                               list(h.get("merges", [])))
        if cls is RequestModel:
            return RequestModel(Level(h["level"]), h.get("cluster_key"))
        if cls is ModelResponse:
            return ModelResponse(deserialize_snapshot(blob))
        if cls is UpdateModel:
            return UpdateModel(Level(h["level"]), h.get("cluster_key"), deserialize_snapshot(blob),
                               TrainingDelta(**h["delta"]), h.get("client_id"))
        if cls is UpdateAck:
            return UpdateAck(int(h["accepted_round"]), h["path"])
        if cls is ErrorResponse:
            return ErrorResponse(h["code"], h["detail"])
        return RequestAssignments(h["client_id"])
    except (KeyError, TypeError) as exc:
        raise ProtocolError(f"malformed {cls.__name__}: {exc}") from None


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("connection closed mid-frame" if buf else "connection closed")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    prefix = _recv_exact(sock, 4)
    (length,) = _LEN.unpack(prefix)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    return prefix + _recv_exact(sock, length)
