"""Message transports between clients and the federation server.

Both transports move encoded frames, never Python objects, so whatever a
client sends can be inspected byte for byte.
"""

from __future__ import annotations

import logging
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Callable

from .model import Level, ModelSnapshot, TrainingDelta
from .protocol import (
    ErrorResponse, ModelResponse, ProtocolError, RegisterAck, RegisterClient,
    RequestAssignments, RequestModel, UpdateAck, UpdateModel,
    decode_message, encode_message, read_frame,
)
from .clustering import ClientProfile
from .server import ClusterAssignment, FederationServer, Registration, ServerError

log = logging.getLogger(__name__)


class TransportError(ConnectionError):
    pass


class RemoteError(Exception):
    def __init__(self, code: str, detail: str):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail


class ServerEndpoint:
    """Decodes request frames, calls the server, encodes the reply."""

    def __init__(self, server: FederationServer):
        self.server = server

    def handle_frame(self, frame: bytes) -> bytes:
        try:
            msg = decode_message(frame)
        except ValueError as exc:
            return encode_message(ErrorResponse("bad_frame", str(exc)))
        return encode_message(self.dispatch(msg))

    def dispatch(self, msg):
        srv = self.server
        try:
            if isinstance(msg, RegisterClient):
                reg = srv.register_client(msg.profile)
                return RegisterAck(msg.profile.client_id, dict(reg.assignment.labels), reg.merges)
            if isinstance(msg, RequestAssignments):
                return RegisterAck(msg.client_id, dict(srv.assignment(msg.client_id).labels))
            if isinstance(msg, RequestModel):
                return ModelResponse(srv.request_model(msg.level, msg.cluster_key))
            if isinstance(msg, UpdateModel):
                stored, record = srv.apply_update(msg.level, msg.cluster_key, msg.snapshot,
                                                  msg.delta, msg.client_id)
                return UpdateAck(stored.meta.round, record.path)
            return ErrorResponse("unexpected_message", type(msg).__name__)
        except ServerError as exc:
            return ErrorResponse(exc.code, str(exc))
        except ValueError as exc:
            return ErrorResponse("invalid_request", str(exc))


@dataclass
class FrameLog:
    """Thread-safe record of every frame crossing a transport."""

    frames: list[tuple[str, bytes]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, direction: str, frame: bytes) -> None:
        with self._lock:
            self.frames.append((direction, frame))

    def __len__(self) -> int:
        return len(self.frames)


class Transport:
    def request(self, frame: bytes) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    def __init__(self, endpoint: ServerEndpoint, frame_log: FrameLog | None = None,
                 fault: Callable[[bytes], bool] | None = None):
        self.endpoint = endpoint
        self.frame_log = frame_log
        self.fault = fault

    def request(self, frame: bytes) -> bytes:
        if self.fault is not None and self.fault(frame):
            raise TransportError("injected transport failure")
        if self.frame_log is not None:
            self.frame_log.record("c2s", frame)
        reply = self.endpoint.handle_frame(frame)
        if self.frame_log is not None:
            self.frame_log.record("s2c", reply)
        return reply


class SocketTransport(Transport):
    """One persistent stream connection; requests are serialized per transport."""

    def __init__(self, host: str, port: int, timeout: float = 30.0,
                 frame_log: FrameLog | None = None):
        self.address = (host, port)
        self.timeout = timeout
        self.frame_log = frame_log
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()

    def _connect(self) -> socket.socket:
        if self._sock is None:
            try:
                self._sock = socket.create_connection(self.address, timeout=self.timeout)
            except OSError as exc:
                raise TransportError(f"cannot connect to {self.address}: {exc}") from exc
        return self._sock

    def request(self, frame: bytes) -> bytes:
        with self._lock:
            sock = self._connect()
            try:
                sock.sendall(frame)
                if self.frame_log is not None:
                    self.frame_log.record("c2s", frame)
                reply = read_frame(sock)
            except (OSError, ProtocolError) as exc:
                self._drop()
                raise TransportError(str(exc)) from exc
            if self.frame_log is not None:
                self.frame_log.record("s2c", reply)
            return reply

    def _drop(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def close(self) -> None:
        with self._lock:
            self._drop()


class _FrameHandler(socketserver.BaseRequestHandler):
    def handle(self):
        endpoint: ServerEndpoint = self.server.endpoint
        while True:
            try:
                frame = read_frame(self.request)
            except ConnectionError:
                return
            except ProtocolError as exc:
                self.request.sendall(encode_message(ErrorResponse("bad_frame", str(exc))))
                return
            self.request.sendall(endpoint.handle_frame(frame))


class FrameServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], endpoint: ServerEndpoint):
        super().__init__(address, _FrameHandler)
        self.endpoint = endpoint

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="fedccl-server", daemon=True)
        t.start()
        return t


class ServerProxy:
    """Client-side view of the server over any transport."""

    def __init__(self, transport: Transport):
        self.transport = transport

    def _call(self, msg, expect: type):
        reply = decode_message(self.transport.request(encode_message(msg)))
        if isinstance(reply, ErrorResponse):
            raise RemoteError(reply.error_code, reply.detail)
        if not isinstance(reply, expect):
            raise ProtocolError(f"expected {expect.__name__}, got {type(reply).__name__}")
        return reply

    def register(self, profile: ClientProfile) -> Registration:
        ack = self._call(RegisterClient(profile), RegisterAck)
        return Registration(ClusterAssignment(ack.assignments), ack.merges)

    def assignments(self, client_id: str) -> ClusterAssignment:
        return ClusterAssignment(self._call(RequestAssignments(client_id), RegisterAck).assignments)

    def request_model(self, level: Level | str, cluster_key: str | None = None) -> ModelSnapshot:
        return self._call(RequestModel(Level(level), cluster_key), ModelResponse).snapshot

    def update_model(self, level: Level | str, cluster_key: str | None, snapshot: ModelSnapshot,
                     delta: TrainingDelta, client_id: str | None = None) -> UpdateAck:
        return self._call(UpdateModel(Level(level), cluster_key, snapshot, delta, client_id),
                          UpdateAck)
