"""Service API over the frame protocol: upload, query, policy-update, attest.

One frame verb per service operation, reusing the boundary frame layout
with service opcodes.  `LocalService` answers frames in process;
`serve_forever` exposes the same dispatcher on a TCP socket, and
`SocketServiceClient` is the matching client, so a CLI invocation can
talk to a long-lived server process whose trusted core keeps its replay
floor and sessions across requests.
"""

from __future__ import annotations

import socket
import socketserver
from typing import Any

from .boundary import (
    STATUS_ERROR,
    STATUS_OK,
    decode_frame,
    encode_frame,
    raise_from_response,
    read_frame,
)
from .core import ResponseEnvelope
from .errors import ArgumentError, QShieldError
from .host import HostService, QueryRequest

VERB_CREATE = 0x20
VERB_UPLOAD = 0x21
VERB_QUERY = 0x22
VERB_POLICY_UPDATE = 0x23
VERB_ATTEST = 0x24
VERB_PROVISION = 0x25
VERB_CATALOG = 0x26


class LocalService:
    """In-process dispatcher mapping service frames onto a HostService."""

    def __init__(self, host: HostService):
        self.host = host

    def handle(self, frame: bytes) -> bytes:
        try:
            verb, args, payload = decode_frame(frame)
            return self._dispatch(verb, args, payload)
        except QShieldError as exc:
            out = {"error": type(exc).__name__, "message": str(exc)}
            floor = getattr(exc, "floor", None)
            if floor is not None:
                out["floor"] = floor
            return encode_frame(STATUS_ERROR, out)

    def _dispatch(self, verb: int, args: dict[str, Any], payload: bytes) -> bytes:
        if verb == VERB_CREATE:
            cid = self.host.store.create_collection(args["name"], args["schema"])
            return encode_frame(STATUS_OK, {"cid": cid})
        if verb == VERB_UPLOAD:
            out = self.host.store.store(args["cid"], args["did"], payload)
            return encode_frame(STATUS_OK, out)
        if verb == VERB_QUERY:
            req = QueryRequest(args["q"], payload)
            env = self.host.handle_query(req)
            return encode_frame(STATUS_OK, {}, env.to_bytes())
        if verb == VERB_POLICY_UPDATE:
            ack = self.host.update_policy(payload)
            return encode_frame(STATUS_OK, {}, ack)
        if verb == VERB_ATTEST:
            return encode_frame(
                STATUS_OK,
                {
                    "measurement": self.host.report_measurement().hex(),
                    "pke_pub": self.host.pke_pub.hex(),
                    "sig_pub": self.host.sig_pub.hex(),
                },
            )
        if verb == VERB_PROVISION:
            if len(payload) < 4:
                raise ArgumentError("provision payload too short")
            kem_len = int.from_bytes(payload[:4], "big")
            ack = self.host.provision(
                payload[4 : 4 + kem_len], payload[4 + kem_len :]
            )
            return encode_frame(STATUS_OK, {}, ack)
        if verb == VERB_CATALOG:
            catalog = {
                name: sorted(schema) for name, schema in self.host.store.catalog().items()
            }
            return encode_frame(STATUS_OK, {"catalog": catalog})
        raise ArgumentError(f"unknown service verb {verb:#x}")


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        while True:
            frame = read_frame(self.rfile)
            if frame is None:
                return
            self.wfile.write(self.server.service.handle(frame))
            self.wfile.flush()


class ServiceServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: LocalService):
        super().__init__(address, _Handler)
        self.service = service


def serve_forever(host_service: HostService, port: int, bind: str = "127.0.0.1"):
    server = ServiceServer((bind, port), LocalService(host_service))
    server.serve_forever()


class SocketServiceClient:
    """Client side of the socket transport; one connection per client."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._rfile = self._sock.makefile("rb")

    def close(self) -> None:
        self._rfile.close()
        self._sock.close()

    def _round_trip(self, frame: bytes) -> tuple[dict[str, Any], bytes]:
        self._sock.sendall(frame)
        response = read_frame(self._rfile)
        if response is None:
            raise ArgumentError("service closed the connection")
        return raise_from_response(response)

    def attest(self) -> dict[str, str]:
        args, _ = self._round_trip(encode_frame(VERB_ATTEST, {}))
        return args

    def provision(self, kem_blob: bytes, payload: bytes) -> bytes:
        frame = encode_frame(
            VERB_PROVISION, {}, len(kem_blob).to_bytes(4, "big") + kem_blob + payload
        )
        _, ack = self._round_trip(frame)
        return ack

    def policy_update(self, op_frame: bytes) -> bytes:
        _, ack = self._round_trip(encode_frame(VERB_POLICY_UPDATE, {}, op_frame))
        return ack

    def create_collection(self, name: str, schema: list[str]) -> str:
        args, _ = self._round_trip(
            encode_frame(VERB_CREATE, {"name": name, "schema": sorted(schema)})
        )
        return args["cid"]

    def upload(self, cid: str, did: str, ct: bytes) -> dict:
        args, _ = self._round_trip(
            encode_frame(VERB_UPLOAD, {"cid": cid, "did": did}, ct)
        )
        return args

    def query(self, q: str, tk: bytes) -> ResponseEnvelope:
        _, payload = self._round_trip(encode_frame(VERB_QUERY, {"q": q}, tk))
        return ResponseEnvelope.from_bytes(payload)

    def catalog(self) -> dict[str, set[str]]:
        args, _ = self._round_trip(encode_frame(VERB_CATALOG, {}))
        return {name: set(schema) for name, schema in args["catalog"].items()}
