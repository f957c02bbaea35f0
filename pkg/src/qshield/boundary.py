"""Length-prefixed frame protocol for crossing the trusted boundary.

Every call into the core travels as one frame:

    4B big-endian frame length (of everything after this field)
    1B opcode
    4B big-endian JSON length
    canonical-JSON arguments
    raw binary payload

Responses reuse the layout with a status byte instead of the opcode
(0 = ok, 1 = error; error JSON carries the exception class and message).
The same framing carries the distributed-mode broker/worker messages, so
a socket transport is a drop-in for the in-process dispatcher.
"""

from __future__ import annotations

import json
from typing import Any, BinaryIO

from . import errors
from .core import ResponseEnvelope, TrustedCore
from .encoding import canonical_json
from .errors import ArgumentError, QShieldError

OP_INIT = 0x01
OP_PROVISION = 0x02
OP_UPDATE_POLICY = 0x03
OP_UNLOCK = 0x10
OP_EXEC_OPERATOR = 0x11
OP_FINALIZE = 0x12

STATUS_OK = 0
STATUS_ERROR = 1


def encode_frame(opcode: int, args: dict[str, Any], payload: bytes = b"") -> bytes:
    body = canonical_json(args)
    inner = bytes([opcode]) + len(body).to_bytes(4, "big") + body + payload
    return len(inner).to_bytes(4, "big") + inner


def decode_frame(frame: bytes) -> tuple[int, dict[str, Any], bytes]:
    if len(frame) < 9:
        raise ArgumentError("frame too short")
    total = int.from_bytes(frame[:4], "big")
    if total != len(frame) - 4:
        raise ArgumentError(f"frame length {total} != body size {len(frame) - 4}")
    opcode = frame[4]
    json_len = int.from_bytes(frame[5:9], "big")
    if 9 + json_len > len(frame):
        raise ArgumentError("frame JSON length exceeds frame")
    args = json.loads(frame[9 : 9 + json_len].decode("utf-8"))
    return opcode, args, frame[9 + json_len :]


def read_frame(stream: BinaryIO) -> bytes | None:
    """Read one frame from a stream; None on clean EOF."""
    header = stream.read(4)
    if not header:
        return None
    if len(header) != 4:
        raise ArgumentError("truncated frame header")
    total = int.from_bytes(header, "big")
    body = stream.read(total)
    if len(body) != total:
        raise ArgumentError("truncated frame body")
    return header + body


def _error_response(exc: Exception) -> bytes:
    args = {"error": type(exc).__name__, "message": str(exc)}
    floor = getattr(exc, "floor", None)
    if floor is not None:
        args["floor"] = floor
    return encode_frame(STATUS_ERROR, args)


def raise_from_response(response: bytes) -> tuple[dict[str, Any], bytes]:
    """Decode a response frame, re-raising the carried error if any."""
    status, args, payload = decode_frame(response)
    if status == STATUS_OK:
        return args, payload
    cls = getattr(errors, args.get("error", ""), None)
    if cls is None or not (isinstance(cls, type) and issubclass(cls, QShieldError)):
        raise QShieldError(args.get("message", "unknown core error"))
    if cls is errors.ReplayError:
        raise cls(args.get("message", ""), floor=args.get("floor"))
    raise cls(args.get("message", ""))


class CoreBoundary:
    """Frame dispatcher in front of a TrustedCore (the ECALL surface)."""

    def __init__(self, core: TrustedCore):
        self.core = core

    def handle(self, frame: bytes) -> bytes:
        try:
            opcode, args, payload = decode_frame(frame)
            return self._dispatch(opcode, args, payload)
        except QShieldError as exc:
            return _error_response(exc)

    def _dispatch(self, opcode: int, args: dict[str, Any], payload: bytes) -> bytes:
        if opcode == OP_INIT:
            pke_pub, sig_pub = self.core.init(args.get("security_bits", 128))
            return encode_frame(
                STATUS_OK, {"pke_pub": pke_pub.hex(), "sig_pub": sig_pub.hex()}
            )
        if opcode == OP_PROVISION:
            if len(payload) < 4:
                raise ArgumentError("provision payload too short")
            kem_len = int.from_bytes(payload[:4], "big")
            kem = payload[4 : 4 + kem_len]
            ack = self.core.provision(kem, payload[4 + kem_len :])
            return encode_frame(STATUS_OK, {}, ack)
        if opcode == OP_UPDATE_POLICY:
            ack = self.core.update_policy(payload)
            return encode_frame(STATUS_OK, {}, ack)
        if opcode == OP_UNLOCK:
            token_len = args["token_len"]
            token, rest = payload[:token_len], payload[token_len:]
            ct: dict[str, list[bytes]] = {}
            off = 0
            for cid, lengths in args["layout"]:
                blobs = []
                for n in lengths:
                    blobs.append(rest[off : off + n])
                    off += n
                ct[cid] = blobs
            if off != len(rest):
                raise ArgumentError("unlock payload length mismatch")
            s_id = self.core.unlock(token, ct)
            return encode_frame(STATUS_OK, {"s_id": s_id})
        if opcode == OP_EXEC_OPERATOR:
            s_id = self.core.exec_operator(
                args["f_name"], args["f_params"], list(args["inputs"])
            )
            return encode_frame(STATUS_OK, {"s_id": s_id})
        if opcode == OP_FINALIZE:
            envelope = self.core.finalize(args["s_id"])
            return encode_frame(STATUS_OK, {}, envelope.to_bytes())
        raise ArgumentError(f"unknown opcode {opcode:#x}")


class BoundaryClient:
    """Typed calls over the frame protocol; send() may cross a socket."""

    def __init__(self, send):
        self._send = send

    def init(self, security_bits: int = 128) -> tuple[bytes, bytes]:
        args, _ = raise_from_response(
            self._send(encode_frame(OP_INIT, {"security_bits": security_bits}))
        )
        return bytes.fromhex(args["pke_pub"]), bytes.fromhex(args["sig_pub"])

    def provision(self, kem_blob: bytes, payload: bytes) -> bytes:
        frame = encode_frame(
            OP_PROVISION, {}, len(kem_blob).to_bytes(4, "big") + kem_blob + payload
        )
        _, ack = raise_from_response(self._send(frame))
        return ack

    def update_policy(self, op_frame: bytes) -> bytes:
        _, ack = raise_from_response(
            self._send(encode_frame(OP_UPDATE_POLICY, {}, op_frame))
        )
        return ack

    def unlock(self, token: bytes, ct: dict[str, list[bytes]]) -> int:
        layout = [[cid, [len(b) for b in ct[cid]]] for cid in sorted(ct)]
        payload = token + b"".join(b for cid, _ in layout for b in ct[cid])
        frame = encode_frame(
            OP_UNLOCK, {"token_len": len(token), "layout": layout}, payload
        )
        args, _ = raise_from_response(self._send(frame))
        return args["s_id"]

    def exec_operator(
        self, f_name: str, f_params: dict[str, Any], inputs: list[int]
    ) -> int:
        frame = encode_frame(
            OP_EXEC_OPERATOR,
            {"f_name": f_name, "f_params": f_params, "inputs": list(inputs)},
        )
        args, _ = raise_from_response(self._send(frame))
        return args["s_id"]

    def finalize(self, s_id: int) -> ResponseEnvelope:
        _, payload = raise_from_response(
            self._send(encode_frame(OP_FINALIZE, {"s_id": s_id}))
        )
        return ResponseEnvelope.from_bytes(payload)
