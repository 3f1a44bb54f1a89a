"""Session frames exchanged between buyer, seller and broker.

A frame is ``session_id (16) | msg_type u8 | sequence u32 | payload_len u32 |
payload`` in network byte order. On TCP each frame is preceded by its
4-byte big-endian length.
"""

from __future__ import annotations

import enum
import hashlib
import json
import struct
from dataclasses import dataclass

from ..ckks.errors import MalformedFrame
from ..ckks.params import CkksParams


class ProtocolError(RuntimeError):
    pass


class ProtocolViolation(ProtocolError):
    pass


class TransportTimeout(ProtocolError, TimeoutError):
    pass


class MissingScore(ProtocolError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"no score for candidates {self.missing}")


class MsgType(enum.IntEnum):
    EVAL_VECTOR = 1
    CANDIDATE_GRADIENT = 2
    SCORE_RESULT = 3
    ACK = 4
    ERROR = 5
    SESSION_HEADER = 6
    KEY_MATERIAL = 7


# KEY_MATERIAL sequence numbers
KEY_PUBLIC = 0
KEY_EVAL = 1

_HEAD = struct.Struct(">16sBII")


@dataclass(frozen=True)
class SessionMessage:
    session_id: bytes
    msg_type: MsgType
    sequence: int
    payload: bytes = b""

    def __post_init__(self):
        if len(self.session_id) != 16:
            raise ValueError("session_id must be 16 bytes")
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        if not 0 <= self.sequence < 2 ** 32:
            raise ValueError("sequence out of u32 range")

    def to_bytes(self) -> bytes:
        return _HEAD.pack(self.session_id, int(self.msg_type), self.sequence, len(self.payload)) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "SessionMessage":
        if len(data) < _HEAD.size:
            raise MalformedFrame(f"frame of {len(data)} bytes is shorter than the header")
        sid, mtype, seq, plen = _HEAD.unpack_from(data)
        if len(data) != _HEAD.size + plen:
            raise MalformedFrame(f"payload length {plen} disagrees with frame size {len(data)}")
        try:
            mtype = MsgType(mtype)
        except ValueError:
            raise MalformedFrame(f"unknown message type {mtype}") from None
        return cls(sid, mtype, seq, bytes(data[_HEAD.size:]))

    def __len__(self):
        return _HEAD.size + len(self.payload)


def session_id_from_seed(seed: int) -> bytes:
    return hashlib.sha256(b"tip-session:" + str(int(seed)).encode()).digest()[:16]


# -- session header --------------------------------------------------------

_HDR = struct.Struct(">32sI32sI")


@dataclass(frozen=True)
class SessionHeader:
    """What the buyer publishes so mismatched sellers fail fast."""

    params: CkksParams
    k: int
    projection_checksum: bytes

    def to_bytes(self) -> bytes:
        doc = self.params.canonical_json().encode()
        return _HDR.pack(self.params.params_hash, self.k, self.projection_checksum, len(doc)) + doc

    @classmethod
    def from_bytes(cls, data: bytes) -> "SessionHeader":
        if len(data) < _HDR.size:
            raise MalformedFrame("truncated session header")
        phash, k, checksum, doc_len = _HDR.unpack_from(data)
        doc = data[_HDR.size:]
        if len(doc) != doc_len:
            raise MalformedFrame("session header length mismatch")
        params = CkksParams.from_dict(json.loads(doc))
        if params.params_hash != phash:
            raise MalformedFrame("params hash does not match the embedded parameters")
        return cls(params, k, checksum)
