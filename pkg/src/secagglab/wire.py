"""Message framing and the byte-accounting contract.

Frame: 1-byte kind, 4-byte round, 4-byte sender, 4-byte payload length,
payload.  All integers are big-endian.

Every payload is built with :class:`PayloadWriter`, which records a
:class:`Layout`: how many bytes are profile independent and how many keys,
model vectors and Shamir shares the payload holds.  A layout can therefore
be re-priced for another key size or model dimension without re-running a
protocol (see ``simnet.reprice``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .crypto import NONCE_BYTES, TAG_BYTES, CryptoProfile

FRAME_HEADER = struct.Struct(">BIII")
SERVER_ID = 0xFFFFFFFF


class Kind(IntEnum):
    PUBLIC_KEY = 1
    PUBLIC_KEY_LIST = 2
    CIPHER_SHARES = 3
    MASKED_MODEL = 4
    PARTICIPANT_UPDATE = 5
    SHARE_REVEAL = 6
    GLOBAL_MODEL = 7
    PLAIN_MODEL = 8


@dataclass(frozen=True)
class Layout:
    fixed: int = 0
    keys: int = 0
    models: int = 0
    seed_shares: int = 0
    key_shares: int = 0

    def __add__(self, other: "Layout") -> "Layout":
        return Layout(
            self.fixed + other.fixed,
            self.keys + other.keys,
            self.models + other.models,
            self.seed_shares + other.seed_shares,
            self.key_shares + other.key_shares,
        )

    def size(self, profile: CryptoProfile, dimension: int) -> int:
        return (
            self.fixed
            + self.keys * profile.key_bytes
            + self.models * 4 * dimension
            + self.seed_shares * profile.seed_share_bytes
            + self.key_shares * profile.key_share_bytes
        )


class PayloadWriter:
    def __init__(self, profile: CryptoProfile | None = None):
        self.profile = profile
        self._parts: list[bytes] = []
        self.layout = Layout()

    def _put(self, data: bytes, layout: Layout) -> "PayloadWriter":
        self._parts.append(data)
        self.layout = self.layout + layout
        return self

    def u32(self, value: int):
        return self._put(struct.pack(">I", value), Layout(fixed=4))

    def u8(self, value: int):
        return self._put(struct.pack(">B", value), Layout(fixed=1))

    def key(self, value: int):
        return self._put(value.to_bytes(self.profile.key_bytes, "big"), Layout(keys=1))

    def seed_share(self, value: int):
        return self._put(value.to_bytes(self.profile.seed_share_bytes, "big"), Layout(seed_shares=1))

    def key_share(self, value: int):
        return self._put(value.to_bytes(self.profile.key_share_bytes, "big"), Layout(key_shares=1))

    def model(self, elements: np.ndarray):
        return self._put(elements.astype(">u4").tobytes(), Layout(models=1))

    def masked_model(self, masked):
        header = masked.HEADER.pack(masked.round_number, masked.sender_index)
        self._put(header, Layout(fixed=len(header)))
        return self.model(masked.elements)

    def sealed(self, nonce: bytes, ciphertext: bytes, plaintext_layout: Layout):
        # ciphertext = plaintext || tag, so its layout is the plaintext's plus fixed overhead
        return self._put(nonce + ciphertext, plaintext_layout + Layout(fixed=NONCE_BYTES + TAG_BYTES))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class PayloadReader:
    def __init__(self, payload: bytes, profile: CryptoProfile | None = None):
        self.buf = memoryview(payload)
        self.pos = 0
        self.profile = profile

    def _take(self, n: int) -> bytes:
        out = bytes(self.buf[self.pos : self.pos + n])
        if len(out) != n:
            raise ValueError("payload truncated")
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u8(self) -> int:
        return self._take(1)[0]

    def key(self) -> int:
        return int.from_bytes(self._take(self.profile.key_bytes), "big")

    def seed_share(self) -> int:
        return int.from_bytes(self._take(self.profile.seed_share_bytes), "big")

    def key_share(self) -> int:
        return int.from_bytes(self._take(self.profile.key_share_bytes), "big")

    def model(self, dimension: int) -> np.ndarray:
        return np.frombuffer(self._take(4 * dimension), dtype=">u4").astype(np.uint32)

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def remaining(self) -> int:
        return len(self.buf) - self.pos


@dataclass(frozen=True)
class ProtocolMessage:
    kind: Kind
    sender: int
    round_number: int
    payload: bytes = field(repr=False)
    layout: Layout = Layout()

    @classmethod
    def build(cls, kind: Kind, sender: int, round_number: int, writer: PayloadWriter) -> "ProtocolMessage":
        return cls(kind, sender, round_number, writer.getvalue(), writer.layout)

    @property
    def frame_layout(self) -> Layout:
        return self.layout + Layout(fixed=FRAME_HEADER.size)

    @property
    def size(self) -> int:
        return FRAME_HEADER.size + len(self.payload)

    def encode(self) -> bytes:
        header = FRAME_HEADER.pack(int(self.kind), self.round_number, self.sender, len(self.payload))
        return header + self.payload

    @classmethod
    def decode(cls, frame: bytes) -> "ProtocolMessage":
        kind, round_number, sender, length = FRAME_HEADER.unpack_from(frame)
        payload = frame[FRAME_HEADER.size :]
        if len(payload) != length:
            raise ValueError(f"frame declares {length} payload bytes, carries {len(payload)}")
        return cls(Kind(kind), sender, round_number, bytes(payload))
