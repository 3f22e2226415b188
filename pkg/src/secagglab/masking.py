"""Fixed-point encoding into Z/2^32 and pairwise mask application."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .crypto import DhParams, KeyPair, key_agree, prg_expand
from .errors import ConfigurationError, DataError, ProtocolError
from .pairing import PairAssignment, mask_sign

MODULUS = 2**32
STRICT = "strict"  # stream label = pair identity only
SALTED = "salted"  # stream label also carries the round number


@dataclass(frozen=True)
class QuantizationConfig:
    scale: float = 2.0**16
    clip_range: float = 64.0
    modulus: int = MODULUS

    def __post_init__(self):
        if self.modulus != MODULUS:
            raise ConfigurationError("only the 2**32 ring is supported")
        if self.scale <= 0 or self.clip_range <= 0:
            raise ConfigurationError("scale and clip_range must be positive")

    def max_participants(self) -> int:
        """Largest client count whose clipped sum cannot wrap the ring."""
        return int(np.ceil(self.modulus / 2 / (self.scale * self.clip_range))) - 1

    def check_headroom(self, participant_count: int) -> None:
        if self.scale * self.clip_range * participant_count >= self.modulus / 2:
            raise ConfigurationError(
                f"{participant_count} clients can wrap the ring at scale={self.scale}, "
                f"clip_range={self.clip_range}"
            )


@dataclass(frozen=True)
class QuantizedModel:
    elements: np.ndarray
    clipped: int = 0

    @property
    def dimension(self) -> int:
        return int(self.elements.shape[0])


@dataclass(frozen=True)
class MaskedModel:
    elements: np.ndarray
    round_number: int
    sender_index: int

    HEADER = struct.Struct(">II")

    def to_bytes(self) -> bytes:
        return self.HEADER.pack(self.round_number, self.sender_index) + self.elements.astype(">u4").tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "MaskedModel":
        round_number, sender = cls.HEADER.unpack_from(payload)
        elements = np.frombuffer(payload, dtype=">u4", offset=cls.HEADER.size).astype(np.uint32)
        return cls(elements, round_number, sender)


def quantize(weights, cfg: QuantizationConfig = QuantizationConfig()) -> QuantizedModel:
    x = np.asarray(weights, dtype=np.float64).ravel()
    if not np.all(np.isfinite(x)):
        raise DataError("weights contain NaN or infinity")
    clipped = int(np.count_nonzero(np.abs(x) > cfg.clip_range))
    x = np.clip(x, -cfg.clip_range, cfg.clip_range) * cfg.scale
    # round half away from zero, identical on every platform
    q = (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)
    return QuantizedModel((q % MODULUS).astype(np.uint32), clipped)


def dequantize(model, cfg: QuantizationConfig = QuantizationConfig(), divisor: int = 1) -> np.ndarray:
    if divisor < 1:
        raise ConfigurationError("divisor must be >= 1")
    elements = model.elements if hasattr(model, "elements") else np.asarray(model, dtype=np.uint32)
    signed = elements.astype(np.int64)
    signed[signed >= MODULUS // 2] -= MODULUS
    return signed / (cfg.scale * divisor)


def ring_sum(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise sum mod 2^32 (uint32 arithmetic wraps)."""
    out = np.zeros_like(vectors[0], dtype=np.uint32)
    for v in vectors:
        out += v
    return out


def pair_label(id_a: int, id_b: int, round_number: int, profile: str = STRICT) -> bytes:
    """PRG stream label for the unordered pair {id_a, id_b}."""
    lo, hi = sorted((id_a, id_b))
    label = b"pair|" + struct.pack(">II", lo, hi)
    if profile == SALTED:
        label += struct.pack(">I", round_number)
    elif profile != STRICT:
        raise ConfigurationError(f"unknown PRG profile {profile!r}")
    return label


def apply_signed_mask(acc: np.ndarray, mask: np.ndarray, sign: int) -> None:
    if sign > 0:
        acc += mask
    else:
        acc -= mask


def build_masked_model(
    w: QuantizedModel,
    assignment: PairAssignment,
    own_keys: KeyPair,
    peer_publics: tuple[int | None, int | None],
    params: DhParams,
    prg_profile: str = STRICT,
    *,
    roster: Sequence[int],
    round_number: int,
    expand: Callable[[bytes, int, bytes], np.ndarray] = prg_expand,
) -> MaskedModel:
    """Mask ``w`` with the two pairwise streams of ``assignment``.

    ``roster`` maps ring positions to stable client ids; the ids (not the
    positions) label the PRG stream so a pair keeps its stream across
    re-indexing.  ``expand`` can be replaced to zero the masks in tests.
    """
    i = assignment.own_index
    out = w.elements.copy()
    for partner, pk in zip((assignment.first_pair, assignment.second_pair), peer_publics):
        if pk is None:
            raise ProtocolError(f"no public key for partner position {partner}")
        secret = key_agree(own_keys.private_key, pk, params)
        label = pair_label(roster[i], roster[partner], round_number, prg_profile)
        mask = expand(secret.byte_encoding, w.dimension, label)
        apply_signed_mask(out, mask, mask_sign(i, partner))
    return MaskedModel(out, round_number, roster[i])
