"""Key agreement, mask expansion, secret sharing and share encryption.

Everything here is a pure function of its arguments.  Integers that travel
on the wire are encoded big-endian at a fixed width so that message sizes
only depend on the active :class:`CryptoProfile`.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import ConfigurationError, InsufficientSharesError, InvalidKeyError, TamperError

try:  # about 5x faster 2048-bit exponentiation when available
    from gmpy2 import powmod as _gmp_powmod

    def _powmod(base: int, exp: int, mod: int) -> int:
        return int(_gmp_powmod(base, exp, mod))
except ImportError:  # pragma: no cover
    _powmod = pow

# RFC 3526 group 14: 2^2048 - 2^1984 - 1 + 2^64 * (floor(2^1918 * pi) + 124476), g = 2.
MODP_2048_PRIME = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD1"
    "29024E088A67CC74020BBEA63B139B22514A08798E3404DD"
    "EF9519B3CD3A431B302B0A6DF25F14374FE1356D6D51C245"
    "E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3D"
    "C2007CB8A163BF0598DA48361C55D39A69163FA8FD24CF5F"
    "83655D23DCA3AD961C62F356208552BB9ED529077096966D"
    "670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9"
    "DE2BCBF6955817183995497CEA956AE515D2261898FA0510"
    "15728E5A8AACAA68FFFFFFFFFFFFFFFF",
    16,
)

# Smallest prime above 2**127; holds 128-bit self-mask seeds.
PRIME_2_127 = 2**127 + 29
TEST_FIELD_PRIME = 257

MaskVector = np.ndarray  # uint32 elements, arithmetic mod 2**32


@dataclass(frozen=True)
class DhParams:
    prime_p: int
    generator_g: int
    key_size_bits: int

    @property
    def key_bytes(self) -> int:
        """Fixed wire width of any group element or exponent."""
        return (self.prime_p.bit_length() + 7) // 8


@dataclass(frozen=True)
class KeyPair:
    private_key: int
    public_key: int

    def __repr__(self) -> str:
        # keep private keys out of logs and tracebacks
        return f"KeyPair(public_key={self.public_key})"


@dataclass(frozen=True)
class SharedSecret:
    value: int
    width: int

    @property
    def byte_encoding(self) -> bytes:
        return self.value.to_bytes(self.width, "big")


@dataclass(frozen=True)
class SecretShares:
    shares: tuple[tuple[int, int], ...]
    threshold_t: int
    field_prime: int

    def subset(self, indices: Sequence[int]) -> list[tuple[int, int]]:
        by_index = dict(self.shares)
        return [(i, by_index[i]) for i in indices]


_GROUPS = {
    5: DhParams(23, 5, 5),
    2048: DhParams(MODP_2048_PRIME, 2, 2048),
}


def param_gen(key_size_bits: int) -> DhParams:
    """Return the fixed group for a supported key size.

    ``5`` is the toy group (p=23, g=5) used by fast tests and message-count
    experiments; ``2048`` is the RFC 3526 MODP group.
    """
    try:
        return _GROUPS[key_size_bits]
    except KeyError:
        raise ConfigurationError(
            f"unsupported key size {key_size_bits}; choose one of {sorted(_GROUPS)}"
        ) from None


def _seeded_random(seed: bytes) -> random.Random:
    return random.Random(int.from_bytes(hashlib.sha256(seed).digest(), "big"))


def key_gen(params: DhParams, rng_seed: bytes) -> KeyPair:
    sk = _seeded_random(b"key_gen|" + rng_seed).randrange(1, params.prime_p)
    return KeyPair(sk, _powmod(params.generator_g, sk, params.prime_p))


def key_agree(own_private: int, peer_public: int, params: DhParams) -> SharedSecret:
    p = params.prime_p
    if not 1 <= peer_public <= p - 1:
        raise InvalidKeyError(f"peer public key outside [1, p-1]: {peer_public}")
    if not 1 <= own_private <= p - 1:
        raise InvalidKeyError("private key outside [1, p-1]")
    return SharedSecret(_powmod(peer_public, own_private, p), params.key_bytes)


def prg_expand(seed: bytes, length: int, stream_label: bytes) -> MaskVector:
    """Expand ``seed`` into ``length`` ring elements with AES-128 in counter mode.

    The cipher key is the first 16 bytes of SHA-256(seed || label); the
    counter block starts at zero.  Keystream words are read big-endian.
    """
    if length < 1:
        raise ConfigurationError("mask length must be >= 1")
    key = hashlib.sha256(seed + stream_label).digest()[:16]
    encryptor = Cipher(algorithms.AES(key), modes.CTR(bytes(16))).encryptor()
    keystream = encryptor.update(bytes(4 * length))
    return np.frombuffer(keystream, dtype=">u4").astype(np.uint32)


def prg_blocks(length: int) -> int:
    """AES blocks consumed by :func:`prg_expand` for ``length`` elements."""
    return -(-4 * length // 16)


def shamir_split(
    secret: int, n: int, t: int, field_prime: int, rng_seed: bytes
) -> SecretShares:
    if t > n:
        raise ConfigurationError(f"threshold {t} exceeds share count {n}")
    if t < 1:
        raise ConfigurationError("threshold must be >= 1")
    if not 0 <= secret < field_prime:
        raise ConfigurationError("secret must lie in the field")
    if n >= field_prime:
        raise ConfigurationError("share count must be smaller than the field prime")
    rng = _seeded_random(b"shamir|" + rng_seed)
    coeffs = [secret] + [rng.randrange(field_prime) for _ in range(t - 1)]
    if field_prime < 2**31:
        xs = np.arange(1, n + 1, dtype=np.int64)
        acc = np.zeros(n, dtype=np.int64)
        for c in reversed(coeffs):
            acc = (acc * xs + c) % field_prime
        values = acc.tolist()
    else:
        values = []
        for x in range(1, n + 1):
            acc = 0
            for c in reversed(coeffs):
                acc = (acc * x + c) % field_prime
            values.append(acc)
    return SecretShares(tuple(zip(range(1, n + 1), values)), t, field_prime)


@lru_cache(maxsize=4096)
def _lagrange_at_zero(indices: tuple[int, ...], field_prime: int) -> tuple[int, ...]:
    weights = []
    for i in indices:
        num, den = 1, 1
        for j in indices:
            if j != i:
                num = num * j % field_prime
                den = den * (j - i) % field_prime
        weights.append(num * pow(den, -1, field_prime) % field_prime)
    return tuple(weights)


def shamir_reconstruct(shares: Sequence[tuple[int, int]], t: int, field_prime: int) -> int:
    """Interpolate the shared polynomial at zero from the first ``t`` shares."""
    if len(shares) < t:
        raise InsufficientSharesError(f"need {t} shares, got {len(shares)}")
    chosen = sorted(shares)[:t]
    indices = tuple(i for i, _ in chosen)
    if len(set(indices)) != len(indices):
        raise ConfigurationError("duplicate share indices")
    weights = _lagrange_at_zero(indices, field_prime)
    return sum(w * v for w, (_, v) in zip(weights, chosen)) % field_prime


NONCE_BYTES = 12
TAG_BYTES = 16


def _aead(key: SharedSecret) -> AESGCM:
    return AESGCM(hashlib.sha256(key.byte_encoding + b"|seal").digest()[:16])


def seal(key: SharedSecret, plaintext: bytes, nonce: bytes) -> bytes:
    """AES-GCM encrypt; the returned ciphertext carries the 16-byte tag."""
    return _aead(key).encrypt(nonce, plaintext, None)


def open_sealed(key: SharedSecret, ciphertext: bytes, nonce: bytes) -> bytes:
    try:
        return _aead(key).decrypt(nonce, ciphertext, None)
    except InvalidTag:
        raise TamperError("ciphertext failed authentication") from None


@dataclass(frozen=True)
class CryptoProfile:
    """Group plus the two Shamir fields used by the double-masking baselines.

    Self-mask seeds are shared over ``seed_field``; private keys (always
    below the group prime) are shared over ``key_field``.
    """

    name: str
    dh: DhParams
    seed_field: int
    key_field: int

    @property
    def key_bytes(self) -> int:
        return self.dh.key_bytes

    @property
    def seed_share_bytes(self) -> int:
        return (self.seed_field.bit_length() + 7) // 8

    @property
    def key_share_bytes(self) -> int:
        return (self.key_field.bit_length() + 7) // 8


def crypto_profile(key_size_bits: int) -> CryptoProfile:
    dh = param_gen(key_size_bits)
    if key_size_bits == 5:
        return CryptoProfile("test", dh, TEST_FIELD_PRIME, TEST_FIELD_PRIME)
    return CryptoProfile("production", dh, PRIME_2_127, dh.prime_p)
