"""Server-opaque partner selection on the sorted participant ring.

Every client derives the same distance ``d`` from a pairing seed the server
never sees, then pairs with the clients ``d`` positions ahead and behind.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import AbortRound, DomainError, ExhaustionError

MIN_PARTICIPANTS = 6
DEFAULT_MAX_RETRIES = 3

WINDOW = "window"  # exclude only the previous round's distance
ALL_HISTORY = "all"  # exclude every earlier distance, reset on exhaustion


def max_distance(participant_count: int) -> int:
    return (participant_count - 1) // 2


@dataclass(frozen=True)
class PairingContext:
    participant_count: int
    round_number: int
    pairing_seed: bytes = field(repr=False)
    distance_history: tuple[int, ...] = ()
    used_this_round: tuple[int, ...] = ()
    retry_counter: int = 0
    mode: str = WINDOW
    max_retries: int = DEFAULT_MAX_RETRIES

    def __post_init__(self):
        if self.participant_count < MIN_PARTICIPANTS:
            raise DomainError(f"need at least {MIN_PARTICIPANTS} participants")
        if self.round_number < 1:
            raise DomainError("rounds are numbered from 1")
        if self.mode not in (WINDOW, ALL_HISTORY):
            raise DomainError(f"unknown history mode {self.mode!r}")

    def excluded(self, include_history: bool = True) -> set[int]:
        out = set(self.used_this_round)
        if include_history and self.distance_history:
            if self.mode == WINDOW:
                out.add(self.distance_history[-1])
            else:
                out.update(self.distance_history)
        return out

    def allowed(self, include_history: bool = True) -> list[int]:
        excluded = self.excluded(include_history)
        return [d for d in range(1, max_distance(self.participant_count) + 1) if d not in excluded]

    def record(self, distance: int) -> "PairingContext":
        return replace(self, used_this_round=self.used_this_round + (distance,))


@dataclass(frozen=True)
class PairAssignment:
    own_index: int
    first_pair: int
    second_pair: int
    distance: int


def _keyed_words(seed: bytes, round_number: int, retry: int):
    block = 0
    while True:
        msg = b"distance|" + struct.pack(">QII", round_number, retry, block)
        digest = hmac.new(seed, msg, hashlib.sha256).digest()
        yield from struct.unpack(">8I", digest)
        block += 1


def _draw(seed: bytes, round_number: int, retry: int, allowed: Sequence[int]) -> int:
    m = len(allowed)
    limit = 2**32 - (2**32 % m)
    for word in _keyed_words(seed, round_number, retry):
        if word < limit:
            return allowed[word % m]
    raise AssertionError("unreachable")


def derive_distance(ctx: PairingContext, include_history: bool = True) -> int:
    """Deterministic distance for ``ctx``; identical on every client.

    Draws come from HMAC-SHA256 keyed by the pairing seed over
    (round, retry counter, block) and are mapped into the admissible set by
    rejection sampling.  Callers record the result with ``ctx.record``.
    """
    allowed = ctx.allowed(include_history)
    if not allowed:
        raise ExhaustionError(
            f"no admissible distance for |C|={ctx.participant_count}, "
            f"excluded={sorted(ctx.excluded(include_history))}"
        )
    return _draw(ctx.pairing_seed, ctx.round_number, ctx.retry_counter, allowed)


def round_distance(ctx: PairingContext) -> tuple[int, PairingContext]:
    """Pick the round's first distance, resetting history if it is exhausted.

    Only the all-history mode can exhaust here; the reset clears the history
    and draws again, which is the wrap-around policy.
    """
    try:
        d = derive_distance(ctx)
    except ExhaustionError:
        ctx = replace(ctx, distance_history=())
        d = derive_distance(ctx)
    return d, ctx.record(d)


def pair_indices(own_index: int, distance: int, participant_count: int) -> PairAssignment:
    if not 0 <= own_index < participant_count:
        raise DomainError(f"index {own_index} outside [0, {participant_count})")
    if not 1 <= distance <= max_distance(participant_count):
        raise DomainError(
            f"distance {distance} outside [1, {max_distance(participant_count)}]"
        )
    return PairAssignment(
        own_index,
        (own_index + distance) % participant_count,
        (own_index - distance + participant_count) % participant_count,
        distance,
    )


def mask_sign(own_index: int, partner_index: int) -> int:
    if own_index == partner_index:
        raise DomainError("a client cannot pair with itself")
    return -1 if partner_index < own_index else 1


def repair_after_dropout(ctx: PairingContext, surviving_sorted: Sequence) -> PairingContext:
    """Context for re-pairing among the survivors of the current attempt.

    The returned context keeps the round's used distances excluded and bumps
    the retry counter.  Pick the new distance with :func:`repair_distance`.
    """
    survivors = len(surviving_sorted)
    if survivors < MIN_PARTICIPANTS:
        raise AbortRound(f"only {survivors} survivors, need {MIN_PARTICIPANTS}")
    retry = ctx.retry_counter + 1
    if retry > ctx.max_retries:
        raise AbortRound(f"re-pair limit of {ctx.max_retries} exceeded")
    return replace(ctx, participant_count=survivors, retry_counter=retry)


def repair_distance(ctx: PairingContext) -> tuple[int, PairingContext]:
    """New distance after a dropout.

    Excludes the previous round's distance and every distance already used
    this round.  If the shrunken ring leaves nothing, the previous-round
    exclusion is dropped, then all but the latest used distance.  A ring of
    at least six clients always has two admissible distances, so this never
    exhausts.
    """
    try:
        d = derive_distance(ctx)
    except ExhaustionError:
        try:
            d = derive_distance(ctx, include_history=False)
        except ExhaustionError:
            # the ring has been re-indexed, so only the last attempt's distance must change
            last_only = replace(ctx, used_this_round=ctx.used_this_round[-1:])
            d = derive_distance(last_only, include_history=False)
    return d, ctx.record(d)
