from __future__ import annotations

import hashlib
from collections import Counter

import numpy as np

from ..crypto import CryptoProfile
from ..simnet import NO_DROPOUTS, DropoutSchedule, Network
from ..wire import SERVER_ID, Kind, PayloadReader, PayloadWriter, ProtocolMessage


def derive_seed(seed: int, *parts) -> bytes:
    text = "|".join(str(p) for p in (seed,) + parts)
    return hashlib.sha256(text.encode()).digest()


def global_model_message(round_number: int, aggregate: np.ndarray, contributors: int) -> ProtocolMessage:
    w = PayloadWriter().u32(contributors).model(aggregate)
    return ProtocolMessage.build(Kind.GLOBAL_MODEL, SERVER_ID, round_number, w)


def read_global_model(msg: ProtocolMessage, dimension: int) -> tuple[np.ndarray, int]:
    r = PayloadReader(msg.payload)
    contributors = r.u32()
    return r.model(dimension), contributors


def participant_update_message(round_number: int, participants) -> ProtocolMessage:
    w = PayloadWriter().u32(len(participants))
    for c in participants:
        w.u32(c)
    return ProtocolMessage.build(Kind.PARTICIPANT_UPDATE, SERVER_ID, round_number, w)


def read_participants(msg: ProtocolMessage) -> list[int]:
    r = PayloadReader(msg.payload)
    return [r.u32() for _ in range(r.u32())]


class Session:
    """Drives one protocol's clients and server through a :class:`Network`."""

    name = "base"

    def __init__(self, client_ids, profile: CryptoProfile, network: Network, *, seed: int = 0,
                 dimension: int, schedule: DropoutSchedule = NO_DROPOUTS):
        self.client_ids = sorted(client_ids)
        self.profile = profile
        self.net = network
        self.seed = seed
        self.dimension = dimension
        self.schedule = schedule
        self.global_model = np.zeros(dimension, dtype=np.uint32)
        self._round_ops: dict[int, dict] = {}

    def roster(self, round_number: int) -> list[int]:
        gone = self.schedule.departed_before(round_number)
        return [c for c in self.client_ids if c not in gone]

    # operation counters -------------------------------------------------

    def entities(self) -> dict:
        raise NotImplementedError

    def _snapshot(self) -> dict:
        return {name: Counter(e.ops) for name, e in self.entities().items()}

    def _record_ops(self, round_number: int, before: dict) -> None:
        after = self._snapshot()
        self._round_ops[round_number] = {
            name: dict(after[name] - before.get(name, Counter())) for name in after
        }

    def op_counts(self) -> dict[int, dict]:
        """round -> entity name -> operation -> count for that round."""
        return self._round_ops

    # lifecycle ----------------------------------------------------------

    def setup(self, initial_model: np.ndarray) -> None:
        raise NotImplementedError

    def run_round(self, round_number: int, models: dict):
        raise NotImplementedError
