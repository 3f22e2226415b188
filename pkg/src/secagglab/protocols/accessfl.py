"""Two-partner pairwise masking with one key pair per client for the whole run.

Clients pick their two mask partners themselves from a seed the server
never holds.  The server only ever sums masked models; when an upload is
missing it announces the survivors and waits for re-masked uploads.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..crypto import CryptoProfile, key_gen, prg_blocks
from ..errors import AbortRound, ExperimentFailure, ProtocolError, ProtocolOrderError
from ..masking import STRICT, MaskedModel, QuantizedModel, build_masked_model, ring_sum
from ..pairing import (
    DEFAULT_MAX_RETRIES,
    MIN_PARTICIPANTS,
    WINDOW,
    PairingContext,
    pair_indices,
    repair_after_dropout,
    repair_distance,
    round_distance,
)
from ..simnet import RoundOutcome
from ..wire import SERVER_ID, Kind, PayloadReader, PayloadWriter, ProtocolMessage
from .base import (
    Session,
    derive_seed,
    global_model_message,
    participant_update_message,
    read_global_model,
    read_participants,
)


class AccessClient:
    def __init__(self, client_id: int, profile: CryptoProfile, pairing_seed: bytes, *, key_seed: bytes,
                 prg_profile: str = STRICT, history_mode: str = WINDOW,
                 max_retries: int = DEFAULT_MAX_RETRIES):
        self.client_id = client_id
        self.profile = profile
        self._pairing_seed = pairing_seed
        self._key_seed = key_seed
        self.prg_profile = prg_profile
        self.history_mode = history_mode
        self.max_retries = max_retries
        self.phase = "new"
        self.keys = None
        self.peer_keys: dict[int, int] = {}
        self.history: tuple[int, ...] = ()
        self.global_model = None
        self.ops = Counter()
        self._ctx = None
        self._roster = None
        self._weights = None
        self._round = None

    def init(self, initial_global: ProtocolMessage) -> ProtocolMessage:
        """Generate the run's only key pair and announce the public half."""
        if self.phase != "new":
            raise ProtocolOrderError(f"client {self.client_id} already initialised")
        self.global_model = initial_global
        self.keys = key_gen(self.profile.dh, self._key_seed)
        self.ops["keygen"] += 1
        self.ops["modexp"] += 1
        self.phase = "awaiting_keys"
        w = PayloadWriter(self.profile).key(self.keys.public_key)
        return ProtocolMessage.build(Kind.PUBLIC_KEY, self.client_id, initial_global.round_number, w)

    def receive(self, msg: ProtocolMessage):
        if msg.kind == Kind.PUBLIC_KEY_LIST:
            if self.phase != "awaiting_keys":
                raise ProtocolOrderError("unexpected public key list")
            r = PayloadReader(msg.payload, self.profile)
            for _ in range(r.u32()):
                cid = r.u32()
                self.peer_keys[cid] = r.key()
            self.phase = "ready"
            return None
        if msg.kind == Kind.GLOBAL_MODEL:
            self.global_model = msg
            return None
        if msg.kind == Kind.PARTICIPANT_UPDATE:
            return self.repair(read_participants(msg))
        raise ProtocolError(f"client cannot handle {msg.kind.name}")

    def _mask(self, distance: int) -> ProtocolMessage:
        roster = self._roster
        own = roster.index(self.client_id)
        assignment = pair_indices(own, distance, len(roster))
        publics = tuple(self.peer_keys.get(roster[p]) for p in (assignment.first_pair, assignment.second_pair))
        masked = build_masked_model(self._weights, assignment, self.keys, publics, self.profile.dh,
                                    self.prg_profile, roster=roster, round_number=self._round)
        self.ops["modexp"] += 2
        self.ops["prg_calls"] += 2
        self.ops["prg_blocks"] += 2 * prg_blocks(self._weights.dimension)
        w = PayloadWriter().masked_model(masked)
        return ProtocolMessage.build(Kind.MASKED_MODEL, self.client_id, self._round, w)

    def masked_round(self, round_number: int, roster, weights: QuantizedModel) -> ProtocolMessage:
        if self.phase != "ready":
            raise ProtocolOrderError("public key list not received yet")
        ctx = PairingContext(len(roster), round_number, self._pairing_seed, self.history,
                             mode=self.history_mode, max_retries=self.max_retries)
        distance, ctx = round_distance(ctx)
        self.history = ctx.distance_history + (distance,)
        self._ctx, self._roster, self._weights, self._round = ctx, list(roster), weights, round_number
        return self._mask(distance)

    def repair(self, survivors) -> ProtocolMessage:
        """Re-pair among ``survivors`` and re-mask the same trained model."""
        if self._ctx is None:
            raise ProtocolOrderError("no round in progress")
        ctx = repair_after_dropout(self._ctx, survivors)
        distance, ctx = repair_distance(ctx)
        self._ctx, self._roster = ctx, list(survivors)
        return self._mask(distance)


class AccessServer:
    """Sums masked models.  It never holds key material beyond public keys."""

    def __init__(self, profile: CryptoProfile, dimension: int, max_retries: int = DEFAULT_MAX_RETRIES):
        self.profile = profile
        self.dimension = dimension
        self.max_retries = max_retries
        self.phase = "new"
        self.public_keys: dict[int, int] = {}
        self.global_model = np.zeros(dimension, dtype=np.uint32)
        self.contributors = 0
        self.stale: list[ProtocolMessage] = []
        self.ops = Counter()
        self._round = None
        self._expected: list[int] = []
        self._received: dict[int, np.ndarray] = {}
        self._attempt = 0
        self.last_participants: tuple[int, ...] = ()
        self.last_aborted = False

    def start(self, initial_model: np.ndarray, round_number: int = 1) -> ProtocolMessage:
        if self.phase != "new":
            raise ProtocolOrderError("server already started")
        self.global_model = initial_model.astype(np.uint32)
        self.phase = "keys"
        return global_model_message(round_number, self.global_model, 0)

    def receive_keys(self, msgs, round_number: int = 1) -> ProtocolMessage:
        if self.phase != "keys":
            raise ProtocolOrderError("not collecting keys")
        for m in msgs:
            if m.kind != Kind.PUBLIC_KEY:
                raise ProtocolError(f"expected PUBLIC_KEY, got {m.kind.name}")
            self.public_keys[m.sender] = PayloadReader(m.payload, self.profile).key()
        w = PayloadWriter(self.profile).u32(len(self.public_keys))
        for cid in sorted(self.public_keys):
            w.u32(cid).key(self.public_keys[cid])
        self.phase = "rounds"
        return ProtocolMessage.build(Kind.PUBLIC_KEY_LIST, SERVER_ID, round_number, w)

    def open_round(self, round_number: int, roster) -> None:
        if self.phase != "rounds":
            raise ProtocolOrderError("key list not broadcast yet")
        self._round = round_number
        self._expected = sorted(roster)
        self._received = {}
        self._attempt = 0

    def receive(self, msgs) -> None:
        for m in msgs:
            if m.kind != Kind.MASKED_MODEL:
                raise ProtocolError(f"server only accepts MASKED_MODEL, got {m.kind.name}")
            if m.round_number != self._round or m.sender not in self._expected:
                self.stale.append(m)
                continue
            self._received[m.sender] = MaskedModel.from_bytes(m.payload).elements

    def _close(self, msg: ProtocolMessage) -> ProtocolMessage:
        # anything arriving after this point is stale
        self._round = None
        return msg

    def close_attempt(self) -> tuple[str, ProtocolMessage]:
        """Barrier reached: aggregate, ask survivors to re-mask, or abort.

        Returns ``("global", msg)``, ``("update", msg)`` or ``("abort", msg)``;
        an abort re-broadcasts the previous global model.
        """
        if set(self._received) == set(self._expected):
            self.global_model = ring_sum([self._received[c] for c in self._expected])
            self.ops["ring_adds"] += len(self._expected)
            self.contributors = len(self._expected)
            self.last_participants, self.last_aborted = tuple(self._expected), False
            return "global", self._close(global_model_message(self._round, self.global_model, self.contributors))
        survivors = sorted(self._received)
        self._attempt += 1
        if self._attempt > self.max_retries or len(survivors) < MIN_PARTICIPANTS:
            self.last_participants, self.last_aborted = (), True
            return "abort", self._close(global_model_message(self._round, self.global_model, self.contributors))
        self._expected, self._received = survivors, {}
        return "update", participant_update_message(self._round, survivors)


class AccessFLSession(Session):
    name = "accessfl"

    def __init__(self, client_ids, profile, network, *, seed=0, dimension, schedule=None,
                 pairing_seed: bytes | None = None, prg_profile: str = STRICT,
                 history_mode: str = WINDOW, max_retries: int = DEFAULT_MAX_RETRIES, **kw):
        super().__init__(client_ids, profile, network, seed=seed, dimension=dimension,
                         **({"schedule": schedule} if schedule is not None else {}))
        # injected out of band into every client, never into the server
        self._pairing_seed = pairing_seed if pairing_seed is not None else derive_seed(seed, "pairing")
        self.clients = {
            c: AccessClient(c, profile, self._pairing_seed, key_seed=derive_seed(seed, "key", c),
                            prg_profile=prg_profile, history_mode=history_mode, max_retries=max_retries)
            for c in self.client_ids
        }
        self.server = AccessServer(profile, dimension, max_retries)

    def entities(self):
        out = {f"client:{c}": cl for c, cl in self.clients.items()}
        out["server"] = self.server
        return out

    def setup(self, initial_model):
        before = self._snapshot()
        everyone = self.roster(1)
        self.net.broadcast(self.server.start(initial_model), everyone)
        for c in everyone:
            for m in self.net.collect(c):
                self.net.send(self.clients[c].init(m), SERVER_ID)
        key_list = self.server.receive_keys(self.net.collect(SERVER_ID))
        self.net.broadcast(key_list, everyone)
        for c in everyone:
            for m in self.net.collect(c):
                self.clients[c].receive(m)
        self.global_model = self.server.global_model
        self._record_ops(0, before)

    def run_round(self, round_number, models):
        roster = self.roster(round_number)
        if len(roster) < MIN_PARTICIPANTS:
            raise ExperimentFailure(f"only {len(roster)} clients enrolled", round_number)
        before = self._snapshot()
        self.server.open_round(round_number, roster)
        failing = self.schedule.failing(round_number)
        delayed = self.schedule.delayed(round_number)
        for c in roster:
            msg = self.clients[c].masked_round(round_number, roster, QuantizedModel(models[c]))
            if c in delayed:
                self.net.send(msg, SERVER_ID, late=True)
            elif c not in failing:
                self.net.send(msg, SERVER_ID)
        attempt = 0
        while True:
            self.server.receive(self.net.collect(SERVER_ID))
            status, out = self.server.close_attempt()
            if status != "update":
                break
            attempt += 1
            survivors = read_participants(out)
            self.net.broadcast(out, survivors)
            failing_now = self.schedule.resend_failing(round_number, attempt)
            for c in survivors:
                for m in self.net.collect(c):
                    try:
                        reply = self.clients[c].receive(m)
                    except AbortRound as exc:  # server applies the same rule; keep them in step
                        raise ProtocolError(f"client {c} aborted while server continued: {exc}") from exc
                    if reply is not None and c not in failing_now:
                        self.net.send(reply, SERVER_ID, resend=True)
        self.net.broadcast(out, roster)
        for c in roster:
            for m in self.net.collect(c):
                self.clients[c].receive(m)
        self.server.receive(self.net.collect_late())
        self.global_model = self.server.global_model
        self._record_ops(round_number, before)
        aggregate, _ = read_global_model(out, self.dimension)
        return RoundOutcome(round_number, self.server.last_participants, aggregate,
                            aborted=status == "abort", attempts=attempt + 1)
