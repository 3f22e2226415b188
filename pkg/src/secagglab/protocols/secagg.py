"""Double-masking baselines: SecAgg over the full client set, SecAgg+ over a k-regular graph.

One round, as driven by :class:`DoubleMaskSession`:

1. every client sends two fresh public keys (encryption, masking);
2. the server broadcasts the key list (plus the neighbor graph for SecAgg+);
3. each client Shamir-splits its self-mask seed ``b`` and masking secret key
   over its holders and sends one encrypted share bundle per other holder;
4. the server forwards one batch of bundles to each client;
5. clients upload ``w + PRG(b) + sum of signed pairwise masks``;
6. the server broadcasts the surviving set C2;
7. survivors reveal seed shares for C2 and key shares for dropped peers;
8. the server unmasks and broadcasts the sum over C2.
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from ..crypto import (
    CryptoProfile,
    key_agree,
    key_gen,
    open_sealed,
    prg_blocks,
    prg_expand,
    seal,
    shamir_reconstruct,
    shamir_split,
)
from ..errors import ConfigurationError, DomainError, ExperimentFailure, ProtocolError, ProtocolOrderError
from ..masking import STRICT, MaskedModel, QuantizedModel, apply_signed_mask, pair_label
from ..pairing import mask_sign
from ..simnet import RoundOutcome
from ..wire import NONCE_BYTES, TAG_BYTES, SERVER_ID, Kind, Layout, PayloadReader, PayloadWriter, ProtocolMessage
from .base import Session, derive_seed, global_model_message, participant_update_message, read_global_model, read_participants

SELF_LABEL = b"self"
SEED_REVEAL = 0
KEY_REVEAL = 1

# sender id, recipient id, seed share, key share
SHARE_PLAINTEXT = Layout(fixed=8, seed_shares=1, key_shares=1)


def neighbor_degree(participant_count: int) -> int:
    """SecAgg+ degree k = floor(log2 |C|)."""
    return int(math.floor(math.log2(participant_count)))


def threshold(holder_count: int) -> int:
    return holder_count // 2 + 1


def neighbor_graph(ids, k: int, seed: int) -> dict[int, tuple[int, ...]]:
    """Random k-regular graph over ``ids``; raises if none exists."""
    n = len(ids)
    if k < 1 or k >= n or (k * n) % 2:
        raise ConfigurationError(f"no {k}-regular graph on {n} nodes")
    g = nx.random_regular_graph(k, n, seed=seed)
    return {ids[v]: tuple(sorted(ids[u] for u in g.neighbors(v))) for v in range(n)}


def _nonce(round_number: int, sender: int, recipient: int) -> bytes:
    return struct.pack(">III", round_number, sender, recipient)


def _sealed_len(profile: CryptoProfile) -> int:
    return NONCE_BYTES + 8 + profile.seed_share_bytes + profile.key_share_bytes + TAG_BYTES


# ---------------------------------------------------------------------------
# client
# ---------------------------------------------------------------------------


class DoubleMaskClient:
    def __init__(self, client_id: int, profile: CryptoProfile, *, seed: int,
                 prg_profile: str = STRICT, frozen_keys: bool = False):
        self.client_id = client_id
        self.profile = profile
        self.seed = seed
        self.prg_profile = prg_profile
        self.frozen_keys = frozen_keys
        self.phase = "idle"
        self.ops = Counter()
        self.global_model = None
        self._enc = self._mask_keys = None
        self._round = None

    def _fresh_keys(self, round_number: int) -> None:
        if self.frozen_keys and self._enc is not None:
            return
        tag = 0 if self.frozen_keys else round_number
        dh = self.profile.dh
        self._enc = key_gen(dh, derive_seed(self.seed, "enc", self.client_id, tag))
        self._mask_keys = key_gen(dh, derive_seed(self.seed, "mask", self.client_id, tag))
        self.ops["keygen"] += 2
        self.ops["modexp"] += 2

    def begin_round(self, round_number: int, weights: QuantizedModel) -> ProtocolMessage:
        self._fresh_keys(round_number)
        self._round = round_number
        self._weights = weights
        self._shares: dict[int, tuple[int, int, int]] = {}
        self.phase = "awaiting_keys"
        w = PayloadWriter(self.profile).key(self._enc.public_key).key(self._mask_keys.public_key)
        return ProtocolMessage.build(Kind.PUBLIC_KEY, self.client_id, round_number, w)

    def receive_key_list(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        """Split ``b`` and the masking key over the holders; one bundle per other holder."""
        if self.phase != "awaiting_keys" or msg.kind != Kind.PUBLIC_KEY_LIST:
            raise ProtocolOrderError(f"client {self.client_id} not expecting {msg.kind.name}")
        keys, model, graph = read_key_list(msg, self.profile)
        if model is not None:
            self.global_model = model
        self._keys, self._graph = keys, graph
        holders = sorted(graph[self.client_id] + (self.client_id,)) if graph else sorted(keys)
        t = threshold(len(holders))
        rnd = self._round
        rng_tag = derive_seed(self.seed, "b", self.client_id, rnd)
        self._b = int.from_bytes(rng_tag, "big") % self.profile.seed_field
        b_shares = shamir_split(self._b, len(holders), t, self.profile.seed_field, rng_tag)
        sk_shares = shamir_split(self._mask_keys.private_key, len(holders), t, self.profile.key_field,
                                 derive_seed(self.seed, "sk", self.client_id, rnd))
        self.ops["shamir_evals"] += 2 * len(holders)
        out = []
        for (point, bs), (_, ks) in zip(b_shares.shares, sk_shares.shares):
            j = holders[point - 1]
            if j == self.client_id:
                self._shares[j] = (point, bs, ks)
                continue
            plain = PayloadWriter(self.profile).u32(self.client_id).u32(j).seed_share(bs).key_share(ks)
            key = key_agree(self._enc.private_key, keys[j][0], self.profile.dh)
            nonce = _nonce(rnd, self.client_id, j)
            ct = seal(key, plain.getvalue(), nonce)
            self.ops["modexp"] += 1
            self.ops["seals"] += 1
            w = PayloadWriter(self.profile).u32(j).sealed(nonce, ct, plain.layout)
            out.append(ProtocolMessage.build(Kind.CIPHER_SHARES, self.client_id, rnd, w))
        self.phase = "awaiting_shares"
        return out

    def receive_shares(self, msg: ProtocolMessage) -> ProtocolMessage:
        """Store the forwarded bundles and upload the double-masked model."""
        if self.phase != "awaiting_shares" or msg.kind != Kind.CIPHER_SHARES:
            raise ProtocolOrderError(f"client {self.client_id} not expecting {msg.kind.name}")
        r = PayloadReader(msg.payload, self.profile)
        size = _sealed_len(self.profile)
        for _ in range(r.u32()):
            sender = r.u32()
            blob = r.raw(size)
            nonce, ct = blob[:NONCE_BYTES], blob[NONCE_BYTES:]
            if nonce != _nonce(self._round, sender, self.client_id):
                raise ProtocolError(f"bundle from {sender} carries a foreign nonce")
            key = key_agree(self._enc.private_key, self._keys[sender][0], self.profile.dh)
            self.ops["modexp"] += 1
            p = PayloadReader(open_sealed(key, ct, nonce), self.profile)
            i, j = p.u32(), p.u32()
            if (i, j) != (sender, self.client_id):
                raise ProtocolError(f"bundle addressed {i}->{j}, expected {sender}->{self.client_id}")
            point = sorted(self._holders_of(sender)).index(self.client_id) + 1
            self._shares[sender] = (point, p.seed_share(), p.key_share())
        partners = sorted(s for s in self._shares if s != self.client_id)
        dim = self._weights.dimension
        y = self._weights.elements.copy()
        y += prg_expand(self._b.to_bytes(self.profile.seed_share_bytes, "big"), dim, SELF_LABEL)
        for v in partners:
            s = key_agree(self._mask_keys.private_key, self._keys[v][1], self.profile.dh)
            mask = prg_expand(s.byte_encoding, dim, pair_label(self.client_id, v, self._round, self.prg_profile))
            apply_signed_mask(y, mask, mask_sign(self.client_id, v))
        self.ops["modexp"] += len(partners)
        self.ops["prg_calls"] += len(partners) + 1
        self.ops["prg_blocks"] += (len(partners) + 1) * prg_blocks(dim)
        self.phase = "awaiting_survivors"
        w = PayloadWriter().masked_model(MaskedModel(y, self._round, self.client_id))
        return ProtocolMessage.build(Kind.MASKED_MODEL, self.client_id, self._round, w)

    def _holders_of(self, owner: int):
        return self._keys.keys() if self._graph is None else self._graph[owner] + (owner,)

    def receive_survivors(self, msg: ProtocolMessage) -> list[ProtocolMessage]:
        """Reveal seed shares of survivors, and key shares of dropped peers if any."""
        if self.phase != "awaiting_survivors" or msg.kind != Kind.PARTICIPANT_UPDATE:
            raise ProtocolOrderError(f"client {self.client_id} not expecting {msg.kind.name}")
        survivors = set(read_participants(msg))
        seeds = [(u, p, b) for u, (p, b, _) in sorted(self._shares.items()) if u in survivors]
        keys = [(u, p, k) for u, (p, _, k) in sorted(self._shares.items()) if u not in survivors]
        out = [self._reveal(SEED_REVEAL, seeds)]
        if keys:
            out.append(self._reveal(KEY_REVEAL, keys))
        self.phase = "awaiting_global"
        return out

    def _reveal(self, kind: int, entries) -> ProtocolMessage:
        w = PayloadWriter(self.profile).u8(kind).u32(len(entries))
        for owner, point, share in entries:
            w.u32(owner).u32(point)
            w.seed_share(share) if kind == SEED_REVEAL else w.key_share(share)
        return ProtocolMessage.build(Kind.SHARE_REVEAL, self.client_id, self._round, w)

    def receive_global(self, msg: ProtocolMessage) -> None:
        if msg.kind != Kind.GLOBAL_MODEL:
            raise ProtocolError(f"client cannot handle {msg.kind.name}")
        self.global_model = msg
        self.phase = "idle"


def read_key_list(msg: ProtocolMessage, profile: CryptoProfile):
    """Decode a key list into ({id: (enc_pk, mask_pk)}, model or None, graph or None)."""
    r = PayloadReader(msg.payload, profile)
    keys = {}
    for _ in range(r.u32()):
        cid = r.u32()
        keys[cid] = (r.key(), r.key())
    model = graph = None
    if r.u8():
        dim = r.u32()
        model = r.model(dim)
    if r.u8():
        k = r.u32()
        graph = {cid: tuple(r.u32() for _ in range(k)) for cid in keys}
    return keys, model, graph


# ---------------------------------------------------------------------------
# server
# ---------------------------------------------------------------------------


@dataclass
class RoundRecord:
    """What the server holds after a round; the hazard harness reads only this."""

    public_keys: dict = field(default_factory=dict)
    partners: dict = field(default_factory=dict)
    masked: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    secret_keys: dict = field(default_factory=dict)
    survivors: tuple = ()


class DoubleMaskServer:
    def __init__(self, profile: CryptoProfile, dimension: int, *, degree=None, seed: int = 0,
                 prg_profile: str = STRICT):
        self.profile = profile
        self.dimension = dimension
        self.degree = degree  # None: full SecAgg; int or "auto": SecAgg+
        self.seed = seed
        self.prg_profile = prg_profile
        self.ops = Counter()
        self.records: dict[int, RoundRecord] = {}
        self.stale: list[ProtocolMessage] = []
        self.global_model = np.zeros(dimension, dtype=np.uint32)
        self._round = None

    def open_round(self, round_number: int, initial_model=None) -> None:
        self._round = round_number
        self._initial = initial_model
        self.record = self.records[round_number] = RoundRecord()
        self._graph = None

    def receive_keys(self, msgs) -> ProtocolMessage:
        rec = self.record
        for m in msgs:
            if m.kind != Kind.PUBLIC_KEY or m.round_number != self._round:
                raise ProtocolError(f"expected round-{self._round} PUBLIC_KEY, got {m.kind.name}")
            r = PayloadReader(m.payload, self.profile)
            rec.public_keys[m.sender] = (r.key(), r.key())
        ids = sorted(rec.public_keys)
        w = PayloadWriter(self.profile).u32(len(ids))
        for cid in ids:
            w.u32(cid).key(rec.public_keys[cid][0]).key(rec.public_keys[cid][1])
        if self._initial is None:
            w.u8(0)
        else:
            w.u8(1).u32(self.dimension).model(self._initial)
        if self.degree is None:
            w.u8(0)
            self._holders = {c: tuple(ids) for c in ids}
        else:
            k = neighbor_degree(len(ids)) if self.degree == "auto" else self.degree
            graph_seed = int.from_bytes(derive_seed(self.seed, "graph", self._round)[:8], "big")
            self._graph = neighbor_graph(ids, k, graph_seed)
            w.u8(1).u32(k)
            for cid in ids:
                for v in self._graph[cid]:
                    w.u32(v)
            self._holders = {c: tuple(sorted(self._graph[c] + (c,))) for c in ids}
        self.threshold = threshold(len(next(iter(self._holders.values()))))
        return ProtocolMessage.build(Kind.PUBLIC_KEY_LIST, SERVER_ID, self._round, w)

    def route_shares(self, msgs) -> dict[int, ProtocolMessage]:
        """One batch per key holder, containing every bundle addressed to it."""
        size = _sealed_len(self.profile)
        inbox: dict[int, list] = {c: [] for c in self.record.public_keys}
        for m in msgs:
            if m.kind != Kind.CIPHER_SHARES or m.round_number != self._round:
                raise ProtocolError(f"expected CIPHER_SHARES, got {m.kind.name}")
            r = PayloadReader(m.payload, self.profile)
            recipient = r.u32()
            if recipient not in inbox:
                raise ProtocolError(f"bundle for unknown client {recipient}")
            inbox[recipient].append((m.sender, r.raw(size)))
        out = {}
        for c, bundles in inbox.items():
            self.record.partners[c] = tuple(sorted(s for s, _ in bundles))
            w = PayloadWriter(self.profile).u32(len(bundles))
            for sender, blob in sorted(bundles):
                w.u32(sender).sealed(blob[:NONCE_BYTES], blob[NONCE_BYTES:], SHARE_PLAINTEXT)
            out[c] = ProtocolMessage.build(Kind.CIPHER_SHARES, SERVER_ID, self._round, w)
        return out

    def receive_masked(self, msgs) -> ProtocolMessage:
        rec = self.record
        for m in msgs:
            if m.kind != Kind.MASKED_MODEL or m.round_number != self._round:
                self.stale.append(m)
                continue
            rec.masked[m.sender] = MaskedModel.from_bytes(m.payload).elements
        rec.survivors = tuple(sorted(rec.masked))
        if len(rec.survivors) < self.threshold:
            raise ExperimentFailure(
                f"{len(rec.survivors)} masked models, threshold {self.threshold}", self._round
            )
        return participant_update_message(self._round, rec.survivors)

    def unmask(self, msgs) -> ProtocolMessage:
        """Reconstruct seeds of C2 and keys of dropped clients; broadcast the sum over C2."""
        rec = self.record
        seed_shares: dict[int, list] = {}
        key_shares: dict[int, list] = {}
        for m in msgs:
            if m.kind != Kind.SHARE_REVEAL or m.sender not in rec.survivors:
                raise ProtocolError(f"unexpected {m.kind.name} from {m.sender}")
            r = PayloadReader(m.payload, self.profile)
            kind = r.u8()
            target = seed_shares if kind == SEED_REVEAL else key_shares
            for _ in range(r.u32()):
                owner, point = r.u32(), r.u32()
                share = r.seed_share() if kind == SEED_REVEAL else r.key_share()
                target.setdefault(owner, []).append((point, share))
        dropped = [c for c in sorted(rec.public_keys) if c not in rec.masked]
        t = self.threshold
        for u in rec.survivors:
            rec.seeds[u] = shamir_reconstruct(seed_shares.get(u, []), t, self.profile.seed_field)
        for v in dropped:
            rec.secret_keys[v] = shamir_reconstruct(key_shares.get(v, []), t, self.profile.key_field)
        self.ops["shamir_reconstructions"] += len(rec.survivors) + len(dropped)

        dim = self.dimension
        total = np.zeros(dim, dtype=np.uint32)
        for u in rec.survivors:
            total += rec.masked[u]
            total -= prg_expand(rec.seeds[u].to_bytes(self.profile.seed_share_bytes, "big"), dim, SELF_LABEL)
            self.ops["prg_calls"] += 1
        for v in dropped:
            for u in rec.partners.get(v, ()):
                if u not in rec.masked:
                    continue
                s = key_agree(rec.secret_keys[v], rec.public_keys[u][1], self.profile.dh)
                mask = prg_expand(s.byte_encoding, dim, pair_label(u, v, self._round, self.prg_profile))
                # u added sign(u, v) * mask; take it back out
                apply_signed_mask(total, mask, -mask_sign(u, v))
                self.ops["modexp"] += 1
                self.ops["prg_calls"] += 1
        self.global_model = total
        out = global_model_message(self._round, total, len(rec.survivors))
        self._round = None
        return out

    def receive_late(self, msgs) -> None:
        self.stale.extend(msgs)


def key_reuse_attack(server: DoubleMaskServer, client_id: int, later_round: int,
                     prg_profile: str = STRICT) -> np.ndarray:
    """Try to strip both masks off ``client_id``'s upload in ``later_round``.

    Uses only server-held values: the client's masking key recovered in an
    earlier round where it was treated as dropped, and its self-mask seed
    recovered in ``later_round``.  With frozen keys the result is the
    client's plain model; with fresh keys it is still masked.
    """
    earlier = [r for r, rec in sorted(server.records.items()) if r < later_round and client_id in rec.secret_keys]
    rec = server.records.get(later_round)
    if not earlier or rec is None or client_id not in rec.seeds:
        raise DomainError(f"server never held both secrets of client {client_id}")
    sk = server.records[earlier[-1]].secret_keys[client_id]
    dim = server.dimension
    profile = server.profile
    out = rec.masked[client_id].copy()
    out -= prg_expand(rec.seeds[client_id].to_bytes(profile.seed_share_bytes, "big"), dim, SELF_LABEL)
    for v in rec.partners[client_id]:
        s = key_agree(sk, rec.public_keys[v][1], profile.dh)
        mask = prg_expand(s.byte_encoding, dim, pair_label(client_id, v, later_round, prg_profile))
        apply_signed_mask(out, mask, -mask_sign(client_id, v))
    return out


# ---------------------------------------------------------------------------
# session
# ---------------------------------------------------------------------------


class DoubleMaskSession(Session):
    name = "secagg"
    degree = None

    def __init__(self, client_ids, profile, network, *, seed=0, dimension, schedule=None,
                 prg_profile: str = STRICT, frozen_keys: bool = False, degree=None, **kw):
        super().__init__(client_ids, profile, network, seed=seed, dimension=dimension,
                         **({"schedule": schedule} if schedule is not None else {}))
        if len(self.client_ids) >= profile.seed_field:
            raise ConfigurationError(f"{len(self.client_ids)} clients exceed the share field of {profile.name}")
        self.clients = {
            c: DoubleMaskClient(c, profile, seed=seed, prg_profile=prg_profile, frozen_keys=frozen_keys)
            for c in self.client_ids
        }
        if degree is None:
            degree = self.degree
        if degree is not None:
            k = neighbor_degree(len(self.client_ids)) if degree == "auto" else degree
            n = len(self.client_ids)
            if k < 1 or k >= n or (k * n) % 2:
                raise ConfigurationError(f"no {k}-regular graph on {n} clients")
        self.server = DoubleMaskServer(profile, dimension, degree=degree, seed=seed, prg_profile=prg_profile)

    def entities(self):
        out = {f"client:{c}": cl for c, cl in self.clients.items()}
        out["server"] = self.server
        return out

    def setup(self, initial_model):
        # the initial model rides on round 1's key list
        self._initial = initial_model.astype(np.uint32)
        self.global_model = self._initial

    def run_round(self, round_number, models):
        before = self._snapshot()
        net, server = self.net, self.server
        roster = self.roster(round_number)
        failing = self.schedule.failing(round_number)
        delayed = self.schedule.delayed(round_number)
        server.open_round(round_number, self._initial if round_number == 1 else None)

        for c in roster:
            net.send(self.clients[c].begin_round(round_number, QuantizedModel(models[c])), SERVER_ID)
        net.broadcast(server.receive_keys(net.collect(SERVER_ID)), roster)
        for c in roster:
            for m in net.collect(c):
                for bundle in self.clients[c].receive_key_list(m):
                    net.send(bundle, SERVER_ID)
        for c, batch in server.route_shares(net.collect(SERVER_ID)).items():
            net.send(batch, c)
        for c in roster:
            for m in net.collect(c):
                masked = self.clients[c].receive_shares(m)
                if c in delayed:
                    net.send(masked, SERVER_ID, late=True)
                elif c not in failing:
                    net.send(masked, SERVER_ID)

        update = server.receive_masked(net.collect(SERVER_ID))
        survivors = read_participants(update)
        net.broadcast(update, survivors)
        for c in survivors:
            for m in net.collect(c):
                for reveal in self.clients[c].receive_survivors(m):
                    net.send(reveal, SERVER_ID)
        out = server.unmask(net.collect(SERVER_ID))
        net.broadcast(out, roster)
        for c in roster:
            for m in net.collect(c):
                self.clients[c].receive_global(m)
        server.receive_late(net.collect_late())
        self.global_model = server.global_model
        self._record_ops(round_number, before)
        return RoundOutcome(round_number, tuple(survivors), read_global_model(out, self.dimension)[0])


class SecAggSession(DoubleMaskSession):
    name = "secagg"
    degree = None


class SecAggPlusSession(DoubleMaskSession):
    name = "secaggplus"
    degree = "auto"
