"""Deterministic in-process network, dropout schedules and message accounting.

A broadcast is one message on the ledger no matter how many clients receive
it.  Time is a logical step counter; a round ends at a delivery barrier and
"delayed" messages are delivered after it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .crypto import CryptoProfile, crypto_profile
from .errors import ConfigurationError, ExperimentFailure
from .wire import SERVER_ID, Kind, Layout, ProtocolMessage

UP = "client->server"
DOWN = "server->client"
DIRECTIONS = (UP, DOWN)


# ---------------------------------------------------------------------------
# Dropout schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DropoutSchedule:
    """Scripted failures.

    ``drops``: round -> clients that miss that round's model upload and come
    back next round.  ``departures``: round -> clients that miss the upload
    and leave for good.  ``delays``: (round, client) pairs whose upload
    arrives after the barrier.  ``resend_drops``: round -> one set per re-pair
    attempt of clients that also miss the re-sent upload.
    """

    drops: Mapping[int, frozenset] = field(default_factory=dict)
    departures: Mapping[int, frozenset] = field(default_factory=dict)
    delays: frozenset = frozenset()
    resend_drops: Mapping[int, tuple] = field(default_factory=dict)

    def failing(self, round_number: int) -> frozenset:
        """Clients whose first upload in ``round_number`` never arrives in time."""
        out = set(self.drops.get(round_number, ())) | set(self.departures.get(round_number, ()))
        out |= {c for r, c in self.delays if r == round_number}
        return frozenset(out)

    def delayed(self, round_number: int) -> frozenset:
        return frozenset(c for r, c in self.delays if r == round_number)

    def departed_before(self, round_number: int) -> frozenset:
        return frozenset(c for r, cs in self.departures.items() if r < round_number for c in cs)

    def resend_failing(self, round_number: int, attempt: int) -> frozenset:
        attempts = self.resend_drops.get(round_number, ())
        return frozenset(attempts[attempt - 1]) if attempt <= len(attempts) else frozenset()

    def referenced_clients(self) -> set:
        out = {c for cs in self.drops.values() for c in cs}
        out |= {c for cs in self.departures.values() for c in cs}
        out |= {c for _, c in self.delays}
        out |= {c for tries in self.resend_drops.values() for cs in tries for c in cs}
        return out

    def validate(self, client_ids: Iterable[int]) -> None:
        unknown = self.referenced_clients() - set(client_ids)
        if unknown:
            raise ConfigurationError(f"schedule references unknown clients {sorted(unknown)}")

    def is_empty(self) -> bool:
        return not (self.drops or self.departures or self.delays or self.resend_drops)

    @classmethod
    def periodic(cls, period: int, rounds: int, clients: int, permanent: bool = False) -> "DropoutSchedule":
        """One client fails every ``period`` rounds; the k-th event hits client k-1."""
        events = {r: frozenset({(r // period - 1) % clients}) for r in range(period, rounds + 1, period)}
        return cls(departures=events) if permanent else cls(drops=events)

    @classmethod
    def parse(cls, text: str) -> "DropoutSchedule":
        """Parse the line format used by the CLI.

        ``drop R: a,b`` / ``depart R: a`` / ``delay R: a`` /
        ``resend-drop R.K: a`` ; ``#`` starts a comment.
        """
        drops, departures, resend = defaultdict(set), defaultdict(set), defaultdict(dict)
        delays = set()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.fullmatch(r"(drop|depart|delay|resend-drop)\s+(\d+)(?:\.(\d+))?\s*:\s*([\d,\s]*)", line)
            if not m:
                raise ConfigurationError(f"schedule line {lineno}: cannot parse {raw!r}")
            verb, rnd, attempt, ids = m.group(1), int(m.group(2)), m.group(3), m.group(4)
            clients = {int(x) for x in ids.replace(",", " ").split()}
            if verb == "drop":
                drops[rnd] |= clients
            elif verb == "depart":
                departures[rnd] |= clients
            elif verb == "delay":
                delays |= {(rnd, c) for c in clients}
            else:
                if attempt is None:
                    raise ConfigurationError(f"schedule line {lineno}: resend-drop needs R.K")
                resend[rnd].setdefault(int(attempt), set()).update(clients)
        resend_drops = {
            r: tuple(frozenset(tries.get(k, ())) for k in range(1, max(tries) + 1))
            for r, tries in resend.items()
        }
        return cls(
            {r: frozenset(c) for r, c in drops.items()},
            {r: frozenset(c) for r, c in departures.items()},
            frozenset(delays),
            resend_drops,
        )


NO_DROPOUTS = DropoutSchedule()


# ---------------------------------------------------------------------------
# Ledger and trace
# ---------------------------------------------------------------------------


@dataclass
class _Cell:
    messages: int = 0
    bytes: int = 0
    layout: Layout = Layout()


class MessageLedger:
    """Message counts and byte totals keyed by (round, direction, kind, resend)."""

    def __init__(self, protocol: str, profile: CryptoProfile | None = None, dimension: int | None = None):
        self.protocol = protocol
        self.profile = profile
        self.dimension = dimension
        self._cells: dict[tuple[int, str, Kind, bool], _Cell] = defaultdict(_Cell)
        self.max_round = 0

    def record(self, round_number: int, direction: str, kind: Kind, size: int, layout: Layout, resend: bool = False):
        cell = self._cells[(round_number, direction, kind, resend)]
        cell.messages += 1
        cell.bytes += size
        cell.layout = cell.layout + layout
        self.max_round = max(self.max_round, round_number)

    def _select(self, direction, upto, kind, first_attempt_only):
        for (rnd, d, k, resend), cell in self._cells.items():
            if d != direction or (upto is not None and rnd > upto):
                continue
            if kind is not None and k != kind:
                continue
            if first_attempt_only and resend:
                continue
            yield cell

    def messages(self, direction: str, upto: int | None = None, kind: Kind | None = None,
                 first_attempt_only: bool = False) -> int:
        return sum(c.messages for c in self._select(direction, upto, kind, first_attempt_only))

    def bytes(self, direction: str, upto: int | None = None, kind: Kind | None = None,
              first_attempt_only: bool = False) -> int:
        return sum(c.bytes for c in self._select(direction, upto, kind, first_attempt_only))

    def rounds(self) -> list[int]:
        return list(range(1, self.max_round + 1))

    def per_round(self) -> dict[tuple[int, str], tuple[int, int]]:
        out = {(r, d): [0, 0] for r in self.rounds() for d in DIRECTIONS}
        for (rnd, d, _, _), cell in self._cells.items():
            out[(rnd, d)][0] += cell.messages
            out[(rnd, d)][1] += cell.bytes
        return {k: tuple(v) for k, v in out.items()}

    def cumulative_rows(self) -> list[dict]:
        rows, totals = [], {d: [0, 0] for d in DIRECTIONS}
        per_round = self.per_round()
        for r in self.rounds():
            for d in DIRECTIONS:
                m, b = per_round[(r, d)]
                totals[d][0] += m
                totals[d][1] += b
                rows.append(
                    {"round": r, "protocol": self.protocol, "direction": d,
                     "messages_cum": totals[d][0], "bytes_cum": totals[d][1]}
                )
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf, ["round", "protocol", "direction", "messages_cum", "bytes_cum"], lineterminator="\n"
        )
        writer.writeheader()
        writer.writerows(self.cumulative_rows())
        return buf.getvalue()

    def reprice(self, key_size_bits: int, dimension: int) -> "MessageLedger":
        """The same message flow priced for another key size and model dimension."""
        profile = crypto_profile(key_size_bits)
        out = MessageLedger(self.protocol, profile, dimension)
        for key, cell in self._cells.items():
            out._cells[key] = _Cell(cell.messages, cell.layout.size(profile, dimension), cell.layout)
        out.max_round = self.max_round
        return out


@dataclass(frozen=True)
class TraceEvent:
    step: int
    round: int
    sender: int
    receiver: str
    kind: str
    size: int
    resend: bool = False
    late: bool = False


class RoundTrace:
    def __init__(self):
        self.events: list[TraceEvent] = []

    def append(self, event: TraceEvent):
        self.events.append(event)

    def to_lines(self) -> str:
        return "".join(json.dumps(e.__dict__, sort_keys=True) + "\n" for e in self.events)

    def digest(self) -> str:
        return hashlib.sha256(self.to_lines().encode()).hexdigest()

    def __len__(self):
        return len(self.events)


def _receiver_label(receiver) -> str:
    if receiver == SERVER_ID:
        return "server"
    if isinstance(receiver, (list, tuple, frozenset, set)):
        return "*"
    return str(receiver)


class Network:
    """Routes encoded frames between entities and keeps the books."""

    def __init__(self, protocol: str, profile: CryptoProfile | None = None, dimension: int | None = None,
                 capture: bool = False):
        self.ledger = MessageLedger(protocol, profile, dimension)
        self.trace = RoundTrace()
        self.step = 0
        self.capture = capture
        self.frames: list[bytes] = []
        self._inbox: dict[int, list[bytes]] = defaultdict(list)
        self._late: list[bytes] = []

    def _account(self, msg: ProtocolMessage, receiver, resend: bool, late: bool) -> bytes:
        frame = msg.encode()
        direction = DOWN if msg.sender == SERVER_ID else UP
        # ledger bytes are payload bytes; the 13-byte frame header is transport
        self.ledger.record(msg.round_number, direction, msg.kind, len(msg.payload), msg.layout, resend)
        self.step += 1
        self.trace.append(TraceEvent(self.step, msg.round_number, msg.sender, _receiver_label(receiver),
                                     msg.kind.name, len(msg.payload), resend, late))
        if self.capture:
            self.frames.append(frame)
        return frame

    def send(self, msg: ProtocolMessage, receiver: int, *, resend: bool = False, late: bool = False) -> None:
        frame = self._account(msg, receiver, resend, late)
        if late:
            self._late.append(frame)
        else:
            self._inbox[receiver].append(frame)

    def broadcast(self, msg: ProtocolMessage, receivers: Iterable[int]) -> None:
        receivers = tuple(receivers)
        frame = self._account(msg, receivers, False, False)
        for r in receivers:
            self._inbox[r].append(frame)

    def collect(self, receiver: int) -> list[ProtocolMessage]:
        """Drain ``receiver``'s inbox in a deterministic (sender, arrival) order."""
        frames = self._inbox.pop(receiver, [])
        msgs = [ProtocolMessage.decode(f) for f in frames]
        return sorted(msgs, key=lambda m: m.sender)

    def collect_late(self) -> list[ProtocolMessage]:
        frames, self._late = self._late, []
        return [ProtocolMessage.decode(f) for f in frames]


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


@dataclass
class RoundOutcome:
    round_number: int
    participants: tuple[int, ...]
    aggregate: np.ndarray | None
    aborted: bool = False
    attempts: int = 1


@dataclass
class ExperimentResult:
    protocol: str
    ledger: MessageLedger
    trace: RoundTrace
    global_model: np.ndarray
    outcomes: list[RoundOutcome]
    op_counts: dict
    frames: list[bytes]

    @property
    def aborted_rounds(self) -> list[int]:
        return [o.round_number for o in self.outcomes if o.aborted]


def synthetic_workload(seed: int, dimension: int) -> Callable[[int, int], np.ndarray]:
    """Deterministic per-(round, client) ring vectors standing in for trained models."""

    def workload(round_number: int, client_id: int) -> np.ndarray:
        rng = np.random.default_rng([seed, round_number, client_id])
        return rng.integers(0, 2**32, size=dimension, dtype=np.uint64).astype(np.uint32)

    return workload


def open_session(protocol: str, clients: int, model_dimension: int, schedule: DropoutSchedule | None = None,
                 seed: int = 0, *, key_size_bits: int = 5, capture: bool = False, **options):
    """A protocol session over a fresh :class:`Network`, for callers that drive rounds themselves."""
    from .protocols import make_session

    schedule = schedule or NO_DROPOUTS
    schedule.validate(range(clients))
    profile = crypto_profile(key_size_bits)
    network = Network(protocol, profile, model_dimension, capture=capture)
    return make_session(protocol, list(range(clients)), profile, network, seed=seed,
                        dimension=model_dimension, schedule=schedule, **options)


def run_experiment(
    protocol: str,
    clients: int,
    rounds: int,
    model_dimension: int,
    schedule: DropoutSchedule | None = None,
    seed: int = 0,
    *,
    key_size_bits: int = 5,
    workload: Callable[[int, int], np.ndarray] | None = None,
    keep_aggregates: bool = True,
    capture: bool = False,
    **options,
) -> ExperimentResult:
    """Run ``protocol`` end to end and return its ledger, trace and final model.

    ``workload(round, client_id)`` supplies each client's quantized model;
    the default draws uniform ring vectors from ``seed``.  Protocol specific
    keyword options are forwarded to the session constructor.
    """
    session = open_session(protocol, clients, model_dimension, schedule, seed,
                           key_size_bits=key_size_bits, capture=capture, **options)
    network = session.net
    workload = workload or synthetic_workload(seed, model_dimension)
    session.setup(np.zeros(model_dimension, dtype=np.uint32))
    outcomes = []
    for n in range(1, rounds + 1):
        models = {c: workload(n, c) for c in session.roster(n)}
        try:
            outcome = session.run_round(n, models)
        except ExperimentFailure:
            raise
        except Exception as exc:  # surface any protocol abort with its round
            raise ExperimentFailure(f"{protocol} failed in round {n}: {exc}", n) from exc
        if not keep_aggregates:
            outcome.aggregate = None
        outcomes.append(outcome)
    return ExperimentResult(protocol, network.ledger, network.trace, session.global_model, outcomes,
                            session.op_counts(), network.frames)


@dataclass(frozen=True)
class LedgerDiff:
    rows: tuple[dict, ...]

    def is_zero(self) -> bool:
        return all(r["messages_delta"] == 0 and r["bytes_delta"] == 0 for r in self.rows)

    def total(self, direction: str) -> tuple[int, int]:
        rows = [r for r in self.rows if r["direction"] == direction]
        return sum(r["messages_delta"] for r in rows), sum(r["bytes_delta"] for r in rows)


def ledger_diff(a: MessageLedger, b: MessageLedger) -> LedgerDiff:
    """Per-round deltas ``a - b``; both ledgers must cover the same rounds."""
    if a.rounds() != b.rounds():
        raise ConfigurationError(f"ledgers cover different rounds: {a.max_round} vs {b.max_round}")
    pa, pb = a.per_round(), b.per_round()
    rows = []
    for key in sorted(pa):
        (ma, ba), (mb, bb) = pa[key], pb[key]
        rows.append({"round": key[0], "direction": key[1], "messages_delta": ma - mb, "bytes_delta": ba - bb})
    return LedgerDiff(tuple(rows))
