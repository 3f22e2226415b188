"""Plain federated averaging: unmasked quantized models, one upload per round."""

from __future__ import annotations

from collections import Counter

from ..masking import ring_sum
from ..simnet import RoundOutcome
from ..wire import SERVER_ID, Kind, PayloadReader, PayloadWriter, ProtocolMessage
from .base import Session, global_model_message, read_global_model


class _Entity:
    def __init__(self):
        self.ops = Counter()


class FedAvgSession(Session):
    name = "fedavg"

    def __init__(self, client_ids, profile, network, *, seed=0, dimension, schedule=None, **kw):
        super().__init__(client_ids, profile, network, seed=seed, dimension=dimension,
                         **({"schedule": schedule} if schedule is not None else {}))
        self._server = _Entity()

    def entities(self):
        return {"server": self._server}

    def setup(self, initial_model):
        self.global_model = initial_model.copy()
        self.net.broadcast(global_model_message(1, self.global_model, 0), self.roster(1))
        for c in self.roster(1):
            self.net.collect(c)

    def run_round(self, round_number, models):
        before = self._snapshot()
        roster = self.roster(round_number)
        failing = self.schedule.failing(round_number)
        delayed = self.schedule.delayed(round_number)
        for c in roster:
            msg = ProtocolMessage.build(Kind.PLAIN_MODEL, c, round_number, PayloadWriter().model(models[c]))
            if c in delayed:
                self.net.send(msg, SERVER_ID, late=True)
            elif c not in failing:
                self.net.send(msg, SERVER_ID)
        received = {m.sender: PayloadReader(m.payload).model(self.dimension)
                    for m in self.net.collect(SERVER_ID) if m.round_number == round_number}
        participants = tuple(sorted(received))
        if participants:
            self.global_model = ring_sum([received[c] for c in participants])
        self._server.ops["ring_adds"] += len(participants)
        out = global_model_message(round_number, self.global_model, len(participants))
        self.net.broadcast(out, roster)
        for c in roster:
            self.net.collect(c)
        self.net.collect_late()
        self._record_ops(round_number, before)
        return RoundOutcome(round_number, participants, read_global_model(out, self.dimension)[0])
