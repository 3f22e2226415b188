"""Protocol state machines and the session registry used by ``simnet.run_experiment``."""

from ..errors import ConfigurationError
from .accessfl import AccessClient, AccessFLSession, AccessServer
from .fedavg import FedAvgSession
from .secagg import (
    DoubleMaskClient,
    DoubleMaskServer,
    SecAggPlusSession,
    SecAggSession,
    key_reuse_attack,
    neighbor_degree,
    neighbor_graph,
)

SESSIONS = {
    "accessfl": AccessFLSession,
    "secagg": SecAggSession,
    "secaggplus": SecAggPlusSession,
    "fedavg": FedAvgSession,
}
PROTOCOLS = tuple(SESSIONS)


def make_session(protocol: str, client_ids, profile, network, **options):
    try:
        cls = SESSIONS[protocol]
    except KeyError:
        raise ConfigurationError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}") from None
    return cls(client_ids, profile, network, **options)


__all__ = [
    "AccessClient", "AccessFLSession", "AccessServer", "DoubleMaskClient", "DoubleMaskServer",
    "FedAvgSession", "PROTOCOLS", "SESSIONS", "SecAggPlusSession", "SecAggSession",
    "key_reuse_attack", "make_session", "neighbor_degree", "neighbor_graph",
]
