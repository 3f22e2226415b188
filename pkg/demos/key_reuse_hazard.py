"""Why double masking needs fresh keys every round.

Client 3 is late in round 2, so the server reconstructs its masking key.
In round 3 the client is on time, so the server reconstructs its self-mask
seed.  With keys reused across rounds those two secrets together unmask the
round 3 upload.
"""

# %%
import numpy as np

from secagglab.protocols import key_reuse_attack
from secagglab.simnet import DropoutSchedule, open_session, synthetic_workload

dim = 8
workload = synthetic_workload(1, dim)


def attack(frozen):
    session = open_session("secagg", 6, dim, DropoutSchedule(delays=frozenset({(2, 3)})),
                           seed=1, key_size_bits=2048, frozen_keys=frozen)
    session.setup(np.zeros(dim, dtype=np.uint32))
    for n in (1, 2, 3):
        session.run_round(n, {c: workload(n, c) for c in session.roster(n)})
    return key_reuse_attack(session.server, 3, 3)


# %%
print("client 3 round 3 model:", workload(3, 3))
print("frozen keys recover   :", attack(True))
print("fresh keys recover    :", attack(False))
