"""One client drops in round 2: ACCESS-FL re-pairs, SecAgg reconstructs."""

# %%
from secagglab.simnet import DOWN, UP, DropoutSchedule, run_experiment
from secagglab.wire import SERVER_ID

schedule = DropoutSchedule(drops={2: frozenset({4})})

# %% ACCESS-FL: the server announces the survivors and they upload again with a new distance
result = run_experiment("accessfl", 10, 3, 8, schedule)
for event in result.trace.events:
    # client 0's uploads and the server's survivor announcement
    if event.round == 2 and event.sender in (0, SERVER_ID) and event.kind != "GLOBAL_MODEL":
        print(event)
print("round 2 attempts:", result.outcomes[1].attempts, "participants:", result.outcomes[1].participants)

# %% SecAgg: survivors reveal shares of the dropped client's masking key instead
result = run_experiment("secagg", 10, 3, 8, schedule)
reveals = [e for e in result.trace.events if e.kind == "SHARE_REVEAL" and e.round == 2]
print("SecAgg reveal messages in round 2:", len(reveals))

# %% what a departure every ten rounds does to the totals
periodic = DropoutSchedule.periodic(10, 100, 100, permanent=True)
ledger = run_experiment("accessfl", 100, 100, 1, periodic, keep_aggregates=False).ledger
print("client uploads, first attempts:", ledger.messages(UP, first_attempt_only=True))
print("client uploads, with re-sends  :", ledger.messages(UP))
print("server messages                :", ledger.messages(DOWN))
