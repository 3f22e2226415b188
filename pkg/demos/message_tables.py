"""Message counts for 100 clients over 100 rounds, next to the reference numbers.

Takes about two minutes; SecAgg's all-pairs share exchange dominates.
"""

# %%
from secagglab import tables
from secagglab.simnet import DOWN, UP

ledgers = tables.nd_ledgers()

# %% counts do not depend on model size, so a one-element model is enough
for direction, reference in ((UP, tables.CLIENT_MESSAGES), (DOWN, tables.SERVER_MESSAGES)):
    print(f"\n{direction} messages")
    for proto, expected in reference.items():
        got = [ledgers[proto].messages(direction, upto=n) for n in tables.CHECKPOINTS]
        mark = "ok" if tuple(got) == expected else "MISMATCH"
        print(f"  {proto:<11} {got}  {mark}")

# %% bytes are re-priced for 2048-bit keys and the 784-200-200-10 network
print("\nserver MB at round 100")
for proto in tables.PROTOCOLS:
    priced = ledgers[proto].reprice(2048, 199_210)
    print(f"  {proto:<11} {priced.bytes(DOWN) / tables.MB:9.3f}   reference {tables.SERVER_MEGABYTES[proto][-1]}")

# %% the same check the CLI runs
failed = [c for c in tables.verify_tables(ledgers) if not c.passed]
print("\nfailing cells:", *failed, sep="\n  ")
