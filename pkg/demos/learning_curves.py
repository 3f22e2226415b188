"""ACCESS-FL against float FedAvg on the synthetic task; writes curves.csv."""

# %%
from pathlib import Path

from secagglab.trainbench import FLOAT_FEDAVG, SyntheticTask, run_learning_comparison

result = run_learning_comparison(SyntheticTask(), "accessfl", FLOAT_FEDAVG, rounds=20)

# %%
access, fedavg = result.arms
print("round  acc(accessfl)  acc(fedavg)  max|diff|")
for n, (a, b, d) in enumerate(zip(access.accuracies, fedavg.accuracies, result.max_model_diff), 1):
    print(f"{n:5d}  {a:13.3f}  {b:11.3f}  {d:.2e}")

Path("curves.csv").write_text(result.to_csv())
