"""Six clients mask their models so that only the sum is visible."""

# %%
import numpy as np

from secagglab.crypto import key_gen, param_gen
from secagglab.masking import QuantizedModel, build_masked_model, dequantize, quantize, ring_sum
from secagglab.pairing import PairingContext, pair_indices, round_distance

params = param_gen(2048)
n = 6
keys = [key_gen(params, f"client-{i}".encode()) for i in range(n)]

# %% real-valued local models, quantized into the uint32 ring
rng = np.random.default_rng(0)
local = rng.normal(0, 0.5, (n, 5))
quantized = [quantize(w) for w in local]
print("client 0 quantized:", quantized[0].elements)

# %% one pairing distance per round; every client masks with two partners
d, _ = round_distance(PairingContext(n, 1, b"s" * 32))
print("distance", d)
masked = []
for i in range(n):
    a = pair_indices(i, d, n)
    partners = (keys[a.first_pair].public_key, keys[a.second_pair].public_key)
    masked.append(build_masked_model(quantized[i], a, keys[i], partners, params,
                                     roster=list(range(n)), round_number=1))
    print(f"client {i} pairs with {a.first_pair} and {a.second_pair}; upload {masked[i].elements[:2]}...")

# %% the server only adds; masks cancel exactly
total = ring_sum([m.elements for m in masked])
assert np.array_equal(total, ring_sum([q.elements for q in quantized]))
print("mean from masked uploads:", dequantize(total, divisor=n))
print("float mean             :", local.mean(axis=0))
