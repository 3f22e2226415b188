import numpy as np
import pytest

from secagglab.crypto import key_gen, param_gen
from secagglab.errors import ConfigurationError, DataError, ProtocolError
from secagglab.masking import (
    SALTED,
    STRICT,
    MaskedModel,
    QuantizationConfig,
    QuantizedModel,
    build_masked_model,
    dequantize,
    pair_label,
    quantize,
    ring_sum,
)
from secagglab.pairing import pair_indices

CFG = QuantizationConfig()


def test_round_half_away_from_zero():
    cfg = QuantizationConfig(scale=1.0)
    q = quantize([0.5, 1.5, 2.5, -0.5, -1.5, 0.49, -0.49], cfg)
    assert dequantize(q, cfg).tolist() == [1, 2, 3, -1, -2, 0, 0]


def test_negative_values_wrap_into_ring():
    q = quantize([-1.0])
    assert q.elements.tolist() == [2**32 - 2**16]


def test_clipping_is_counted():
    q = quantize([100.0, -100.0, 1.0])
    assert q.clipped == 2
    assert dequantize(q).tolist() == [64.0, -64.0, 1.0]


def test_quantization_error_bound():
    rng = np.random.default_rng(3)
    x = rng.uniform(-60, 60, 10_000)
    assert np.max(np.abs(dequantize(quantize(x)) - x)) <= 0.5 / CFG.scale


def test_non_finite_rejected():
    with pytest.raises(DataError):
        quantize([np.nan])


def test_headroom():
    assert CFG.max_participants() == 511
    CFG.check_headroom(511)
    with pytest.raises(ConfigurationError):
        CFG.check_headroom(512)


def test_sum_of_quantized_dequantizes_to_mean():
    rng = np.random.default_rng(0)
    xs = rng.uniform(-1, 1, (10, 50))
    total = ring_sum([quantize(x).elements for x in xs])
    assert np.max(np.abs(dequantize(total, divisor=10) - xs.mean(axis=0))) <= 0.5 / CFG.scale


def test_pair_labels():
    assert pair_label(3, 9, 1) == pair_label(9, 3, 7)
    assert pair_label(3, 9, 1, SALTED) != pair_label(3, 9, 2, SALTED)
    with pytest.raises(ConfigurationError):
        pair_label(1, 2, 1, "bogus")


def test_masked_model_bytes_round_trip():
    m = MaskedModel(np.arange(5, dtype=np.uint32), 4, 17)
    back = MaskedModel.from_bytes(m.to_bytes())
    assert (back.round_number, back.sender_index) == (4, 17)
    assert np.array_equal(back.elements, m.elements)


def _masked_all(n, d, dim, profile=STRICT, roster=None, expand=None):
    params = param_gen(5)
    roster = roster or list(range(n))
    keys = [key_gen(params, bytes([i])) for i in range(n)]
    rng = np.random.default_rng(n)
    plain = [rng.integers(0, 2**32, dim, dtype=np.uint64).astype(np.uint32) for _ in range(n)]
    out = []
    for i in range(n):
        a = pair_indices(i, d, n)
        kwargs = {} if expand is None else {"expand": expand}
        out.append(build_masked_model(QuantizedModel(plain[i]), a, keys[i],
                                      (keys[a.first_pair].public_key, keys[a.second_pair].public_key),
                                      params, profile, roster=roster, round_number=2, **kwargs))
    return plain, out


@pytest.mark.parametrize("profile", [STRICT, SALTED])
def test_masks_cancel(profile):
    plain, masked = _masked_all(9, 3, 32, profile, roster=[2, 5, 6, 11, 12, 30, 31, 40, 41])
    assert np.array_equal(ring_sum([m.elements for m in masked]), ring_sum(plain))
    assert all(not np.array_equal(m.elements, p) for m, p in zip(masked, plain))
    assert [m.sender_index for m in masked] == [2, 5, 6, 11, 12, 30, 31, 40, 41]


def test_zero_expander_leaves_model_plain():
    plain, masked = _masked_all(6, 1, 8, expand=lambda seed, n, label: np.zeros(n, dtype=np.uint32))
    assert all(np.array_equal(m.elements, p) for m, p in zip(masked, plain))


def test_missing_partner_key():
    params = param_gen(5)
    kp = key_gen(params, b"x")
    with pytest.raises(ProtocolError):
        build_masked_model(QuantizedModel(np.zeros(2, np.uint32)), pair_indices(0, 1, 6), kp, (None, 3),
                           params, roster=list(range(6)), round_number=1)


def test_masked_model_looks_uniform():
    # coarse check: the mean of a masked model sits near the ring midpoint
    dim = 20_000
    params = param_gen(2048)
    keys = [key_gen(params, bytes([i])) for i in range(6)]
    a = pair_indices(0, 1, 6)
    w = QuantizedModel(quantize(np.full(dim, 0.25)).elements)
    m = build_masked_model(w, a, keys[0], (keys[1].public_key, keys[5].public_key), params,
                           roster=list(range(6)), round_number=1)
    sigma = 2**32 / np.sqrt(12 * dim)
    assert abs(m.elements.astype(np.float64).mean() - 2**31) < 3 * sigma
