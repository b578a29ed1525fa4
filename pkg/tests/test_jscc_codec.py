import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from saoosc import numkit as nk
from saoosc.importance import importance_weights
from saoosc.jscc_codec import (FULL_V, TOY_V, JsccConfig, JsccModel, RateConfig, SymbolStream,
                               allocate, c1, c2, decode, decode_stream, dump_stream, encode,
                               encode_stream, jscc_loss, l1_norm, load_stream, quantize_rate)


def nearest_tie_down_oracle(r, V):
    """Scan V in ascending order, keep the first element at minimal distance."""
    best, dist = None, None
    for v in V:
        d = abs(r - v)
        if dist is None or d < dist:
            best, dist = v, d
    return best


def test_c1_and_c2():
    assert c1(0.0, 0.3) == 0.0
    assert c1(100.0, 0.5) == 50.0
    np.testing.assert_allclose(c1(np.array([1.0, 2.0]), 0.7) + c1(np.array([3.0, 4.0]), 0.7),
                               c1(np.array([4.0, 6.0]), 0.7))
    assert c2(3, 2.0) == 2.0 and c2(2, 2.0) == 0.0 and c2(1, 2.0) == -2.0 and c2(0, 2.0) == 0.0
    with pytest.raises(ValueError):
        c2(4, 1.0)
    with pytest.raises(ValueError):
        c2(np.array([1.5]), 1.0)


def test_quantizer_examples_full_v():
    assert quantize_rate(100.3, FULL_V) == 96
    assert quantize_rate(-5, FULL_V) == 16
    assert quantize_rate(104, FULL_V) == 96
    assert quantize_rate(1e9, FULL_V) == 256


def test_quantizer_matches_oracle_on_1e5_draws():
    rng = nk.stream(0, "quantizer")
    for V in (TOY_V, FULL_V, (3, 7, 8, 20)):
        r = rng.uniform(min(V) - 10, max(V) + 10, size=100_000)
        # also hit the exact midpoints
        mids = [(a + b) / 2 for a, b in zip(V, V[1:])]
        r[:len(mids)] = mids
        got = quantize_rate(r, V)
        want = np.array([nearest_tie_down_oracle(x, V) for x in r])
        assert np.array_equal(got, want)


def test_rate_config_validation():
    assert RateConfig().alpha == 2.0
    assert RateConfig(V=FULL_V).alpha == 16.0
    for bad in (dict(V=()), dict(V=(4, 2)), dict(alpha=-1.0), dict(alpha=100.0), dict(eta=0.0)):
        with pytest.raises(ValueError):
            RateConfig(**bad)


def test_allocate_examples():
    cfg = RateConfig(eta=0.5)
    k, cont = allocate(np.array([0.0]), np.array([0]), cfg)
    assert k.tolist() == [min(TOY_V)] and cont.tolist() == [0.0]
    k, _ = allocate(np.array([16.0, 16.0]), np.array([3, 1]), cfg)
    assert k[0] - k[1] >= TOY_V[1] - TOY_V[0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=2, max_size=30), st.floats(0.01, 1.0), st.floats(0, 14))
def test_allocation_in_v_monotone_and_ordered(es, eta, alpha):
    cfg = RateConfig(eta=eta, alpha=alpha)
    e = np.sort(np.array(es))
    for lv in range(4):
        k, _ = allocate(e, np.full(e.shape, lv), cfg)
        assert set(k.tolist()) <= set(TOY_V)
        assert np.all(np.diff(k) >= 0)
    k3, k2, k1, k0 = (allocate(e, np.full(e.shape, lv), cfg)[0] for lv in (3, 2, 1, 0))
    assert np.all(k3 >= k2) and np.array_equal(k2, k0) and np.all(k0 >= k1)


def test_allocate_shape_mismatch():
    with pytest.raises(ValueError):
        allocate(np.zeros(3), np.zeros(4, dtype=int), RateConfig())


CFG = JsccConfig(L=6, c=4, d_model=8, heads=2, n_e=1, n_d=1, c_tok=3, c_fixed=8)


@pytest.fixture(scope="module")
def model():
    return JsccModel(CFG, nk.stream(0, "jscc"))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(TOY_V), min_size=6, max_size=6), st.integers(0, 2**32 - 1))
def test_encode_decode_length_contract(model, ks, seed):
    k = np.array(ks)
    x = np.random.default_rng(seed).normal(size=(CFG.L, CFG.c))
    stream = encode_stream(x, k, model)
    assert [len(y) for y in stream.y] == ks
    assert decode_stream(stream, model).shape == (CFG.L, CFG.c)
    # changing one patch's length leaves every other length alone
    k2 = k.copy()
    k2[0] = TOY_V[0] if k[0] != TOY_V[0] else TOY_V[-1]
    other = encode_stream(x, k2, model)
    assert [len(y) for y in other.y][1:] == ks[1:]


def test_encode_is_deterministic_and_masked(model):
    x = nk.stream(1).normal(size=(2, CFG.L, CFG.c))
    k = np.array([TOY_V[:6], TOY_V[2:8]])
    a, b = encode(x, k, model).data, encode(x, k, model).data
    assert np.array_equal(a, b)
    for bi in range(2):
        for i in range(CFG.L):
            assert np.all(a[bi, i, 2 * k[bi, i]:] == 0)


def test_decode_rejects_length_mismatch(model):
    k = np.full((1, CFG.L), 4)
    y = np.zeros((1, CFG.L, 2 * CFG.k_max))
    y[0, 0, 2 * 4] = 1.0
    with pytest.raises(ValueError, match="mismatch"):
        decode(y, k, model)
    with pytest.raises(ValueError):
        SymbolStream([np.zeros(3, complex)], [4])


def test_unknown_rate_token(model):
    with pytest.raises(ValueError, match="rate token"):
        model.tokens(np.array([[5]]))


def test_rate_token_bank_has_one_distinct_token_per_length(model):
    assert model.rate_tokens.shape == (len(TOY_V), CFG.c_tok)
    idx = model.token_index(np.array(TOY_V))
    assert sorted(idx.tolist()) == list(range(len(TOY_V)))
    rows = model.tokens(np.array(TOY_V)).data
    assert len({tuple(r) for r in rows}) == len(TOY_V)


def test_stream_dump_round_trip(tmp_path, model):
    x = nk.stream(2).normal(size=(CFG.L, CFG.c))
    k = np.array([2, 16, 4, 8, 6, 2])
    stream = encode_stream(x, k, model)
    dump_stream(tmp_path / "s.bin", stream)
    back = load_stream(tmp_path / "s.bin")
    assert np.array_equal(back.k, k)
    for a, b in zip(stream.y, back.y):
        assert np.array_equal(a, b)
    raw = (tmp_path / "s.bin").read_bytes()
    assert len(raw) == 4 + 4 * CFG.L + 16 * k.sum()
    assert np.frombuffer(raw[:4], "<i4")[0] == CFG.L


def test_jscc_loss_terms():
    assert l1_norm([16, 32]) == 48
    rng = nk.stream(3)
    s, s_hat = rng.uniform(size=(1, 4, 6)), rng.uniform(size=(1, 4, 6))
    w = importance_weights([0, 1, 2, 3])[None]
    cont = np.array([[3.0, 5.0, 7.5, 9.0]])
    base = jscc_loss(s, s_hat, cont, 0.0, w).data
    assert base == pytest.approx(float(np.sum(w * ((s - s_hat) ** 2).mean(-1))), rel=1e-12)
    with_rate = jscc_loss(s, s_hat, cont, 0.01, w).data
    assert with_rate - base == pytest.approx(0.01 * 24.5, rel=1e-12)
    more = np.concatenate([cont, [[6.0]]], axis=1)
    s5, h5 = np.concatenate([s, s[:, :1]], 1), np.concatenate([s_hat, s[:, :1]], 1)   # perfect extra patch
    w5 = np.concatenate([w, [[0.0]]], axis=1)
    assert jscc_loss(s5, h5, more, 0.01, w5).data - with_rate == pytest.approx(0.06, rel=1e-9)
