"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary
lines are printed at the end of the session. Criteria 8, 9 and 11 need the
default toy regimen, which is trained once and cached in ``.pytest_cache``.
"""
import filecmp
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE, check_op, directional_check
from test_hv_codec import bin_mass_oracle
from test_importance import _random_scene, brute_force_patch_levels
from test_jscc_codec import nearest_tie_down_oracle

from saoosc import numkit as nk
from saoosc import pipeline as P
from saoosc.channel import ChannelConfig, awgn, awgn_batch, normalize_power, normalize_power_batch
from saoosc.hv_codec import (FactorizedPrior, HvConfig, HvModel, conditional_bin_prob, hv_loss,
                             inverse_vectorize, sa_entropy, vectorize)
from saoosc.importance import ObjectImportance, agreement, importance_weights, object_to_patch
from saoosc.jscc_codec import (FULL_V, TOY_V, JsccConfig, JsccModel, RateConfig, SymbolStream, allocate,
                               decode, encode, jscc_loss, quantize_rate, symbol_mask)
from saoosc.metrics import category_psnr_from, psnr_per_patch, read_report_csv, sad_from_psnr
from saoosc.scene import tokenize

SEEDS = range(10)


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# ---------------------------------------------------------------------------
# 1-2 channel
# ---------------------------------------------------------------------------

def test_c01_power_constraint():
    t0 = time.perf_counter()
    rng = nk.stream(0, "acceptance", "power")
    worst = 0.0
    for _ in range(1000):
        L = int(rng.integers(1, 40))
        k = rng.choice(TOY_V, size=L)
        scale = 10.0 ** rng.uniform(-3, 3)
        s = normalize_power(SymbolStream([scale * (rng.normal(size=n) + 1j * rng.normal(size=n)) for n in k], k))
        worst = max(worst, abs(s.total_power() / s.k.sum() - 1.0))
    dt = time.perf_counter() - t0
    record(1, worst < 1e-12 and dt < 1.0, f"max |P-1| = {worst:.2e} over 1000 streams in {dt:.2f}s")


def test_c02_awgn_statistics():
    t0 = time.perf_counter()
    n = 1_000_000
    noise = awgn(SymbolStream([np.zeros(n, complex)], [n]), ChannelConfig(snr_db=10.0, seed=7)).y[0]
    power = float(np.mean(np.abs(noise) ** 2))
    corr = float(np.corrcoef(noise.real, noise.imag)[0, 1])
    dt = time.perf_counter() - t0
    ok = 0.098 <= power <= 0.102 and abs(corr) < 3 / math.sqrt(n) and dt < 5.0
    record(2, ok, f"noise power {power:.5f}, re/im corr {corr:+.2e} (3 sigma {3 / math.sqrt(n):.1e}) in {dt:.2f}s")


# ---------------------------------------------------------------------------
# 3-6 allocation, entropy model, weights, labels
# ---------------------------------------------------------------------------

def test_c03_rate_allocation():
    rng = nk.stream(0, "acceptance", "alloc")
    problems = []
    for trial in range(200):
        V = TOY_V if trial % 2 else FULL_V
        cfg = RateConfig(eta=float(rng.uniform(0.01, 2.0)), alpha=float(rng.uniform(0, 0.9 * (V[1] - V[0]) * 7)), V=V)
        e = np.sort(rng.uniform(0, 400, size=30))
        ks = {lv: allocate(e, np.full(e.shape, lv), cfg)[0] for lv in range(4)}
        if not all(set(k.tolist()) <= set(V) for k in ks.values()):
            problems.append("k outside V")
        if not all(np.all(np.diff(k) >= 0) for k in ks.values()):
            problems.append("not monotone in e")
        if not (np.all(ks[3] >= ks[2]) and np.array_equal(ks[2], ks[0]) and np.all(ks[0] >= ks[1])):
            problems.append("level ordering")
    mismatches = 0
    for V in (TOY_V, FULL_V):
        r = rng.uniform(min(V) - 10, max(V) + 10, size=100_000)
        mids = [(a + b) / 2 for a, b in zip(V, V[1:])]
        r[:len(mids)] = mids
        want = np.array([nearest_tie_down_oracle(x, V) for x in r])
        mismatches += int(np.sum(quantize_rate(r, V) != want))
    record(3, not problems and mismatches == 0,
           f"{len(problems)} allocation violations over 200 configs, {mismatches} quantizer mismatches on 2x1e5 reals")


def test_c04_entropy_model():
    worst = 0.0
    for sigma in (0.1, 1.0, 10.0):
        for mu in (0.0, 0.37, -2.8):
            span = int(math.ceil(20 * sigma)) + 1
            grid = np.arange(math.floor(mu) - span, math.ceil(mu) + span + 1, dtype=np.float64)
            p = conditional_bin_prob(grid, np.full(grid.shape, mu), np.full(grid.shape, sigma)).data
            worst = max(worst, abs(p.sum() - 1.0))
    p0 = float(conditional_bin_prob(np.array(0.0), np.array(0.0), np.array(1.0)).data)
    oracle = bin_mass_oracle(0.0, 0.0, 1.0)
    bits = sa_entropy(np.full((1, 4), 0.5)).data[0]
    ok = worst < 1e-3 and abs(p0 - 0.38292) < 1e-4 and abs(p0 - oracle) < 1e-12 and bits == 4.0
    record(4, ok, f"max |sum p - 1| = {worst:.1e}; p(0;0,1) = {p0:.6f} (erf oracle {oracle:.6f}); "
                  f"uniform 0.5 over 4 elements = {bits} bits")


def test_c05_weights_and_sad():
    rng = nk.stream(0, "acceptance", "sad")
    sums_ok = ratios_ok = bounds_ok = True
    for _ in range(100):
        lv = rng.integers(0, 4, size=int(rng.integers(1, 50)))
        w = importance_weights(lv)
        sums_ok &= abs(w.sum() - 1.0) < 1e-12
        psnr = rng.uniform(5, 60, size=lv.size)
        s = sad_from_psnr(psnr, lv)
        bounds_ok &= psnr.min() - 1e-9 <= s <= psnr.max() + 1e-9
    for lv in range(3):
        w = importance_weights([lv, lv + 1])
        ratios_ok &= w[1] / w[0] == 2.0
    hand = sad_from_psnr([0.0, 36.0], [0, 3])
    ok = sums_ok and ratios_ok and bounds_ok and hand == 32.0
    record(5, ok, f"sum w = 1: {sums_ok}; ratio 2 per level: {ratios_ok}; hand case SAD = {hand} dB; "
                  f"bounded on 100 cases: {bounds_ok}")


def test_c06_patch_labeling():
    mismatches = 0
    for i in range(200):
        objs, h, w, ps = _random_scene(i)
        rng = np.random.default_rng(i)
        labels = [ObjectImportance(o.object_id, int(rng.integers(1, 4))) for o in objs]
        grid = tokenize(np.zeros((h, w, 3), dtype=np.uint8), ps)
        mismatches += int(np.sum(object_to_patch(objs, labels, grid) != brute_force_patch_levels(objs, labels, h, w, ps)))
    record(6, mismatches == 0, f"{mismatches} mismatches against the exhaustive oracle on 200 scenes")


# ---------------------------------------------------------------------------
# 7 gradients
# ---------------------------------------------------------------------------

def _block_error(block, fn, inputs, seed, only=None):
    """Full finite-difference check over a block's inputs and its parameters
    (those whose names start with one of ``only``, or all of them)."""
    names = [n for n, _ in block.named_parameters() if only is None or n.startswith(only)]
    params = dict(block.named_parameters())
    arrays = [np.array(a, dtype=np.float64) for a in inputs] + [params[n].data.copy() for n in names]
    n_in = len(inputs)

    def run(*ts):
        for n, t in zip(names, ts[n_in:]):
            setattr_param(block, n, t)
        return fn(*ts[:n_in])

    saved = {n: params[n] for n in names}
    try:
        return check_op(run, arrays, seed=seed)
    finally:
        for n in names:
            setattr_param(block, n, saved[n])


def setattr_param(module, dotted, value):
    """Swap a parameter tensor in place by its dotted name (lists index by position)."""
    *path, last = dotted.split(".")
    obj = module
    for part in path:
        obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
    if isinstance(obj, list):
        obj[int(last)] = value
    else:
        setattr(obj, last, value)


def _blocks(seed):
    rng = nk.stream(seed, "acceptance", "blocks")
    small_hv = HvConfig(rows=2, cols=3, c=4, hidden=6, patch_size=2, hyper_channels=2, prior_filters=(2, 2))
    hv = HvModel(small_hv, rng)
    jscc = JsccModel(JsccConfig(L=6, c=4, V=(1, 2, 3), d_model=4, heads=2, n_e=1, n_d=1, c_tok=2, c_fixed=3), rng)
    k = rng.choice((1, 2, 3), size=(2, 6))
    x = rng.normal(size=(2, 6, 4))
    yield "Linear", nk.Linear(5, 4, rng), lambda m, a: m(a), [rng.normal(size=(3, 5))], None
    yield "LayerNorm", nk.LayerNorm(6), lambda m, a: m(a), [rng.normal(size=(3, 6))], None
    yield "Conv2d", nk.Conv2d(2, 3, 3, rng, stride=2), lambda m, a: m(a), [rng.normal(size=(1, 2, 5, 4))], None
    yield "MultiHeadAttention", nk.MultiHeadAttention(4, 2, rng), lambda m, a: m(a), [rng.normal(size=(2, 3, 4))], None
    yield "TransformerBlock", nk.TransformerBlock(4, 2, rng), lambda m, a: m(a), [rng.normal(size=(1, 3, 4))], None
    prior = FactorizedPrior(2, rng, (2, 2))
    yield "FactorizedPrior", prior, lambda m, a: m(a), [rng.normal(0, 2, size=(1, 2, 3))], None
    yield "hv analysis", hv, lambda m, a: m.analysis(a), [rng.uniform(size=(1, 6, 12))], ("enc_",)
    yield "hv synthesis", hv, lambda m, a: m.synthesis(a), [rng.normal(size=(1, 6, 4))], ("dec_",)
    yield "hv hyper_analysis", hv, lambda m, a: m.hyper_analysis(a), [rng.normal(size=(1, 6, 4))], ("he",)
    yield "hv hyper_synthesis", hv, lambda m, a: nk.concat(list(m.hyper_synthesis(a)), axis=-1), \
        [rng.normal(size=(1, 2, 1, 2))], ("hd",)
    yield "jscc encoder", jscc, lambda m, a: encode(a, k, m), [x], ("rate_tokens", "enc_")
    mask = symbol_mask(k, 3)
    y = encode(x, k, jscc).data
    yield "jscc decoder", jscc, lambda m, a: decode(a * mask, k, m), [y], ("rate_tokens", "dec_")


def _network_errors(seed):
    cfg = HvConfig()
    hv = HvModel(cfg, nk.stream(seed, "acceptance", "hv"))
    jscc = JsccModel(JsccConfig(L=cfg.L, c=cfg.c, d_model=16), nk.stream(seed, "acceptance", "jscc"))
    data_rng = nk.stream(seed, "acceptance", "data")
    patches = data_rng.uniform(size=(2, cfg.L, cfg.patch_dim))
    levels = data_rng.integers(0, 4, size=(2, cfg.L))
    w = np.stack([importance_weights(r) for r in levels])
    k = data_rng.choice(TOY_V, size=(2, cfg.L))

    def hv_objective():
        state = vectorize(patches, hv, "train", nk.stream(seed, "noise"))
        return hv_loss(patches, inverse_vectorize(state.x_tilde, hv, "train"), state, 1e-2, w)

    def joint_objective():
        state = vectorize(patches, hv, "train", nk.stream(seed, "noise"))
        y = awgn_batch(normalize_power_batch(encode(state.x, k, jscc), k), k, 10.0, nk.stream(seed, "channel"))
        s_hat = inverse_vectorize(decode(y, k, jscc), hv, "train")
        cont = state.e * 0.05
        return (jscc_loss(patches, s_hat, cont, 1e-2, w)
                + hv_loss(patches, inverse_vectorize(state.x_tilde, hv, "train"), state, 0.0, w))

    hv_params = dict(hv.named_parameters())
    joint = {**{f"hv.{n}": p for n, p in hv_params.items()},
             **{f"jscc.{n}": p for n, p in jscc.named_parameters()}}
    return directional_check(hv_objective, hv_params, seed), directional_check(joint_objective, joint, seed)


def test_c07_gradients():
    t0 = time.perf_counter()
    block_worst, worst_name = 0.0, ""
    net_worst = 0.0
    for seed in SEEDS:
        for name, block, fn, inputs, only in _blocks(seed):
            err = _block_error(block, lambda *a, m=block, f=fn: f(m, *a), inputs, seed, only)
            if err > block_worst:
                block_worst, worst_name = err, name
        net_worst = max(net_worst, *_network_errors(seed))
    dt = time.perf_counter() - t0
    ok = block_worst < 1e-4 and net_worst < 1e-3 and dt < 120
    record(7, ok, f"block max rel err {block_worst:.1e} ({worst_name}), network max rel err {net_worst:.1e}, "
                  f"10 seeds in {dt:.0f}s")


# ---------------------------------------------------------------------------
# 8-9 default toy regimen
# ---------------------------------------------------------------------------

def _pooled(regimen, method, snr):
    """Per-patch k, PSNR and level pooled over the held-out scenes, plus per-image SAD and CBR."""
    test = regimen.test
    system = regimen.systems[method]
    txs = P.transmit_batch(test.images, test.levels, system, snr, regimen.cfg.train.seed, test.ids)
    ks, psnrs = [], []
    for i, tx in enumerate(txs):
        grid = tokenize(tx.reconstruction, regimen.cfg.data.patch_size)
        psnrs.append(psnr_per_patch(tokenize(test.images[i], regimen.cfg.data.patch_size), grid.patches))
        ks.append(tx.k)
    return (np.concatenate(ks), np.concatenate(psnrs), test.levels.ravel(),
            np.array([t.report.sad_db for t in txs]), np.array([t.report.cbr for t in txs]))


@pytest.fixture(scope="module")
def at_10db(regimen):
    return {m: _pooled(regimen, m, 10.0) for m in regimen.cfg.experiment.methods}


@pytest.mark.slow
def test_c08_end_to_end_ordering(at_10db, regimen):
    k, psnr, lv, sad, cbr = at_10db["sa_oosc"]
    cat = category_psnr_from(psnr, lv).by_level
    sym3, sym1 = float(k[lv == 3].mean()), float(k[lv == 1].mean())
    gap = cat[3] - cat[0]
    sads = {m: float(v[3].mean()) for m, v in at_10db.items()}
    cbrs = {m: float(v[4].mean()) for m, v in at_10db.items()}

    def matched(a, b):
        return abs(cbrs[a] - cbrs[b]) / cbrs[b] <= 0.05

    a = sym3 > sym1
    b = gap >= 3.0
    c = sads["sa_oosc"] >= sads["ntscc_entropy_only"] and matched("sa_oosc", "ntscc_entropy_only")
    others = [m for m in sads if m != "fixed_rate"]
    d = all(sads["fixed_rate"] < sads[m] and matched(m, "fixed_rate") for m in others)
    table = ", ".join(f"{m} SAD {sads[m]:.2f} dB @ CBR {cbrs[m]:.4f}" for m in sads)
    detail = (f"(a) symbols L3 {sym3:.2f} vs L1 {sym1:.2f} [{'ok' if a else 'no'}]; "
              f"(b) PSNR L3 {cat[3]:.2f} - bg {cat[0]:.2f} = {gap:+.2f} dB [{'ok' if b else 'no'}]; "
              f"(c) [{'ok' if c else 'no'}]; (d) [{'ok' if d else 'no'}]; {table}")
    record(8, a and b and c and d, detail)


@pytest.mark.slow
def test_c09_snr_sweep(regimen):
    means = []
    for snr in (0.0, 5.0, 10.0, 15.0, 20.0):
        _, psnr, lv, _, _ = _pooled(regimen, "sa_oosc", snr)
        means.append(float(psnr[lv == 3].mean()))
    ok = all(b >= a for a, b in zip(means, means[1:]))
    record(9, ok, "level-3 PSNR at 0/5/10/15/20 dB: " + " / ".join(f"{m:.2f}" for m in means))


# ---------------------------------------------------------------------------
# 10-11
# ---------------------------------------------------------------------------

def test_c10_agreement_evaluator():
    # object level: high 2/3, medium 1/2, low 1/1, background 0/1; overall 4/7
    ref = {1: 3, 2: 3, 3: 3, 4: 2, 5: 2, 6: 1, 7: 0}
    pred = {1: 3, 2: 3, 3: 2, 4: 2, 5: 1, 6: 1, 7: 3}
    t = agreement(pred, ref)
    want = {"high": 2 / 3, "medium": 1 / 2, "low": 1.0, "background": 0.0}
    case1 = t.per_category == want and t.overall == 4 / 7
    # patch level with an empty category: medium absent from the reference
    t2 = agreement([0, 0, 1, 3, 3, 0], [0, 1, 1, 3, 3, 3])
    case2 = t2.per_category == {"high": 2 / 3, "medium": None, "low": 1 / 2, "background": 1.0} and t2.overall == 4 / 6
    ident = agreement(ref, ref)
    case3 = ident.overall == 1.0 and all(v == 1.0 for v in ident.per_category.values())
    record(10, case1 and case2 and case3,
           f"hand case 1 {t.overall:.4f} (want {4 / 7:.4f}), hand case 2 {t2.overall:.4f} (want {4 / 6:.4f}), "
           f"identity {100 * ident.overall:.0f}%")


@pytest.mark.slow
def test_c11_benchmark_determinism(regimen, tmp_path):
    a = P.run_benchmark(regimen.cfg, tmp_path / "a", regimen.ckpt_dir)
    b = P.run_benchmark(regimen.cfg, tmp_path / "b", regimen.ckpt_dir)
    same_csv = a.read_bytes() == b.read_bytes()
    maps = sorted(p.name for p in (tmp_path / "a" / "heatmaps").iterdir())
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / "heatmaps", tmp_path / "b" / "heatmaps", maps,
                                               shallow=False)
    rows = len(read_report_csv(a))
    record(11, same_csv and not mismatch and not errors,
           f"benchmark.csv ({rows} rows) identical: {same_csv}; heatmaps identical {len(match)}/{len(maps)}")
