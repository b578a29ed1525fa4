"""
Entropy- and importance-driven bandwidth allocation
===================================================

Per-patch channel lengths come from a scaled entropy plus an importance
offset, snapped to the supported set of lengths.
"""
import numpy as np

from saoosc.jscc_codec import FULL_V, TOY_V, RateConfig, allocate, c2, quantize_rate

print("supported lengths (toy):", TOY_V)
print("quantizer on the full set:", [int(quantize_rate(r, FULL_V)) for r in (-5, 100.3, 104, 1e9)])

cfg = RateConfig(eta=0.3)          # alpha defaults to one step of V
print("importance offsets:", {lv: c2(lv, cfg.alpha) for lv in (3, 2, 1, 0)})

e = np.linspace(0, 50, 11)
print("entropy (bits):", e)
for lv in (3, 2, 1, 0):
    k, cont = allocate(e, np.full(e.shape, lv), cfg)
    print(f"level {lv}: k = {k}")

# same entropy, different importance: the high-importance patch gets more symbols
k, _ = allocate(np.array([20.0, 20.0]), np.array([3, 1]), cfg)
print("equal entropy, levels 3 vs 1 ->", k)
