"""
Power normalisation, AWGN and bandwidth ratio
=============================================
"""
import numpy as np

from saoosc import numkit as nk
from saoosc.channel import ChannelConfig, awgn, normalize_power, parse_snr, side_channel
from saoosc.jscc_codec import SymbolStream
from saoosc.metrics import cbr

rng = nk.stream(0, "demo", "channel")
k = np.array([2, 8, 16, 4])
stream = SymbolStream([5 * (rng.normal(size=n) + 1j * rng.normal(size=n)) for n in k], k)
norm = normalize_power(stream)
print("average power before", stream.total_power() / k.sum(), "after", norm.total_power() / k.sum())

# noise power on a long unit-power stream
n = 200_000
long = normalize_power(SymbolStream([rng.normal(size=n) + 1j * rng.normal(size=n)], [n]))
for snr in (0.0, 10.0, 20.0):
    rx = awgn(long, ChannelConfig(snr_db=snr, seed=1))
    err = np.mean(np.abs(rx.y[0] - long.y[0]) ** 2)
    print(f"SNR {snr:4.0f} dB: measured noise power {err:.4f} (expected {10 ** (-snr / 10):.4f})")

clean = awgn(norm, ChannelConfig(snr_db=parse_snr("inf")))
print("noiseless channel is the identity:", all(np.array_equal(a, b) for a, b in zip(clean.y, norm.y)))

# lengths travel on an error-free side channel
k_rx, info = side_channel(k, V_size=8)
print("side channel bits", info.bits, "lengths intact:", np.array_equal(k_rx, k))

# 36 patches of 8 symbols for a 48x48 RGB image
print("CBR at 8 symbols per patch:", cbr(np.full(36, 8), 48, 48))
