"""Power normalisation, AWGN and the error-free side channel for ``k``."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .jscc_codec import SymbolStream, symbol_mask
from .numkit import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float = 10.0
    seed: int = 0
    side_channel_counted_in_cbr: bool = False
    # side channel: BPSK with a rate-1/3 code -> 3 channel symbols per bit
    side_symbols_per_bit: float = 3.0

    @property
    def noise_power(self) -> float:
        """Per-complex-symbol noise variance at unit signal power (0 for ``inf``)."""
        return 0.0 if math.isinf(self.snr_db) and self.snr_db > 0 else 10.0 ** (-self.snr_db / 10.0)


def parse_snr(value) -> float:
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return float("inf")
    return float(value)


def normalize_power(stream: SymbolStream) -> SymbolStream:
    """Scale every symbol by ``sqrt(sum k / sum |y|^2)`` so the mean symbol power is 1."""
    power = stream.total_power()
    if power <= 0:
        raise ValueError("cannot normalise an all-zero symbol stream")
    s = math.sqrt(float(stream.k.sum()) / power)
    return SymbolStream([yi * s for yi in stream.y], stream.k.copy())


def awgn(stream: SymbolStream, cfg: ChannelConfig, rng: np.random.Generator | None = None) -> SymbolStream:
    """Add circularly-symmetric complex Gaussian noise of variance ``cfg.noise_power``.

    Without an explicit ``rng`` the stream is derived from ``cfg.seed``.
    """
    var = cfg.noise_power
    if var == 0.0:
        return SymbolStream([yi.copy() for yi in stream.y], stream.k.copy())
    rng = rng if rng is not None else nk.stream(cfg.seed, "awgn")
    sd = math.sqrt(var / 2.0)
    out = []
    for yi in stream.y:
        n = rng.normal(0.0, sd, size=(len(yi), 2))
        out.append(yi + (n[:, 0] + 1j * n[:, 1]))
    return SymbolStream(out, stream.k.copy())


@dataclass
class SideChannelLog:
    patches: int
    alphabet: int
    bits: float


def side_channel(k: np.ndarray, V_size: int) -> tuple[np.ndarray, SideChannelLog]:
    """Deliver ``k`` unchanged; record ``L * log2|V|`` overhead bits."""
    k = np.asarray(k, dtype=np.int64)
    bits = k.size * math.log2(V_size) if V_size > 1 else 0.0
    log.debug("side channel: %d lengths, %.1f bits", k.size, bits)
    return k.copy(), SideChannelLog(int(k.size), int(V_size), float(bits))


def side_channel_symbols(info: SideChannelLog, cfg: ChannelConfig) -> float:
    return info.bits * cfg.side_symbols_per_bit if cfg.side_channel_counted_in_cbr else 0.0


# ---------------------------------------------------------------------------
# batched, differentiable versions used in training and in the pipeline
# ---------------------------------------------------------------------------

def normalize_power_batch(y: Tensor, k: np.ndarray) -> Tensor:
    """``y`` is (B, L, 2 k_max) interleaved reals, already masked past ``2 k_i``."""
    b = y.shape[0]
    energy = (y * y).reshape(b, -1).sum(axis=1)                  # sum |y|^2 per image
    n_sym = np.asarray(k, dtype=np.float64).reshape(b, -1).sum(axis=1)
    if np.any(energy.data <= 0):
        raise ValueError("cannot normalise an all-zero symbol stream")
    scale = nk.sqrt(n_sym / energy)
    return y * scale.reshape(b, 1, 1)


def awgn_batch(y: Tensor, k: np.ndarray, snr_db: float, rng: np.random.Generator | None) -> Tensor:
    var = ChannelConfig(snr_db=snr_db).noise_power
    if var == 0.0:
        return y
    mask = symbol_mask(k, y.shape[-1] // 2)
    noise = rng.normal(0.0, math.sqrt(var / 2.0), size=y.shape) * mask
    return y + noise
