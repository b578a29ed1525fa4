"""Variable-length JSCC: rate allocation, rate-token conditioning and the JSCC loss.

Patch ``i`` gets ``k_i`` complex channel symbols, chosen from a small set ``V``
by quantising ``eta * e_i + C2(I_i)``. The encoder emits ``2 * max(V)`` reals
per patch (interleaved real/imaginary pairs) and masks everything past
``2 * k_i``; the decoder sees the zero-padded received vector.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numkit as nk
from .hv_codec import weighted_distortion
from .numkit import Module, Tensor

TOY_V = (2, 4, 6, 8, 10, 12, 14, 16)
FULL_V = tuple(range(16, 257, 16))


@dataclass
class RateConfig:
    eta: float = 0.15
    alpha: float | None = None          # None -> one step of V
    V: tuple[int, ...] = TOY_V

    def __post_init__(self):
        V = tuple(int(v) for v in self.V)
        if not V:
            raise ValueError("V must be non-empty")
        if any(b <= a for a, b in zip(V, V[1:])):
            raise ValueError(f"V must be strictly increasing, got {V}")
        if V[0] <= 0:
            raise ValueError(f"V must hold positive lengths, got {V}")
        self.V = V
        if self.alpha is None:
            self.alpha = float(V[1] - V[0]) if len(V) > 1 else 0.0
        if self.alpha < 0 or self.alpha > V[-1] - V[0]:
            raise ValueError(f"alpha={self.alpha} must lie in [0, max(V)-min(V)]")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")

    @property
    def k_max(self) -> int:
        return self.V[-1]


def c1(e, eta: float):
    """Entropy-proportional length term."""
    return eta * np.asarray(e, dtype=np.float64) if np.ndim(e) else eta * float(e)


_C2_SIGN = np.array([0.0, -1.0, 0.0, 1.0])


def c2(levels, alpha: float):
    """Importance offset: +alpha for level 3, -alpha for level 1, 0 for levels 2 and 0."""
    lv = np.asarray(levels)
    if not np.issubdtype(lv.dtype, np.integer) or np.any((lv < 0) | (lv > 3)):
        raise ValueError(f"importance levels must be integers in 0..3, got {levels!r}")
    out = alpha * _C2_SIGN[lv]
    return float(out) if out.ndim == 0 else out


def quantize_rate(r, V: Sequence[int]):
    """Nearest element of ``V``; clamps outside the range, ties go to the smaller length."""
    Va = np.asarray(V)
    r_arr = np.asarray(r, dtype=np.float64)
    idx = np.clip(np.searchsorted(Va, r_arr, side="left"), 1, len(Va) - 1) if len(Va) > 1 else None
    if idx is None:
        out = np.full(r_arr.shape, Va[0])
    else:
        lo, hi = Va[idx - 1], Va[idx]
        out = np.where(r_arr - lo <= hi - r_arr, lo, hi)
        out = np.where(r_arr <= Va[0], Va[0], np.where(r_arr >= Va[-1], Va[-1], out))
    out = out.astype(np.int64)
    return int(out) if out.ndim == 0 else out


def allocate(e, levels, cfg: RateConfig) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(k, continuous_rates)`` for entropies ``e`` and patch levels."""
    e = np.asarray(e, dtype=np.float64)
    levels = np.asarray(levels)
    if e.shape != levels.shape:
        raise ValueError(f"entropy shape {e.shape} != importance shape {levels.shape}")
    cont = c1(e, cfg.eta) + c2(levels, cfg.alpha)
    return quantize_rate(cont, cfg.V), cont


def l1_norm(k) -> float:
    return float(np.sum(np.abs(k)))


# ---------------------------------------------------------------------------
# symbol streams
# ---------------------------------------------------------------------------

@dataclass
class SymbolStream:
    y: list[np.ndarray]                 # per patch, complex128 of length k_i
    k: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.int64)
        if len(self.y) != len(self.k):
            raise ValueError(f"{len(self.y)} symbol vectors for {len(self.k)} lengths")
        for i, (yi, ki) in enumerate(zip(self.y, self.k)):
            if len(yi) != ki:
                raise ValueError(f"patch {i}: {len(yi)} symbols but k={ki}")

    @property
    def L(self) -> int:
        return len(self.k)

    def total_power(self) -> float:
        return float(sum(np.sum(np.abs(yi) ** 2) for yi in self.y))

    def to_padded(self, k_max: int) -> np.ndarray:
        """Interleaved real/imag array of shape (L, 2 * k_max), zero beyond ``2 k_i``."""
        out = np.zeros((self.L, 2 * k_max))
        for i, yi in enumerate(self.y):
            out[i, 0:2 * len(yi):2] = yi.real
            out[i, 1:2 * len(yi):2] = yi.imag
        return out

    @classmethod
    def from_padded(cls, reals: np.ndarray, k: Sequence[int]) -> "SymbolStream":
        k = np.asarray(k, dtype=np.int64)
        ys = [reals[i, 0:2 * ki:2] + 1j * reals[i, 1:2 * ki:2] for i, ki in enumerate(k)]
        return cls(ys, k)


def dump_stream(path: str | os.PathLike, stream: SymbolStream) -> None:
    """``<i4 L``, ``L x <i4 k``, then every symbol as a ``<f8`` (re, im) pair."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<i", stream.L))
        fh.write(np.asarray(stream.k, dtype="<i4").tobytes())
        for yi in stream.y:
            pairs = np.empty(2 * len(yi), dtype="<f8")
            pairs[0::2] = yi.real
            pairs[1::2] = yi.imag
            fh.write(pairs.tobytes())


def load_stream(path: str | os.PathLike) -> SymbolStream:
    blob = Path(path).read_bytes()
    (L,) = struct.unpack_from("<i", blob, 0)
    k = np.frombuffer(blob, dtype="<i4", count=L, offset=4).astype(np.int64)
    vals = np.frombuffer(blob, dtype="<f8", offset=4 + 4 * L)
    if vals.size != 2 * k.sum():
        raise ValueError(f"{path}: expected {2 * k.sum()} floats, found {vals.size}")
    ys, pos = [], 0
    for ki in k:
        seg = vals[pos:pos + 2 * ki]
        ys.append(seg[0::2] + 1j * seg[1::2])
        pos += 2 * ki
    return SymbolStream(ys, k)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JsccConfig:
    L: int = 36
    c: int = 16
    V: tuple[int, ...] = TOY_V
    d_model: int = 32
    heads: int = 2
    n_e: int = 2
    n_d: int = 2
    c_tok: int = 8
    c_fixed: int = 32
    lambda_jscc: float = 2e-5
    latent_scale: float = 1.0   # match the HV latent gain so the networks see unit-range inputs

    @property
    def k_max(self) -> int:
        return max(self.V)


def symbol_mask(k: np.ndarray, k_max: int) -> np.ndarray:
    """Boolean (..., 2 * k_max) mask of the reals that carry symbols."""
    return np.arange(2 * k_max) < 2 * np.asarray(k)[..., None]


class JsccModel(Module):
    """Shared transformer encoder/decoder conditioned on per-patch rate tokens."""

    def __init__(self, cfg: JsccConfig, rng: np.random.Generator):
        self.cfg = cfg
        d, kmax = cfg.d_model, cfg.k_max
        self.rate_tokens = nk.nn.param(rng.normal(0, 1.0, size=(len(cfg.V), cfg.c_tok)))
        self.enc_in = nk.Linear(cfg.c + cfg.c_tok, d, rng)
        self.enc_pos = nk.nn.param(rng.normal(0, 0.02, size=(cfg.L, d)))
        self.enc_blocks = [nk.TransformerBlock(d, cfg.heads, rng) for _ in range(cfg.n_e)]
        self.enc_head = nk.Linear(d, 2 * kmax, rng)
        self.dec_in = nk.Linear(2 * kmax, cfg.c_fixed, rng)
        self.dec_mid = nk.Linear(cfg.c_fixed + cfg.c_tok, d, rng)
        self.dec_pos = nk.nn.param(rng.normal(0, 0.02, size=(cfg.L, d)))
        self.dec_blocks = [nk.TransformerBlock(d, cfg.heads, rng) for _ in range(cfg.n_d)]
        self.dec_out = nk.Linear(d, cfg.c, rng)
        self._slot = {v: i for i, v in enumerate(cfg.V)}

    def token_index(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k)
        try:
            return np.vectorize(self._slot.__getitem__, otypes=[np.int64])(k)
        except KeyError as exc:
            raise ValueError(f"no rate token for length {exc.args[0]}; V={self.cfg.V}") from None

    def tokens(self, k: np.ndarray) -> Tensor:
        """Rate-token embeddings (B, L, c_tok); gradients reach the bank, not ``k``."""
        return self.rate_tokens[self.token_index(k)]


def encode(x, k: np.ndarray, model: JsccModel) -> Tensor:
    """Channel reals (B, L, 2 * k_max), zero past ``2 k_i`` for every patch."""
    x = nk.as_tensor(x)
    k = np.asarray(k)
    cfg = model.cfg
    if x.ndim != 3 or x.shape[1:] != (cfg.L, cfg.c) or k.shape != x.shape[:2]:
        raise nk.ShapeError(f"encode: x {x.shape} / k {k.shape} do not match (B, {cfg.L}, {cfg.c})")
    h = model.enc_in(nk.concat([x * (1.0 / cfg.latent_scale), model.tokens(k)], axis=-1)) + model.enc_pos
    for blk in model.enc_blocks:
        h = blk(h)
    return model.enc_head(h) * symbol_mask(k, cfg.k_max)


def decode(y_hat, k: np.ndarray, model: JsccModel) -> Tensor:
    """Latent estimate (B, L, c) from zero-padded received reals."""
    y_hat = nk.as_tensor(y_hat)
    k = np.asarray(k)
    cfg = model.cfg
    if y_hat.ndim != 3 or y_hat.shape[1:] != (cfg.L, 2 * cfg.k_max) or k.shape != y_hat.shape[:2]:
        raise nk.ShapeError(f"decode: y {y_hat.shape} / k {k.shape} do not match (B, {cfg.L}, {2 * cfg.k_max})")
    mask = symbol_mask(k, cfg.k_max)
    if np.any(y_hat.data[~mask] != 0):
        raise ValueError("decode: received vector has energy beyond 2*k_i reals (length/k mismatch)")
    h = model.dec_in(y_hat)
    h = model.dec_mid(nk.concat([h, model.tokens(k)], axis=-1)) + model.dec_pos
    for blk in model.dec_blocks:
        h = blk(h)
    return model.dec_out(h) * cfg.latent_scale


def encode_stream(x: np.ndarray, k: np.ndarray, model: JsccModel) -> SymbolStream:
    """Single-image convenience wrapper returning a :class:`SymbolStream`."""
    y = encode(np.asarray(x)[None], np.asarray(k)[None], model)
    return SymbolStream.from_padded(y.data[0], k)


def decode_stream(stream: SymbolStream, model: JsccModel) -> np.ndarray:
    padded = stream.to_padded(model.cfg.k_max)
    return decode(padded[None], stream.k[None], model).data[0]


def jscc_loss(patches, patches_hat, cont_rates, lambda_jscc: float, weights) -> Tensor:
    """``lambda * sum(continuous rates) + D_SA``; rates summed per image, batch-averaged.

    ``cont_rates`` is (B, L); pass a Tensor to let gradients reach the entropy model.
    """
    cont = nk.as_tensor(cont_rates)
    rate = cont.sum(axis=-1).mean() if cont.ndim > 1 else cont.sum()
    return rate * lambda_jscc + weighted_distortion(patches, patches_hat, weights)
