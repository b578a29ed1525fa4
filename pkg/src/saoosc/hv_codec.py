"""Hyperprior variational vectorisation with a per-patch entropy estimate.

One latent vector of width ``c`` per patch. A hyper-encoder summarises the
latent map into ``z``; a hyper-decoder predicts a Gaussian (mean, scale) for
every latent element; the bin mass of each quantised element under that
Gaussian gives the per-patch entropy ``e`` (bits) used for rate allocation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .numkit import Module, Tensor


@dataclass(frozen=True)
class HvConfig:
    patch_size: int = 8
    rows: int = 6
    cols: int = 6
    c: int = 16
    hidden: int = 64
    n1_blocks: int = 1
    heads: int = 2
    hyper_channels: int = 8
    hyper_kernel: int = 3
    prior_filters: tuple[int, ...] = (3, 3, 3)
    sigma_min: float = 1e-2
    p_min: float = 1e-9
    lambda_hv: float = 2e-5
    quantize_around_mean: bool = True
    latent_gain: float = 1.0   # fixed scale between the networks' unit range and the quantisation grid

    @property
    def L(self) -> int:
        return self.rows * self.cols

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3


@dataclass
class LatentState:
    x: Tensor           # (B, L, c) continuous latents
    x_tilde: Tensor     # noisy (train) or quantised (infer) latents
    z: Tensor           # (B, cz, r', c')
    z_tilde: Tensor
    mu: Tensor          # (B, L, c)
    sigma: Tensor       # (B, L, c), >= sigma_min
    p_x: Tensor         # bin probabilities of x_tilde, (B, L, c)
    p_z: Tensor         # bin probabilities of z_tilde, same shape as z
    e: Tensor           # (B, L) SA-entropy in bits

    @property
    def rate_x(self) -> Tensor:
        """Bits for the primary latents, per image: (B,)."""
        return self.e.sum(axis=1)

    @property
    def rate_z(self) -> Tensor:
        b = self.p_z.shape[0]
        return (-nk.log2(self.p_z)).reshape(b, -1).sum(axis=1)


# ---------------------------------------------------------------------------
# quantisation and probability models
# ---------------------------------------------------------------------------

def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def relax_quantize(v, mode: str, rng: np.random.Generator | None = None, mean=None) -> Tensor:
    """Additive U(-1/2, 1/2) noise in ``"train"`` mode, rounding in ``"infer"`` mode.

    With ``mean`` given, inference rounds the offset ``v - mean`` and adds the
    mean back. Rounding carries no gradient.
    """
    v = nk.as_tensor(v)
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode quantisation needs an RNG stream")
        return v + rng.uniform(-0.5, 0.5, size=v.shape)
    if mode == "infer":
        if mean is None:
            return Tensor(round_half_away(v.data))
        m = nk.as_tensor(mean).data
        return Tensor(round_half_away(v.data - m) + m)
    raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


def conditional_bin_prob(x_tilde, mu, sigma, p_min: float = 1e-9) -> Tensor:
    """Mass of the unit bin centred at ``x_tilde`` under N(mu, sigma^2).

    Evaluated on the lower tail (|x - mu|) so that far-out bins keep precision.
    """
    d = nk.tabs(nk.as_tensor(x_tilde) - mu)
    upper = nk.gaussian_cdf((0.5 - d) / sigma)
    lower = nk.gaussian_cdf((-0.5 - d) / sigma)
    return nk.clamp_min(upper - lower, p_min)


def sa_entropy(p_x) -> Tensor:
    """Per-patch bits: ``e_i = sum_c -log2 p(x_tilde_ic)``. ``p_x`` is (..., L, c)."""
    return (-nk.log2(nk.as_tensor(p_x))).sum(axis=-1)


class FactorizedPrior(Module):
    """Per-channel learned monotone CDF (composition of positive affine maps
    and tanh-gated nonlinearities, closed by a sigmoid)."""

    def __init__(self, channels: int, rng: np.random.Generator, filters=(3, 3, 3),
                 init_scale: float = 10.0, p_min: float = 1e-9):
        self.channels = channels
        self.p_min = p_min
        dims = (1, *filters, 1)
        scale = init_scale ** (1.0 / (len(filters) + 1))
        self.matrices, self.biases, self.factors = [], [], []
        for i in range(len(filters) + 1):
            init = np.log(np.expm1(1.0 / scale / dims[i + 1]))
            self.matrices.append(nk.nn.param(np.full((channels, dims[i + 1], dims[i]), init)))
            self.biases.append(nk.nn.param(rng.uniform(-0.5, 0.5, size=(channels, dims[i + 1], 1))))
            if i < len(filters):
                self.factors.append(nk.nn.param(np.zeros((channels, dims[i + 1], 1))))

    def logits_cdf(self, v: Tensor) -> Tensor:
        """``v`` is (C, 1, N); returns logits of the CDF, same shape."""
        h = v
        for i, m in enumerate(self.matrices):
            h = nk.matmul(nk.softplus(m), h) + self.biases[i]
            if i < len(self.factors):
                h = h + nk.tanh(self.factors[i]) * nk.tanh(h)
        return h

    def cdf(self, v) -> np.ndarray:
        """CDF values for a (C, N) array (no gradient)."""
        v = np.asarray(v, dtype=np.float64)
        return nk.sigmoid(self.logits_cdf(Tensor(v[:, None, :]))).data[:, 0, :]

    def __call__(self, z_tilde: Tensor) -> Tensor:
        """Bin probabilities for ``z_tilde`` of shape (B, C, ...)."""
        b, c = z_tilde.shape[:2]
        if c != self.channels:
            raise nk.ShapeError(f"prior has {self.channels} channels, input has {c}")
        flat = z_tilde.transpose(1, 0, *range(2, z_tilde.ndim)).reshape(c, 1, -1)
        upper = self.logits_cdf(flat + 0.5)
        lower = self.logits_cdf(flat - 0.5)
        if np.any(upper.data < lower.data - 1e-9):
            raise FloatingPointError("factorized prior CDF is not monotone (negative bin mass)")
        # evaluate on the side where the sigmoid is far from saturation
        sign = np.where(upper.data + lower.data > 0, -1.0, 1.0)
        p = nk.tabs(nk.sigmoid(upper * sign) - nk.sigmoid(lower * sign))
        p = nk.clamp_min(p, self.p_min)
        rest = z_tilde.shape[2:]
        return p.reshape(c, b, *rest).transpose(1, 0, *range(2, z_tilde.ndim))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class HvModel(Module):
    """Vectoriser ``f_e``/``f_d``, hyper-coder ``h_e``/``h_d`` and factorized prior."""

    def __init__(self, cfg: HvConfig, rng: np.random.Generator):
        self.cfg = cfg
        c, L = cfg.c, cfg.L
        # f_e
        self.enc_in = nk.Linear(cfg.patch_dim, cfg.hidden, rng)
        self.enc_embed = nk.Linear(cfg.hidden, c, rng)
        self.enc_pos = nk.nn.param(rng.normal(0, 0.02, size=(L, c)))
        self.enc_blocks = [nk.TransformerBlock(c, cfg.heads, rng) for _ in range(cfg.n1_blocks)]
        # f_d
        self.dec_pos = nk.nn.param(rng.normal(0, 0.02, size=(L, c)))
        self.dec_blocks = [nk.TransformerBlock(c, cfg.heads, rng) for _ in range(cfg.n1_blocks)]
        self.dec_hidden = nk.Linear(c, cfg.hidden, rng)
        self.dec_out = nk.Linear(cfg.hidden, cfg.patch_dim, rng)
        # h_e / h_d
        k, cz = cfg.hyper_kernel, cfg.hyper_channels
        self.he1 = nk.Conv2d(c, cz, k, rng)
        self.he2 = nk.Conv2d(cz, cz, k, rng, stride=2)
        self.hd1 = nk.Conv2d(cz, cz, k, rng)
        self.hd2 = nk.Conv2d(cz, 2 * c, k, rng)
        self.prior = FactorizedPrior(cz, rng, cfg.prior_filters, p_min=cfg.p_min)

    # groups used for learning-rate multipliers and freezing
    def prior_parameter_names(self) -> list[str]:
        return [n for n, _ in self.named_parameters() if n.startswith("prior.")]

    def analysis(self, patches) -> Tensor:
        """``f_e``: (B, L, patch_dim) pixels in [0, 1] -> (B, L, c)."""
        patches = nk.as_tensor(patches)
        if patches.ndim != 3 or patches.shape[1:] != (self.cfg.L, self.cfg.patch_dim):
            raise nk.ShapeError(f"expected (B, {self.cfg.L}, {self.cfg.patch_dim}) patches, got {patches.shape}")
        h = nk.gelu(self.enc_in(patches - 0.5))
        x = self.enc_embed(h) + self.enc_pos
        for blk in self.enc_blocks:
            x = blk(x)
        return x * self.cfg.latent_gain

    def synthesis(self, x_hat) -> Tensor:
        """``f_d``: (B, L, c) -> (B, L, patch_dim), unclamped."""
        x_hat = nk.as_tensor(x_hat)
        if x_hat.ndim != 3 or x_hat.shape[1:] != (self.cfg.L, self.cfg.c):
            raise nk.ShapeError(f"expected (B, {self.cfg.L}, {self.cfg.c}) latents, got {x_hat.shape}")
        h = x_hat * (1.0 / self.cfg.latent_gain) + self.dec_pos
        for blk in self.dec_blocks:
            h = blk(h)
        return self.dec_out(nk.gelu(self.dec_hidden(h))) + 0.5

    def hyper_analysis(self, x: Tensor) -> Tensor:
        b = x.shape[0]
        cfg = self.cfg
        grid = x.transpose(0, 2, 1).reshape(b, cfg.c, cfg.rows, cfg.cols) * (1.0 / cfg.latent_gain)
        return self.he2(nk.relu(self.he1(grid))) * cfg.latent_gain

    def hyper_synthesis(self, z_tilde: Tensor) -> tuple[Tensor, Tensor]:
        cfg = self.cfg
        b = z_tilde.shape[0]
        h = nk.upsample_nearest(z_tilde * (1.0 / cfg.latent_gain), 2)[:, :, :cfg.rows, :cfg.cols]
        h = self.hd2(nk.relu(self.hd1(h)))
        h = h.reshape(b, 2 * cfg.c, cfg.L).transpose(0, 2, 1)  # (B, L, 2c)
        mu = h[:, :, :cfg.c] * cfg.latent_gain
        sigma = nk.clamp_min(nk.softplus(h[:, :, cfg.c:]) * cfg.latent_gain, cfg.sigma_min)
        return mu, sigma


def vectorize(patches, model: HvModel, mode: str = "infer",
              rng: np.random.Generator | None = None) -> LatentState:
    """Latents, hyper-latents, entropy parameters and per-patch entropy for a batch.

    In ``"train"`` mode both ``z`` and ``x`` receive additive uniform noise drawn
    from ``rng`` (z first, then x); in ``"infer"`` mode both are rounded.
    """
    cfg = model.cfg
    x = model.analysis(patches)
    z = model.hyper_analysis(x)
    z_tilde = relax_quantize(z, mode, rng)
    mu, sigma = model.hyper_synthesis(z_tilde)
    if mode == "infer" and cfg.quantize_around_mean:
        x_tilde = relax_quantize(x, mode, rng, mean=mu)
    else:
        x_tilde = relax_quantize(x, mode, rng)
    p_x = conditional_bin_prob(x_tilde, mu, sigma, cfg.p_min)
    p_z = model.prior(z_tilde)
    e = sa_entropy(p_x)
    return LatentState(x, x_tilde, z, z_tilde, mu, sigma, p_x, p_z, e)


def inverse_vectorize(x_hat, model: HvModel, mode: str = "infer") -> Tensor:
    """Reconstructed patches (B, L, patch_dim); clamped to [0, 1] in infer mode."""
    out = model.synthesis(x_hat)
    if mode == "infer":
        return Tensor(np.clip(out.data, 0.0, 1.0))
    return out


def weighted_distortion(patches, patches_hat, weights) -> Tensor:
    """Importance-weighted MSE ``sum_i w_i * MSE_i``, averaged over the batch.

    ``weights`` is (B, L) and each row sums to one.
    """
    se = nk.squared_error(patches_hat, nk.as_tensor(patches))
    per_patch = se.mean(axis=-1)                      # (B, L)
    return (per_patch * np.asarray(weights)).sum(axis=1).mean()


def hv_loss(patches, patches_hat, state: LatentState, lambda_hv: float, weights) -> Tensor:
    """``lambda * (bits(x|z) + bits(z)) + D_SA``, all averaged over the batch."""
    rate = (state.rate_x + state.rate_z).mean()
    return rate * lambda_hv + weighted_distortion(patches, patches_hat, weights)
