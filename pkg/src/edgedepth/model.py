"""The depth network: CNN encoder, two patch-wise EdgeConv modules, the EdgeConv
attention module, ASPP and an FPN decoder with a sigmoid × max-depth head.

All activations are single images laid out c×H×W; per-patch matrices are c×N_p
with N_p = (H/32)(W/32), so column i of every per-patch matrix corresponds to
cell i (row-major) of the 1/32-scale grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import Conv2d, Linear, Module
from .patch_graph import EdgeConv, PatchEmbed, PatchEmbedConfig, em_forward
from .tensor import (
    Tensor,
    broadcast_to,
    clip,
    concat,
    leaky_relu,
    matmul,
    mul,
    reduce_mean,
    reshape,
    sigmoid,
    softmax_lastdim,
    transpose,
    upsample_bilinear,
)

# keeps the head strictly inside (0, 1) even when the sigmoid saturates in float64
HEAD_MARGIN = 1e-12


@dataclass
class ModelConfig:
    input_h: int = 64
    input_w: int = 64
    # stem (1/2), then stages at 1/4, 1/8, 1/16, 1/32
    encoder_widths: tuple[int, ...] = (8, 16, 24, 32, 48)
    encoder_refine: bool = True
    pem_cf: int = 8
    pem_ce: int = 16
    pem_co8: int = 16
    pem_co16: int = 16
    patch8: int = 4
    patch16: int = 2
    k: int = 3
    edge_norm: bool = False
    max_depth: float = 10.0
    aspp_rates: tuple[int, ...] = (1, 2, 3)
    decoder_channels: int = 16
    fuse_scale: int = 4  # resolution (1/fuse_scale) at which decoder levels are stacked
    use_pem: bool = True
    use_eam: bool = True

    @property
    def n_patches(self) -> int:
        return (self.input_h // 32) * (self.input_w // 32)

    @property
    def c_g(self) -> int:
        return self.encoder_widths[-1]

    @property
    def c_t(self) -> int:
        return self.c_g + (self.pem_co8 + self.pem_co16 if self.use_pem else 0)

    def validate(self) -> "ModelConfig":
        if self.input_h % 32 or self.input_w % 32 or self.input_h < 32 or self.input_w < 32:
            raise ConfigError(
                f"model.input_h/input_w must be positive multiples of 32, got {self.input_h}x{self.input_w}"
            )
        if len(self.encoder_widths) != 5 or min(self.encoder_widths) < 1:
            raise ConfigError("model.encoder_widths needs 5 positive widths (strides 1/2 .. 1/32)")
        if self.max_depth <= 0:
            raise ConfigError("model.max_depth must be positive")
        if self.c_t % 2:
            raise ConfigError(f"model: c_t = c_g + c_o8 + c_o16 = {self.c_t} must be even")
        if (self.patch8, self.patch16) != (4, 2):
            raise ConfigError("model.patch8/patch16 must be 4/2 so both PEMs tile the 1/32 grid")
        uses_graph = self.use_pem or self.use_eam
        if uses_graph and not 1 <= self.k <= self.n_patches - 1:
            raise ConfigError(f"model.k={self.k} must lie in [1, N_p - 1] with N_p = {self.n_patches}")
        if not self.aspp_rates or min(self.aspp_rates) < 1:
            raise ConfigError("model.aspp_rates must be a non-empty list of positive rates")
        if self.fuse_scale not in (1, 2, 4):
            raise ConfigError("model.fuse_scale must be 4, 2 or 1")
        for name in ("pem_cf", "pem_ce", "pem_co8", "pem_co16", "decoder_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        return self


@dataclass
class EamState:
    """Intermediate EAM tensors of one forward pass."""

    x_cat: Tensor
    x_r: Optional[Tensor] = None
    x_xi: Optional[Tensor] = None
    x_k: Optional[Tensor] = None
    x_q: Optional[Tensor] = None
    x_v: Optional[Tensor] = None
    attention: Optional[Tensor] = None
    x_att: Optional[Tensor] = None
    x_out: Optional[Tensor] = None
    n_patches: dict[str, int] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------
class Encoder(Module):
    """Strided 3×3 conv stages; returns the 1/4, 1/8, 1/16 and 1/32 feature maps."""

    def __init__(self, widths, rng: np.random.Generator, refine: bool = True):
        self.stem = Conv2d(3, widths[0], 3, rng, stride=2, padding=1)
        self.down = [
            Conv2d(c_in, c_out, 3, rng, stride=2, padding=1) for c_in, c_out in zip(widths[:-1], widths[1:])
        ]
        self.refine = [Conv2d(c, c, 3, rng, padding=1) for c in widths[1:]] if refine else []

    def __call__(self, image: Tensor) -> list[Tensor]:
        return self.features(image)[1:]

    def features(self, image: Tensor) -> list[Tensor]:
        """All five maps, 1/2 (stem) through 1/32."""
        x = leaky_relu(self.stem(image))
        feats = [x]
        for i, down in enumerate(self.down):
            x = leaky_relu(down(x))
            if self.refine:
                x = leaky_relu(self.refine[i](x))
            feats.append(x)
        return feats


def encoder_forward(image: Tensor, encoder: Encoder, include_stem: bool = False) -> list[Tensor]:
    """Feature maps at 1/4, 1/8, 1/16, 1/32 (prefixed by the 1/2 stem map if asked)."""
    if image.ndim != 3 or image.shape[0] != 3 or image.shape[1] % 32 or image.shape[2] % 32:
        raise ShapeError(f"encoder: expected 3×H×W with H, W multiples of 32, got {image.shape}")
    feats = encoder.features(image)
    return feats if include_stem else feats[1:]


# ---------------------------------------------------------------------------
# patch-wise EdgeConv module
# ---------------------------------------------------------------------------
class PEM(Module):
    def __init__(self, c_in, c_f, c_e, c_o, patch, rng, norm=False):
        self.reduce = Conv2d(c_in, c_f, 1, rng)
        self.embed = PatchEmbed(PatchEmbedConfig(patch, patch, c_f, c_e), rng)
        self.em = EdgeConv(c_e, c_o, c_o, rng, norm=norm)


def pem_forward(fmap: Tensor, k: int, pem: PEM) -> Tensor:
    """Local edge feature map (c_o × N_p) of one encoder feature map."""
    patches = pem.embed(pem.reduce(fmap))
    return em_forward(patches.values, k, pem.em)


# ---------------------------------------------------------------------------
# EdgeConv attention module
# ---------------------------------------------------------------------------
class EAM(Module):
    def __init__(self, c_t: int, rng: np.random.Generator, norm: bool = False):
        if c_t % 2:
            raise ConfigError(f"EAM: c_t = {c_t} must be even")
        half = c_t // 2
        self.c_t = c_t
        self.reduce = Linear(c_t, half, rng)
        self.em = EdgeConv(half, half, half, rng, norm=norm)
        self.mlp_k = Linear(c_t, c_t, rng)
        self.mlp_q = Linear(c_t, c_t, rng)
        self.mlp_v = Linear(c_t, c_t, rng)


def eam_concat(f_g: Tensor, xi8: Tensor | None = None, xi16: Tensor | None = None) -> Tensor:
    parts = [t for t in (f_g, xi8, xi16) if t is not None]
    cols = {t.shape[1] for t in parts}
    if any(t.ndim != 2 for t in parts) or len(cols) != 1:
        raise ShapeError(f"eam_concat: inputs {[t.shape for t in parts]} do not share N_p columns")
    return concat(parts, axis=0)


def eam_edge_stage(x_cat: Tensor, k: int, eam: EAM) -> tuple[Tensor, Tensor]:
    """Returns (X_r, X_xi): the halved projection and its concat with EM(X_r)."""
    c_t = x_cat.shape[0]
    if c_t % 2:
        raise ConfigError(f"eam_edge_stage: c_t = {c_t} must be even")
    x_r = leaky_relu(eam.reduce(x_cat))
    x_xi = concat([x_r, em_forward(x_r, k, eam.em)], axis=0)
    return x_r, x_xi


def sam_forward(x_xi: Tensor, eam: EAM) -> tuple[Tensor, Tensor, tuple[Tensor, Tensor, Tensor]]:
    """Residual scaled dot-product self-attention over patches.

    Returns (X_att, attention matrix N_p×N_p, (X_K, X_Q, X_V)); rows of the
    attention matrix index queries.
    """
    d = x_xi.shape[0]
    x_k, x_q, x_v = eam.mlp_k(x_xi), eam.mlp_q(x_xi), eam.mlp_v(x_xi)
    scores = mul(matmul(transpose(x_q), x_k), 1.0 / np.sqrt(d))
    attn = softmax_lastdim(scores)
    sam = transpose(matmul(attn, transpose(x_v)))
    return x_xi + sam, attn, (x_k, x_q, x_v)


# ---------------------------------------------------------------------------
# ASPP
# ---------------------------------------------------------------------------
class ASPP(Module):
    """Parallel 1×1, dilated 3×3 and global-pool branches fused by a 1×1 conv.

    Dilated branches pad by replication: at 1/32 scale the maps are only a few
    cells wide and zero padding would dominate every dilated tap.
    """

    def __init__(
        self,
        c_in: int,
        c_branch: int,
        c_out: int,
        rates,
        rng: np.random.Generator,
        use_1x1: bool = True,
        use_pool: bool = True,
        padding_mode: str = "replicate",
    ):
        self.conv1x1 = Conv2d(c_in, c_branch, 1, rng) if use_1x1 else None
        self.dilated = [
            Conv2d(c_in, c_branch, 3, rng, padding=r, dilation=r, padding_mode=padding_mode) for r in rates
        ]
        self.pool = Linear(c_in, c_branch, rng) if use_pool else None
        n_branches = len(self.dilated) + (self.conv1x1 is not None) + (self.pool is not None)
        self.fuse = Conv2d(c_branch * n_branches, c_out, 1, rng)


def aspp_forward(x: Tensor, aspp: ASPP) -> Tensor:
    c, h, w = x.shape
    branches = []
    if aspp.conv1x1 is not None:
        branches.append(leaky_relu(aspp.conv1x1(x)))
    for conv in aspp.dilated:
        branches.append(leaky_relu(conv(x)))
    if aspp.pool is not None:
        g = leaky_relu(aspp.pool(reshape(reduce_mean(x, axis=(1, 2)), (c, 1))))
        branches.append(broadcast_to(reshape(g, (g.shape[0], 1, 1)), (g.shape[0], h, w)))
    return leaky_relu(aspp.fuse(concat(branches, axis=0)))


# ---------------------------------------------------------------------------
# FPN decoder
# ---------------------------------------------------------------------------
class FPNDecoder(Module):
    """Top-down FPN over skips ordered fine to coarse, e.g. (1/4, 1/8, 1/16).

    Passing a 1/2-scale skip first adds one more level, moving the fusion
    resolution from 1/4 to 1/2.
    """

    def __init__(self, channels: int, skip_channels, rng: np.random.Generator):
        self.laterals = [Conv2d(c, channels, 1, rng) for c in skip_channels]
        self.smooths = [Conv2d(channels, channels, 3, rng, padding=1) for _ in skip_channels]
        self.head = Conv2d(len(skip_channels) * channels, 1, 3, rng, padding=1)


def _up_to(x: Tensor, ref: Tensor) -> Tensor:
    return upsample_bilinear(x, ref.shape[1], ref.shape[2])


def decoder_forward(x_out: Tensor, skips, dec: FPNDecoder, out_hw: tuple[int, int]) -> Tensor:
    """Top-down pathway over the skips (finest first); returns 1×H×W in (0, 1)."""
    if len(skips) != len(dec.laterals):
        raise ShapeError(f"decoder: expected {len(dec.laterals)} skips, got {len(skips)}")
    levels = []
    x = x_out
    for i in reversed(range(len(skips))):
        x = leaky_relu(dec.smooths[i](_up_to(x, skips[i]) + dec.laterals[i](skips[i])))
        levels.append(x)
    finest = levels[-1]
    stacked = concat([_up_to(p, finest) for p in levels[:-1]] + [finest], axis=0)
    prob = clip(sigmoid(dec.head(stacked)), HEAD_MARGIN, 1.0 - HEAD_MARGIN)
    return upsample_bilinear(prob, *out_hw)


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------
class DepthNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        w = cfg.encoder_widths
        self.encoder = Encoder(w, rng, refine=cfg.encoder_refine)
        if cfg.use_pem:
            self.pem8 = PEM(w[2], cfg.pem_cf, cfg.pem_ce, cfg.pem_co8, cfg.patch8, rng, cfg.edge_norm)
            self.pem16 = PEM(w[3], cfg.pem_cf, cfg.pem_ce, cfg.pem_co16, cfg.patch16, rng, cfg.edge_norm)
        if cfg.use_eam:
            self.eam = EAM(cfg.c_t, rng, norm=cfg.edge_norm)
        self.aspp = ASPP(cfg.c_t, cfg.decoder_channels, cfg.decoder_channels, cfg.aspp_rates, rng)
        skip_widths = {4: (), 2: (w[0],), 1: (3, w[0])}[cfg.fuse_scale] + (w[1], w[2], w[3])
        self.decoder = FPNDecoder(cfg.decoder_channels, skip_widths, rng)

    def __call__(self, image: Tensor) -> Tensor:
        return self.forward_with_state(image)[0]

    def forward_with_state(self, image: Tensor) -> tuple[Tensor, EamState]:
        cfg = self.cfg
        if image.shape != (3, cfg.input_h, cfg.input_w):
            raise ShapeError(f"model: expected input 3×{cfg.input_h}×{cfg.input_w}, got {image.shape}")
        f2, f4, f8, f16, f32 = encoder_forward(image, self.encoder, include_stem=True)
        gh, gw = f32.shape[1:]
        n_p = gh * gw
        f_g = reshape(f32, (f32.shape[0], n_p))
        counts = {"f_g": n_p}
        xi8 = xi16 = None
        if cfg.use_pem:
            xi8 = pem_forward(f8, cfg.k, self.pem8)
            xi16 = pem_forward(f16, cfg.k, self.pem16)
            counts.update(pem8=xi8.shape[1], pem16=xi16.shape[1])
            if xi8.shape[1] != xi16.shape[1] or xi8.shape[1] != n_p:
                raise ConfigError(f"PEM patch counts disagree: {counts}")
        x_cat = eam_concat(f_g, xi8, xi16)
        state = EamState(x_cat=x_cat, n_patches=counts)
        c_t = cfg.c_t
        _check_rows("X_cat", x_cat, c_t)
        x = x_cat
        if cfg.use_eam:
            state.x_r, state.x_xi = eam_edge_stage(x_cat, cfg.k, self.eam)
            _check_rows("X_r", state.x_r, c_t // 2)
            _check_rows("X_xi", state.x_xi, c_t)
            state.x_att, state.attention, (state.x_k, state.x_q, state.x_v) = sam_forward(state.x_xi, self.eam)
            _check_rows("X_att", state.x_att, c_t)
            x = state.x_att
        state.x_out = aspp_forward(reshape(x, (c_t, gh, gw)), self.aspp)
        skips = {4: (), 2: (f2,), 1: (image, f2)}[cfg.fuse_scale] + (f4, f8, f16)
        norm_depth = decoder_forward(state.x_out, skips, self.decoder, (cfg.input_h, cfg.input_w))
        return mul(norm_depth, cfg.max_depth), state


def _check_rows(name: str, t: Tensor, expected: int) -> None:
    if t.shape[0] != expected:
        raise ShapeError(f"channel bookkeeping: rows({name}) = {t.shape[0]}, expected {expected}")


def model_forward(image: Tensor, model: DepthNet) -> Tensor:
    return model(image)
