"""Patch embedding, feature-space k-NN graphs and the EdgeConv module.

Matrices are laid out channel-first: a c×N_p tensor holds one column per
patch, with patches enumerated row-major over the patch grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import Linear, Module
from .tensor import (
    Tensor,
    broadcast_to,
    concat,
    leaky_relu,
    mul,
    reduce_max,
    reduce_mean,
    reshape,
    sqrt,
    take,
    transpose,
)


@dataclass(frozen=True)
class PatchEmbedConfig:
    patch_w: int
    patch_h: int
    in_channels: int
    embed_dim: int

    def __post_init__(self):
        for name in ("patch_w", "patch_h", "in_channels", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"PatchEmbedConfig.{name} must be positive")


@dataclass
class EmbeddedPatches:
    values: Tensor  # c_e × N_p
    grid: tuple[int, int]  # (cols, rows)

    @property
    def n_patches(self) -> int:
        return self.values.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.values.shape[0]


@dataclass
class NeighborIndex:
    indices: np.ndarray  # N_p × k, int

    @property
    def k(self) -> int:
        return self.indices.shape[1]


class PatchEmbed(Module):
    """Shared linear projection of flattened w_p×h_p patches to c_e-vectors."""

    def __init__(self, cfg: PatchEmbedConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.proj = Linear(cfg.in_channels * cfg.patch_h * cfg.patch_w, cfg.embed_dim, rng)

    def __call__(self, fmap: Tensor) -> EmbeddedPatches:
        return patch_embed(fmap, self.cfg, self.proj)


def patch_embed(fmap: Tensor, cfg: PatchEmbedConfig, proj: Linear) -> EmbeddedPatches:
    c, h, w = fmap.shape
    if c != cfg.in_channels:
        raise ShapeError(f"patch_embed: expected {cfg.in_channels} channels, got {c}")
    if h % cfg.patch_h or w % cfg.patch_w:
        raise ShapeError(
            f"patch_embed: feature map {h}x{w} is not divisible by patch {cfg.patch_h}x{cfg.patch_w}"
        )
    rows, cols = h // cfg.patch_h, w // cfg.patch_w
    p = reshape(fmap, (c, rows, cfg.patch_h, cols, cfg.patch_w))
    p = transpose(p, (1, 3, 0, 2, 4))  # rows, cols, c, h_p, w_p
    p = reshape(p, (rows * cols, c * cfg.patch_h * cfg.patch_w))
    return EmbeddedPatches(proj(transpose(p)), (cols, rows))


def pairwise_sq_dists(x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between the columns of a c×N matrix."""
    diff = x[:, :, None] - x[:, None, :]
    return np.einsum("cij,cij->ij", diff, diff)


def knn_graph(patches: EmbeddedPatches | Tensor | np.ndarray, k: int) -> NeighborIndex:
    """Exact k nearest neighbours of every column, self excluded, ties to the lower id."""
    if isinstance(patches, EmbeddedPatches):
        x = patches.values.data
    elif isinstance(patches, Tensor):
        x = patches.data
    else:
        x = np.asarray(patches, dtype=np.float64)
    n = x.shape[1]
    if not 1 <= k <= n - 1:
        raise ConfigError(f"knn_graph: k={k} must satisfy 1 <= k <= N_p - 1 = {n - 1}")
    d = pairwise_sq_dists(x)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return NeighborIndex(order[:, :k].copy())


class EdgeConv(Module):
    """The EdgeConv module: k-NN graph, edge function h_theta, max over neighbours, channel-wise MLP.

    h_theta is one linear layer on [e_i ; e_j - e_i] followed by leaky ReLU.
    With ``norm=True`` the edge pre-activations are standardised per channel
    over all edges of the forward pass, with learnable scale and shift.
    """

    def __init__(
        self,
        c_in: int,
        c_edge: int,
        c_out: int,
        rng: np.random.Generator,
        norm: bool = False,
    ):
        self.c_in = c_in
        self.theta = Linear(2 * c_in, c_edge, rng)
        self.mlp = Linear(c_edge, c_out, rng)
        self.norm = norm
        if norm:
            self.gamma = Tensor(np.ones((c_edge, 1)), requires_grad=True)
            self.beta = Tensor(np.zeros((c_edge, 1)), requires_grad=True)

    def edge_fn(self, pair: Tensor) -> Tensor:
        """Apply h_theta to a 2c_in×M matrix of concatenated edge inputs."""
        z = self.theta(pair)
        if self.norm:
            mu = reduce_mean(z, axis=1, keepdims=True)
            centred = z - mu
            var = reduce_mean(mul(centred, centred), axis=1, keepdims=True)
            z = centred / sqrt(var + 1e-5) * self.gamma + self.beta
        return leaky_relu(z)

    def __call__(self, x: Tensor, k: int) -> Tensor:
        return em_forward(x, k, self)


def edge_features(patches: EmbeddedPatches | Tensor, nbrs: NeighborIndex, params: EdgeConv) -> Tensor:
    """Edge tensor of shape a_k × c_o × N_p; slice (m, :, i) is h_theta(e_i, e_j - e_i), j = nbrs[i, m]."""
    x = patches.values if isinstance(patches, EmbeddedPatches) else patches
    c, n = x.shape
    if c != params.c_in:
        raise ShapeError(f"edge_features: embedding has {c} channels, EdgeConv expects {params.c_in}")
    idx = nbrs.indices
    if idx.shape[0] != n or idx.min() < 0 or idx.max() >= n:
        raise IndexError("edge_features: neighbour table inconsistent with patch count")
    k = idx.shape[1]
    xj = take(x, idx.T, axis=1)  # c × k × N
    xi = reshape(x, (c, 1, n))
    pair = concat([broadcast_to(xi, (c, k, n)), xj - xi], axis=0)  # 2c × k × N
    h = params.edge_fn(reshape(pair, (2 * c, k * n)))
    return transpose(reshape(h, (h.shape[0], k, n)), (1, 0, 2))


def edge_aggregate(edges: Tensor) -> Tensor:
    """Max over the neighbour axis of an a_k × c_o × N_p edge tensor."""
    if edges.ndim != 3 or edges.shape[0] < 1:
        raise ShapeError(f"edge_aggregate: expected a_k × c_o × N_p, got {edges.shape}")
    return reduce_max(edges, axis=0)


def em_forward(x: Tensor, k: int, params: EdgeConv) -> Tensor:
    nbrs = knn_graph(x, k)
    pooled = edge_aggregate(edge_features(x, nbrs, params))
    return leaky_relu(params.mlp(pooled))
