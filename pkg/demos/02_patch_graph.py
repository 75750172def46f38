#!/usr/bin/env python3
# patches of a feature map as graph nodes: embed, connect k nearest, EdgeConv

import numpy as np

from edgedepth.patch_graph import EdgeConv, PatchEmbed, PatchEmbedConfig, em_forward, knn_graph
from edgedepth.tensor import Tensor

rng = np.random.default_rng(1)

# an 8x8 map with 4 channels cut into 4x4 patches -> a 2x2 grid, 4 nodes
fmap = Tensor(rng.normal(size=(4, 8, 8)))
embed = PatchEmbed(PatchEmbedConfig(patch_w=4, patch_h=4, in_channels=4, embed_dim=6), rng)
patches = embed(fmap)
print("embedded", patches.values.shape, "grid (cols, rows)", patches.grid)

# neighbours are found in feature space, not on the image grid
nbrs = knn_graph(patches, k=2)
print("neighbour table\n", nbrs.indices)

# duplicated nodes tie at distance 0; the lower id wins
x = np.array([[0.0, 1.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0]])
print("ties ->", knn_graph(x, 1).indices.ravel())

ec = EdgeConv(6, 8, 5, rng)
out = em_forward(patches.values, 2, ec)
print("edge features per node", out.shape)

# relabelling nodes relabels the output and nothing else
perm = np.array([2, 0, 3, 1])
out_p = em_forward(Tensor(patches.values.data[:, perm]), 2, ec)
print("equivariant:", np.allclose(out_p.data, out.data[:, perm]))
