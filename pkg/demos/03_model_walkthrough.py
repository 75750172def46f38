#!/usr/bin/env python3
# one forward pass through the depth network, looking at the attention stage

import numpy as np

from edgedepth.config import load_config
from edgedepth.data import image_to_input, synthetic_dataset
from edgedepth.model import DepthNet
from edgedepth.tensor import Tensor

cfg = load_config(preset="desk").model
net = DepthNet(cfg, seed=0)
print("parameters:", sum(p.size for p in net.parameters()))

sample = synthetic_dataset(1, seed=3)[0]
depth, state = net.forward_with_state(Tensor(image_to_input(sample.rgb)))

# one column per 1/32-scale cell; both PEMs have to agree on the count
print("patch counts", state.n_patches)
print("X_cat", state.x_cat.shape, "X_r", state.x_r.shape, "X_xi", state.x_xi.shape, "X_att", state.x_att.shape)
print("attention rows sum to", state.attention.data.sum(axis=1))
print("depth", depth.shape, "range", depth.data.min(), depth.data.max(), "< max_depth", cfg.max_depth)

# the full-size presets give the larger patch grids
for preset in ("nyu", "kitti"):
    m = load_config(preset=preset).model
    print(preset, m.input_h, "x", m.input_w, "-> N_p =", m.n_patches)
