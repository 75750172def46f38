#!/usr/bin/env python3
# reverse-mode autodiff on numpy arrays, and checking it against finite differences

import numpy as np

from edgedepth import tensor as T
from edgedepth.gradcheck import grad_check
from edgedepth.tensor import Tensor

rng = np.random.default_rng(0)

x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
w = Tensor(rng.normal(size=(2, 3)), requires_grad=True)

y = T.leaky_relu(T.matmul(w, x))  # 2x4
loss = T.reduce_mean(y * y)
loss.backward()
print("loss", loss.item())
print("dloss/dw\n", w.grad)

# every primitive records its own backward; the tape is walked once in reverse
print("op of y:", y.op)

# central differences agree with the tape
rep = grad_check(lambda a, b: T.reduce_mean(T.leaky_relu(T.matmul(b, a)) * T.leaky_relu(T.matmul(b, a))), [x, w])
print("max rel err", rep.max_rel_err, "passed", rep.passed)

# convolution with dilation and replicate padding, then a bilinear resize
img = Tensor(rng.normal(size=(1, 8, 8)))
k = Tensor(np.ones((1, 1, 3, 3)) / 9)
blur = T.conv2d(img, k, padding=2, dilation=2, padding_mode="replicate")
print("blurred", blur.shape, "upsampled", T.upsample_bilinear(blur, 16, 16).shape)

# the same suite the CLI runs with `edgedepth gradcheck all`
from edgedepth.checks import format_table, run_suite

print(format_table(run_suite("tensor-autodiff")))
