"""Registered finite-difference checks over every differentiable building block.

Each case builds a scalar function ``sum(op(x) * R)`` with a fixed random
weighting ``R`` so that every output coordinate contributes a distinct gradient.
Shapes stay at or below 8 per extent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import grad_check
from .losses import silog_loss
from .model import ASPP, EAM, PEM, FPNDecoder, aspp_forward, decoder_forward, pem_forward, sam_forward
from .nn import Conv2d
from .patch_graph import EdgeConv, PatchEmbed, PatchEmbedConfig, edge_features, em_forward, knn_graph
from .tensor import Tensor

MODULES = ("tensor-autodiff", "patch-graph", "depth-net", "loss-metrics")


@dataclass
class GradCase:
    name: str
    module: str
    build: Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[Tensor]]]


@dataclass
class CheckRow:
    name: str
    module: str
    shapes: list[tuple[int, ...]]
    max_rel_err: float
    passed: bool
    seconds: float


def _t(rng, *shape, positive=False) -> Tensor:
    x = rng.normal(size=shape)
    return Tensor(np.abs(x) + 0.5 if positive else x)


def _weighted_sum(op):
    """Turn ``op(rng) -> (fn, inputs)`` into a builder of the scalar ``sum(fn(*inputs) * R)``."""

    def build(rng):
        fn, inputs = op(rng)
        weights = {}

        def f(*xs):
            out = fn(*xs)
            if out.ndim == 0:
                return out
            if "R" not in weights:
                weights["R"] = rng.normal(size=out.shape)
            return T.reduce_sum(T.mul(out, weights["R"]))

        return f, inputs

    return build


CASES: list[GradCase] = []


def register(name: str, module: str):
    def decorate(op):
        CASES.append(GradCase(name, module, _weighted_sum(op)))
        return op

    return decorate


# -- primitives --------------------------------------------------------------
@register("add", "tensor-autodiff")
def _(rng):
    return (lambda a, b: T.add(a, b)), [_t(rng, 3, 4), _t(rng, 1, 4)]


@register("sub", "tensor-autodiff")
def _(rng):
    return (lambda a, b: T.sub(a, b)), [_t(rng, 2, 3, 4), _t(rng, 3, 1)]


@register("mul", "tensor-autodiff")
def _(rng):
    return (lambda a, b: T.mul(a, b)), [_t(rng, 4, 5), _t(rng, 4, 5)]


@register("div", "tensor-autodiff")
def _(rng):
    return (lambda a, b: T.div(a, b)), [_t(rng, 3, 4), _t(rng, 3, 4, positive=True)]


@register("matmul", "tensor-autodiff")
def _(rng):
    return (lambda a, b: T.matmul(a, b)), [_t(rng, 3, 5), _t(rng, 5, 4)]


@register("concat_channels", "tensor-autodiff")
def _(rng):
    return (lambda a, b: T.concat([a, b], axis=0)), [_t(rng, 2, 3, 3), _t(rng, 4, 3, 3)]


@register("reshape", "tensor-autodiff")
def _(rng):
    return (lambda a: T.reshape(a, (6, 4))), [_t(rng, 2, 3, 4)]


@register("transpose", "tensor-autodiff")
def _(rng):
    return (lambda a: T.transpose(a, (2, 0, 1))), [_t(rng, 2, 3, 4)]


@register("leaky_relu", "tensor-autodiff")
def _(rng):
    return (lambda a: T.leaky_relu(a, 0.2)), [_t(rng, 4, 6)]


@register("sigmoid", "tensor-autodiff")
def _(rng):
    return T.sigmoid, [_t(rng, 4, 6)]


@register("reduce_max", "tensor-autodiff")
def _(rng):
    return (lambda a: T.reduce_max(a, axis=1)), [_t(rng, 3, 5, 4)]


@register("reduce_mean", "tensor-autodiff")
def _(rng):
    return (lambda a: T.reduce_mean(a, axis=(0, 2))), [_t(rng, 3, 5, 4)]


@register("reduce_sum", "tensor-autodiff")
def _(rng):
    return (lambda a: T.reduce_sum(a, axis=1, keepdims=True)), [_t(rng, 3, 5)]


@register("broadcast", "tensor-autodiff")
def _(rng):
    return (lambda a: T.broadcast_to(a, (4, 3, 5))), [_t(rng, 3, 1)]


@register("exp", "tensor-autodiff")
def _(rng):
    return T.exp, [_t(rng, 3, 4)]


@register("log", "tensor-autodiff")
def _(rng):
    return T.log, [_t(rng, 3, 4, positive=True)]


@register("sqrt", "tensor-autodiff")
def _(rng):
    return T.sqrt, [_t(rng, 3, 4, positive=True)]


@register("take", "tensor-autodiff")
def _(rng):
    idx = np.array([[0, 2, 2], [4, 1, 0]])
    return (lambda a: T.take(a, idx, axis=1)), [_t(rng, 3, 5)]


@register("pad_replicate", "tensor-autodiff")
def _(rng):
    return (lambda a: T.pad2d(a, 2, "replicate")), [_t(rng, 2, 3, 3)]


@register("softmax", "tensor-autodiff")
def _(rng):
    return T.softmax_lastdim, [_t(rng, 3, 6)]


@register("conv2d", "tensor-autodiff")
def _(rng):
    return (lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1)), [
        _t(rng, 3, 7, 8),
        _t(rng, 4, 3, 3, 3),
        _t(rng, 4),
    ]


@register("conv2d_dilated", "tensor-autodiff")
def _(rng):
    return (lambda x, w: T.conv2d(x, w, None, padding=2, dilation=2, padding_mode="replicate")), [
        _t(rng, 2, 5, 6),
        _t(rng, 3, 2, 3, 3),
    ]


@register("upsample_bilinear", "tensor-autodiff")
def _(rng):
    return (lambda a: T.upsample_bilinear(a, 7, 8)), [_t(rng, 2, 3, 4)]


# -- patch graph ---------------------------------------------------------------
@register("patch_embed", "patch-graph")
def _(rng):
    pe = PatchEmbed(PatchEmbedConfig(2, 2, 2, 5), rng)
    return (lambda x, w: pe(x).values), [_t(rng, 2, 4, 6), pe.proj.weight]


@register("edge_features", "patch-graph")
def _(rng):
    ec = EdgeConv(3, 4, 4, rng)
    x = _t(rng, 3, 6)
    nbrs = knn_graph(x, 2)
    return (lambda a, w: edge_features(a, nbrs, ec)), [x, ec.theta.weight]


@register("em_forward", "patch-graph")
def _(rng):
    ec = EdgeConv(4, 5, 3, rng)
    return (lambda a, w1, w2: em_forward(a, 3, ec)), [_t(rng, 4, 7), ec.theta.weight, ec.mlp.weight]


@register("em_forward_norm", "patch-graph")
def _(rng):
    ec = EdgeConv(3, 4, 3, rng, norm=True)
    return (lambda a, g: em_forward(a, 2, ec)), [_t(rng, 3, 6), ec.gamma]


# -- depth net -----------------------------------------------------------------
@register("pem_forward", "depth-net")
def _(rng):
    pem = PEM(4, 3, 5, 4, 2, rng)
    return (lambda x, w: pem_forward(x, 2, pem)), [_t(rng, 4, 4, 6), pem.reduce.weight]


@register("sam_forward", "depth-net")
def _(rng):
    eam = EAM(6, rng)
    return (lambda x, wq, wk, wv: sam_forward(x, eam)[0]), [
        _t(rng, 6, 5),
        eam.mlp_q.weight,
        eam.mlp_k.weight,
        eam.mlp_v.weight,
    ]


@register("eam_edge_stage", "depth-net")
def _(rng):
    from .model import eam_edge_stage

    eam = EAM(6, rng)
    return (lambda x: eam_edge_stage(x, 2, eam)[1]), [_t(rng, 6, 5)]


@register("aspp_forward", "depth-net")
def _(rng):
    aspp = ASPP(4, 3, 5, (1, 2), rng)
    return (lambda x, w: aspp_forward(x, aspp)), [_t(rng, 4, 2, 3), aspp.dilated[1].weight]


@register("decoder", "depth-net")
def _(rng):
    dec = FPNDecoder(2, (2, 3, 4), rng)
    x_out, f16, f8, f4 = _t(rng, 2, 1, 2), _t(rng, 4, 2, 4), _t(rng, 3, 4, 8), _t(rng, 2, 8, 8)
    return (lambda a, b, c, d, w: decoder_forward(a, (d, c, b), dec, (8, 8))), [
        x_out,
        f16,
        f8,
        f4,
        dec.head.weight,
    ]


# -- loss ----------------------------------------------------------------------
@register("silog_loss", "loss-metrics")
def _(rng):
    gt = np.abs(rng.normal(size=(4, 5))) + 0.5
    mask = rng.random((4, 5)) > 0.2
    return (lambda p: silog_loss(p, gt, mask, 0.85)), [_t(rng, 4, 5, positive=True)]


@register("silog_network", "loss-metrics")
def _(rng):
    """silog of a two-layer conv net on a 4×4 input."""
    c1 = Conv2d(2, 4, 3, rng, padding=1)
    c2 = Conv2d(4, 1, 1, rng)
    gt = np.abs(rng.normal(size=(1, 4, 4))) + 1.0

    def f(x, w1, w2):
        return silog_loss(T.exp(c2(T.leaky_relu(c1(x)))), gt, None, 0.85)

    return f, [_t(rng, 2, 4, 4), c1.weight, c2.weight]


def select(scope: str = "all", cases: list[GradCase] | None = None) -> list[GradCase]:
    cases = CASES if cases is None else cases
    if scope == "all":
        return list(cases)
    chosen = [c for c in cases if c.module == scope or c.name == scope]
    if not chosen:
        raise ValueError(f"unknown gradcheck scope {scope!r}; use all, a module ({', '.join(MODULES)}) or a check name")
    return chosen


def run_suite(
    scope: str = "all",
    cases: list[GradCase] | None = None,
    seed: int = 0,
    eps: float = 1e-6,
    tol: float = 1e-4,
) -> list[CheckRow]:
    rows = []
    for case in select(scope, cases):
        rng = np.random.default_rng(seed)
        start = time.perf_counter()
        f, inputs = case.build(rng)
        rep = grad_check(f, inputs, eps=eps, tol=tol)
        rows.append(CheckRow(case.name, case.module, rep.shapes, rep.max_rel_err, rep.passed, time.perf_counter() - start))
    return rows


def format_table(rows: list[CheckRow]) -> str:
    lines = [f"{'check':<20} {'module':<16} {'max_rel_err':>12}  {'status':<6} shapes"]
    for r in rows:
        shapes = " ".join("x".join(map(str, s)) or "scalar" for s in r.shapes)
        lines.append(f"{r.name:<20} {r.module:<16} {r.max_rel_err:>12.3e}  {'PASS' if r.passed else 'FAIL':<6} {shapes}")
    return "\n".join(lines)
