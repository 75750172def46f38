"""Parameter containers and the ECDW weight file format."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, FormatError
from .tensor import DEFAULT_LEAKY_SLOPE, Tensor, conv2d

WEIGHTS_MAGIC = b"ECDW"


def _init_weight(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    # He-uniform for leaky units
    bound = np.sqrt(6.0 / ((1.0 + DEFAULT_LEAKY_SLOPE**2) * fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Anything holding trainable tensors as attributes (directly, in sub-modules, or lists)."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            yield from _walk(value, prefix + name)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise ConfigError(f"weights do not match model: missing={missing[:5]} unexpected={extra[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ConfigError(f"weights do not match model: {name} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.copy()


def _walk(value, name: str):
    if isinstance(value, Tensor):
        if value.requires_grad:
            yield name, value
    elif isinstance(value, Module):
        yield from value.named_parameters(name + ".")
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            yield from _walk(item, f"{name}.{i}")


class Linear(Module):
    """Per-column affine map: a c_in×N matrix becomes c_out×N (the channel-wise MLP layer)."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.weight = _init_weight(rng, (c_out, c_in), c_in)
        self.bias = Tensor(np.zeros((c_out, 1)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.weight @ x + self.bias


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
        dilation: int = 1,
        padding_mode: str = "zeros",
    ):
        self.weight = _init_weight(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.padding_mode = padding_mode

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(
            x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.padding_mode
        )


# ---------------------------------------------------------------------------
# ECDW: magic, u32 count, then per tensor u16 name length, name, u8 rank,
# u32 extents, f64 values; all little-endian.
# ---------------------------------------------------------------------------
def encode_weights(state: dict[str, np.ndarray]) -> bytes:
    parts = [WEIGHTS_MAGIC, struct.pack("<I", len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode_weights(buf: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def need(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated weights file while reading {what}", pos)
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    if need(4, "magic") != WEIGHTS_MAGIC:
        raise FormatError("bad magic, expected b'ECDW'", 0)
    (count,) = struct.unpack("<I", need(4, "count"))
    state: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", need(2, "name length"))
        start = pos
        try:
            name = need(nlen, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("parameter name is not valid UTF-8", start) from None
        (rank,) = struct.unpack("<B", need(1, "rank"))
        shape = struct.unpack(f"<{rank}I", need(4 * rank, "extents"))
        n = int(np.prod(shape)) if rank else 1
        state[name] = np.frombuffer(need(8 * n, f"values of {name}"), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(buf):
        raise FormatError("trailing bytes after last parameter", pos)
    return state


def save_weights(path: str | Path, module_or_state) -> None:
    state = module_or_state.state_dict() if isinstance(module_or_state, Module) else module_or_state
    Path(path).write_bytes(encode_weights(state))


def load_weights(path: str | Path) -> dict[str, np.ndarray]:
    return decode_weights(Path(path).read_bytes())
