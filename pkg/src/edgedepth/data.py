"""Depth samples: DRF1 raster files, synthetic ray-cast scenes, augmentation and crops.

Rasters are numpy arrays laid out height × width × channels (channels may be
omitted for single-channel rasters).  RGB values live in [0, 1]; depth is
planar (z) depth in metres and 0 marks a missing measurement.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError, FormatError, ShapeError

RASTER_MAGIC = b"DRF1"
HEADER = struct.Struct("<4sIII")

KITTI_CROP = (352, 1216)  # (height, width) of the bottom-center training crop
# Eigen et al. evaluation window on 480×640 NYU frames: rows 45:471, cols 41:601,
# kept as fractions so it scales with the raster.
EIGEN_CROP_FRACTIONS = (45 / 480, 471 / 480, 41 / 640, 601 / 640)

ROTATION_RANGES = {"nyu": 2.5, "kitti": 1.0, "synth": 0.0}

# normalisation applied when an RGB raster becomes a network input
IMAGE_MEAN = 0.5
IMAGE_STD = 0.25


@dataclass
class DepthSample:
    rgb: np.ndarray  # H×W×3
    depth: np.ndarray  # H×W
    mask: np.ndarray  # H×W bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape[:2]


def image_to_input(rgb: np.ndarray) -> np.ndarray:
    """H×W×3 RGB raster to a normalised 3×H×W network input."""
    return (np.transpose(np.asarray(rgb, dtype=np.float64), (2, 0, 1)) - IMAGE_MEAN) / IMAGE_STD


# ---------------------------------------------------------------------------
# DRF1 raster files
# ---------------------------------------------------------------------------
def encode_raster(raster: np.ndarray) -> bytes:
    arr = np.asarray(raster)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise ShapeError(f"raster must be H×W or H×W×C with positive extents, got {arr.shape}")
    arr = arr.astype("<f4")
    if not np.isfinite(arr).all():
        raise ValueError("raster contains non-finite values")
    h, w, c = arr.shape
    return HEADER.pack(RASTER_MAGIC, w, h, c) + arr.tobytes()


def decode_raster(buf: bytes) -> np.ndarray:
    """Parse a DRF1 file; single-channel rasters come back as H×W×1."""
    if len(buf) < 4 or buf[:4] != RASTER_MAGIC:
        raise FormatError("bad magic, expected b'DRF1'", 0)
    if len(buf) < HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, w, h, c = HEADER.unpack_from(buf)
    expected = HEADER.size + 4 * w * h * c
    if len(buf) < expected:
        raise FormatError(f"truncated payload: need {expected} bytes, have {len(buf)}", len(buf))
    if len(buf) > expected:
        raise FormatError("trailing bytes after payload", expected)
    arr = np.frombuffer(buf, dtype="<f4", offset=HEADER.size).reshape(h, w, c).astype(np.float32)
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr.reshape(-1)))[0])
        raise FormatError("non-finite payload value", HEADER.size + 4 * bad)
    return arr


def save_raster(path: str | Path, raster: np.ndarray) -> None:
    Path(path).write_bytes(encode_raster(raster))


def load_raster(path: str | Path) -> np.ndarray:
    return decode_raster(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------
@dataclass
class Plane:
    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    albedo: tuple[float, float, float]
    checker: float = 0.0  # checker cell size in metres; 0 disables the texture


@dataclass
class Sphere:
    center: tuple[float, float, float]
    radius: float
    albedo: tuple[float, float, float]


@dataclass
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    albedo: tuple[float, float, float]


@dataclass
class SceneSpec:
    """A pinhole camera at the origin looking down +z (x right, y down)."""

    seed: int
    height: int
    width: int
    primitives: list = field(default_factory=list)
    light_dir: tuple[float, float, float] = (-0.4, -0.7, -0.6)  # towards the light
    max_depth: float = 10.0
    focal: float | None = None  # pixels; defaults to the image width
    ambient: float = 0.15

    @property
    def f(self) -> float:
        return float(self.focal or self.width)


def camera_rays(spec: SceneSpec) -> np.ndarray:
    """Unit-z ray directions through pixel centres, shape H×W×3."""
    v, u = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)
    x = (u + 0.5 - spec.width / 2) / spec.f
    y = (v + 0.5 - spec.height / 2) / spec.f
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def _hit_plane(rays, prim: Plane):
    n = np.asarray(prim.normal, float)
    n = n / np.linalg.norm(n)
    denom = rays @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(denom) > 1e-12, (np.asarray(prim.point) @ n) / denom, np.inf)
    t = np.where(t > 0, t, np.inf)
    normals = np.where((denom < 0)[..., None], n, -n)
    return t, normals


def _hit_sphere(rays, prim: Sphere):
    c = np.asarray(prim.center, float)
    a = np.einsum("hwk,hwk->hw", rays, rays)
    b = rays @ c
    disc = b * b - a * (c @ c - prim.radius**2)
    with np.errstate(invalid="ignore"):
        t = (b - np.sqrt(disc)) / a
    t = np.where((disc >= 0) & (t > 0), t, np.inf)
    pts = rays * np.where(np.isfinite(t), t, 0.0)[..., None]
    normals = (pts - c) / prim.radius
    return t, normals


def _hit_box(rays, prim: Box):
    lo, hi = np.asarray(prim.lo, float), np.asarray(prim.hi, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo / rays
        t2 = hi / rays
    tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
    t = np.where((tmax >= tmin) & (tmin > 0), tmin, np.inf)
    pts = rays * np.where(np.isfinite(t), t, 0.0)[..., None]
    normals = np.zeros_like(rays)
    for axis in range(3):
        normals[..., axis] = np.where(np.isclose(pts[..., axis], lo[axis]), -1.0, 0.0)
        normals[..., axis] += np.where(np.isclose(pts[..., axis], hi[axis]), 1.0, 0.0)
    return t, normals


_HIT = {Plane: _hit_plane, Sphere: _hit_sphere, Box: _hit_box}


def synth_scene(spec: SceneSpec) -> DepthSample:
    """Ray-cast the nearest primitive per pixel and shade it with a Lambertian model."""
    if not spec.primitives:
        raise ConfigError("synth_scene: scene has no primitives")
    if spec.height % 32 or spec.width % 32:
        raise ConfigError(f"synth_scene: extents {spec.height}x{spec.width} must be multiples of 32")
    rays = camera_rays(spec)
    depth = np.full((spec.height, spec.width), np.inf)
    normal = np.zeros(rays.shape)
    albedo = np.zeros(rays.shape)
    for prim in spec.primitives:
        t, n = _HIT[type(prim)](rays, prim)
        closer = t < depth
        depth = np.where(closer, t, depth)
        normal[closer] = n[closer]
        col = np.broadcast_to(np.asarray(prim.albedo, float), rays.shape).copy()
        if isinstance(prim, Plane) and prim.checker > 0:
            pts = rays * np.where(np.isfinite(t), t, 0.0)[..., None]
            cells = np.floor(pts / prim.checker).astype(int).sum(axis=-1) % 2
            col *= np.where(cells == 1, 1.0, 0.55)[..., None]
        albedo[closer] = col[closer]
    if not np.isfinite(depth).all():
        raise ConfigError("synth_scene: primitives leave pixels uncovered; add a background plane")
    if depth.max() > spec.max_depth:
        raise ConfigError(f"synth_scene: depth {depth.max():.3f} exceeds max_depth {spec.max_depth}")
    light = np.asarray(spec.light_dir, float)
    light = light / np.linalg.norm(light)
    nn = normal / np.maximum(np.linalg.norm(normal, axis=-1, keepdims=True), 1e-12)
    shade = spec.ambient + (1 - spec.ambient) * np.clip(nn @ light, 0.0, 1.0)
    rgb = np.clip(albedo * shade[..., None], 0.0, 1.0)
    return DepthSample(rgb=rgb, depth=depth, mask=np.ones(depth.shape, bool))


def random_scene_spec(seed: int, height: int = 64, width: int = 64, max_depth: float = 10.0) -> SceneSpec:
    """A back wall, a floor, and a few random spheres and boxes."""
    rng = np.random.default_rng(seed)

    def colour():
        return tuple(rng.uniform(0.3, 1.0, size=3))

    wall_z = rng.uniform(0.6, 0.95) * max_depth
    prims: list = [
        Plane((0.0, 0.0, wall_z), (0.0, 0.0, -1.0), colour(), checker=rng.uniform(0.5, 1.5)),
        Plane((0.0, rng.uniform(0.8, 1.5), 0.0), (0.0, -1.0, 0.0), colour(), checker=rng.uniform(0.4, 1.0)),
    ]
    for _ in range(rng.integers(1, 4)):
        z = rng.uniform(0.25, 0.6) * max_depth
        r = rng.uniform(0.1, 0.25) * z
        prims.append(Sphere((rng.uniform(-0.3, 0.3) * z, rng.uniform(-0.25, 0.2) * z, z), r, colour()))
    for _ in range(rng.integers(0, 3)):
        z = rng.uniform(0.2, 0.55) * max_depth
        cx, cy = rng.uniform(-0.3, 0.3) * z, rng.uniform(-0.2, 0.2) * z
        sx, sy, sz = rng.uniform(0.08, 0.2, size=3) * z
        prims.append(Box((cx - sx, cy - sy, z), (cx + sx, cy + sy, z + 2 * sz), colour()))
    light = (rng.uniform(-0.6, 0.6), rng.uniform(-0.9, -0.3), -1.0)
    return SceneSpec(seed, height, width, prims, light, max_depth)


def synthetic_dataset(n: int, seed: int = 0, height: int = 64, width: int = 64, max_depth: float = 10.0):
    return [synth_scene(random_scene_spec(seed * 100_003 + i, height, width, max_depth)) for i in range(n)]


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------
@dataclass
class AugmentConfig:
    preset: str = "synth"
    hflip_prob: float = 0.5
    rotation_deg: float | None = None  # symmetric range; None takes the preset's range
    brightness: float = 0.0  # multiplicative jitter range, e.g. 0.1 → [0.9, 1.1]
    contrast: float = 0.0
    color: float = 0.0  # per-channel gain jitter range

    def __post_init__(self):
        if self.preset not in ROTATION_RANGES:
            raise ConfigError(f"augment.preset must be one of {sorted(ROTATION_RANGES)}, got {self.preset!r}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError("augment.hflip_prob must lie in [0, 1]")

    @property
    def rotation_range(self) -> tuple[float, float]:
        r = ROTATION_RANGES[self.preset] if self.rotation_deg is None else float(self.rotation_deg)
        return (-r, r)


def hflip(sample: DepthSample) -> DepthSample:
    return DepthSample(sample.rgb[:, ::-1].copy(), sample.depth[:, ::-1].copy(), sample.mask[:, ::-1].copy())


def rotate(sample: DepthSample, angle_deg: float) -> DepthSample:
    """Rotate about the image centre; depth uses nearest sampling and uncovered pixels are masked."""
    if angle_deg == 0:
        return DepthSample(sample.rgb.copy(), sample.depth.copy(), sample.mask.copy())
    kw = dict(angle=angle_deg, reshape=False, mode="constant", cval=0.0)
    rgb = np.stack([ndimage.rotate(sample.rgb[..., c], order=1, **kw) for c in range(3)], axis=-1)
    depth = ndimage.rotate(sample.depth, order=0, **kw)
    inside = ndimage.rotate(np.ones(sample.shape), order=0, **kw) > 0.5
    mask = ndimage.rotate(sample.mask.astype(float), order=0, **kw) > 0.5
    mask &= inside & (depth > 0)
    return DepthSample(np.clip(rgb, 0.0, 1.0), np.where(mask, depth, 0.0), mask)


def photometric(rgb: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    out = rgb.astype(np.float64)
    if cfg.contrast:
        c = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)
        out = (out - out.mean()) * c + out.mean()
    if cfg.brightness:
        out = out * rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)
    if cfg.color:
        out = out * rng.uniform(1 - cfg.color, 1 + cfg.color, size=3)
    return np.clip(out, 0.0, 1.0)


def augment(sample: DepthSample, cfg: AugmentConfig, rng: np.random.Generator) -> DepthSample:
    """Random flip and rotation (applied jointly) then photometric jitter on RGB only."""
    out = sample
    if rng.random() < cfg.hflip_prob:
        out = hflip(out)
    lo, hi = cfg.rotation_range
    if hi > lo:
        out = rotate(out, rng.uniform(lo, hi))
    if cfg.brightness or cfg.contrast or cfg.color:
        out = replace(out, rgb=photometric(out.rgb, cfg, rng))
    return out


# ---------------------------------------------------------------------------
# crops
# ---------------------------------------------------------------------------
def crop_window(shape: tuple[int, int], mode: str) -> tuple[int, int, int, int]:
    """(top, bottom, left, right) of the crop window for a raster of ``shape``."""
    h, w = shape
    if mode == "none":
        return 0, h, 0, w
    if mode == "kitti":
        ch, cw = KITTI_CROP
        if ch > h or cw > w:
            raise ShapeError(f"crop: kitti window {cw}×{ch} larger than raster {w}×{h}")
        left = (w - cw) // 2
        return h - ch, h, left, left + cw
    if mode == "eigen":
        t, b, l, r = EIGEN_CROP_FRACTIONS
        return int(round(t * h)), int(round(b * h)), int(round(l * w)), int(round(r * w))
    raise ConfigError(f"crop: unknown mode {mode!r}; expected none, kitti or eigen")


def crop(sample: DepthSample, mode: str = "none") -> DepthSample:
    t, b, l, r = crop_window(sample.shape, mode)
    return DepthSample(sample.rgb[t:b, l:r].copy(), sample.depth[t:b, l:r].copy(), sample.mask[t:b, l:r].copy())


# ---------------------------------------------------------------------------
# dataset directories: <root>/<split>/<id>.rgb.drf + <id>.depth.drf
# ---------------------------------------------------------------------------
def write_dataset(root: str | Path, split: str, samples: list[DepthSample]) -> list[Path]:
    d = Path(root) / split
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, s in enumerate(samples):
        stem = d / f"{i:05d}"
        save_raster(f"{stem}.rgb.drf", s.rgb)
        save_raster(f"{stem}.depth.drf", np.where(s.mask, s.depth, 0.0))
        paths.append(stem)
    return paths


def load_dataset(root: str | Path, split: str) -> tuple[list[str], list[DepthSample]]:
    d = Path(root) / split
    if not d.is_dir():
        raise ConfigError(f"dataset split directory {d} does not exist")
    ids = sorted(p.name[: -len(".rgb.drf")] for p in d.glob("*.rgb.drf"))
    if not ids:
        raise ConfigError(f"dataset split directory {d} holds no *.rgb.drf files")
    samples = []
    for i in ids:
        rgb = load_raster(d / f"{i}.rgb.drf").astype(np.float64)
        depth = load_raster(d / f"{i}.depth.drf")[..., 0].astype(np.float64)
        samples.append(DepthSample(rgb, depth, depth > 0))
    return ids, samples
