import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgedepth.data import (
    EIGEN_CROP_FRACTIONS,
    AugmentConfig,
    DepthSample,
    Plane,
    SceneSpec,
    Sphere,
    augment,
    camera_rays,
    crop,
    decode_raster,
    encode_raster,
    hflip,
    load_dataset,
    load_raster,
    photometric,
    random_scene_spec,
    rotate,
    save_raster,
    synth_scene,
    synthetic_dataset,
    write_dataset,
)
from edgedepth.errors import ConfigError, FormatError, ShapeError


def _sample(rng, h=8, w=10):
    return DepthSample(rng.random((h, w, 3)), rng.uniform(1, 5, (h, w)), rng.random((h, w)) > 0.2)


def test_single_value_raster_layout(tmp_path):
    # magic + three u32 extents + one f32: 4 + 12 + 4 bytes
    save_raster(tmp_path / "a.drf", np.array([[3.5]]))
    raw = (tmp_path / "a.drf").read_bytes()
    assert len(raw) == 20
    assert raw == b"DRF1" + struct.pack("<IIIf", 1, 1, 1, 3.5)
    assert load_raster(tmp_path / "a.drf").tolist() == [[[3.5]]]


def test_payload_size_three_channels():
    buf = encode_raster(np.zeros((2, 2, 3)))
    assert len(buf) - 16 == 48


def test_width_height_order_in_header():
    buf = encode_raster(np.zeros((2, 5, 1)))
    assert struct.unpack_from("<III", buf, 4) == (5, 2, 1)


def test_randomized_rasters_roundtrip_bitwise():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        shape = tuple(int(v) for v in rng.integers(1, 9, size=3))
        x = (rng.normal(size=shape) * 10.0 ** rng.integers(-3, 4)).astype(np.float32)
        y = decode_raster(encode_raster(x))
        assert y.dtype == np.float32 and y.shape == shape
        assert y.tobytes() == x.tobytes()


def test_raster_errors():
    buf = encode_raster(np.ones((2, 2, 1)))
    with pytest.raises(FormatError) as e:
        decode_raster(b"DRF2" + buf[4:])
    assert e.value.offset == 0 and "offset 0" in str(e.value)
    with pytest.raises(FormatError) as e:
        decode_raster(buf[:-2])
    assert e.value.offset == len(buf) - 2
    with pytest.raises(FormatError):
        decode_raster(buf[:10])
    with pytest.raises(FormatError):
        decode_raster(buf + b"\0\0\0\0")
    with pytest.raises(FormatError):
        decode_raster(buf[:16] + struct.pack("<4f", 1, np.nan, 1, 1))


def test_fronto_parallel_plane_constant_depth():
    s = synth_scene(SceneSpec(0, 32, 64, [Plane((0, 0, 5.0), (0, 0, -1), (0.5, 0.5, 0.5))]))
    assert np.all(s.depth == 5.0) and s.mask.all()
    assert s.rgb.shape == (32, 64, 3)


def test_sphere_centre_pixel_depth():
    spec = SceneSpec(0, 32, 32, [Plane((0, 0, 9.0), (0, 0, -1), (1, 1, 1))])
    ray = camera_rays(spec)[16, 16]
    centre = ray * 6.0
    spec.primitives.append(Sphere(tuple(centre), 1.5, (1, 0, 0)))
    s = synth_scene(spec)
    # distance along the ray from the camera to the first surface
    assert s.depth[16, 16] * np.linalg.norm(ray) == pytest.approx(np.linalg.norm(centre) - 1.5, abs=1e-12)


def test_scene_errors():
    with pytest.raises(ConfigError):
        synth_scene(SceneSpec(0, 32, 32, []))
    with pytest.raises(ConfigError):
        synth_scene(SceneSpec(0, 30, 32, [Plane((0, 0, 5.0), (0, 0, -1), (1, 1, 1))]))
    with pytest.raises(ConfigError):
        synth_scene(SceneSpec(0, 32, 32, [Sphere((0, 0, 5), 0.1, (1, 1, 1))]))


def test_random_scenes_deterministic_and_bounded():
    a = synthetic_dataset(3, seed=4)
    b = synthetic_dataset(3, seed=4)
    for x, y in zip(a, b):
        assert np.array_equal(x.rgb, y.rgb) and np.array_equal(x.depth, y.depth)
        assert x.depth.min() > 0 and x.depth.max() <= 10.0
        assert x.rgb.min() >= 0 and x.rgb.max() <= 1
    assert not np.array_equal(a[0].depth, a[1].depth)


@given(st.integers(0, 10_000))
def test_random_scene_covers_every_pixel(seed):
    s = synth_scene(random_scene_spec(seed, 32, 32, max_depth=80.0))
    assert np.all(s.depth > 0) and s.depth.max() <= 80.0


def test_rotation_ranges():
    assert AugmentConfig(preset="nyu").rotation_range == (-2.5, 2.5)
    assert AugmentConfig(preset="kitti").rotation_range == (-1.0, 1.0)
    assert AugmentConfig(preset="kitti", rotation_deg=3).rotation_range == (-3.0, 3.0)
    with pytest.raises(ConfigError):
        AugmentConfig(preset="other")


def test_hflip_is_an_involution(rng):
    s = _sample(rng)
    t = hflip(hflip(s))
    assert np.array_equal(t.rgb, s.rgb) and np.array_equal(t.depth, s.depth) and np.array_equal(t.mask, s.mask)
    f = hflip(s)
    assert np.array_equal(f.depth[:, 0], s.depth[:, -1]) and np.array_equal(f.mask[:, 0], s.mask[:, -1])


def test_zero_rotation_is_identity(rng):
    s = _sample(rng)
    t = rotate(s, 0.0)
    assert np.array_equal(t.rgb, s.rgb) and np.array_equal(t.depth, s.depth) and np.array_equal(t.mask, s.mask)


def test_rotation_masks_border_and_keeps_depth_values(rng):
    s = DepthSample(rng.random((32, 32, 3)), rng.uniform(1, 5, (32, 32)), np.ones((32, 32), bool))
    t = rotate(s, 10.0)
    assert not t.mask[0, 0] and t.mask[16, 16]
    assert np.all(np.isin(t.depth[t.mask], s.depth))
    assert np.all(t.depth[~t.mask] == 0)


def test_photometric_never_touches_depth(rng):
    s = _sample(rng)
    cfg = AugmentConfig(preset="nyu", hflip_prob=0.0, rotation_deg=0.0, brightness=0.3, contrast=0.3, color=0.3)
    t = augment(s, cfg, np.random.default_rng(1))
    assert np.array_equal(t.depth, s.depth) and np.array_equal(t.mask, s.mask)
    assert not np.array_equal(t.rgb, s.rgb)
    assert t.rgb.min() >= 0 and t.rgb.max() <= 1
    assert photometric(s.rgb, AugmentConfig(), rng) is not s.rgb


def test_augment_deterministic_given_rng(rng):
    s = _sample(rng, 16, 16)
    cfg = AugmentConfig(preset="nyu", brightness=0.1)
    a = augment(s, cfg, np.random.default_rng(3))
    b = augment(s, cfg, np.random.default_rng(3))
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth, b.depth)


def test_kitti_crop_bottom_centre():
    h, w = 375, 1241
    depth = np.arange(h * w, dtype=float).reshape(h, w)
    s = crop(DepthSample(np.zeros((h, w, 3)), depth, np.ones((h, w), bool)), "kitti")
    assert s.depth.shape == (352, 1216)
    left = (1241 - 1216) // 2
    assert s.depth[-1, 0] == depth[-1, left]
    assert s.depth[0, 0] == depth[375 - 352, left]


def test_crop_modes(rng):
    s = _sample(rng, 480, 640)
    assert crop(s, "none").depth.shape == (480, 640)
    e = crop(s, "eigen")
    t, b, l, r = EIGEN_CROP_FRACTIONS
    assert e.depth.shape == (round(b * 480) - round(t * 480), round(r * 640) - round(l * 640)) == (426, 560)
    const = DepthSample(np.ones((400, 1300, 3)), np.full((400, 1300), 7.0), np.ones((400, 1300), bool))
    assert np.all(crop(const, "kitti").depth == 7.0)
    with pytest.raises(ShapeError):
        crop(s, "kitti")
    with pytest.raises(ConfigError):
        crop(s, "other")


def test_dataset_roundtrip(tmp_path):
    samples = synthetic_dataset(2, seed=1, height=32, width=32)
    samples[0].mask[0, :5] = False
    write_dataset(tmp_path, "train", samples)
    ids, back = load_dataset(tmp_path, "train")
    assert ids == ["00000", "00001"]
    assert np.array_equal(back[0].mask, samples[0].mask)
    np.testing.assert_allclose(back[1].depth, samples[1].depth, rtol=1e-6)
    with pytest.raises(ConfigError):
        load_dataset(tmp_path, "missing")
