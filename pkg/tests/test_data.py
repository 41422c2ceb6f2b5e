import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fundusnet.data import netpbm
from fundusnet.data.manifest import (HEALTHY, MD, Manifest, ManifestError, Record,
                                     balance_downsample, stratified_split, train_count)
from fundusnet.data.netpbm import FormatError, Image, read_pgm, read_ppm, write_pgm, write_ppm
from fundusnet.data.transforms import (AugmentPolicy, augment, crop_black_border, from_tensor,
                                       hflip, resize_bilinear, rotate, to_tensor, vflip)
from fundusnet.rng import Rng

pixels = arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)))


def img(rows):
    return Image(np.array(rows, dtype=np.uint8))


# --- netpbm -----------------------------------------------------------------

def test_red_pixel_encoding():
    data = write_ppm(img([[[255, 0, 0]]]))
    assert data == b"P6\n1 1\n255\n\xff\x00\x00"
    assert read_ppm(data) == img([[[255, 0, 0]]])


@given(pixels)
def test_ppm_round_trip(p):
    image = Image(p)
    data = write_ppm(image)
    assert read_ppm(data) == image
    assert write_ppm(read_ppm(data)) == data


@given(arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6))))
def test_pgm_round_trip(g):
    assert np.array_equal(read_pgm(write_pgm(g)), g)


def test_comments_tolerated():
    data = b"P6\n# made by hand\n1 # width done\n1\n255\n\x01\x02\x03"
    assert read_ppm(data).pixels.tolist() == [[[1, 2, 3]]]


def test_truncated_payload_reports_offset():
    data = b"P6\n2 2\n255\n" + bytes(11)
    with pytest.raises(FormatError) as exc:
        read_ppm(data)
    assert exc.value.offset == len(data)
    assert "offset" in str(exc.value)


@pytest.mark.parametrize("data, offset", [
    (b"P3\n1 1\n255\n", 0),
    (b"P6\n1 x\n255\n", 5),
    (b"P6\n1 1\n65535\n" + bytes(6), 12),
    (b"P6\n1 1", 6),
])
def test_malformed_headers(data, offset):
    with pytest.raises(FormatError) as exc:
        read_ppm(data)
    assert exc.value.offset == offset


# --- crop / resize / flips / rotation ----------------------------------------

def test_crop_white_square():
    p = np.zeros((10, 10, 3), np.uint8)
    p[3:7, 3:7] = 255
    out = crop_black_border(Image(p))
    assert out.pixels.shape == (4, 4, 3) and np.all(out.pixels == 255)
    assert crop_black_border(out) == out


def test_crop_all_black_unchanged():
    image = Image(np.full((5, 7, 3), 15, np.uint8))
    assert crop_black_border(image, 15) == image


def test_crop_uses_channel_mean():
    p = np.zeros((3, 3, 3), np.uint8)
    p[1, 1] = (46, 0, 0)  # mean 15.33 > 15
    p[0, 0] = (45, 0, 0)  # mean 15, not above
    assert crop_black_border(Image(p)).pixels.shape == (1, 1, 3)


def test_resize_hand_values():
    out = resize_bilinear(img([[[0] * 3, [255] * 3]]), 4, 1)
    assert out.pixels[0, :, 0].tolist() == [0, 64, 191, 255]


@given(pixels)
def test_resize_identity(p):
    assert resize_bilinear(Image(p), p.shape[1], p.shape[0]) == Image(p)


@given(st.integers(0, 255), st.integers(1, 9), st.integers(1, 9))
def test_resize_constant(v, w, h):
    out = resize_bilinear(Image(np.full((3, 5, 3), v, np.uint8)), w, h)
    assert out.pixels.shape == (h, w, 3) and np.all(out.pixels == v)


def test_flips():
    a, b = [1, 2, 3], [4, 5, 6]
    assert hflip(img([[a, b]])) == img([[b, a]])
    assert vflip(img([[a], [b]])) == img([[b], [a]])


@given(pixels)
def test_flips_are_involutions(p):
    image = Image(p)
    assert hflip(hflip(image)) == image and vflip(vflip(image)) == image


@given(pixels)
def test_rotate_lattice_angles(p):
    image = Image(p)
    assert rotate(image, 0) == image
    assert np.array_equal(rotate(image, 180).pixels, p[::-1, ::-1])


@given(st.integers(1, 6).flatmap(lambda n: arrays(np.uint8, (n, n, 3))))
def test_rotate_90_is_transpose_and_reverse(p):
    # counter-clockwise as displayed: destination (i, j) reads source (j, n-1-i)
    n = p.shape[0]
    expected = np.empty_like(p)
    for i in range(n):
        for j in range(n):
            expected[i, j] = p[j, n - 1 - i]
    assert np.array_equal(rotate(Image(p), 90).pixels, expected)
    assert np.array_equal(rotate(Image(p), -270).pixels, expected)


def naive_rotate(p, angle):
    h, w, _ = p.shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    c, s = math.cos(math.radians(angle)), math.sin(math.radians(angle))
    out = np.zeros((h, w, 3))
    for i in range(h):
        for j in range(w):
            sx = cx + c * (j - cx) - s * (i - cy)
            sy = cy + s * (j - cx) + c * (i - cy)
            if not (0 <= sx <= w - 1 and 0 <= sy <= h - 1):
                continue
            x0, y0 = int(math.floor(sx)), int(math.floor(sy))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            fx, fy = sx - x0, sy - y0
            out[i, j] = ((p[y0, x0] * (1 - fx) + p[y0, x1] * fx) * (1 - fy)
                         + (p[y1, x0] * (1 - fx) + p[y1, x1] * fx) * fy)
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def test_rotate_matches_naive_sampler():
    g = np.random.default_rng(0)
    for angle in (13.0, -7.5, 25.0, 141.0):
        p = g.integers(0, 256, (9, 11, 3), dtype=np.uint8)
        diff = np.abs(rotate(Image(p), angle).pixels.astype(int) - naive_rotate(p, angle))
        assert diff.max() <= 1 and (diff > 0).mean() < 0.02


# --- augmentation -------------------------------------------------------------

def test_augment_consumes_three_draws():
    rng, probe = Rng(17), Rng(17)
    augment(Image(np.zeros((4, 4, 3), np.uint8)), rng)
    probe.u64s(3)
    assert rng.next_u64() == probe.next_u64()


def test_augment_identity_when_nothing_fires():
    image = Image(np.random.default_rng(1).integers(0, 256, (6, 5, 3), dtype=np.uint8))
    policy = AugmentPolicy(hflip=0.0, vflip=0.0, rotation=0.0)
    assert augment(image, Rng(3), policy) == image


def test_augment_deterministic():
    image = Image(np.random.default_rng(2).integers(0, 256, (8, 8, 3), dtype=np.uint8))
    assert augment(image, Rng(5)) == augment(image, Rng(5))


def test_hflip_rate():
    rng = Rng(123)
    image = Image(np.array([[[0, 0, 0], [255, 255, 255]]], np.uint8))
    policy = AugmentPolicy(hflip=0.5, vflip=0.5, rotation=0.0)
    flipped = sum(augment(image, rng, policy).pixels[0, 0, 0] == 255 for _ in range(10_000))
    assert abs(flipped / 10_000 - 0.5) < 0.02


# --- tensors -------------------------------------------------------------------

def test_to_tensor_scale_and_layout():
    t = to_tensor(img([[[255, 0, 51]]]))
    assert t.shape == (3, 1, 1) and t.ravel().tolist() == [1.0, 0.0, 0.2]


@given(pixels)
def test_tensor_round_trip(p):
    image = Image(p)
    assert from_tensor(to_tensor(image)) == image
    assert np.array_equal(to_tensor(from_tensor(to_tensor(image))), to_tensor(image))


# --- manifests -----------------------------------------------------------------

def make_manifest(n_healthy, n_md):
    records = [Record(f"h{i:04d}.ppm", HEALTHY) for i in range(n_healthy)]
    records += [Record(f"m{i:04d}.ppm", MD) for i in range(n_md)]
    return Manifest(tuple(records))


def test_manifest_csv_round_trip_and_errors():
    m = make_manifest(2, 3)
    text = m.to_csv()
    assert text.startswith("path,label\n") and "\r" not in text
    assert Manifest.from_csv(text) == m
    with pytest.raises(ManifestError):
        Manifest.from_csv("path,label\na.ppm,glaucoma\n")
    with pytest.raises(ManifestError):
        Manifest.from_csv("path,label\na.ppm,healthy\na.ppm,healthy\n")
    with pytest.raises(ManifestError):
        Manifest.from_csv("file,class\n")


def test_balance_525_to_299():
    m = make_manifest(525, 299)
    out = balance_downsample(m, Rng(0))
    assert out.counts() == {HEALTHY: 299, MD: 299}
    assert [r for r in out.records if r.label == MD] == [r for r in m.records if r.label == MD]
    index = {r.path: i for i, r in enumerate(m.records)}
    assert [index[r.path] for r in out.records] == sorted(index[r.path] for r in out.records)
    assert out == balance_downsample(m, Rng(0))
    assert out != balance_downsample(m, Rng(1))


def test_balance_noop_and_errors():
    m = make_manifest(4, 4)
    assert balance_downsample(m, Rng(0)) == m
    with pytest.raises(ManifestError):
        balance_downsample(make_manifest(3, 0), Rng(0))


@pytest.mark.parametrize("ratio, train, test", [(0.9, 270, 29), (0.8, 240, 59), (0.5, 150, 149)])
def test_split_ceil_rule(ratio, train, test):
    m = make_manifest(299, 299)
    s = stratified_split(m, ratio, seed=7)
    assert s.train.counts() == {HEALTHY: train, MD: train}
    assert s.test.counts() == {HEALTHY: test, MD: test}
    tr, te = {r.path for r in s.train.records}, {r.path for r in s.test.records}
    assert not tr & te and tr | te == {r.path for r in m.records}


def test_split_small_and_deterministic():
    m = make_manifest(4, 4)
    s = stratified_split(m, 0.5, 3)
    assert s.train.counts() == s.test.counts() == {HEALTHY: 2, MD: 2}
    assert stratified_split(m, 0.5, 3) == s


def test_split_errors():
    for ratio in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            stratified_split(make_manifest(4, 4), ratio, 0)
    with pytest.raises(ManifestError):
        stratified_split(make_manifest(4, 1), 0.5, 0)


@settings(max_examples=200)
@given(st.integers(2, 1000), st.floats(0.01, 0.99))
def test_train_count_is_ceil_but_keeps_a_test_record(n, ratio):
    k = train_count(n, ratio)
    assert 1 <= k <= n - 1
    exact = n * ratio
    if math.ceil(exact) <= n - 1 and abs(exact - round(exact)) > 1e-6:
        assert k == math.ceil(exact)
