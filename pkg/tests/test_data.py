import numpy as np
import pytest

from amsr.data import (
    DatasetManifest,
    NormStats,
    SamplePair,
    augment,
    compute_mean,
    denormalize_to_u8,
    load_training_images,
    make_lr,
    normalize_array,
    sample_patch,
    step_rng,
)
from amsr.errors import ContractError, ImageTooSmall
from amsr.imaging import ImageU8, save_png

from conftest import make_test_card, write_manifest


# ---------------------------------------------------------------------------
# manifests


def test_manifest_parsing_comments_and_relative_paths(tmp_path):
    folder = tmp_path / "ds"
    folder.mkdir()
    save_png(make_test_card(16, 16), folder / "a.png")
    save_png(make_test_card(16, 16, seed=1), folder / "b.png")
    mpath = folder / "list.txt"
    mpath.write_text("# heading\n\na.png\nb.png\n")
    manifest = DatasetManifest.load(mpath)
    assert manifest.name == "list"
    assert [p.name for p in manifest.entries] == ["a.png", "b.png"]
    assert all(p.is_absolute() for p in manifest.entries)


def test_manifest_empty_rejected(tmp_path):
    mpath = tmp_path / "empty.txt"
    mpath.write_text("# nothing\n")
    with pytest.raises(ContractError):
        DatasetManifest.load(mpath)


def test_manifest_duplicates_rejected(tmp_path):
    mpath = tmp_path / "dup.txt"
    mpath.write_text("a.png\na.png\n")
    with pytest.raises(ContractError):
        DatasetManifest.load(mpath)


# ---------------------------------------------------------------------------
# degradation


def test_make_lr_dimensions(test_card):
    lr = make_lr(test_card, 2)
    assert (lr.width, lr.height) == (48, 48)


def test_make_lr_constant_stays_constant():
    img = ImageU8(np.full((20, 20, 3), 77, np.uint8))
    lr = make_lr(img, 2)
    assert (lr.pixels == 77).all()


def test_make_lr_shape_only_no_fixed_point(test_card):
    lr = make_lr(test_card, 2)
    from amsr.imaging import bicubic_resize_u8

    up = bicubic_resize_u8(lr, 96, 96, antialias=False)
    down_again = make_lr(up, 2)
    assert (down_again.width, down_again.height) == (48, 48)


def test_make_lr_invalid_scale():
    with pytest.raises(ContractError):
        make_lr(make_test_card(), 5)


def test_make_lr_image_smaller_than_scale():
    with pytest.raises(ContractError):
        make_lr(ImageU8(np.zeros((1, 1, 3), np.uint8)), 2)


def test_loaded_training_pairs_align_bitwise(tmp_path, test_card):
    manifest_path = write_manifest(tmp_path, [test_card], name="train")
    images = load_training_images(DatasetManifest.load(manifest_path), 2)
    _, hr, lr = images[0]
    np.testing.assert_array_equal(make_lr(hr, 2).pixels, lr.pixels)


# ---------------------------------------------------------------------------
# patch sampling


def test_sample_patch_sizes_scale4():
    card = make_test_card(192, 192)
    lr = make_lr(card, 4)
    pair = sample_patch(card, lr, 4, np.random.default_rng(0), patch=192)
    assert pair.lr_patch.shape == (3, 48, 48)
    assert pair.hr_patch.shape == (3, 192, 192)


def test_sample_patch_alignment(test_card):
    lr = make_lr(test_card, 2)
    rng = np.random.default_rng(1)
    pair = sample_patch(test_card, lr, 2, rng, patch=32)
    x0, y0 = pair.origin
    np.testing.assert_array_equal(
        pair.lr_patch, lr.pixels[y0 : y0 + 16, x0 : x0 + 16].astype(np.float32).transpose(2, 0, 1)
    )
    np.testing.assert_array_equal(
        pair.hr_patch,
        test_card.pixels[2 * y0 : 2 * y0 + 32, 2 * x0 : 2 * x0 + 32].astype(np.float32).transpose(2, 0, 1),
    )


def test_sample_patch_seeded_reproducible(test_card):
    lr = make_lr(test_card, 2)
    origins_a = [sample_patch(test_card, lr, 2, np.random.default_rng(7), patch=24).origin for _ in range(1)]
    origins_b = [sample_patch(test_card, lr, 2, np.random.default_rng(7), patch=24).origin for _ in range(1)]
    assert origins_a == origins_b


def test_sample_patch_origin_bounds():
    card = make_test_card(256, 224)
    lr = make_lr(card, 4)
    rng = np.random.default_rng(2)
    for _ in range(50):
        pair = sample_patch(card, lr, 4, rng, patch=192)
        x0, y0 = pair.origin
        assert 0 <= x0 <= lr.width - 48
        assert 0 <= y0 <= lr.height - 48


def test_sample_patch_too_small_signals_skip():
    card = make_test_card(32, 32)
    lr = make_lr(card, 2)
    with pytest.raises(ImageTooSmall):
        sample_patch(card, lr, 2, np.random.default_rng(0), patch=192)


def test_patch_downscale_agrees_with_lr_crop_interior():
    # downscaling the HR patch on its own reproduces the LR crop except within
    # the antialias kernel's reach of the patch border (2 LR px at scale 2),
    # where the standalone patch clamps against different context
    card = make_test_card(96, 96)
    lr = make_lr(card, 2)
    pair = sample_patch(card, lr, 2, np.random.default_rng(0), patch=48)
    patch_img = ImageU8(np.ascontiguousarray(pair.hr_patch.transpose(1, 2, 0)).astype(np.uint8))
    lr_of_patch = make_lr(patch_img, 2).pixels
    lr_crop = pair.lr_patch.transpose(1, 2, 0).astype(np.uint8)
    np.testing.assert_array_equal(lr_of_patch[2:-2, 2:-2], lr_crop[2:-2, 2:-2])


# ---------------------------------------------------------------------------
# augmentation


class _FixedCoins:
    def __init__(self, coins):
        self.coins = np.asarray(coins, dtype=np.float64)

    def random(self, n):
        return np.where(self.coins[:n], 0.0, 1.0)  # < 0.5 means flip taken


def _pair(seed=0, patch=16):
    card = make_test_card(64, 64, seed=seed)
    lr = make_lr(card, 2)
    return sample_patch(card, lr, 2, np.random.default_rng(seed), patch=patch)


def test_augment_all_coins_false_is_identity():
    pair = _pair()
    out = augment(pair, _FixedCoins([False, False, False]))
    np.testing.assert_array_equal(out.hr_patch, pair.hr_patch)
    np.testing.assert_array_equal(out.lr_patch, pair.lr_patch)


def test_augment_hflip_is_involution():
    pair = _pair(seed=1)
    once = augment(pair, _FixedCoins([True, False, False]))
    twice = augment(once, _FixedCoins([True, False, False]))
    np.testing.assert_array_equal(twice.hr_patch, pair.hr_patch)
    np.testing.assert_array_equal(twice.lr_patch, pair.lr_patch)


def test_augment_rot90_commutes_with_downscale():
    # brute force on a ramp: downscaling a rotated HR equals rotating the
    # downscaled HR (square image, exact resampler symmetry)
    ramp = np.zeros((8, 8, 3), np.uint8)
    ramp[..., 0] = np.tile(np.arange(0, 248, 31, dtype=np.uint8), (8, 1))
    ramp[..., 1] = 128
    ramp[..., 2] = np.tile(np.arange(0, 248, 31, dtype=np.uint8), (8, 1)).T
    img = ImageU8(ramp)
    rotated = ImageU8(np.ascontiguousarray(np.rot90(ramp, axes=(0, 1))))
    a = make_lr(rotated, 2).pixels
    b = np.rot90(make_lr(img, 2).pixels, axes=(0, 1))
    np.testing.assert_array_equal(a, b)


def test_augment_preserves_shapes_and_requires_square():
    pair = _pair(seed=2)
    out = augment(pair, np.random.default_rng(3))
    assert out.hr_patch.shape == pair.hr_patch.shape
    assert out.lr_patch.shape == pair.lr_patch.shape
    bad = SamplePair(
        hr_patch=np.zeros((3, 8, 6), np.float32),
        lr_patch=np.zeros((3, 4, 3), np.float32),
        source_id="",
        origin=(0, 0),
    )
    with pytest.raises(ContractError):
        augment(bad, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# mean normalisation


def test_compute_mean_constant_gray(tmp_path):
    img = ImageU8(np.full((8, 8, 3), 128, np.uint8))
    manifest = write_manifest(tmp_path, [img], name="gray")
    stats = compute_mean(DatasetManifest.load(manifest))
    assert stats.mean_rgb == (128.0, 128.0, 128.0)


def test_compute_mean_weighted_by_pixel_count(tmp_path):
    one = ImageU8(np.full((1, 1, 3), 10, np.uint8))
    nine = ImageU8(np.full((3, 3, 3), 20, np.uint8))
    manifest = write_manifest(tmp_path, [one, nine], name="weighted")
    stats = compute_mean(DatasetManifest.load(manifest))
    expected = (10 * 1 + 20 * 9) / 10
    assert stats.mean_rgb == (expected, expected, expected)


def test_normalize_denormalize_roundtrip(test_card):
    stats = NormStats((100.0, 110.0, 120.0))
    arr = test_card.pixels.astype(np.float32).transpose(2, 0, 1)
    back = denormalize_to_u8(normalize_array(arr, stats).astype(np.float64), stats)
    assert np.abs(back.pixels.astype(int) - test_card.pixels.astype(int)).max() <= 1


def test_norm_stats_bounds():
    with pytest.raises(ContractError):
        NormStats((300.0, 0.0, 0.0))


# ---------------------------------------------------------------------------
# deterministic streams


def test_step_rng_counter_based():
    a = step_rng(1, 2, 3).integers(0, 1000, 8)
    b = step_rng(1, 2, 3).integers(0, 1000, 8)
    c = step_rng(1, 2, 4).integers(0, 1000, 8)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
