import numpy as np
import pytest

from amsr.errors import ContractError
from amsr.imaging import ImagePlanar, ImageU8, to_u8
from amsr.metrics import aggregate, evaluate_pair, psnr, ssim


def _brute_force_ssim(x, y):
    """Direct per-window reference: no separable or sliding tricks."""
    g = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5**2))
    g /= g.sum()
    win = np.outer(g, g)
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    h, w = x.shape
    vals = []
    for i in range(h - 10):
        for j in range(w - 10):
            wx = x[i : i + 11, j : j + 11]
            wy = y[i : i + 11, j : j + 11]
            mx = (win * wx).sum()
            my = (win * wy).sum()
            vx = (win * wx * wx).sum() - mx * mx
            vy = (win * wy * wy).sum() - my * my
            cxy = (win * wx * wy).sum() - mx * my
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def _plane(arr):
    return ImagePlanar(np.asarray(arr, dtype=np.float64)[None])


# ---------------------------------------------------------------------------
# PSNR


def test_psnr_identical_images_infinite():
    a = _plane(np.random.default_rng(0).uniform(0, 255, (16, 16)))
    assert psnr(a, a, 0) == float("inf")


def test_psnr_unit_difference_closed_form():
    a = _plane(np.full((8, 8), 100.0))
    b = _plane(np.full((8, 8), 101.0))
    assert psnr(a, b, 0) == pytest.approx(20 * np.log10(255.0), abs=1e-9)
    assert psnr(a, b, 0) == pytest.approx(48.1308, abs=1e-4)


def test_psnr_shave_compares_interior_only():
    base = np.full((8, 8), 50.0)
    noisy = base.copy()
    noisy[0, :] = 255.0  # damage confined to the shaved border
    noisy[:, -1] = 255.0
    assert psnr(_plane(base), _plane(noisy), 2) == float("inf")
    assert np.isfinite(psnr(_plane(base), _plane(noisy), 0))


def test_psnr_dim_mismatch_rejected():
    with pytest.raises(ContractError):
        psnr(_plane(np.zeros((8, 8))), _plane(np.zeros((8, 9))), 0)


def test_psnr_excessive_shave_rejected():
    with pytest.raises(ContractError):
        psnr(_plane(np.zeros((8, 8))), _plane(np.zeros((8, 8))), 4)


def test_psnr_decreases_with_noise_amplitude():
    rng = np.random.default_rng(1)
    base = rng.uniform(30, 220, (32, 32))
    noise = rng.standard_normal((32, 32))
    values = []
    for amp in (1.0, 4.0, 16.0):
        noisy = np.clip(base + amp * noise, 0, 255)
        values.append(psnr(_plane(base), _plane(noisy), 0))
    assert values[0] > values[1] > values[2]


# ---------------------------------------------------------------------------
# SSIM


def test_ssim_self_is_exactly_one():
    x = _plane(np.random.default_rng(2).uniform(0, 255, (24, 24)))
    assert ssim(x, x, 0) == 1.0


def test_ssim_constant_luminance_shift_penalised():
    a = _plane(np.full((16, 16), 100.0))
    b = _plane(np.full((16, 16), 120.0))
    value = ssim(a, b, 0)
    assert 0.0 < value < 1.0


def test_ssim_matches_brute_force_oracle():
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 255, (32, 32))
    y = np.clip(x + rng.normal(0, 12, (32, 32)), 0, 255)
    assert abs(ssim(_plane(x), _plane(y), 0) - _brute_force_ssim(x, y)) < 1e-6


def test_ssim_symmetric():
    rng = np.random.default_rng(4)
    x = rng.uniform(0, 255, (20, 20))
    y = rng.uniform(0, 255, (20, 20))
    assert abs(ssim(_plane(x), _plane(y), 0) - ssim(_plane(y), _plane(x), 0)) < 1e-12


def test_ssim_bounded():
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = rng.uniform(0, 255, (16, 16))
        y = rng.uniform(0, 255, (16, 16))
        v = ssim(_plane(x), _plane(y), 0)
        assert -1.0 <= v <= 1.0


def test_ssim_window_too_large_rejected():
    with pytest.raises(ContractError):
        ssim(_plane(np.zeros((10, 10))), _plane(np.zeros((10, 10))), 0)


# ---------------------------------------------------------------------------
# evaluate_pair / aggregation


def test_evaluate_pair_identity(test_card):
    rec = evaluate_pair(test_card, test_card, 2)
    assert rec.psnr_db == float("inf")
    assert rec.ssim == 1.0
    assert rec.shave == 2


def test_evaluate_pair_carries_shave_equals_scale(test_card):
    noisy = ImageU8(to_u8(test_card.pixels.astype(np.float64) + 3.0))
    for scale in (2, 3, 4):
        rec = evaluate_pair(test_card, noisy, scale)
        assert rec.shave == scale
        assert np.isfinite(rec.psnr_db)


def test_evaluate_pair_dim_mismatch(test_card):
    small = ImageU8(test_card.pixels[:64, :64].copy())
    with pytest.raises(ContractError):
        evaluate_pair(test_card, small, 2)


def test_aggregate_is_arithmetic_mean():
    from amsr.metrics import MetricRecord

    recs = [
        MetricRecord("a", 30.0, 0.9, 2, 2),
        MetricRecord("b", 34.0, 0.8, 2, 2),
    ]
    mean_psnr, mean_ssim = aggregate(recs)
    assert mean_psnr == pytest.approx(32.0)
    assert mean_ssim == pytest.approx(0.85)


def test_aggregate_drops_infinite_with_warning():
    from amsr.metrics import MetricRecord

    recs = [
        MetricRecord("a", float("inf"), 1.0, 2, 2),
        MetricRecord("b", 30.0, 0.9, 2, 2),
    ]
    with pytest.warns(UserWarning):
        mean_psnr, _ = aggregate(recs)
    assert mean_psnr == pytest.approx(30.0)
