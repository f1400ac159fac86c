import numpy as np
import pytest

from amsr.imaging import ImageU8, save_png


def make_test_card(w=96, h=96, seed=0):
    """Structured synthetic image: gradients, sharp stripes, rectangles, a fine
    checker patch and mild noise.  Bicubic upscaling struggles on the sharp
    regions, which gives training something to beat."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r = 40 + 150 * xx / w
    g = 40 + 150 * yy / h
    b = 90 + 60 * np.sin(2 * np.pi * (xx + 2 * yy) / 24)
    img = np.stack([r, g, b], axis=-1)
    stripes = (xx + yy) % 6 < 3
    band = (yy > h * 0.55) & (yy < h * 0.85)
    img[band & stripes] = [230, 60, 60]
    img[band & ~stripes] = [30, 30, 120]
    img[10:30, 10:40] = [250, 210, 40]
    img[12:28, 60:88] = [20, 160, 90]
    checker = (xx // 2 + yy // 2) % 2 == 0
    zone = (yy < 20) & (xx > 44) & (xx < 56)
    img[zone & checker] = [240, 240, 240]
    img[zone & ~checker] = [15, 15, 15]
    img += rng.normal(0, 2.0, img.shape)
    return ImageU8(np.clip(img, 0, 255).astype(np.uint8))


def make_smooth_image(w=64, h=64, seed=1):
    """Heavily band-limited image (sum of low-frequency waves)."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    planes = []
    for _ in range(3):
        a, b, c = rng.uniform(0.2, 1.0, 3)
        plane = (
            128
            + 50 * a * np.sin(2 * np.pi * xx / w)
            + 40 * b * np.cos(2 * np.pi * yy / h)
            + 20 * c * np.sin(2 * np.pi * (xx + yy) / (w + h))
        )
        planes.append(plane)
    return ImageU8(np.clip(np.stack(planes, axis=-1), 0, 255).astype(np.uint8))


def write_manifest(tmp_path, images, name="set"):
    """Save images as PNGs and return the path of a manifest listing them."""
    folder = tmp_path / name
    folder.mkdir(parents=True, exist_ok=True)
    lines = ["# test manifest"]
    for i, img in enumerate(images):
        fname = f"img_{i:02d}.png"
        save_png(img, folder / fname)
        lines.append(fname)
    manifest = folder / f"{name}.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


@pytest.fixture
def test_card():
    return make_test_card()


@pytest.fixture
def smooth_image():
    return make_smooth_image()
