"""Dataset manifests, HR->LR degradation, patch sampling, augmentation and
mean normalisation.

A manifest is a text file with one HR image path per line ("#" comments
allowed), resolved relative to the manifest's directory.  Low-resolution
images are always derived by modcrop + antialiased bicubic downscaling, so a
cached LR file and an in-memory derivation are bit-identical.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ImageTooSmall
from .imaging import ImageU8, bicubic_resize, load_png, modcrop, planar_from_u8, to_u8, u8_from_planar


@dataclass
class DatasetManifest:
    name: str
    entries: list

    def __post_init__(self):
        if not self.entries:
            raise ContractError(f"manifest {self.name!r} has no entries")
        if len(set(map(str, self.entries))) != len(self.entries):
            raise ContractError(f"manifest {self.name!r} has duplicate paths")

    @staticmethod
    def load(path):
        path = Path(path)
        entries = []
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            entries.append((path.parent / line).resolve())
        return DatasetManifest(name=path.stem, entries=entries)


@dataclass(frozen=True)
class NormStats:
    mean_rgb: tuple

    def __post_init__(self):
        if len(self.mean_rgb) != 3 or not all(0.0 <= m <= 255.0 for m in self.mean_rgb):
            raise ContractError(f"mean_rgb must be three values in [0, 255], got {self.mean_rgb}")


@dataclass
class SamplePair:
    hr_patch: np.ndarray  # (3, P, P) float32, raw 0..255 scale
    lr_patch: np.ndarray  # (3, P/s, P/s) float32
    source_id: str
    origin: tuple  # (x, y) in LR coordinates


def make_lr(hr, scale):
    """Modcrop then antialiased bicubic downscale; result is 8-bit RGB."""
    if scale not in (2, 3, 4):
        raise ContractError(f"scale must be 2, 3 or 4, got {scale}")
    cropped = modcrop(hr, scale)
    lo = bicubic_resize(planar_from_u8(cropped), cropped.width // scale, cropped.height // scale, antialias=True)
    return u8_from_planar(lo)


def sample_patch(hr, lr, scale, rng, patch=192):
    """Aligned (HR, LR) crop pair with a uniformly random LR origin."""
    if patch % scale != 0:
        raise ContractError(f"patch size {patch} not divisible by scale {scale}")
    lp = patch // scale
    if lr.width < lp or lr.height < lp:
        raise ImageTooSmall(f"LR {lr.width}x{lr.height} cannot supply a {lp}x{lp} patch")
    if hr.width != lr.width * scale or hr.height != lr.height * scale:
        raise ContractError(
            f"HR {hr.width}x{hr.height} is not {scale}x the LR {lr.width}x{lr.height}"
        )
    x0 = int(rng.integers(0, lr.width - lp + 1))
    y0 = int(rng.integers(0, lr.height - lp + 1))
    lr_patch = lr.pixels[y0 : y0 + lp, x0 : x0 + lp].astype(np.float32).transpose(2, 0, 1)
    hx, hy = x0 * scale, y0 * scale
    hr_patch = hr.pixels[hy : hy + patch, hx : hx + patch].astype(np.float32).transpose(2, 0, 1)
    return SamplePair(hr_patch=hr_patch, lr_patch=lr_patch, source_id="", origin=(x0, y0))


def augment(pair, rng):
    """Independent coin flips for horizontal flip, vertical flip and a 90-degree
    rotation; the same transform is applied to both patches."""
    if pair.hr_patch.shape[1] != pair.hr_patch.shape[2]:
        raise ContractError("augment needs square patches")
    hflip, vflip, rot = (rng.random(3) < 0.5)
    hr, lr = pair.hr_patch, pair.lr_patch
    if hflip:
        hr, lr = hr[:, :, ::-1], lr[:, :, ::-1]
    if vflip:
        hr, lr = hr[:, ::-1, :], lr[:, ::-1, :]
    if rot:
        hr = np.rot90(hr, axes=(1, 2))
        lr = np.rot90(lr, axes=(1, 2))
    return SamplePair(
        hr_patch=np.ascontiguousarray(hr),
        lr_patch=np.ascontiguousarray(lr),
        source_id=pair.source_id,
        origin=pair.origin,
    )


def compute_mean(manifest):
    """Per-channel mean over all pixels of all manifest images (pixel-weighted,
    accumulated in float64)."""
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for entry in manifest.entries:
        img = load_png(entry)
        total += img.pixels.reshape(-1, 3).sum(axis=0, dtype=np.float64)
        count += img.width * img.height
    if count == 0:
        raise ContractError("manifest images contain no pixels")
    mean = total / count
    return NormStats(mean_rgb=tuple(float(m) for m in mean))


def normalize_array(arr, stats):
    """Subtract the per-channel mean from a (3, h, w) or (n, 3, h, w) array."""
    mean = np.asarray(stats.mean_rgb, dtype=arr.dtype)
    if arr.ndim == 3:
        return arr - mean[:, None, None]
    if arr.ndim == 4:
        return arr - mean[None, :, None, None]
    raise ContractError(f"normalize_array expects rank 3 or 4, got {arr.ndim}")


def denormalize_to_u8(arr, stats):
    """Add the per-channel mean back to a (3, h, w) array and convert to ImageU8."""
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"denormalize_to_u8 expects (3, h, w), got {arr.shape}")
    mean = np.asarray(stats.mean_rgb, dtype=np.float64)
    restored = arr.astype(np.float64) + mean[:, None, None]
    return ImageU8(to_u8(restored.transpose(1, 2, 0)))


def step_rng(seed, epoch, iteration):
    """Counter-based generator: identical streams for identical (seed, epoch,
    iteration) regardless of worker scheduling."""
    return np.random.default_rng(np.random.SeedSequence((seed, epoch, iteration)))


def load_training_images(manifest, scale):
    """Load every manifest entry and derive its LR counterpart once."""
    images = []
    for entry in manifest.entries:
        hr = load_png(entry)
        hr = modcrop(hr, scale)
        images.append((str(entry), hr, make_lr(hr, scale)))
    return images
