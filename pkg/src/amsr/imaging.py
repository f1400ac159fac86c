"""Image I/O, colour conversion and bicubic resampling.

The resampler reproduces the classic MATLAB imresize convention: Keys cubic
kernel (a = -0.5), half-pixel-centred source coordinates, kernel stretched by
the scale factor when downscaling with antialiasing, taps normalised to sum 1,
replicated edges.  All resampling runs per-plane in float64; conversion to
8-bit clamps to [0, 255] and rounds half away from zero.
"""

from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ContractError, PngDecodeError, ShapeError


@dataclass(frozen=True)
class ImageU8:
    """Interleaved 8-bit RGB image, row-major (h, w, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ShapeError(f"ImageU8 needs (h, w, 3) uint8 pixels, got {p.shape} {p.dtype}")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass(frozen=True)
class ImagePlanar:
    """1- or 3-plane floating-point image, planes (p, h, w), values nominally in [0, 255]."""

    planes: np.ndarray

    def __post_init__(self):
        p = self.planes
        if p.ndim != 3 or p.shape[0] not in (1, 3):
            raise ShapeError(f"ImagePlanar needs (1|3, h, w) planes, got {p.shape}")

    @property
    def height(self):
        return self.planes.shape[1]

    @property
    def width(self):
        return self.planes.shape[2]


def to_u8(values):
    """Clamp to [0, 255] and round half away from zero."""
    return np.floor(np.clip(values, 0.0, 255.0) + 0.5).astype(np.uint8)


def load_png(path):
    """Read a PNG as 8-bit RGB.

    Grayscale is replicated across channels; palette, RGBA and 16-bit inputs
    are converted (truncated) to 8-bit RGB via Pillow.
    """
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
        raise PngDecodeError(path, e) from e
    return ImageU8(arr)


def save_png(img, path):
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")


# BT.601 studio swing on R, G, B in [0, 255]
_YCBCR_MATRIX = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0])
_YCBCR_INVERSE = np.linalg.inv(_YCBCR_MATRIX)


def rgb_to_ycbcr(img):
    """ImageU8 -> 3-plane ImagePlanar (Y, Cb, Cr), studio-swing BT.601."""
    rgb = img.pixels.astype(np.float64)
    ycc = rgb @ _YCBCR_MATRIX.T + _YCBCR_OFFSET
    return ImagePlanar(np.ascontiguousarray(ycc.transpose(2, 0, 1)))


def ycbcr_to_rgb(img):
    """3-plane YCbCr ImagePlanar -> ImageU8 (clamped, rounded half away from zero)."""
    if img.planes.shape[0] != 3:
        raise ShapeError("ycbcr_to_rgb needs 3 planes")
    ycc = img.planes.transpose(1, 2, 0)
    rgb = (ycc - _YCBCR_OFFSET) @ _YCBCR_INVERSE.T
    return ImageU8(to_u8(rgb))


def y_channel(img):
    """Luminance plane of an 8-bit RGB image as a 1-plane ImagePlanar."""
    return ImagePlanar(rgb_to_ycbcr(img).planes[:1])


def keys_cubic(x):
    """Keys piecewise-cubic interpolation kernel with a = -0.5."""
    ax = np.abs(np.asarray(x, dtype=np.float64))
    ax2 = ax * ax
    ax3 = ax2 * ax
    return np.where(
        ax <= 1,
        1.5 * ax3 - 2.5 * ax2 + 1.0,
        np.where(ax < 2, -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0, 0.0),
    )


def _contributions(in_len, out_len, antialias):
    """Tap indices (clamped to the valid range) and normalised weights for one axis."""
    scale = out_len / in_len
    if scale < 1.0 and antialias:
        width = 4.0 / scale

        def kernel(d):
            return scale * keys_cubic(scale * d)

    else:
        width = 4.0
        kernel = keys_cubic
    u = (np.arange(out_len, dtype=np.float64) + 0.5) / scale - 0.5
    left = np.floor(u - width / 2.0)
    taps = int(np.ceil(width)) + 2
    idx = left[:, None].astype(np.int64) + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - idx)
    weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(idx, 0, in_len - 1)
    return idx, weights


def _resize_axis(plane, idx, weights, axis):
    taps = idx.shape[1]
    if axis == 1:
        out = np.zeros((plane.shape[0], idx.shape[0]), dtype=np.float64)
        for t in range(taps):
            out += plane[:, idx[:, t]] * weights[None, :, t]
    else:
        out = np.zeros((idx.shape[0], plane.shape[1]), dtype=np.float64)
        for t in range(taps):
            out += plane[idx[:, t], :] * weights[:, t, None]
    return out


def bicubic_resize(img, out_w, out_h, antialias):
    """Separable bicubic resampling of an ImagePlanar; horizontal pass, then vertical."""
    if out_w < 1 or out_h < 1:
        raise ContractError(f"resize target {out_w}x{out_h} must be at least 1x1")
    in_h, in_w = img.height, img.width
    idx_w, wts_w = _contributions(in_w, out_w, antialias)
    idx_h, wts_h = _contributions(in_h, out_h, antialias)
    out = np.empty((img.planes.shape[0], out_h, out_w), dtype=np.float64)
    for p in range(img.planes.shape[0]):
        plane = np.asarray(img.planes[p], dtype=np.float64)
        plane = _resize_axis(plane, idx_w, wts_w, axis=1)
        plane = _resize_axis(plane, idx_h, wts_h, axis=0)
        out[p] = plane
    return ImagePlanar(out)


def planar_from_u8(img):
    return ImagePlanar(np.ascontiguousarray(img.pixels.astype(np.float64).transpose(2, 0, 1)))


def u8_from_planar(img):
    if img.planes.shape[0] != 3:
        raise ShapeError("u8_from_planar needs 3 planes")
    return ImageU8(to_u8(img.planes.transpose(1, 2, 0)))


def bicubic_resize_u8(img, out_w, out_h, antialias):
    """Resize an 8-bit RGB image channel-wise; clamps and rounds the result back to u8."""
    return u8_from_planar(bicubic_resize(planar_from_u8(img), out_w, out_h, antialias))


def modcrop(img, scale):
    """Crop from the top-left so both dimensions are divisible by ``scale``."""
    if scale < 1:
        raise ContractError(f"modcrop scale must be >= 1, got {scale}")
    h, w = img.height, img.width
    nh, nw = (h // scale) * scale, (w // scale) * scale
    if nh == 0 or nw == 0:
        raise ContractError(f"modcrop of {w}x{h} by {scale} leaves an empty image")
    if isinstance(img, ImageU8):
        return ImageU8(np.ascontiguousarray(img.pixels[:nh, :nw]))
    return ImagePlanar(np.ascontiguousarray(img.planes[:, :nh, :nw]))
