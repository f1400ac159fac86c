#!/usr/bin/env python3
"""Degradation and evaluation: MATLAB-convention bicubic resampling plus
Y-channel PSNR/SSIM with border shaving.

The resampler uses the Keys cubic kernel (a = -0.5) with half-pixel-centred
coordinates; downscaling stretches the kernel for antialiasing, upscaling does
not.  Metrics run on the BT.601 luminance plane with `scale` pixels shaved
from every border -- the standard super-resolution protocol.
"""

import numpy as np

from amsr.data import make_lr
from amsr.imaging import ImageU8, bicubic_resize_u8, modcrop
from amsr.metrics import evaluate_pair


def test_card(w=96, h=96):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.stack([40 + 150 * xx / w, 40 + 150 * yy / h, np.full_like(xx, 90)], axis=-1)
    stripes = (xx + yy) % 6 < 3
    band = (yy > h * 0.5) & (yy < h * 0.9)
    img[band & stripes] = [230, 60, 60]
    img[band & ~stripes] = [30, 30, 120]
    img[10:30, 10:40] = [250, 210, 40]
    return ImageU8(np.clip(img, 0, 255).astype(np.uint8))


hr = test_card()
print(f"HR test card: {hr.width}x{hr.height}")

for scale in (2, 3, 4):
    cropped = modcrop(hr, scale)
    lr = make_lr(cropped, scale)
    sr = bicubic_resize_u8(lr, lr.width * scale, lr.height * scale, antialias=False)
    rec = evaluate_pair(cropped, sr, scale)
    print(
        f"x{scale}: LR {lr.width}x{lr.height} -> bicubic SR "
        f"PSNR {rec.psnr_db:6.2f} dB  SSIM {rec.ssim:.4f}  (shave={rec.shave})"
    )

print()
print("The sharp stripes are unrecoverable by interpolation; smooth regions")
print("survive.  On the classic photographic benchmarks this same pipeline")
print("lands on the published bicubic baselines (see the eval subcommand and")
print("the acceptance suite), e.g. 33.66 dB / 0.9299 on Set5 at x2.")
