"""AMSR: attention + multi-scale fusion super-resolution toolkit.

A self-contained numpy implementation of a residual super-resolution network
(non-local attention, covariance-pooling channel attention, multi-scale
convolution fusion, sub-pixel upsampling) together with the reverse-mode
autodiff core it trains on, a MATLAB-convention bicubic resampler, Y-channel
PSNR/SSIM evaluation, and a command-line front end.
"""

__version__ = "0.1.0"

from . import data, gradcheck, imaging, metrics, model, tensor, train  # noqa: F401
