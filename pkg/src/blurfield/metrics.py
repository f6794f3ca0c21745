"""PSNR and single-scale SSIM on linear-intensity images."""

import numpy as np
from scipy.ndimage import correlate1d

_WIN = 11
_SIGMA = 1.5
_C1 = 0.01**2
_C2 = 0.03**2


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b):
    """10*log10(1/MSE) for [0,1] images, capped at 99 dB near zero MSE."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return 99.0
    return 10.0 * np.log10(1.0 / mse)


def _gauss_taps():
    x = np.arange(_WIN, dtype=np.float64) - (_WIN - 1) / 2
    w = np.exp(-0.5 * (x / _SIGMA) ** 2)
    return w / w.sum()


_TAPS = _gauss_taps()


def _smooth(img):
    out = correlate1d(img, _TAPS, axis=0, mode="constant")
    return correlate1d(out, _TAPS, axis=1, mode="constant")


def ssim(a, b):
    """Mean single-scale SSIM: 11x11 Gaussian window sigma=1.5, border
    cropped so only fully covered windows contribute."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"expected HxW or HxWxC image, got shape {a.shape}")
    pad = (_WIN - 1) // 2
    if a.shape[0] < _WIN or a.shape[1] < _WIN:
        raise ValueError(
            f"image {a.shape[:2]} smaller than the {_WIN}x{_WIN} window")
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = _smooth(x), _smooth(y)
        vxx = _smooth(x * x) - mx * mx
        vyy = _smooth(y * y) - my * my
        vxy = _smooth(x * y) - mx * my
        s = ((2 * mx * my + _C1) * (2 * vxy + _C2) /
             ((mx * mx + my * my + _C1) * (vxx + vyy + _C2)))
        vals.append(s[pad:-pad, pad:-pad])
    return float(np.mean(vals))
