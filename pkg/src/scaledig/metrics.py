"""Image quality metrics for held-out view evaluation.

PSNR over [0,1] images with a declared 100 dB cap at zero error, and SSIM
with the standard 11x11 Gaussian window (sigma 1.5, K1 0.01, K2 0.03,
dynamic range 1), averaged over valid window positions and channels.
"""

import numpy as np

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(x: np.ndarray, y: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0,1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def gaussian_window(size: int = SSIM_WINDOW,
                    sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2D Gaussian tap weights."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means via sliding windows."""
    k = w.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("ijkl,kl->ij", win, w)


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Mean structural similarity over valid windows and channels."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x = x[:, :, None]
        y = y[:, :, None]
    h, wid = x.shape[0], x.shape[1]
    if h < SSIM_WINDOW or wid < SSIM_WINDOW:
        raise ValueError(f"image {h}x{wid} smaller than the "
                         f"{SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    vals = []
    for c in range(x.shape[2]):
        xc, yc = x[:, :, c], y[:, :, c]
        mx = _windowed_mean(xc, w)
        my = _windowed_mean(yc, w)
        mxx = _windowed_mean(xc * xc, w)
        myy = _windowed_mean(yc * yc, w)
        mxy = _windowed_mean(xc * yc, w)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2 * mx * my + c1) * (2 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))
