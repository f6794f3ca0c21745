"""Convex blending of warped-ray colors into the blurry pixel color."""

import numpy as np

from . import autodiff as ad


def composite_blur(colors, weights):
    """Weighted sum of per-trajectory-step colors.

    colors: [N, 3] or [B, N, 3]; weights: [N] or [B, N], already normalized.
    Weights off the simplex by more than 1e-6 indicate an upstream
    normalization bug and are rejected.
    """
    c = colors if isinstance(colors, ad.Tensor) else ad.Tensor(colors)
    w = weights if isinstance(weights, ad.Tensor) else ad.Tensor(weights)
    if c.data.ndim not in (2, 3) or c.data.shape[-1] != 3:
        raise ValueError(f"composite_blur: bad colors shape {c.data.shape}")
    if w.data.shape != c.data.shape[:-1]:
        raise ValueError(
            f"composite_blur: weights shape {w.data.shape} does not match "
            f"colors shape {c.data.shape}")
    sums = np.sum(w.data, axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValueError(
            f"composite_blur: weights sum off 1 by {worst:.3e} (> 1e-6)")
    if np.any(w.data < 0.0):
        raise ValueError("composite_blur: negative weight")
    wexp = ad.reshape(w, w.data.shape + (1,))
    return ad.sum_(ad.mul(c, wexp), axis=-2)
