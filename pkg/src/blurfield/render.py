"""Ray sampling and the differentiable volume-rendering quadrature.

A pixel color is sum_i T_i (1 - exp(-sigma_i delta_i)) c_i with transmittance
T_i = exp(-sum_{j<i} sigma_j delta_j), plus an optional background term
weighted by the leftover transmittance.
"""

from dataclasses import dataclass, field as dfield

import numpy as np

from . import autodiff as ad


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    pixel: np.ndarray = dfield(default_factory=lambda: np.zeros(2))
    view_index: int = 0
    near: float = 0.1
    far: float = 4.0

    def __post_init__(self):
        self.origin = np.asarray(self.origin, float)
        self.direction = np.asarray(self.direction, float)
        self.pixel = np.asarray(self.pixel, float)
        n = np.linalg.norm(self.direction)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"ray direction must be unit length, |d|={n:.8f}")
        if not (0.0 < self.near < self.far):
            raise ValueError(f"ray needs 0 < near < far, got {self.near}, {self.far}")


@dataclass
class RaySampleSet:
    taus: np.ndarray
    positions: np.ndarray
    deltas: np.ndarray

    @property
    def count(self):
        return len(self.taus)


def sample_taus(near, far, n_samples, jitter=False, rng=None, batch=None):
    """Stratified distances: midpoints of n equal bins, or uniform within each
    bin when jitter is on. Returns (taus, deltas); the last delta terminates
    at far. Batched shape [batch, n] when batch is not None.
    """
    if n_samples < 1:
        raise ValueError("sample_taus: n_samples must be >= 1")
    width = (far - near) / n_samples
    edges = near + width * np.arange(n_samples)
    if jitter:
        if rng is None:
            raise ValueError("sample_taus: jitter requires an rng")
        shape = (n_samples,) if batch is None else (batch, n_samples)
        taus = edges + width * rng.random(shape)
    else:
        taus = edges + 0.5 * width
        if batch is not None:
            taus = np.broadcast_to(taus, (batch, n_samples)).copy()
    deltas = np.empty_like(taus)
    deltas[..., :-1] = np.diff(taus, axis=-1)
    deltas[..., -1] = far - taus[..., -1]
    return taus, deltas


def sample_ray(ray, n_samples, jitter=False, rng=None):
    taus, deltas = sample_taus(ray.near, ray.far, n_samples, jitter, rng)
    positions = ray.origin[None, :] + taus[:, None] * ray.direction[None, :]
    return RaySampleSet(taus=taus, positions=positions, deltas=deltas)


def quadrature_weights(sigma, delta):
    """Numpy-only transmittance/weight helper: returns (T, alpha, weights)."""
    a = sigma * delta
    prefix = np.cumsum(a, axis=-1)
    T = np.exp(-(prefix - a))  # exclusive prefix sum
    alpha = 1.0 - np.exp(-a)
    return T, alpha, T * alpha


def composite(sigma, color, delta, background=None):
    """Quadrature compositing of per-sample densities and colors.

    sigma [S] or [B,S]; color [S,3] or [B,S,3]; delta like sigma (constant).
    Differentiable w.r.t. sigma and color. background, if given, is added
    with the leftover transmittance.
    """
    sig = sigma if isinstance(sigma, ad.Tensor) else ad.Tensor(sigma)
    col = color if isinstance(color, ad.Tensor) else ad.Tensor(color)
    delta = np.asarray(delta, float)
    single = sig.data.ndim == 1
    if single:
        sig = ad.reshape(sig, (1, -1))
        col = ad.reshape(col, (1,) + col.data.shape)
        delta = delta[None, :]
    if np.any(sig.data < 0.0):
        raise ValueError("composite: negative density rejected")
    if np.any(delta <= 0.0):
        raise ValueError("composite: deltas must be positive")
    if sig.data.shape != delta.shape or col.data.shape != sig.data.shape + (3,):
        raise ValueError(
            f"composite: shape mismatch sigma {sig.data.shape}, "
            f"color {col.data.shape}, delta {delta.shape}")

    a = sig.data * delta
    prefix = np.cumsum(a, axis=1)
    T = np.exp(-(prefix - a))
    Tend = np.exp(-prefix[:, -1])
    alpha = 1.0 - np.exp(-a)
    w = T * alpha
    out = np.einsum("bs,bsc->bc", w, col.data)
    bg = None
    if background is not None:
        bg = np.asarray(background, float)
        out = out + Tend[:, None] * bg[None, :]
    Texp = T * np.exp(-a)  # T_{k+1}: transmittance after sample k

    def vjp(g):
        gc = g[:, None, :] * w[:, :, None]
        u = np.einsum("bc,bsc->bs", g, col.data)
        uw = u * w
        # sum over samples strictly after k
        tail = np.cumsum(uw[:, ::-1], axis=1)[:, ::-1] - uw
        ga = u * Texp - tail
        if bg is not None:
            ga -= (g @ bg)[:, None] * Tend[:, None]
        return ga * delta, gc

    res = ad.custom([sig, col], out, vjp, "composite")
    if single:
        res = ad.reshape(res, (3,))
    return res


def render_rays(model, origins, dirs, near, far, n_samples=64, jitter=False,
                rng=None, background=None, taus=None, deltas=None):
    """Render a batch of rays through the field; origins/dirs may be Tensors
    (the warped-ray path) or ndarrays (the plain path)."""
    B = (origins.data if isinstance(origins, ad.Tensor) else origins).shape[0]
    if taus is None:
        taus, deltas = sample_taus(near, far, n_samples, jitter, rng, batch=B)
    S = taus.shape[-1]
    if taus.ndim == 1:
        taus = np.broadcast_to(taus, (B, S)).copy()
        deltas_b = np.broadcast_to(deltas, (B, S)).copy()
    else:
        deltas_b = deltas

    if isinstance(origins, ad.Tensor) or isinstance(dirs, ad.Tensor):
        o = origins if isinstance(origins, ad.Tensor) else ad.Tensor(origins)
        d = dirs if isinstance(dirs, ad.Tensor) else ad.Tensor(dirs)
        o3 = ad.reshape(o, (B, 1, 3))
        d3 = ad.reshape(d, (B, 1, 3))
        pos = ad.add(o3, ad.mul(ad.Tensor(taus[:, :, None]), d3))  # [B,S,3]
        pos_flat = ad.reshape(pos, (B * S, 3))
        dirs_flat = ad.reshape(ad.broadcast_to(d3, (B, S, 3)), (B * S, 3))
    else:
        pos = origins[:, None, :] + taus[:, :, None] * dirs[:, None, :]
        pos_flat = ad.Tensor(pos.reshape(B * S, 3))
        dirs_flat = ad.Tensor(np.broadcast_to(
            dirs[:, None, :], (B, S, 3)).reshape(B * S, 3))

    from . import field as fieldmod

    sigma = fieldmod.density_at(model.sigma_grid, pos_flat)
    rgb = fieldmod.color_at(model.color_grid, model.net, pos_flat, dirs_flat)
    sigma = ad.reshape(sigma, (B, S))
    rgb = ad.reshape(rgb, (B, S, 3))
    return composite(sigma, rgb, deltas_b, background=background)


def render_pixel(model, ray, n_samples=64, jitter=False, rng=None,
                 background=None):
    """One pixel: sample the ray, query the field, composite."""
    out = render_rays(model, ray.origin[None, :], ray.direction[None, :],
                      ray.near, ray.far, n_samples=n_samples, jitter=jitter,
                      rng=rng, background=background)
    return ad.reshape(out, (3,))


def render_image(model, intr, R, origin, near, far, n_samples=64,
                 background=None, chunk=4096):
    """Full view render (no graph, value only): returns [H, W, 3] float."""
    from . import cameras

    origins, dirs, _ = cameras.view_rays(intr, R, origin)
    rows = []
    for s in range(0, origins.shape[0], chunk):
        out = render_rays(model, origins[s:s + chunk], dirs[s:s + chunk],
                          near, far, n_samples=n_samples, jitter=False,
                          background=background)
        rows.append(out.data)
    img = np.concatenate(rows, axis=0)
    return img.reshape(intr.height, intr.width, 3)
