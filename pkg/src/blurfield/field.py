"""Factorized 3D feature grids (per-axis vectors times per-plane matrices)
for volume density and appearance, plus the shallow view-conditioned shading
network that turns appearance features into RGB.
"""

import numpy as np

from . import autodiff as ad
from . import checkpoint, gridops


class VMGrid:
    """Rank-decomposed 3D grid: value(i,j,k) = sum_r vx[r,i]*myz[r,j,k]
    + vy[r,j]*mxz[r,i,k] + vz[r,k]*mxy[r,i,j], trilinearly interpolated
    between nodes. feature_dim > 1 projects the per-rank products through a
    learnable channel basis.
    """

    def __init__(self, resolution, ranks, feature_dim, bounds, rng=None,
                 init_scale=0.1, value_offset=0.0):
        self.resolution = tuple(int(r) for r in resolution)
        self.ranks = tuple(int(r) for r in ranks)
        self.feature_dim = int(feature_dim)
        lo, hi = bounds
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if not np.all(self.hi > self.lo):
            raise ValueError(f"grid bounds must satisfy hi > lo, got {lo} {hi}")
        X, Y, Z = self.resolution
        R1, R2, R3 = self.ranks
        if rng is None:
            vx = np.zeros((R1, X)); vy = np.zeros((R2, Y)); vz = np.zeros((R3, Z))
            myz = np.zeros((R1, Y, Z)); mxz = np.zeros((R2, X, Z)); mxy = np.zeros((R3, X, Y))
        else:
            s = init_scale
            vx = rng.normal(0.0, s, (R1, X)); vy = rng.normal(0.0, s, (R2, Y))
            vz = rng.normal(0.0, s, (R3, Z))
            myz = rng.normal(0.0, s, (R1, Y, Z)); mxz = rng.normal(0.0, s, (R2, X, Z))
            mxy = rng.normal(0.0, s, (R3, X, Y))
        if value_offset != 0.0:
            # a constant-vector x constant-plane rank carries the offset, so the
            # reconstructed value starts near `value_offset` everywhere while the
            # factors stay free parameters
            vx[0, :] = 1.0
            myz[0, :, :] = float(value_offset)
        self.vec_x = ad.Tensor(vx, requires_grad=True, name="vec_x")
        self.vec_y = ad.Tensor(vy, requires_grad=True, name="vec_y")
        self.vec_z = ad.Tensor(vz, requires_grad=True, name="vec_z")
        self.mat_yz = ad.Tensor(myz, requires_grad=True, name="mat_yz")
        self.mat_xz = ad.Tensor(mxz, requires_grad=True, name="mat_xz")
        self.mat_xy = ad.Tensor(mxy, requires_grad=True, name="mat_xy")
        if self.feature_dim > 1:
            nb = R1 + R2 + R3
            if rng is None:
                basis = np.zeros((nb, self.feature_dim))
            else:
                basis = rng.normal(0.0, 1.0 / np.sqrt(nb), (nb, self.feature_dim))
            self.basis = ad.Tensor(basis, requires_grad=True, name="basis")
        else:
            self.basis = None

    def parameters(self):
        ps = [
            ("vec_x", self.vec_x), ("vec_y", self.vec_y), ("vec_z", self.vec_z),
            ("mat_yz", self.mat_yz), ("mat_xz", self.mat_xz), ("mat_xy", self.mat_xy),
        ]
        if self.basis is not None:
            ps.append(("basis", self.basis))
        return ps

    def state_arrays(self):
        return {name: t.data for name, t in self.parameters()}

    def load_state(self, arrays, prefix=""):
        for name, t in self.parameters():
            src = arrays[prefix + name]
            if src.shape != t.data.shape:
                raise ValueError(
                    f"checkpoint array {prefix + name} has shape {src.shape}, "
                    f"expected {t.data.shape}")
            t.data = np.array(src, dtype=np.float64, copy=True)

    def world_to_grid(self, x):
        """Map world points to continuous grid coordinates in [0, res-1]."""
        res = np.array(self.resolution, dtype=np.float64)
        scale = (res - 1.0) / (self.hi - self.lo)
        if isinstance(x, ad.Tensor):
            return ad.mul(ad.sub(x, ad.Tensor(self.lo)), ad.Tensor(scale))
        return (np.asarray(x, dtype=np.float64) - self.lo) * scale


def _sample_products(grid, u):
    """Fused trilinear sampling of the per-rank products at grid coords u.

    Returns a [P, R1+R2+R3] tensor; gradients flow to all six factor arrays
    and to u itself (zeroed where u was clamped to the grid boundary).
    """
    X, Y, Z = grid.resolution
    res = np.array([X, Y, Z], dtype=np.float64)
    ud = np.clip(u.data, 0.0, res - 1.0)
    inside = (u.data > 0.0) & (u.data < res - 1.0)
    idx = np.minimum(ud.astype(np.int64), np.array([X - 2, Y - 2, Z - 2]))
    frac = ud - idx
    ix, iy, iz = (np.ascontiguousarray(idx[:, k]) for k in range(3))
    fx, fy, fz = (np.ascontiguousarray(frac[:, k]) for k in range(3))
    factors = (grid.vec_x, grid.vec_y, grid.vec_z,
               grid.mat_yz, grid.mat_xz, grid.mat_xy)
    fdata = tuple(t.data for t in factors)
    prod = gridops.vm_forward(*fdata, ix, iy, iz, fx, fy, fz)

    def vjp(g):
        outs = gridops.vm_backward(*fdata, ix, iy, iz, fx, fy, fz,
                                   np.ascontiguousarray(g))
        gu = outs[6] * inside
        return outs[:6] + (gu,)

    return ad.custom(list(factors) + [u], prod, vjp, "vm_sample")


def grid_query(grid, x):
    """Feature vector(s) of the grid at world point(s) x.

    x may be a [3] point, a [P,3] array, or a Tensor of either shape; points
    outside the bounds are clamped onto them. Returns [P, F] (or [F]).
    """
    single = False
    if isinstance(x, ad.Tensor):
        if x.data.ndim == 1:
            x = ad.reshape(x, (1, 3))
            single = True
        u = grid.world_to_grid(x)
    else:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
            single = True
        u = ad.Tensor(grid.world_to_grid(x))
    prod = _sample_products(grid, u)
    if grid.basis is not None:
        out = ad.matmul(prod, grid.basis)
    else:
        out = ad.sum_(prod, axis=1, keepdims=True)
    if single:
        out = ad.reshape(out, (grid.feature_dim,))
    return out


def density_at(grid, x):
    """Nonnegative volume density: softplus of the grid value."""
    q = grid_query(grid, x)
    if q.data.ndim == 2:
        q = ad.reshape(q, (q.data.shape[0],))
    return ad.softplus(q)


def embed_direction(d, octaves=4):
    """Sinusoidal positional encoding of a direction (raw + sin/cos octaves)."""
    if not isinstance(d, ad.Tensor):
        d = ad.Tensor(d)
    parts = [d]
    for k in range(octaves):
        s = float(2**k)
        parts.append(ad.sin(ad.mul(d, ad.Tensor(s))))
        parts.append(ad.cos(ad.mul(d, ad.Tensor(s))))
    return ad.concat(parts, axis=1)


class AppearanceNet:
    """One-hidden-layer perceptron: (feature, direction encoding) -> RGB."""

    def __init__(self, feature_dim, hidden=64, dir_octaves=4, rng=None):
        self.feature_dim = int(feature_dim)
        self.hidden = int(hidden)
        self.dir_octaves = int(dir_octaves)
        in_dim = feature_dim + 3 + 6 * dir_octaves
        if rng is None:
            w1 = np.zeros((in_dim, hidden))
        else:
            w1 = rng.normal(0.0, np.sqrt(2.0 / in_dim), (in_dim, hidden))
        self.w1 = ad.Tensor(w1, requires_grad=True, name="w1")
        self.b1 = ad.Tensor(np.zeros(hidden), requires_grad=True, name="b1")
        # zero-initialized output layer: neutral gray before training
        self.w2 = ad.Tensor(np.zeros((hidden, 3)), requires_grad=True, name="w2")
        self.b2 = ad.Tensor(np.zeros(3), requires_grad=True, name="b2")

    def parameters(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def state_arrays(self):
        return {name: t.data for name, t in self.parameters()}

    def load_state(self, arrays, prefix=""):
        for name, t in self.parameters():
            t.data = np.array(arrays[prefix + name], dtype=np.float64, copy=True)

    def __call__(self, feats, dirs):
        emb = embed_direction(dirs, self.dir_octaves)
        x = ad.concat([feats, emb], axis=1)
        h = ad.relu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.sigmoid(ad.add(ad.matmul(h, self.w2), self.b2))


def color_at(grid, net, x, d):
    """View-dependent RGB in [0,1] at world point(s) x seen along d."""
    if not isinstance(d, ad.Tensor):
        d = ad.Tensor(d)
    norms = np.linalg.norm(np.atleast_2d(d.data), axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError(
            f"color_at: directions must be unit length, |d| range "
            f"[{norms.min():.8f}, {norms.max():.8f}]")
    xd = x.data if isinstance(x, ad.Tensor) else np.asarray(x)
    single = xd.ndim == 1
    feats = grid_query(grid, x)
    if single:
        feats = ad.reshape(feats, (1, grid.feature_dim))
    if d.data.ndim == 1:
        d = ad.reshape(d, (1, 3))
    rgb = net(feats, d)
    if single:
        rgb = ad.reshape(rgb, (3,))
    return rgb


class RadianceField:
    """Density grid + appearance grid + shading net over one world box."""

    def __init__(self, bounds, resolution=(64, 64, 64), ranks=(4, 4, 4),
                 feature_dim=12, hidden=64, dir_octaves=4, rng=None,
                 init_scale=0.1, density_offset=-6.0):
        self.bounds = (np.asarray(bounds[0], float), np.asarray(bounds[1], float))
        self.sigma_grid = VMGrid(resolution, ranks, 1, bounds, rng=rng,
                                 init_scale=init_scale, value_offset=density_offset)
        self.color_grid = VMGrid(resolution, ranks, feature_dim, bounds, rng=rng,
                                 init_scale=init_scale)
        self.net = AppearanceNet(feature_dim, hidden=hidden,
                                 dir_octaves=dir_octaves, rng=rng)
        self.config = {
            "resolution": list(resolution), "ranks": list(ranks),
            "feature_dim": feature_dim, "hidden": hidden,
            "dir_octaves": dir_octaves,
            "bounds_lo": list(map(float, self.bounds[0])),
            "bounds_hi": list(map(float, self.bounds[1])),
        }

    def density(self, x):
        return density_at(self.sigma_grid, x)

    def color(self, x, d):
        return color_at(self.color_grid, self.net, x, d)

    def parameters(self):
        ps = [("sigma." + n, t) for n, t in self.sigma_grid.parameters()]
        ps += [("color." + n, t) for n, t in self.color_grid.parameters()]
        ps += [("shade." + n, t) for n, t in self.net.parameters()]
        return ps

    def state_arrays(self):
        return {name: t.data for name, t in self.parameters()}

    def load_state(self, arrays, prefix=""):
        self.sigma_grid.load_state(arrays, prefix + "sigma.")
        self.color_grid.load_state(arrays, prefix + "color.")
        self.net.load_state(arrays, prefix + "shade.")

    def save(self, path, extra_meta=None):
        meta = {"field": self.config}
        if extra_meta:
            meta.update(extra_meta)
        checkpoint.save_arrays(path, self.state_arrays(), meta)

    @classmethod
    def load(cls, path):
        arrays, meta = checkpoint.load_arrays(path)
        cfg = meta["field"]
        model = cls(
            bounds=(cfg["bounds_lo"], cfg["bounds_hi"]),
            resolution=cfg["resolution"], ranks=cfg["ranks"],
            feature_dim=cfg["feature_dim"], hidden=cfg["hidden"],
            dir_octaves=cfg["dir_octaves"], rng=None, density_offset=0.0,
        )
        model.load_state(arrays)
        return model, meta
