"""Learned continuous camera-motion kernel.

Each training ray is embedded into a latent state from its view identity and
pixel location, the state is evolved across the exposure interval by a learned
ODE (optionally wrapped in a bounded residual), and every intermediate state
is decoded into a pixel shift, a ray-origin shift, and a weight logit. Shifts
accumulate along the trajectory, directions are recomputed from the warped
pixels through the camera model, and softmax turns the logits into convex
blending weights.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import cameras, ode

EMBED_MODES = ("chrono-view", "time-only", "none")


class _EvalCounter:
    """Counts kernel evaluations so clean-render paths can assert zero."""

    __slots__ = ("integrations", "decodes")

    def __init__(self):
        self.reset()

    def reset(self):
        self.integrations = 0
        self.decodes = 0

    @property
    def total(self):
        return self.integrations + self.decodes


kernel_evals = _EvalCounter()


@dataclass
class EmbeddingConfig:
    mode: str = "chrono-view"
    view_dim: int = 16
    pixel_octaves: int = 6
    time_octaves: int = 4
    cond_dim: int = 16

    def __post_init__(self):
        if self.mode not in EMBED_MODES:
            raise ValueError(
                f"unknown embedding mode {self.mode!r}, expected {EMBED_MODES}")


@dataclass
class LatentState:
    z: ad.Tensor
    t: float


@dataclass
class KernelSample:
    dp: ad.Tensor
    do: ad.Tensor
    w_raw: ad.Tensor
    p_cum: object = None


@dataclass
class KernelRays:
    origins: list
    directions: list
    pixels: list
    weights: ad.Tensor
    samples: list = field(default_factory=list)
    clamped: int = 0

    @property
    def n(self):
        return len(self.origins)


def pixel_encoding(p, image_size, octaves):
    """Sinusoidal features of pixel coordinates normalized to [-1, 1]."""
    p = np.asarray(p, dtype=np.float64)
    span = np.asarray(image_size, dtype=np.float64) - 1.0
    u = 2.0 * p / span - 1.0
    feats = [u]
    for k in range(octaves):
        w = (2.0**k) * np.pi * u
        feats.append(np.sin(w))
        feats.append(np.cos(w))
    return np.concatenate(feats, axis=-1)


def time_encoding(t, octaves):
    """Raw time plus sinusoidal features over the exposure interval."""
    feats = [float(t)]
    for k in range(octaves):
        w = (2.0**k) * 2.0 * np.pi * t
        feats.append(np.sin(w))
        feats.append(np.cos(w))
    return np.asarray(feats, dtype=np.float64)


def _leaf(rng, shape, std):
    if std == 0.0:
        return ad.Tensor(np.zeros(shape), requires_grad=True)
    return ad.Tensor(rng.normal(scale=std, size=shape), requires_grad=True)


def _mlp2(x, w1, b1, w2, b2):
    h = ad.relu(ad.add(ad.matmul(x, w1), b1))
    return ad.add(ad.matmul(h, w2), b2)


class MotionKernel:
    """Parameters and operations of the latent camera-motion model."""

    def __init__(self, n_views, image_size, scene_extent, latent_dim=64,
                 hidden=64, n_warped=8, embedding=None,
                 residual_momentum=True, max_pixel_shift=3.0,
                 origin_shift_frac=0.02, solver="rk4", substeps=4, rng=None):
        if n_views < 1:
            raise ValueError("n_views must be >= 1")
        if not 1 <= n_warped <= 16:
            raise ValueError("n_warped must be in 1..16")
        if solver not in ode.SOLVERS:
            raise ValueError(f"unknown solver {solver!r}")
        self.n_views = int(n_views)
        self.image_size = (int(image_size[0]), int(image_size[1]))
        self.latent_dim = int(latent_dim)
        self.hidden = int(hidden)
        self.n_warped = int(n_warped)
        self.embedding = embedding or EmbeddingConfig()
        if isinstance(self.embedding, str):
            self.embedding = EmbeddingConfig(mode=self.embedding)
        self.residual_momentum = bool(residual_momentum)
        self.max_pixel_shift = float(max_pixel_shift)
        self.max_origin_shift = float(origin_shift_frac) * float(scene_extent)
        self.scene_extent = float(scene_extent)
        self.origin_shift_frac = float(origin_shift_frac)
        self.solver = solver
        self.substeps = int(substeps)
        rng = rng or np.random.default_rng(0)
        emb = self.embedding
        d, h = self.latent_dim, self.hidden
        pix_dim = 2 + 4 * emb.pixel_octaves
        enc_in = emb.view_dim + pix_dim
        psi_in = (1 + 2 * emb.time_octaves) + emb.view_dim
        f_in = d + emb.cond_dim
        self.view_table = _leaf(rng, (self.n_views, emb.view_dim), 0.1)
        self.enc_w1 = _leaf(rng, (enc_in, h), np.sqrt(2.0 / enc_in))
        self.enc_b1 = _leaf(rng, (h,), 0.0)
        self.enc_w2 = _leaf(rng, (h, d), 1.0 / np.sqrt(h))
        self.enc_b2 = _leaf(rng, (d,), 0.0)
        self.psi_w = _leaf(rng, (psi_in, emb.cond_dim), 1.0 / np.sqrt(psi_in))
        self.psi_b = _leaf(rng, (emb.cond_dim,), 0.0)
        self.f_w1 = _leaf(rng, (f_in, h), np.sqrt(2.0 / f_in))
        self.f_b1 = _leaf(rng, (h,), 0.0)
        self.f_w2 = _leaf(rng, (h, d), 0.01)
        self.f_b2 = _leaf(rng, (d,), 0.0)
        self.dec_w1 = _leaf(rng, (d, h), np.sqrt(2.0 / d))
        self.dec_b1 = _leaf(rng, (h,), 0.0)
        self.dec_w2 = _leaf(rng, (h, 6), 0.0)
        self.dec_b2 = _leaf(rng, (6,), 0.0)
        self._param_names = (
            "view_table", "enc_w1", "enc_b1", "enc_w2", "enc_b2",
            "psi_w", "psi_b", "f_w1", "f_b1", "f_w2", "f_b2",
            "dec_w1", "dec_b1", "dec_w2", "dec_b2",
        )
        for name in self._param_names:
            getattr(self, name).name = f"kernel.{name}"

    # -- parameter plumbing ---------------------------------------------

    def parameters(self):
        return [(f"kernel.{n}", getattr(self, n)) for n in self._param_names]

    def state_arrays(self):
        return {f"kernel.{n}": getattr(self, n).data
                for n in self._param_names}

    def load_state(self, arrays):
        for n in self._param_names:
            src = arrays[f"kernel.{n}"]
            dst = getattr(self, n).data
            if src.shape != dst.shape:
                raise ValueError(
                    f"kernel.{n}: shape {src.shape} != {dst.shape}")
            dst[...] = src

    def config_dict(self):
        return {
            "n_views": self.n_views,
            "image_size": list(self.image_size),
            "scene_extent": self.scene_extent,
            "latent_dim": self.latent_dim,
            "hidden": self.hidden,
            "n_warped": self.n_warped,
            "mode": self.embedding.mode,
            "view_dim": self.embedding.view_dim,
            "pixel_octaves": self.embedding.pixel_octaves,
            "time_octaves": self.embedding.time_octaves,
            "cond_dim": self.embedding.cond_dim,
            "residual_momentum": self.residual_momentum,
            "max_pixel_shift": self.max_pixel_shift,
            "origin_shift_frac": self.origin_shift_frac,
            "solver": self.solver,
            "substeps": self.substeps,
        }

    @classmethod
    def from_config(cls, cfg):
        emb = EmbeddingConfig(mode=cfg["mode"], view_dim=cfg["view_dim"],
                              pixel_octaves=cfg["pixel_octaves"],
                              time_octaves=cfg["time_octaves"],
                              cond_dim=cfg["cond_dim"])
        return cls(cfg["n_views"], cfg["image_size"], cfg["scene_extent"],
                   latent_dim=cfg["latent_dim"], hidden=cfg["hidden"],
                   n_warped=cfg["n_warped"], embedding=emb,
                   residual_momentum=cfg["residual_momentum"],
                   max_pixel_shift=cfg["max_pixel_shift"],
                   origin_shift_frac=cfg["origin_shift_frac"],
                   solver=cfg["solver"], substeps=cfg["substeps"])

    # -- core operations --------------------------------------------------

    def _check_views(self, view_idx):
        view_idx = np.asarray(view_idx, dtype=np.int64)
        if view_idx.ndim == 0:
            view_idx = view_idx[None]
        if np.any(view_idx < 0) or np.any(view_idx >= self.n_views):
            raise ValueError(
                f"unknown view index (valid range 0..{self.n_views - 1})")
        return view_idx

    def encode_initial(self, view_idx, pixels):
        """Latent state at exposure start from view identity and pixel."""
        view_idx = self._check_views(view_idx)
        pixels = np.asarray(pixels, dtype=np.float64).reshape(len(view_idx), 2)
        pe = ad.Tensor(pixel_encoding(pixels, self.image_size,
                                      self.embedding.pixel_octaves))
        ve = ad.take_rows(self.view_table, view_idx)
        z = _mlp2(ad.concat([ve, pe], axis=1),
                  self.enc_w1, self.enc_b1, self.enc_w2, self.enc_b2)
        return LatentState(z=z, t=0.0)

    def conditioning(self, t, view_idx, batch):
        """Time/view conditioning vector fed to the derivative net."""
        mode = self.embedding.mode
        if mode == "none":
            return ad.Tensor(np.zeros((batch, self.embedding.cond_dim)))
        te = np.broadcast_to(
            time_encoding(t, self.embedding.time_octaves),
            (batch, 1 + 2 * self.embedding.time_octaves)).copy()
        if mode == "chrono-view":
            ve = ad.take_rows(self.view_table, view_idx)
        else:
            ve = ad.Tensor(np.zeros((batch, self.embedding.view_dim)))
        x = ad.concat([ad.Tensor(te), ve], axis=1)
        return ad.tanh(ad.add(ad.matmul(x, self.psi_w), self.psi_b))

    def derivative(self, z, t, view_idx):
        """dz/dt; with residual momentum the net output is folded back into
        the state and squashed so the flow stays bounded."""
        batch = z.data.shape[0]
        cond = self.conditioning(t, view_idx, batch)
        f = _mlp2(ad.concat([z, cond], axis=1),
                  self.f_w1, self.f_b1, self.f_w2, self.f_b2)
        if self.residual_momentum:
            return ad.tanh(ad.add(f, z))
        return f

    def integrate(self, state, view_idx, times, solver=None, substeps=None):
        """Evolve the initial latent state to every requested time."""
        kernel_evals.integrations += 1
        if abs(times[0] - state.t) > 1e-12:
            raise ValueError(
                f"first time {times[0]} != state time {state.t}")

        def deriv(z, t):
            return self.derivative(z, t, view_idx)

        zs = ode.integrate(deriv, state.z, times,
                           solver=solver or self.solver,
                           substeps=substeps or self.substeps)
        return [LatentState(z=z, t=t) for z, t in zip(zs, times)]

    def decode(self, z):
        """Latent state -> bounded pixel shift, origin shift, weight logit."""
        kernel_evals.decodes += 1
        raw = _mlp2(z, self.dec_w1, self.dec_b1, self.dec_w2, self.dec_b2)
        dp = ad.mul(ad.tanh(ad.slice_op(raw, (slice(None), slice(0, 2)))),
                    ad.Tensor(self.max_pixel_shift))
        do = ad.mul(ad.tanh(ad.slice_op(raw, (slice(None), slice(2, 5)))),
                    ad.Tensor(self.max_origin_shift))
        w_raw = ad.slice_op(raw, (slice(None), slice(5, 6)))
        return KernelSample(dp=dp, do=do, w_raw=w_raw)

    def time_grid(self, n=None):
        n = n or self.n_warped
        return [i / n for i in range(n)]

    def generate_kernel(self, origins, dirs, pixels, view_idx, intr, rots,
                        n_warped=None, solver=None, substeps=None,
                        margin=8.0):
        """Produce the warped-ray trajectory for a batch of initial rays.

        The first trajectory entry is the initial ray itself; later entries
        accumulate decoded pixel/origin deltas, with directions recomputed
        from the warped pixels through the per-ray camera rotation. Returns
        ray lists, softmax weights, decoded samples, and a clamp counter.
        """
        origins = np.asarray(origins, dtype=np.float64)
        dirs = np.asarray(dirs, dtype=np.float64)
        pixels = np.asarray(pixels, dtype=np.float64)
        view_idx = self._check_views(view_idx)
        B = origins.shape[0]
        n = n_warped or self.n_warped
        times = self.time_grid(n)
        state0 = self.encode_initial(view_idx, pixels)
        states = self.integrate(state0, view_idx, times,
                                solver=solver, substeps=substeps)
        samples = [self.decode(s.z) for s in states]

        W, H = self.image_size
        lo = np.array([-margin, -margin])
        hi = np.array([W - 1 + margin, H - 1 + margin])
        origins_list = [origins]
        dirs_list = [dirs]
        pixels_list = [pixels.copy()]
        samples[0].p_cum = pixels.copy()
        clamped = 0
        p_cum = ad.Tensor(pixels)
        o_cum = ad.Tensor(origins)
        for i in range(1, n):
            p_cum = ad.add(p_cum, samples[i].dp)
            clamped += int(np.sum((p_cum.data < lo) | (p_cum.data > hi)))
            p_cum = ad.clip(p_cum, lo, hi)
            o_cum = ad.add(o_cum, samples[i].do)
            d_i = cameras.pixel_to_world_dir_diff(intr, rots, p_cum)
            samples[i].p_cum = p_cum
            origins_list.append(o_cum)
            dirs_list.append(d_i)
            pixels_list.append(np.array(p_cum.data, copy=True))
        weights = ad.softmax(
            ad.concat([s.w_raw for s in samples], axis=1), axis=1)
        return KernelRays(origins=origins_list, directions=dirs_list,
                          pixels=pixels_list, weights=weights,
                          samples=samples, clamped=clamped)

    def trajectory_rows(self, view_index, pixel, origin, direction, intr,
                        rot, n_warped=None):
        """Rows (t, p_x, p_y, do_x, do_y, do_z, w) for one probe pixel."""
        n = n_warped or self.n_warped
        kr = self.generate_kernel(
            np.asarray(origin, dtype=np.float64)[None, :],
            np.asarray(direction, dtype=np.float64)[None, :],
            np.asarray(pixel, dtype=np.float64)[None, :],
            np.array([view_index]), intr,
            np.asarray(rot, dtype=np.float64)[None, :, :], n_warped=n)
        rows = []
        for i, t in enumerate(self.time_grid(n)):
            do = kr.samples[i].do.data[0]
            rows.append((t, float(kr.pixels[i][0, 0]),
                         float(kr.pixels[i][0, 1]), float(do[0]),
                         float(do[1]), float(do[2]),
                         float(kr.weights.data[0, i])))
        return rows
