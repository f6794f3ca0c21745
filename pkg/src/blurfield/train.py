"""Losses, training loop, evaluation, and the trajectory-count sweep.

Training fits the radiance field and the motion kernel jointly to blurry
images: every step warps a ray batch through the kernel, renders each warped
set, blends with the kernel weights, and minimizes reconstruction error plus
an output-suppression penalty on the exposure-start decode. Evaluation
renders from the original camera rays only and asserts the kernel was never
invoked.
"""

import csv
import json
import os
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import cameras, checkpoint
from ._mem import release_free_heap
from .blur import composite_blur
from .field import RadianceField
from .motion import EMBED_MODES, MotionKernel, kernel_evals
from .ode import SOLVERS, IntegrationError
from .optim import Adam
from .render import render_image, render_rays

KERNEL_MODES = ("full", "frozen", "off")


class TrainAbort(RuntimeError):
    """Raised when a step produces a non-finite loss or a solver blows up;
    the last on-disk checkpoint is left untouched."""

    def __init__(self, iteration, detail, ckpt_path=None):
        self.iteration = iteration
        self.ckpt_path = ckpt_path
        kept = f"; last good checkpoint: {ckpt_path}" if ckpt_path else ""
        super().__init__(f"aborted at iteration {iteration}: {detail}{kept}")


@dataclass
class TrainConfig:
    iterations: int = 10_000
    batch_size: int = 1024
    lr_grid: float = 2e-2
    lr_net: float = 1e-3
    lr_decay: float = 1.0     # lr scale reached at the final iteration
    lambda_supp: float = 0.1
    n_warped: int = 8
    solver: str = "euler"
    substeps: int = 1
    embedding_mode: str = "chrono-view"
    residual_momentum: bool = True
    suppression: bool = True
    kernel_mode: str = "full"
    seed: int = 0
    checkpoint_every: int = 1000
    n_samples: int = 64
    jitter: bool = True
    resolution: int = 64
    ranks: int = 4
    feature_dim: int = 12
    latent_dim: int = 64
    kernel_hidden: int = 64
    density_offset: float = -6.0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be >= 1")
        if self.lr_grid <= 0 or self.lr_net <= 0:
            raise ValueError("learning rates must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.lambda_supp < 0:
            raise ValueError("lambda_supp must be >= 0")
        if self.embedding_mode not in EMBED_MODES:
            raise ValueError(
                f"embedding_mode {self.embedding_mode!r} not in {EMBED_MODES}")
        if self.kernel_mode not in KERNEL_MODES:
            raise ValueError(
                f"kernel_mode {self.kernel_mode!r} not in {KERNEL_MODES}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver {self.solver!r} not in {SOLVERS}")
        if not 1 <= self.n_warped <= 16:
            raise ValueError("n_warped must be in 1..16")
        if self.n_samples < 1 or self.substeps < 1:
            raise ValueError("n_samples and substeps must be >= 1")

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


def recon_loss(pred, observed):
    """Mean squared error over batch and channels."""
    obs = observed.data if isinstance(observed, ad.Tensor) else observed
    if pred.data.shape != obs.shape:
        raise ValueError(
            f"recon_loss: shape mismatch {pred.data.shape} vs {obs.shape}")
    err = ad.sub(pred, ad.Tensor(np.asarray(obs, dtype=np.float64)))
    return ad.mean(ad.mul(err, err))


def suppression_loss(sample, lambda_supp):
    """lambda * mean L2 norm of the exposure-start (dp, do) decode; the
    weight logit is excluded."""
    if lambda_supp == 0.0:
        return ad.Tensor(np.zeros(()))
    both = ad.concat([sample.dp, sample.do], axis=1)
    sq = ad.sum_(ad.mul(both, both), axis=1)
    norms = ad.sqrt(ad.add(sq, ad.Tensor(1e-24)))
    return ad.mul(ad.mean(norms), ad.Tensor(lambda_supp))


def _shared_intrinsics(dataset):
    first = dataset.intrinsics[0].to_dict()
    for intr in dataset.intrinsics[1:]:
        if intr.to_dict() != first:
            raise ValueError("training expects one shared intrinsics")
    return dataset.intrinsics[0]


@dataclass
class RayPool:
    origins: np.ndarray    # [T,3]
    dirs: np.ndarray       # [T,3]
    pixels: np.ndarray     # [T,2]
    view_idx: np.ndarray   # [T]
    colors: np.ndarray     # [T,3] observed blurry colors
    rotations: np.ndarray  # [V,3,3] per-view rotation at exposure start


def build_ray_pool(dataset):
    """Flatten every train-view pixel into one samplable ray table."""
    intr = _shared_intrinsics(dataset)
    n_views = len(dataset.trajectories)
    rotations = np.zeros((n_views, 3, 3))
    chunks = {k: [] for k in ("o", "d", "p", "v", "c")}
    for i in dataset.train_indices:
        rot, pos = dataset.pose0(i)
        rotations[i] = rot
        origins, dirs, pix = cameras.view_rays(intr, rot, pos)
        chunks["o"].append(origins)
        chunks["d"].append(dirs)
        chunks["p"].append(pix)
        chunks["v"].append(np.full(pix.shape[0], i, dtype=np.int64))
        chunks["c"].append(dataset.blur[i].reshape(-1, 3))
    for i in dataset.heldout_indices:
        rot, _ = dataset.pose0(i)
        rotations[i] = rot
    return RayPool(
        origins=np.concatenate(chunks["o"]),
        dirs=np.concatenate(chunks["d"]),
        pixels=np.concatenate(chunks["p"]),
        view_idx=np.concatenate(chunks["v"]),
        colors=np.concatenate(chunks["c"]),
        rotations=rotations,
    )


def build_models(dataset, cfg):
    scene_bounds = dataset.scene.bounds
    extent = float(np.max(scene_bounds[1] - scene_bounds[0]))
    rng = np.random.default_rng(cfg.seed)
    field = RadianceField(
        scene_bounds,
        resolution=(cfg.resolution,) * 3,
        ranks=(cfg.ranks,) * 3,
        feature_dim=cfg.feature_dim,
        rng=rng,
        density_offset=cfg.density_offset,
    )
    intr = _shared_intrinsics(dataset)
    kernel = MotionKernel(
        n_views=len(dataset.trajectories),
        image_size=(intr.width, intr.height),
        scene_extent=extent,
        latent_dim=cfg.latent_dim,
        hidden=cfg.kernel_hidden,
        n_warped=cfg.n_warped,
        embedding=cfg.embedding_mode,
        residual_momentum=cfg.residual_momentum,
        solver=cfg.solver,
        substeps=cfg.substeps,
        rng=rng,
    )
    return field, kernel


def _lr_for(cfg):
    def lr(name):
        tail = name.split(".", 1)[-1]
        if tail.startswith("vec_") or tail.startswith("mat_"):
            return cfg.lr_grid
        return cfg.lr_net

    return lr


def _save_checkpoint(path, field, kernel, opt, cfg, iteration):
    arrays = {}
    arrays.update(field.state_arrays())
    arrays.update(kernel.state_arrays())
    arrays.update(opt.state_arrays())
    meta = {
        "iteration": iteration,
        "config": asdict(cfg),
        "field": field.config,
        "kernel": kernel.config_dict(),
    }
    checkpoint.save_arrays(path, arrays, meta)


def load_checkpoint(path, dataset):
    """Rebuild field and kernel from a training checkpoint."""
    arrays, meta = checkpoint.load_arrays(path)
    cfg = TrainConfig.from_dict(meta["config"])
    field, kernel = build_models(dataset, cfg)
    field.load_state(arrays)
    kernel.load_state(arrays)
    return field, kernel, cfg, meta


@dataclass
class TrainResult:
    field: object
    kernel: object
    history: list          # (iteration, recon, supp) tuples
    csv_path: str = None
    ckpt_path: str = None


def train(dataset, cfg, csv_path=None, ckpt_path=None, quiet=True):
    """Fit field (and kernel, per kernel_mode) to the blurry training views."""
    pool = build_ray_pool(dataset)
    field, kernel = build_models(dataset, cfg)
    intr = _shared_intrinsics(dataset)
    rng = np.random.default_rng(cfg.seed + 1)
    background = dataset.scene.background

    params = list(field.parameters())
    if cfg.kernel_mode == "full":
        params += kernel.parameters()
    opt = Adam(params, lr=_lr_for(cfg))

    writer = None
    csv_file = None
    if csv_path:
        csv_file = open(csv_path, "w", newline="")
        writer = csv.writer(csv_file)
        writer.writerow(["iteration", "recon_loss", "supp_loss", "wall_time"])

    history = []
    n_rays = pool.origins.shape[0]
    t0 = time.perf_counter()
    try:
        for it in range(1, cfg.iterations + 1):
            take = rng.integers(0, n_rays, size=cfg.batch_size)
            o_b = pool.origins[take]
            d_b = pool.dirs[take]
            p_b = pool.pixels[take]
            v_b = pool.view_idx[take]
            target = pool.colors[take]
            rots_b = pool.rotations[v_b]

            try:
                with ad.Graph() as g:
                    if cfg.kernel_mode == "off":
                        pred = render_rays(
                            field, o_b, d_b, dataset.near, dataset.far,
                            n_samples=cfg.n_samples, jitter=cfg.jitter,
                            rng=rng, background=background)
                        rloss = recon_loss(pred, target)
                        sloss = ad.Tensor(np.zeros(()))
                        loss = rloss
                    else:
                        kr = kernel.generate_kernel(
                            o_b, d_b, p_b, v_b, intr, rots_b)
                        # one render over all warped rays, [N*B] flattened
                        o_all = ad.concat(list(kr.origins), axis=0)
                        d_all = ad.concat(list(kr.directions), axis=0)
                        flat = render_rays(
                            field, o_all, d_all, dataset.near, dataset.far,
                            n_samples=cfg.n_samples, jitter=cfg.jitter,
                            rng=rng, background=background)
                        cols = ad.transpose(
                            ad.reshape(flat, (kr.n, cfg.batch_size, 3)),
                            (1, 0, 2))
                        pred = composite_blur(cols, kr.weights)
                        rloss = recon_loss(pred, target)
                        if cfg.suppression and cfg.lambda_supp > 0:
                            sloss = suppression_loss(kr.samples[0],
                                                     cfg.lambda_supp)
                            loss = ad.add(rloss, sloss)
                        else:
                            sloss = ad.Tensor(np.zeros(()))
                            loss = rloss
            except IntegrationError as e:
                raise TrainAbort(it, f"solver failure: {e}", ckpt_path)

            rv = float(rloss.data)
            sv = float(sloss.data)
            if not (np.isfinite(rv) and np.isfinite(sv)):
                raise TrainAbort(
                    it, f"non-finite loss (recon={rv}, supp={sv})", ckpt_path)

            ad.backward(g, loss)
            if cfg.lr_decay < 1.0:
                opt.lr_scale = cfg.lr_decay ** (it / cfg.iterations)
            opt.step()
            opt.zero_grad()

            wall = time.perf_counter() - t0
            history.append((it, rv, sv))
            if writer:
                writer.writerow([it, f"{rv:.12e}", f"{sv:.12e}",
                                 f"{wall:.3f}"])
            if not quiet and (it % 100 == 0 or it == 1):
                print(f"iter {it}: recon {rv:.5f} supp {sv:.5f} "
                      f"({wall:.1f}s)")
            if ckpt_path and (it % cfg.checkpoint_every == 0
                              or it == cfg.iterations):
                _save_checkpoint(ckpt_path, field, kernel, opt, cfg, it)
            if it % 50 == 0:
                release_free_heap()
    finally:
        if csv_file:
            csv_file.close()
    return TrainResult(field=field, kernel=kernel, history=history,
                       csv_path=csv_path, ckpt_path=ckpt_path)


def evaluate(field, dataset, indices=None, n_samples=64):
    """Render the listed views from their original rays and score against
    the sharp ground truth. The kernel must never run here."""
    from . import metrics

    indices = dataset.heldout_indices if indices is None else indices
    intr = _shared_intrinsics(dataset)
    before = kernel_evals.total
    rows = []
    for i in indices:
        rot, pos = dataset.pose0(i)
        img = render_image(field, intr, rot, pos, dataset.near, dataset.far,
                           n_samples=n_samples,
                           background=dataset.scene.background)
        img = np.clip(img, 0.0, 1.0)
        rows.append((i, metrics.psnr(img, dataset.sharp[i]),
                     metrics.ssim(img, dataset.sharp[i])))
    if kernel_evals.total != before:
        raise RuntimeError(
            "kernel was invoked during evaluation; the sharp render path "
            "must stay kernel-free")
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_ssim = float(np.mean([r[2] for r in rows]))
    return {"views": rows, "psnr": mean_psnr, "ssim": mean_ssim}


def probe_suppression(kernel, dataset, n_rays=256, seed=0):
    """Median L2 norm of the exposure-start (dp, do) decode over random
    training rays; small values mean the learned warp anchors the first ray."""
    pool = build_ray_pool(dataset)
    rng = np.random.default_rng(seed)
    take = rng.integers(0, pool.origins.shape[0], size=n_rays)
    state = kernel.encode_initial(pool.view_idx[take], pool.pixels[take])
    sample = kernel.decode(state.z)
    both = np.concatenate([sample.dp.data, sample.do.data], axis=1)
    return float(np.median(np.linalg.norm(both, axis=1)))


ABLATIONS = (
    ("none", False, False),
    ("time-only", False, False),
    ("chrono-view", False, False),
    ("chrono-view", True, False),
    ("chrono-view", False, True),
    ("chrono-view", True, True),
)


def ablation_configs(base):
    """The six supported embedding/suppression/residual combinations."""
    out = []
    for mode, supp, rm in ABLATIONS:
        d = asdict(base)
        d.update(embedding_mode=mode, suppression=supp,
                 residual_momentum=rm)
        out.append(TrainConfig.from_dict(d))
    return out


def sweep_n(dataset, base_cfg, ns=(4, 5, 6, 7, 8, 9), csv_dir=None):
    """Train once per trajectory length and score held-out quality."""
    rows = []
    for n in ns:
        d = asdict(base_cfg)
        d.update(n_warped=n)
        cfg = TrainConfig.from_dict(d)
        t0 = time.perf_counter()
        csv_path = os.path.join(csv_dir, f"sweep_n{n}.csv") if csv_dir else None
        result = train(dataset, cfg, csv_path=csv_path)
        scores = evaluate(result.field, dataset, n_samples=cfg.n_samples)
        rows.append({"n": n, "psnr": scores["psnr"], "ssim": scores["ssim"],
                     "seconds": time.perf_counter() - t0})
    return rows
