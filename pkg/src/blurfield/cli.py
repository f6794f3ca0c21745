"""Command line front end.

Subcommands: gen-data (synthetic blur datasets), train, render (sharp
held-out views), eval (PSNR/SSIM table), inspect-kernel (per-pixel warp
trajectory export), sweep-n (warped-ray-count comparison). Exit codes:
0 success, 1 usage error, 2 runtime failure. Artifacts are written to a
temporary name and renamed, so failures leave no partial outputs.
"""

import argparse
import json
import os
import shutil
import sys
import tempfile
from dataclasses import asdict

import numpy as np

from . import cameras, scenegen, train as training
from .render import render_image
from .train import TrainConfig


class UsageError(Exception):
    """Bad argument content (well-formed flags, invalid values)."""


def _atomic_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".out-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_png(path, img):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    tmp = os.path.join(d, f".png-{os.getpid()}-{os.path.basename(path)}")
    try:
        scenegen._save_png(tmp, img)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- gen-data

_PRESET_ALIAS = {"default": "linear"}


def cmd_gen_data(args):
    kind = _PRESET_ALIAS.get(args.preset, args.preset)
    if args.interp is not None:
        kind = {"linear": "linear", "cubic": "cubic",
                "cubic-hermite": "cubic"}[args.interp]
    scene, views, near, far = scenegen.build_preset(
        kind, n_train=args.n_train, n_heldout=args.n_heldout,
        width=args.size, height=args.size, focal=args.focal,
        m_subframes=args.subframes, motion_scale=args.motion_scale,
        seed=args.seed)
    # stage in a temp dir so a failed run leaves no partial dataset
    out = os.path.abspath(args.out)
    parent = os.path.dirname(out) or "."
    os.makedirs(parent, exist_ok=True)
    tmp = tempfile.mkdtemp(dir=parent, prefix=".gen-data-")
    try:
        manifest = scenegen.export_dataset(scene, views, tmp, near, far)
        if not os.path.isdir(out):
            os.rename(tmp, out)
        else:
            names = sorted(os.listdir(tmp))
            for name in names:
                if name != "manifest.json":
                    os.replace(os.path.join(tmp, name),
                               os.path.join(out, name))
            # manifest last: the dataset only becomes loadable complete
            os.replace(os.path.join(tmp, "manifest.json"),
                       os.path.join(out, "manifest.json"))
            shutil.rmtree(tmp, ignore_errors=True)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    n_train = sum(1 for v in manifest["views"] if v["role"] == "train")
    print(f"wrote {args.out}: {len(manifest['views'])} views "
          f"({n_train} train), resolution "
          f"{manifest['resolution'][0]}x{manifest['resolution'][1]}, "
          f"trajectories {views[0][0].interpolation}")
    return 0


# ------------------------------------------------------------------- train

_ABLATIONS = {
    "no-residual": {"residual_momentum": False},
    "no-suppression": {"suppression": False},
    "bare": {"residual_momentum": False, "suppression": False},
    "time-only": {"embedding_mode": "time-only"},
    "no-cond": {"embedding_mode": "none"},
}

# CLI flag dest -> TrainConfig field, applied only when the flag is given.
_CFG_FLAGS = {
    "iters": "iterations", "batch_size": "batch_size", "seed": "seed",
    "n_warped": "n_warped", "kernel_mode": "kernel_mode",
    "embedding": "embedding_mode", "lambda_supp": "lambda_supp",
    "solver": "solver", "substeps": "substeps", "lr_grid": "lr_grid",
    "lr_net": "lr_net", "lr_decay": "lr_decay",
    "resolution": "resolution", "ranks": "ranks",
    "feature_dim": "feature_dim", "n_samples": "n_samples",
    "checkpoint_every": "checkpoint_every", "latent_dim": "latent_dim",
    "kernel_hidden": "kernel_hidden",
}


def _add_cfg_flags(p):
    p.add_argument("--config", help="JSON file of training settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--n-warped", type=int)
    p.add_argument("--kernel-mode", choices=training.KERNEL_MODES)
    p.add_argument("--embedding", choices=("chrono-view", "time-only",
                                           "none"))
    p.add_argument("--lambda-supp", type=float)
    p.add_argument("--solver", choices=("euler", "rk4", "dopri"))
    p.add_argument("--substeps", type=int)
    p.add_argument("--lr-grid", type=float)
    p.add_argument("--lr-net", type=float)
    p.add_argument("--lr-decay", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--ranks", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--n-samples", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--kernel-hidden", type=int)
    p.add_argument("--ablation", choices=sorted(_ABLATIONS))


def _effective_config(args):
    d = asdict(TrainConfig.from_json(args.config)) if args.config \
        else asdict(TrainConfig())
    for dest, field in _CFG_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            d[field] = v
    if getattr(args, "ablation", None):
        d.update(_ABLATIONS[args.ablation])
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"bad training configuration: {e}") from e


def cmd_train(args):
    ds = scenegen.load_dataset(args.data)
    cfg = _effective_config(args)
    os.makedirs(args.out, exist_ok=True)
    _atomic_text(os.path.join(args.out, "config.json"),
                 json.dumps(asdict(cfg), indent=1, sort_keys=True) + "\n")
    csv_path = args.csv or os.path.join(args.out, "metrics.csv")
    ckpt_path = os.path.join(args.out, "ckpt.npz")
    result = training.train(ds, cfg, csv_path=csv_path,
                            ckpt_path=ckpt_path, quiet=args.quiet)
    last = result.history[-1]
    print(f"done: {cfg.iterations} iterations, recon {last[1]:.6f}, "
          f"checkpoint {result.ckpt_path}")
    return 0


# ----------------------------------------------------------- render / eval

def _load_run(args):
    ds = scenegen.load_dataset(args.data)
    field, kernel, cfg, meta = training.load_checkpoint(args.ckpt, ds)
    return ds, field, kernel, cfg


def _view_list(args, ds):
    if args.views is None:
        return list(ds.heldout_indices)
    try:
        idx = [int(s) for s in args.views.split(",")]
    except ValueError as e:
        raise UsageError(f"bad --views list {args.views!r}") from e
    for i in idx:
        if not 0 <= i < len(ds.roles):
            raise UsageError(f"view {i} out of range 0..{len(ds.roles) - 1}")
    return idx


def cmd_render(args):
    ds, field, kernel, cfg = _load_run(args)
    intr = ds.intrinsics[0]
    os.makedirs(args.out, exist_ok=True)
    n_samples = args.n_samples or cfg.n_samples
    for i in _view_list(args, ds):
        rot, pos = ds.pose0(i)
        img = render_image(field, intr, rot, pos, ds.near, ds.far,
                           n_samples=n_samples,
                           background=ds.scene.background)
        path = os.path.join(args.out, f"render_{i:03d}.png")
        _atomic_png(path, np.clip(img, 0.0, 1.0))
        print(f"view {i:3d} -> {path}")
    return 0


def cmd_eval(args):
    ds, field, kernel, cfg = _load_run(args)
    idx = _view_list(args, ds)
    scores = training.evaluate(field, ds, indices=idx,
                               n_samples=args.n_samples or cfg.n_samples)
    lines = ["view,psnr,ssim"]
    for i, p, s in scores["views"]:
        print(f"view {i:3d}  psnr {p:7.3f}  ssim {s:.4f}")
        lines.append(f"{i},{p:.6f},{s:.6f}")
    print(f"mean      psnr {scores['psnr']:7.3f}  ssim "
          f"{scores['ssim']:.4f}")
    lines.append(f"mean,{scores['psnr']:.6f},{scores['ssim']:.6f}")
    if args.csv:
        _atomic_text(args.csv, "\n".join(lines) + "\n")
    return 0


# --------------------------------------------------------- inspect-kernel

def cmd_inspect_kernel(args):
    ds, field, kernel, cfg = _load_run(args)
    intr = ds.intrinsics[0]
    if not 0 <= args.view < len(ds.roles):
        raise UsageError(f"view {args.view} out of range "
                         f"0..{len(ds.roles) - 1}")
    try:
        px, py = (float(s) for s in args.pixel.split(","))
    except ValueError as e:
        raise UsageError(f"bad --pixel {args.pixel!r}, expected x,y") from e
    if not (0 <= px <= intr.width - 1 and 0 <= py <= intr.height - 1):
        raise UsageError(
            f"pixel ({px}, {py}) outside image "
            f"{intr.width}x{intr.height}")
    rot, pos = ds.pose0(args.view)
    direction = cameras.pixel_to_world_dir(intr, rot,
                                           np.array([[px, py]]))[0]
    rows = kernel.trajectory_rows(args.view, (px, py), pos, direction,
                                  intr, rot, n_warped=args.n_warped)
    lines = ["t,p_x,p_y,do_x,do_y,do_z,w"]
    lines += [",".join(f"{v:.9g}" for v in row) for row in rows]
    _atomic_text(args.out, "\n".join(lines) + "\n")
    ps = np.array([[r[1], r[2]] for r in rows])
    span = float(np.linalg.norm(ps[-1] - ps[0]))
    print(f"{len(rows)} samples, pixel span {span:.3f} px, weights "
          f"[{min(r[6] for r in rows):.4f}, "
          f"{max(r[6] for r in rows):.4f}] -> {args.out}")
    if args.overlay:
        img = ds.blur[args.view].copy()
        for a, b in zip(ps[:-1], ps[1:]):
            for s in np.linspace(0.0, 1.0, 24):
                x, y = a + s * (b - a)
                xi = int(round(min(max(x, 0), intr.width - 1)))
                yi = int(round(min(max(y, 0), intr.height - 1)))
                img[yi, xi] = (1.0, 0.1, 0.1)
        _atomic_png(args.overlay, img)
        print(f"overlay -> {args.overlay}")
    return 0


# ----------------------------------------------------------------- sweep-n

def cmd_sweep_n(args):
    ds = scenegen.load_dataset(args.data)
    cfg = _effective_config(args)
    try:
        ns = [int(s) for s in args.ns.split(",")]
    except ValueError as e:
        raise UsageError(f"bad --ns list {args.ns!r}") from e
    if any(not 1 <= n <= 16 for n in ns):
        raise UsageError("each sweep value must be in 1..16")
    os.makedirs(args.out, exist_ok=True)
    rows = training.sweep_n(ds, cfg, ns=ns, csv_dir=args.out)
    lines = ["n,psnr,ssim,seconds"]
    print(f"{'n':>3} {'psnr':>8} {'ssim':>7} {'seconds':>8}")
    for r in rows:
        print(f"{r['n']:>3} {r['psnr']:>8.3f} {r['ssim']:>7.4f} "
              f"{r['seconds']:>8.1f}")
        lines.append(f"{r['n']},{r['psnr']:.6f},{r['ssim']:.6f},"
                     f"{r['seconds']:.3f}")
    _atomic_text(os.path.join(args.out, "sweep.csv"),
                 "\n".join(lines) + "\n")
    return 0


# ------------------------------------------------------------------ parser

def build_parser():
    ap = argparse.ArgumentParser(
        prog="blurfield",
        description="Blur-aware radiance field training and inspection.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic blur dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--preset", default="default",
                   choices=("default",) + scenegen.PRESETS)
    g.add_argument("--interp", choices=("linear", "cubic", "cubic-hermite"))
    g.add_argument("--n-train", type=int, default=20)
    g.add_argument("--n-heldout", type=int, default=5)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--focal", type=float, default=60.0)
    g.add_argument("--subframes", type=int, default=32)
    g.add_argument("--motion-scale", type=float, default=0.32)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fit field and motion kernel")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--csv", help="metrics CSV path (default <out>/metrics.csv)")
    t.add_argument("--quiet", action="store_true")
    _add_cfg_flags(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render sharp views from a checkpoint")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--views", help="comma list (default: held-out views)")
    r.add_argument("--n-samples", type=int)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="PSNR/SSIM against held-out sharp images")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--csv")
    e.add_argument("--views")
    e.add_argument("--n-samples", type=int)
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("inspect-kernel",
                       help="export the warp trajectory of one pixel")
    k.add_argument("--ckpt", required=True)
    k.add_argument("--data", required=True)
    k.add_argument("--view", type=int, required=True)
    k.add_argument("--pixel", required=True, help="x,y")
    k.add_argument("--out", required=True)
    k.add_argument("--overlay", help="optional PNG of the path over the blur")
    k.add_argument("--n-warped", type=int)
    k.set_defaults(func=cmd_inspect_kernel)

    s = sub.add_parser("sweep-n", help="train across warped-ray counts")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ns", default="4,5,6,7,8,9")
    _add_cfg_flags(s)
    s.set_defaults(func=cmd_sweep_n)
    return ap


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
