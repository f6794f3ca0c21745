"""Synthetic ground truth: analytic toy scenes, camera trajectories, sharp
renders, and motion-blurred exposures composited from sub-frame renders.

The renderer here is the evaluation oracle. It intersects rays with spheres
and boxes analytically and shades with a camera headlight; it shares no
evaluation code with the trainable field or compositor.
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import cameras


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    color: np.ndarray
    emissive: float = 0.0

    def to_dict(self):
        return {"type": "sphere", "center": list(map(float, self.center)),
                "radius": float(self.radius),
                "color": list(map(float, self.color)),
                "emissive": float(self.emissive)}


@dataclass
class Box:
    center: np.ndarray
    size: np.ndarray
    color: np.ndarray
    emissive: float = 0.0

    def to_dict(self):
        return {"type": "box", "center": list(map(float, self.center)),
                "size": list(map(float, self.size)),
                "color": list(map(float, self.color)),
                "emissive": float(self.emissive)}


def _primitive_from_dict(d):
    if d["type"] == "sphere":
        return Sphere(np.array(d["center"], dtype=np.float64), d["radius"],
                      np.array(d["color"], dtype=np.float64), d["emissive"])
    if d["type"] == "box":
        return Box(np.array(d["center"], dtype=np.float64),
                   np.array(d["size"], dtype=np.float64),
                   np.array(d["color"], dtype=np.float64), d["emissive"])
    raise ValueError(f"unknown primitive type {d['type']!r}")


@dataclass
class ToyScene:
    primitives: list
    background: np.ndarray
    bounds: np.ndarray  # [2,3] lo/hi

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        self.bounds = np.asarray(self.bounds, dtype=np.float64)
        lo, hi = self.bounds
        for p in self.primitives:
            ext = p.radius if isinstance(p, Sphere) else np.asarray(p.size) / 2
            if (np.any(np.asarray(p.center) - ext < lo - 1e-9)
                    or np.any(np.asarray(p.center) + ext > hi + 1e-9)):
                raise ValueError(f"primitive at {p.center} outside bounds")
            if np.any(np.asarray(p.color) < 0) or np.any(np.asarray(p.color) > 1):
                raise ValueError("primitive color outside [0,1]")
        if np.any(self.background < 0) or np.any(self.background > 1):
            raise ValueError("background color outside [0,1]")

    def to_dict(self):
        return {"primitives": [p.to_dict() for p in self.primitives],
                "background": list(map(float, self.background)),
                "bounds": [list(map(float, b)) for b in self.bounds]}

    @classmethod
    def from_dict(cls, d):
        return cls([_primitive_from_dict(p) for p in d["primitives"]],
                   np.array(d["background"], dtype=np.float64),
                   np.array(d["bounds"], dtype=np.float64))


INTERPOLATIONS = ("linear", "cubic-hermite")


@dataclass
class CameraTrajectory:
    positions: np.ndarray  # [K,3] control positions
    lookats: np.ndarray    # [K,3] control look-at targets
    interpolation: str = "linear"
    m_subframes: int = 32

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.lookats = np.asarray(self.lookats, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[0] < 2:
            raise ValueError("need K >= 2 control poses")
        if self.positions.shape != self.lookats.shape:
            raise ValueError("positions/lookats shape mismatch")
        if self.interpolation not in INTERPOLATIONS:
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.m_subframes < 1:
            raise ValueError("m_subframes must be >= 1")

    def _interp(self, ctrl, t):
        t = min(max(float(t), 0.0), 1.0)
        k = ctrl.shape[0]
        u = t * (k - 1)
        i = min(int(np.floor(u)), k - 2)
        s = u - i
        p0, p1 = ctrl[i], ctrl[i + 1]
        if self.interpolation == "linear":
            return (1 - s) * p0 + s * p1
        m0 = (ctrl[i + 1] - ctrl[i - 1]) / 2 if i > 0 else ctrl[1] - ctrl[0]
        m1 = ((ctrl[i + 2] - ctrl[i]) / 2 if i + 2 < k
              else ctrl[k - 1] - ctrl[k - 2])
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1

    def pose(self, t):
        """(camera position, look-at target) at exposure fraction t."""
        return self._interp(self.positions, t), self._interp(self.lookats, t)

    def subframe_times(self):
        m = self.m_subframes
        return [0.0] if m == 1 else [k / (m - 1) for k in range(m)]

    def to_dict(self):
        return {"positions": [list(map(float, p)) for p in self.positions],
                "lookats": [list(map(float, p)) for p in self.lookats],
                "interpolation": self.interpolation,
                "m_subframes": int(self.m_subframes)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["positions"], dtype=np.float64),
                   np.array(d["lookats"], dtype=np.float64),
                   d["interpolation"], d["m_subframes"])


def _pixel_rays(intr, position, lookat):
    """Pinhole rays for every pixel, written out locally so the oracle stays
    independent of the trainable ray path (conventions must still agree)."""
    rot = cameras.look_at_rotation(position, lookat)
    xs = np.arange(intr.width, dtype=np.float64)
    ys = np.arange(intr.height, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    d_cam = np.stack([(gx - intr.cx) / intr.focal,
                      (gy - intr.cy) / intr.focal,
                      np.ones_like(gx)], axis=-1).reshape(-1, 3)
    d_world = d_cam @ rot.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    return d_world


def _hit_sphere(origin, dirs, sph):
    oc = origin - sph.center
    b = dirs @ oc
    c = oc @ oc - sph.radius**2
    disc = b * b - c
    t = np.full(dirs.shape[0], np.inf)
    ok = disc >= 0.0
    root = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - root
    t1 = -b + root
    tt = np.where(t0 > 1e-9, t0, t1)
    valid = ok & (tt > 1e-9)
    t[valid] = tt[valid]
    normals = np.zeros_like(dirs)
    pts = origin + t[valid, None] * dirs[valid]
    normals[valid] = (pts - sph.center) / sph.radius
    return t, normals  # normals full-length, zero rows where missed


def _hit_box(origin, dirs, box):
    lo = box.center - box.size / 2
    hi = box.center + box.size / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t_lo = (lo - origin) * inv
        t_hi = (hi - origin) * inv
    t_near = np.nanmax(np.minimum(t_lo, t_hi), axis=1)
    t_far = np.nanmin(np.maximum(t_lo, t_hi), axis=1)
    t = np.full(dirs.shape[0], np.inf)
    valid = (t_near <= t_far) & (t_far > 1e-9)
    t_entry = np.where(t_near > 1e-9, t_near, t_far)
    t[valid] = t_entry[valid]
    normals = np.zeros_like(dirs)
    enter = np.minimum(t_lo, t_hi)
    axis = np.argmax(np.where(enter == t_near[:, None], 1.0, 0.0), axis=1)
    sign = -np.sign(dirs[np.arange(dirs.shape[0]), axis])
    normals[np.arange(dirs.shape[0]), axis] = sign
    normals[~valid] = 0.0
    return t, normals  # normals full-length, zero rows where missed


def render_sharp(scene, position, lookat, intr):
    """Analytic render: nearest hit shaded by a headlight, else background."""
    position = np.asarray(position, dtype=np.float64)
    dirs = _pixel_rays(intr, position, lookat)
    n_pix = dirs.shape[0]
    best_t = np.full(n_pix, np.inf)
    img = np.tile(scene.background, (n_pix, 1))
    best_n = np.zeros((n_pix, 3))
    best_color = np.zeros((n_pix, 3))
    best_emissive = np.zeros(n_pix)
    for prim in scene.primitives:
        hit = _hit_sphere if isinstance(prim, Sphere) else _hit_box
        t, normals = hit(position, dirs, prim)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_n[closer] = normals[closer]
        best_color[closer] = prim.color
        best_emissive[closer] = prim.emissive
    hit_mask = best_t < np.inf
    lambert = np.maximum(0.0, -(best_n * dirs).sum(axis=1))
    shade = 0.25 + 0.75 * lambert
    lit = best_color * (best_emissive[:, None]
                        + (1 - best_emissive[:, None]) * shade[:, None])
    img[hit_mask] = lit[hit_mask]
    return img.reshape(intr.height, intr.width, 3)


def blur_render(scene, traj, intr):
    """Mean of sub-frame renders along the trajectory: the blurry exposure."""
    times = traj.subframe_times()
    acc = np.zeros((intr.height, intr.width, 3))
    subposes = []
    for t in times:
        pos, look = traj.pose(t)
        acc += render_sharp(scene, pos, look, intr)
        subposes.append((pos, look))
    return acc / len(times), subposes


def first_hit_point(scene, position, lookat, intr, pixel):
    """World point the probe pixel's ray first hits, or None on miss."""
    position = np.asarray(position, dtype=np.float64)
    rot = cameras.look_at_rotation(position, lookat)
    d = cameras.pixel_to_world_dir(intr, rot, np.asarray(pixel, np.float64))
    best_t = np.inf
    for prim in scene.primitives:
        hit = _hit_sphere if isinstance(prim, Sphere) else _hit_box
        t, _ = hit(position, d[None, :], prim)
        best_t = min(best_t, float(t[0]))
    if not np.isfinite(best_t):
        return None
    return position + best_t * d


def gt_pixel_path(scene, traj, intr, pixel, times):
    """Project the pixel's first-hit point through the trajectory poses."""
    pos0, look0 = traj.pose(0.0)
    point = first_hit_point(scene, pos0, look0, intr, pixel)
    if point is None:
        return None
    path = []
    for t in times:
        pos, look = traj.pose(t)
        rot = cameras.look_at_rotation(pos, look)
        pix, depth = cameras.project(intr, rot, pos, point[None, :])
        if depth[0] <= 0:
            return None
        path.append(pix[0])
    return np.asarray(path)


# -- dataset I/O ----------------------------------------------------------


def _save_png(path, img):
    data = (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, "RGB").save(path)


def _load_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def export_dataset(scene, views, out_dir, near, far):
    """Write blur/sharp PNG pairs and the manifest.

    views: list of (trajectory, intrinsics, role) with role train|heldout.
    The sharp image is rendered at trajectory(0); the manifest stores the
    scene, bounds, and full control trajectories for later evaluation.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "resolution": [views[0][1].width, views[0][1].height],
        "linear_encoding": True,
        "near": float(near),
        "far": float(far),
        "scene": scene.to_dict(),
        "views": [],
    }
    for i, (traj, intr, role) in enumerate(views):
        if role not in ("train", "heldout"):
            raise ValueError(f"view {i}: unknown role {role!r}")
        blur, _ = blur_render(scene, traj, intr)
        pos0, look0 = traj.pose(0.0)
        sharp = render_sharp(scene, pos0, look0, intr)
        try:
            _save_png(os.path.join(out_dir, f"blur_{i:03d}.png"), blur)
            _save_png(os.path.join(out_dir, f"sharp_{i:03d}.png"), sharp)
        except OSError as e:
            raise OSError(f"writing images for view {i} under {out_dir}: {e}")
        manifest["views"].append({
            "index": i,
            "role": role,
            "intrinsics": intr.to_dict(),
            "trajectory": traj.to_dict(),
        })
    path = os.path.join(out_dir, "manifest.json")
    try:
        fd, tmp = tempfile.mkstemp(dir=out_dir, suffix=".tmp")
        with os.fdopen(fd, "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"writing manifest under {out_dir}: {e}")
    return manifest


@dataclass
class Dataset:
    manifest: dict
    scene: ToyScene
    trajectories: list
    intrinsics: list
    roles: list
    blur: np.ndarray   # [V,H,W,3] linear float
    sharp: np.ndarray
    near: float
    far: float

    @property
    def train_indices(self):
        return [i for i, r in enumerate(self.roles) if r == "train"]

    @property
    def heldout_indices(self):
        return [i for i, r in enumerate(self.roles) if r == "heldout"]

    def pose0(self, i):
        """Rotation and position of view i at exposure start."""
        pos, look = self.trajectories[i].pose(0.0)
        return cameras.look_at_rotation(pos, look), pos


def load_dataset(path):
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath) as f:
            manifest = json.load(f)
    except OSError as e:
        raise OSError(f"reading manifest at {mpath}: {e}")
    scene = ToyScene.from_dict(manifest["scene"])
    trajectories, intr_list, roles, blur, sharp = [], [], [], [], []
    for view in manifest["views"]:
        i = view["index"]
        trajectories.append(CameraTrajectory.from_dict(view["trajectory"]))
        intr_list.append(cameras.Intrinsics.from_dict(view["intrinsics"]))
        roles.append(view["role"])
        blur.append(_load_png(os.path.join(path, f"blur_{i:03d}.png")))
        sharp.append(_load_png(os.path.join(path, f"sharp_{i:03d}.png")))
    return Dataset(manifest=manifest, scene=scene, trajectories=trajectories,
                   intrinsics=intr_list, roles=roles,
                   blur=np.stack(blur), sharp=np.stack(sharp),
                   near=manifest["near"], far=manifest["far"])


# -- presets --------------------------------------------------------------

BOUNDS = np.array([[-1.2, -1.2, -1.2], [1.2, 1.2, 1.2]])
NEAR, FAR = 1.6, 4.6
PRESETS = ("stationary", "linear", "cubic")


def preset_scene():
    return ToyScene(
        primitives=[
            Sphere(np.array([0.0, 0.0, 0.25]), 0.55,
                   np.array([0.9, 0.25, 0.2])),
            Sphere(np.array([-0.62, 0.35, -0.5]), 0.38,
                   np.array([0.2, 0.55, 0.95])),
            Sphere(np.array([0.55, -0.5, -0.45]), 0.3,
                   np.array([0.95, 0.85, 0.25]), emissive=0.5),
            Box(np.array([0.0, 0.0, -1.05]), np.array([2.2, 2.2, 0.22]),
                np.array([0.45, 0.75, 0.45])),
            Box(np.array([0.65, 0.62, -0.6]), np.array([0.5, 0.5, 0.7]),
                np.array([0.8, 0.45, 0.85])),
        ],
        background=np.array([0.04, 0.05, 0.08]),
        bounds=BOUNDS.copy(),
    )


def _ring_pose(i, n, radius=3.0):
    theta = 2.0 * np.pi * i / n
    z = (-0.7, 0.1, 0.9)[i % 3]
    pos = np.array([radius * np.cos(theta), radius * np.sin(theta), z])
    return pos


def _motion_offsets(rng, pos, scale):
    """Exposure-long camera drift: mostly tangential, a little vertical."""
    tangent = np.array([-pos[1], pos[0], 0.0])
    tangent /= np.linalg.norm(tangent)
    vertical = np.array([0.0, 0.0, 1.0])
    a, b = rng.uniform(0.6, 1.0), rng.uniform(-0.5, 0.5)
    sgn = rng.choice((-1.0, 1.0))
    d = sgn * (a * tangent + b * vertical)
    return d / np.linalg.norm(d) * scale


def build_preset(kind, n_train=20, n_heldout=5, width=64, height=64,
                 focal=60.0, m_subframes=32, motion_scale=0.32, seed=0):
    """Scene plus per-view trajectories for one blur regime."""
    if kind not in PRESETS:
        raise ValueError(f"unknown preset {kind!r}, expected one of {PRESETS}")
    scene = preset_scene()
    intr = cameras.Intrinsics(focal=focal, width=width, height=height)
    rng = np.random.default_rng(seed)
    views = []
    total = n_train + n_heldout
    for i in range(total):
        role = "train" if i < n_train else "heldout"
        pos = _ring_pose(i, total)
        look = np.zeros(3)
        if kind == "stationary":
            traj = CameraTrajectory(np.stack([pos, pos]),
                                    np.stack([look, look]),
                                    "linear", m_subframes=4)
        elif kind == "linear":
            d = _motion_offsets(rng, pos, motion_scale)
            dl = _motion_offsets(rng, pos, motion_scale * 0.45)
            traj = CameraTrajectory(
                np.stack([pos - d / 2, pos + d / 2]),
                np.stack([look - dl / 2, look + dl / 2]),
                "linear", m_subframes=m_subframes)
        else:
            d = _motion_offsets(rng, pos, motion_scale)
            perp = np.cross(d / np.linalg.norm(d), pos / np.linalg.norm(pos))
            perp /= np.linalg.norm(perp)
            bow = perp * motion_scale * rng.uniform(0.75, 1.0)
            ctrl = np.stack([pos - d / 2, pos - d / 6 + bow,
                             pos + d / 6 + bow, pos + d / 2])
            dl = _motion_offsets(rng, pos, motion_scale * 0.45)
            lctrl = np.stack([look - dl / 2, look - dl / 6,
                              look + dl / 6, look + dl / 2])
            traj = CameraTrajectory(ctrl, lctrl, "cubic-hermite",
                                    m_subframes=m_subframes)
        views.append((traj, intr, role))
    return scene, views, NEAR, FAR
