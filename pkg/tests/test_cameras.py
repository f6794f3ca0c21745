import numpy as np

from blurfield import autodiff as ad
from blurfield import cameras as cam

rng = np.random.default_rng(19)


def test_look_at_rotation_orthonormal():
    R = cam.look_at_rotation([3.0, 1.0, 2.0], [0.0, 0.0, 0.0])
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12
    # forward axis (third column) points at the target
    fwd = np.array([0.0, 0.0, 0.0]) - np.array([3.0, 1.0, 2.0])
    assert np.allclose(R[:, 2], fwd / np.linalg.norm(fwd), atol=1e-12)


def test_pixel_projection_round_trip():
    intr = cam.Intrinsics(60.0, 64, 64)
    origin = np.array([2.5, -1.0, 1.5])
    R = cam.look_at_rotation(origin, [0.1, 0.2, -0.1])
    pix = rng.uniform(4, 59, size=(20, 2))
    dirs = cam.pixel_to_world_dir(intr, R, pix)
    assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
    pts = origin + dirs * rng.uniform(1.0, 4.0, size=(20, 1))
    back, depth = cam.project(intr, R, origin, pts)
    assert np.all(depth > 0)
    assert np.abs(back - pix).max() < 1e-9


def test_differentiable_dir_matches_plain():
    intr = cam.Intrinsics(60.0, 64, 64)
    origin = np.array([0.0, -3.0, 1.0])
    R = cam.look_at_rotation(origin, [0.0, 0.0, 0.0])
    pix = rng.uniform(0, 63, size=(8, 2))
    rots = np.broadcast_to(R, (8, 3, 3)).copy()
    d_plain = cam.pixel_to_world_dir(intr, R, pix)
    d_diff = cam.pixel_to_world_dir_diff(intr, rots, ad.Tensor(pix))
    assert np.abs(d_plain - d_diff.data).max() < 1e-12


def test_differentiable_dir_gradient():
    intr = cam.Intrinsics(60.0, 64, 64)
    origin = np.array([0.0, -3.0, 1.0])
    R = cam.look_at_rotation(origin, [0.0, 0.0, 0.0])
    rots = np.broadcast_to(R, (3, 3, 3)).copy()
    w = rng.normal(size=(3, 3))
    from fdcheck import assert_grads_close

    def fn(p):
        d = cam.pixel_to_world_dir_diff(intr, rots, p)
        return ad.sum_(ad.mul(d, ad.Tensor(w)))

    assert_grads_close(fn, [rng.uniform(10, 50, size=(3, 2))], rel=1e-4,
                       label="pixel_to_world_dir")


def test_view_rays_cover_grid():
    intr = cam.Intrinsics(30.0, 8, 6)
    origin = np.array([0.0, -2.0, 0.5])
    R = cam.look_at_rotation(origin, [0.0, 0.0, 0.0])
    origins, dirs, pix = cam.view_rays(intr, R, origin)
    assert origins.shape == (48, 3) and dirs.shape == (48, 3)
    assert pix[0].tolist() == [0.0, 0.0]
    assert pix[-1].tolist() == [7.0, 5.0]
    # center pixel looks along the optical axis
    center = cam.pixel_to_world_dir(intr, R, np.array([3.5, 2.5]))
    assert np.allclose(center, R[:, 2], atol=1e-12)
