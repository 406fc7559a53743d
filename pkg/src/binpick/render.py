"""Synthetic depth rendering: pinhole ray casting against the scene.

Pixel rays use the unnormalized direction ((u-cx)/fx, (v-cy)/fy, 1) in the
camera frame, so the ray parameter of a hit is directly the camera z-depth.
Invalid (no-hit) pixels are encoded as depth 0.
"""

import numpy as np

from .geometry import Pose
from .scene import Scene
from .volumetric import CameraIntrinsics

DEFAULT_RESOLUTION = (640, 480)
DEFAULT_FOCAL = 550.0
DEFAULT_CAMERA_HEIGHT = 1.0

NOISE_SIGMA = 0.001  # meters
NOISE_DROPOUT = 0.005  # fraction of valid pixels zeroed


def top_down_camera(
    height: float = DEFAULT_CAMERA_HEIGHT,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    focal: float = DEFAULT_FOCAL,
) -> tuple[CameraIntrinsics, Pose]:
    """Camera looking straight down at the bin center from `height`."""
    w, h = resolution
    intr = CameraIntrinsics(fx=focal, fy=focal, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, width=w, height=h)
    # camera x -> world +x, camera y -> world -y, camera z (view) -> world -z
    R = np.diag([1.0, -1.0, -1.0])
    return intr, Pose(R, np.array([0.0, 0.0, height]))


def render_depth(scene: Scene, intr: CameraIntrinsics, cam_pose: Pose) -> np.ndarray:
    """Z-depth image of bin walls/floor plus all objects, meters, 0 = no hit."""
    u = np.arange(intr.width)
    v = np.arange(intr.height)
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu, dtype=float)],
        axis=-1,
    ).reshape(-1, 3)
    d_world = d_cam @ cam_pose.R.T
    o_world = np.broadcast_to(cam_pose.t, d_world.shape)

    best = np.full(len(d_world), np.inf)
    for obj in scene.bin.boxes() + scene.objects:
        hit, t, _ = obj.ray_entry(o_world, d_world)
        upd = hit & (t < best)
        best[upd] = t[upd]
    depth = np.where(np.isfinite(best), best, 0.0)
    return depth.reshape(intr.height, intr.width)


def add_depth_noise(
    depth: np.ndarray,
    rng: np.random.Generator,
    sigma: float = NOISE_SIGMA,
    dropout: float = NOISE_DROPOUT,
) -> np.ndarray:
    """Additive Gaussian noise plus random pixel dropout on valid pixels."""
    out = np.asarray(depth, dtype=float).copy()
    valid = out > 0
    out[valid] += rng.normal(0.0, sigma, size=int(valid.sum()))
    drop = valid & (rng.uniform(size=out.shape) < dropout)
    out[drop] = 0.0
    np.clip(out, 0.0, None, out=out)
    return out
