"""Voxel grids: TSDF fusion from depth, surface normals, labels, interpolation.

All grids share a cubic N^3 lattice described by GridSpec; grid origin is
the world position of the (0,0,0) voxel's corner, voxel centers sit at
origin + (index + 0.5) * voxel_size.

Grid files are a JSON header plus a raw little-endian float32 payload in
x-major layout (x slowest, z fastest — C order of values[ix, iy, iz]).
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Pose

logger = logging.getLogger(__name__)

DEFAULT_GRID_N = 64
DEFAULT_VOXEL_SIZE = 0.009


@dataclass
class GridSpec:
    n: int = DEFAULT_GRID_N
    voxel_size: float = DEFAULT_VOXEL_SIZE
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        if self.n < 8:
            raise ValueError("grid needs n >= 8")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be > 0")

    @property
    def extent(self) -> float:
        return self.n * self.voxel_size

    def voxel_centers(self) -> np.ndarray:
        """(n^3, 3) world coordinates of all voxel centers, x-major order."""
        idx = np.arange(self.n)
        ii, jj, kk = np.meshgrid(idx, idx, idx, indexing="ij")
        ijk = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
        return self.origin + (ijk + 0.5) * self.voxel_size

    def voxel_center(self, ijk: np.ndarray) -> np.ndarray:
        return self.origin + (np.asarray(ijk, dtype=float) + 0.5) * self.voxel_size

    def voxel_of(self, p: np.ndarray) -> np.ndarray:
        """Integer voxel index containing world point(s) p (may be out of range)."""
        return np.floor((np.asarray(p, dtype=float) - self.origin) / self.voxel_size).astype(int)

    def contains(self, p: np.ndarray) -> np.ndarray | bool:
        ijk = self.voxel_of(p)
        ok = np.all((ijk >= 0) & (ijk < self.n), axis=-1)
        return bool(ok) if ok.ndim == 0 else ok

    def subvoxel_centers(self, ijk: np.ndarray) -> np.ndarray:
        """Centers of the 8 sub-voxels of one voxel (2x2x2 subdivision)."""
        base = self.origin + np.asarray(ijk, dtype=float) * self.voxel_size
        off = np.array(
            [[i, j, k] for i in (0.25, 0.75) for j in (0.25, 0.75) for k in (0.25, 0.75)]
        )
        return base + off * self.voxel_size

    def to_dict(self) -> dict:
        return {"n": self.n, "voxel_size": self.voxel_size, "origin": [float(x) for x in self.origin]}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(int(d["n"]), float(d["voxel_size"]), np.asarray(d["origin"], dtype=float))


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
            int(d["width"]), int(d["height"]),
        )


@dataclass
class TsdfGrid:
    """Truncated signed distances in [-1, 1] plus observation weights."""

    spec: GridSpec
    values: np.ndarray  # (n, n, n)
    weights: np.ndarray  # (n, n, n), 0 = unobserved
    trunc: float

    @property
    def observed(self) -> np.ndarray:
        return self.weights > 0


@dataclass
class NormalGrid:
    """Unit surface normals stored only at near-surface voxels."""

    spec: GridSpec
    normals: np.ndarray  # (n, n, n, 3), zeros where absent
    mask: np.ndarray  # (n, n, n) bool, True where a normal is present


@dataclass
class LabelGrid:
    """Per-voxel class probabilities [contact, approach, empty], sum 1."""

    spec: GridSpec
    probs: np.ndarray  # (n, n, n, 3)

    def __post_init__(self):
        sums = self.probs.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise ValueError("label probabilities must sum to 1 per voxel")

    @property
    def contact(self) -> np.ndarray:
        return self.probs[..., 0]

    @property
    def approach(self) -> np.ndarray:
        return self.probs[..., 1]

    @property
    def empty(self) -> np.ndarray:
        return self.probs[..., 2]


def fuse_depth(
    depth: np.ndarray,
    intr: CameraIntrinsics,
    cam_pose: Pose,
    spec: GridSpec,
    trunc: float,
) -> TsdfGrid:
    """Projective TSDF of a single depth image.

    Each voxel center is projected into the image; sdf = measured depth at
    that pixel minus the voxel's camera depth, the stored value is
    clamp(sdf / trunc, -1, 1) with weight 1 where observed and sdf > -trunc.
    Depth value 0 marks invalid pixels.  Raises if no voxel projects into
    the camera frustum at all.
    """
    depth = np.asarray(depth, dtype=float)
    if depth.ndim != 2 or depth.size == 0:
        raise ValueError("depth must be a non-empty H x W array")
    if trunc <= 0:
        raise ValueError("trunc must be > 0")
    if depth.shape != (intr.height, intr.width):
        raise ValueError("depth shape does not match intrinsics")

    centers = spec.voxel_centers()
    p_cam = cam_pose.inverse_apply(centers)
    z = p_cam[:, 2]
    in_front = z > 1e-9

    u = np.zeros(len(centers), dtype=int)
    v = np.zeros(len(centers), dtype=int)
    u[in_front] = np.round(intr.fx * p_cam[in_front, 0] / z[in_front] + intr.cx).astype(int)
    v[in_front] = np.round(intr.fy * p_cam[in_front, 1] / z[in_front] + intr.cy).astype(int)
    in_view = in_front & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    if not np.any(in_view):
        raise ValueError("voxel grid lies entirely outside the camera frustum")

    values = np.zeros(len(centers))
    weights = np.zeros(len(centers))
    meas = np.zeros(len(centers))
    meas[in_view] = depth[v[in_view], u[in_view]]
    valid = in_view & (meas > 0)
    sdf = meas - z
    update = valid & (sdf > -trunc)
    values[update] = np.clip(sdf[update] / trunc, -1.0, 1.0)
    weights[update] = 1.0

    n = spec.n
    return TsdfGrid(
        spec=spec,
        values=values.reshape(n, n, n),
        weights=weights.reshape(n, n, n),
        trunc=trunc,
    )


def _axis_gradient(values: np.ndarray, observed: np.ndarray, axis: int) -> np.ndarray:
    """Per-voxel derivative along one axis: central where both neighbors are
    observed, one-sided where only one is, 0 where neither."""
    fwd_val = np.roll(values, -1, axis=axis)
    bwd_val = np.roll(values, 1, axis=axis)
    fwd_ok = np.roll(observed, -1, axis=axis)
    bwd_ok = np.roll(observed, 1, axis=axis)
    # rolled-over borders are not real neighbors
    n = values.shape[axis]
    edge_hi = [slice(None)] * 3
    edge_hi[axis] = n - 1
    edge_lo = [slice(None)] * 3
    edge_lo[axis] = 0
    fwd_ok = fwd_ok.copy()
    bwd_ok = bwd_ok.copy()
    fwd_ok[tuple(edge_hi)] = False
    bwd_ok[tuple(edge_lo)] = False

    grad = np.zeros_like(values)
    both = fwd_ok & bwd_ok
    only_f = fwd_ok & ~bwd_ok
    only_b = bwd_ok & ~fwd_ok
    grad[both] = 0.5 * (fwd_val[both] - bwd_val[both])
    grad[only_f] = fwd_val[only_f] - values[only_f]
    grad[only_b] = values[only_b] - bwd_val[only_b]
    return grad


def tsdf_normals(t: TsdfGrid) -> NormalGrid:
    """Extract unit surface normals at near-surface voxels.

    A voxel is near-surface iff it is observed and either its absolute
    metric distance is within one voxel of the surface or an observed face
    neighbor has the opposite TSDF sign.  The normal is the normalized
    finite-difference gradient of the TSDF values (pointing outward, from
    negative to positive); voxels with a vanishing gradient stay absent.
    """
    obs = t.observed
    if not np.any(obs):
        raise ValueError("TSDF grid has no observed voxels")

    near = obs & (np.abs(t.values) * t.trunc <= t.spec.voxel_size)
    sign = np.sign(t.values)
    for axis in range(3):
        for shift in (-1, 1):
            nb_sign = np.roll(sign, shift, axis=axis)
            nb_obs = np.roll(obs, shift, axis=axis)
            edge = [slice(None)] * 3
            edge[axis] = 0 if shift == 1 else t.spec.n - 1
            nb_obs = nb_obs.copy()
            nb_obs[tuple(edge)] = False
            near |= obs & nb_obs & (sign * nb_sign < 0)

    grad = np.stack([_axis_gradient(t.values, obs, axis) for axis in range(3)], axis=-1)
    norms = np.linalg.norm(grad, axis=-1)
    mask = near & (norms > 1e-9)
    normals = np.zeros_like(grad)
    normals[mask] = grad[mask] / norms[mask][:, None]
    return NormalGrid(spec=t.spec, normals=normals, mask=mask)


def trilinear(values: np.ndarray, spec: GridSpec, p: np.ndarray) -> float | np.ndarray:
    """Trilinear interpolation of a scalar voxel field at world point(s) p.

    Samples live at voxel centers; points outside the valid interpolation
    domain are clamped to the boundary.
    """
    values = np.asarray(values, dtype=float)
    p = np.asarray(p, dtype=float)
    single = p.ndim == 1
    pts = np.atleast_2d(p)
    q = (pts - spec.origin) / spec.voxel_size - 0.5
    q = np.clip(q, 0.0, spec.n - 1.0)
    i0 = np.minimum(q.astype(int), spec.n - 2)
    f = q - i0
    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]

    c000 = values[ix, iy, iz]
    c100 = values[ix + 1, iy, iz]
    c010 = values[ix, iy + 1, iz]
    c001 = values[ix, iy, iz + 1]
    c110 = values[ix + 1, iy + 1, iz]
    c101 = values[ix + 1, iy, iz + 1]
    c011 = values[ix, iy + 1, iz + 1]
    c111 = values[ix + 1, iy + 1, iz + 1]

    out = (
        c000 * (1 - fx) * (1 - fy) * (1 - fz)
        + c100 * fx * (1 - fy) * (1 - fz)
        + c010 * (1 - fx) * fy * (1 - fz)
        + c001 * (1 - fx) * (1 - fy) * fz
        + c110 * fx * fy * (1 - fz)
        + c101 * fx * (1 - fy) * fz
        + c011 * (1 - fx) * fy * fz
        + c111 * fx * fy * fz
    )
    return float(out[0]) if single else out


def build_label_grid(labels, spec: GridSpec) -> LabelGrid:
    """One-hot label grid from ground-truth grasp labels.

    Voxels holding at least one contact point are contact class; otherwise
    voxels holding the approach point t of a collision-free grasp are
    approach class; everything else is empty.  Out-of-grid points are
    skipped (count logged).
    """
    n = spec.n
    probs = np.zeros((n, n, n, 3))
    probs[..., 2] = 1.0
    skipped = 0

    def mark(point, channel):
        nonlocal skipped
        ijk = spec.voxel_of(point)
        if np.any(ijk < 0) or np.any(ijk >= n):
            skipped += 1
            return
        i, j, k = ijk
        if channel == 0 or probs[i, j, k, 0] == 0.0:
            probs[i, j, k] = 0.0
            probs[i, j, k, channel] = 1.0

    for lab in labels.labels:
        for i, score in enumerate(lab.config.collision_scores):
            if score > 0.5:
                mark(lab.approach_points[i], 1)
    for lab in labels.labels:
        mark(lab.config.c, 0)

    if skipped:
        logger.info("build_label_grid: skipped %d points outside the grid", skipped)
    return LabelGrid(spec=spec, probs=probs)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def _header_path(prefix: Path) -> Path:
    return prefix.with_suffix(".json")


def _payload_path(prefix: Path) -> Path:
    return prefix.with_suffix(".bin")


def save_grid(prefix, grid) -> None:
    """Write a grid as <prefix>.json header + <prefix>.bin payload."""
    prefix = Path(prefix)
    if isinstance(grid, TsdfGrid):
        kind = "tsdf"
        payload = np.concatenate(
            [grid.values.astype("<f4").ravel(), grid.weights.astype("<f4").ravel()]
        ).tobytes()
        extra = {"trunc": grid.trunc}
    elif isinstance(grid, NormalGrid):
        kind = "normal"
        bitmap = np.packbits(grid.mask.ravel().astype(np.uint8))
        present = grid.normals[grid.mask].astype("<f4")
        payload = bitmap.tobytes() + present.tobytes()
        extra = {}
    elif isinstance(grid, LabelGrid):
        kind = "label"
        payload = grid.probs.astype("<f4").tobytes()
        extra = {}
    else:
        raise TypeError(f"unsupported grid type {type(grid)!r}")

    header = {
        "kind": kind,
        "n": grid.spec.n,
        "voxel_size": grid.spec.voxel_size,
        "origin": [float(x) for x in grid.spec.origin],
        "dtype": "f32",
        "layout": "x-major",
        **extra,
    }
    _header_path(prefix).write_text(json.dumps(header, sort_keys=True) + "\n")
    _payload_path(prefix).write_bytes(payload)


def load_grid(prefix):
    """Load a grid written by save_grid; prefix may include .json/.bin."""
    prefix = Path(prefix)
    if prefix.suffix in (".json", ".bin"):
        prefix = prefix.with_suffix("")
    header = json.loads(_header_path(prefix).read_text())
    if header.get("dtype") != "f32" or header.get("layout") != "x-major":
        raise ValueError("unsupported grid encoding")
    spec = GridSpec(int(header["n"]), float(header["voxel_size"]), np.asarray(header["origin"]))
    raw = _payload_path(prefix).read_bytes()
    n = spec.n
    kind = header["kind"]
    if kind == "tsdf":
        arr = np.frombuffer(raw, dtype="<f4")
        if arr.size != 2 * n**3:
            raise ValueError("tsdf payload size mismatch")
        values = arr[: n**3].reshape(n, n, n).astype(float)
        weights = arr[n**3 :].reshape(n, n, n).astype(float)
        return TsdfGrid(spec, values, weights, trunc=float(header["trunc"]))
    if kind == "normal":
        nbytes_bitmap = (n**3 + 7) // 8
        mask = np.unpackbits(np.frombuffer(raw[:nbytes_bitmap], dtype=np.uint8))[: n**3]
        mask = mask.reshape(n, n, n).astype(bool)
        present = np.frombuffer(raw[nbytes_bitmap:], dtype="<f4").reshape(-1, 3)
        if present.shape[0] != int(mask.sum()):
            raise ValueError("normal payload size mismatch")
        normals = np.zeros((n, n, n, 3))
        normals[mask] = present.astype(float)
        return NormalGrid(spec, normals, mask)
    if kind == "label":
        probs = np.frombuffer(raw, dtype="<f4").reshape(n, n, n, 3).astype(float)
        return LabelGrid(spec, probs)
    raise ValueError(f"unknown grid kind {kind!r}")


def save_depth_png(path, depth_m: np.ndarray) -> None:
    """Write depth in meters as 16-bit grayscale PNG in millimeters."""
    mm = np.clip(np.round(np.asarray(depth_m) * 1000.0), 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(Path(path))


def save_depth_raw(prefix, depth_m: np.ndarray) -> None:
    """Write depth as raw little-endian f32 meters + JSON header."""
    prefix = Path(prefix)
    depth_m = np.asarray(depth_m, dtype="<f4")
    header = {"kind": "depth", "height": depth_m.shape[0], "width": depth_m.shape[1], "dtype": "f32"}
    _header_path(prefix).write_text(json.dumps(header, sort_keys=True) + "\n")
    _payload_path(prefix).write_bytes(depth_m.tobytes())


def load_depth(path) -> np.ndarray:
    """Read a depth image (meters) from 16-bit PNG (mm) or raw f32 pair."""
    path = Path(path)
    if path.suffix == ".png":
        img = Image.open(path)
        arr = np.asarray(img, dtype=np.float64)
        return arr / 1000.0
    if path.suffix in (".json", ".bin", ""):
        prefix = path.with_suffix("")
        header = json.loads(_header_path(prefix).read_text())
        shape = (int(header["height"]), int(header["width"]))
        return np.frombuffer(_payload_path(prefix).read_bytes(), dtype="<f4").reshape(shape).astype(float)
    raise ValueError(f"unsupported depth file {path}")


def save_intrinsics(path, intr: CameraIntrinsics, cam_pose: Pose) -> None:
    data = {**intr.to_dict(), "cam_pose": cam_pose.to_dict()}
    Path(path).write_text(json.dumps(data, sort_keys=True) + "\n")


def load_intrinsics(path) -> tuple[CameraIntrinsics, Pose]:
    data = json.loads(Path(path).read_text())
    return CameraIntrinsics.from_dict(data), Pose.from_dict(data["cam_pose"])
