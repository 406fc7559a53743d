"""Procedural bin scenes with quasi-static object placement.

Objects are dropped without dynamics: XY position and yaw are sampled
uniformly, then the object is lowered along -z until its probe points
contact the bin floor or an already placed object (coarse 2 mm stepping
refined by bisection to 0.1 mm, plus a small settle margin so placed
objects never interpenetrate).  Placement is deterministic given the seed.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose, rotation_about_axis
from .shapes import Box, Cylinder, SceneObject, Shape, Sphere, TriMesh, load_obj

logger = logging.getLogger(__name__)

COARSE_STEP = 0.002
BISECT_TOL = 0.0001
SETTLE_MARGIN = 0.0003
MAX_TRIES = 100

DEFAULT_BIN_SIZE = (0.6, 0.4, 0.28)
DEFAULT_WALL_THICKNESS = 0.01


@dataclass
class BinModel:
    """Open-top bin; interior floor at z = 0, inner footprint centered on the origin."""

    size: tuple[float, float, float] = DEFAULT_BIN_SIZE
    wall_thickness: float = DEFAULT_WALL_THICKNESS

    def __post_init__(self):
        if any(s <= 0 for s in self.size) or self.wall_thickness <= 0:
            raise ValueError("bin dimensions must be > 0")

    def boxes(self) -> list[SceneObject]:
        """Floor and four walls as posed boxes (ids are negative sentinels)."""
        cached = self.__dict__.get("_boxes")
        if cached is not None:
            return cached
        L, W, H = self.size
        th = self.wall_thickness
        parts = [
            (Box((L + 2 * th, W + 2 * th, th)), (0.0, 0.0, -th / 2)),
            (Box((th, W + 2 * th, H + th)), (L / 2 + th / 2, 0.0, (H - th) / 2)),
            (Box((th, W + 2 * th, H + th)), (-L / 2 - th / 2, 0.0, (H - th) / 2)),
            (Box((L + 2 * th, th, H + th)), (0.0, W / 2 + th / 2, (H - th) / 2)),
            (Box((L + 2 * th, th, H + th)), (0.0, -W / 2 - th / 2, (H - th) / 2)),
        ]
        boxes = [
            SceneObject(shape, Pose(np.eye(3), np.asarray(t)), id=-(i + 1))
            for i, (shape, t) in enumerate(parts)
        ]
        self.__dict__["_boxes"] = boxes
        return boxes

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        return np.min([b.sdf(pts) for b in self.boxes()], axis=0)

    def to_dict(self) -> dict:
        return {"size": list(self.size), "wall_thickness": self.wall_thickness}

    @classmethod
    def from_dict(cls, d: dict) -> "BinModel":
        return cls(tuple(d["size"]), float(d["wall_thickness"]))


@dataclass
class SurfaceSample:
    point: np.ndarray
    normal: np.ndarray
    object_id: int


@dataclass
class Scene:
    bin: BinModel = field(default_factory=BinModel)
    objects: list[SceneObject] = field(default_factory=list)
    scene_id: int = 0
    seed: int = 0

    def object_by_id(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.id == object_id:
                return obj
        raise KeyError(f"no object with id {object_id}")

    def remove_object(self, object_id: int) -> None:
        self.objects = [o for o in self.objects if o.id != object_id]

    def sdf(self, pts: np.ndarray, exclude_id: int | None = None) -> np.ndarray:
        """Min signed distance over bin walls/floor and objects."""
        pts = np.atleast_2d(pts)
        dists = [b.sdf(pts) for b in self.bin.boxes()]
        dists += [o.sdf(pts) for o in self.objects if o.id != exclude_id]
        return np.min(dists, axis=0)

    def min_pairwise_sdf(self) -> float:
        """Smallest probe-point signed distance between any two placed objects."""
        best = np.inf
        for obj in self.objects:
            probes = obj.surface_probes()
            for other in self.objects:
                if other.id == obj.id:
                    continue
                best = min(best, float(other.sdf(probes).min()))
        return best


# ---------------------------------------------------------------------------
# Shape pools and placement
# ---------------------------------------------------------------------------

EASY_POOL = {
    "box": {"size": ([0.03, 0.03, 0.03], [0.06, 0.06, 0.06])},
    "sphere": {"radius": (0.016, 0.03)},
}

FULL_POOL = {
    "box": {"size": ([0.02, 0.02, 0.02], [0.07, 0.07, 0.07])},
    "sphere": {"radius": (0.014, 0.032)},
    "cylinder": {"radius": (0.012, 0.03), "height": (0.03, 0.09)},
}


def _sample_shape(pool: dict, rng: np.random.Generator) -> Shape:
    kind = sorted(pool.keys())[rng.integers(len(pool))]
    spec = pool[kind]
    if kind == "box":
        lo, hi = spec["size"]
        return Box(rng.uniform(lo, hi))
    if kind == "sphere":
        lo, hi = spec["radius"]
        return Sphere(rng.uniform(lo, hi))
    if kind == "cylinder":
        rlo, rhi = spec["radius"]
        hlo, hhi = spec["height"]
        return Cylinder(rng.uniform(rlo, rhi), rng.uniform(hlo, hhi))
    if kind == "mesh":
        paths = spec["paths"]
        mesh = load_obj(paths[rng.integers(len(paths))])
        scale = rng.uniform(*spec.get("scale", (1.0, 1.0)))
        return TriMesh(mesh.vertices * scale, mesh.faces)
    raise ValueError(f"unknown shape kind {kind!r}")


def _clearance(candidate: SceneObject, env: list[SceneObject], bin_model: BinModel) -> float:
    """Symmetric probe clearance between the candidate and its environment."""
    probes = candidate.surface_probes()
    c = float(bin_model.sdf(probes).min())
    for other in env:
        c = min(c, float(other.sdf(probes).min()))
        c = min(c, float(candidate.sdf(other.surface_probes()).min()))
    return c


def _settle_height(
    shape: Shape, yaw_R: np.ndarray, xy: np.ndarray, env: list[SceneObject], bin_model: BinModel
) -> float | None:
    """Lower the object along -z; return the translation z at rest, or None."""
    lo, hi = shape.aabb()
    corners = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )
    rot = corners @ yaw_R.T
    z_lo = rot[:, 2].min()

    env_top = 0.0
    for other in env:
        env_top = max(env_top, other.world_aabb()[1][2])
    z = env_top - z_lo + 2 * COARSE_STEP

    def obj_at(zv: float) -> SceneObject:
        return SceneObject(shape, Pose(yaw_R, np.array([xy[0], xy[1], zv])), id=-999)

    if _clearance(obj_at(z), env, bin_model) <= 0:
        return None
    z_free = z
    while True:
        z_next = z_free - COARSE_STEP
        if _clearance(obj_at(z_next), env, bin_model) <= 0:
            break
        z_free = z_next
    z_bad = z_free - COARSE_STEP
    while z_free - z_bad > BISECT_TOL:
        mid = 0.5 * (z_free + z_bad)
        if _clearance(obj_at(mid), env, bin_model) > 0:
            z_free = mid
        else:
            z_bad = mid
    return z_free + SETTLE_MARGIN


def make_scene(
    seed: int,
    n_objects: int,
    shape_pool: dict | None = None,
    bin_model: BinModel | None = None,
    scene_id: int = 0,
) -> Scene:
    """Build a cluttered scene by quasi-static placement; deterministic per seed."""
    if n_objects < 0:
        raise ValueError("n_objects must be >= 0")
    pool = shape_pool if shape_pool is not None else EASY_POOL
    bin_model = bin_model if bin_model is not None else BinModel()
    rng = np.random.default_rng(seed)
    L, W, H = bin_model.size

    scene = Scene(bin=bin_model, objects=[], scene_id=scene_id, seed=seed)
    skipped = 0
    for k in range(n_objects):
        placed = False
        for _ in range(MAX_TRIES):
            shape = _sample_shape(pool, rng)
            yaw = rng.uniform(0.0, 2 * np.pi)
            yaw_R = rotation_about_axis(np.array([0.0, 0.0, 1.0]), yaw)
            lo, hi = shape.aabb()
            corners = np.array(
                [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
            )
            rot = corners @ yaw_R.T
            half_x = max(abs(rot[:, 0].min()), rot[:, 0].max())
            half_y = max(abs(rot[:, 1].min()), rot[:, 1].max())
            if 2 * half_x >= L or 2 * half_y >= W:
                continue  # cannot fit the footprint
            x = rng.uniform(-L / 2 + half_x, L / 2 - half_x)
            y = rng.uniform(-W / 2 + half_y, W / 2 - half_y)
            z = _settle_height(shape, yaw_R, np.array([x, y]), scene.objects, bin_model)
            if z is None:
                continue
            top = z + rot[:, 2].max()
            if top > H:
                continue  # would stick out of the bin
            scene.objects.append(
                SceneObject(shape, Pose(yaw_R, np.array([x, y, z])), id=k)
            )
            placed = True
            break
        if not placed:
            skipped += 1
            logger.warning("make_scene(seed=%d): skipped object %d after %d tries", seed, k, MAX_TRIES)
    if skipped:
        logger.info("make_scene(seed=%d): placed %d/%d objects", seed, n_objects - skipped, n_objects)
    return scene


def surface_samples(scene: Scene, n: int, rng: np.random.Generator) -> list[SurfaceSample]:
    """Area-weighted uniform samples over all object surfaces (world frame)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0 or not scene.objects:
        return []
    areas = np.array([obj.shape.area() for obj in scene.objects])
    picks = rng.choice(len(scene.objects), size=n, p=areas / areas.sum())
    out: list[SurfaceSample] = []
    for idx, obj in enumerate(scene.objects):
        m = int((picks == idx).sum())
        if m == 0:
            continue
        pts, normals = obj.shape.sample_surface(m, rng)
        pts_w = obj.pose.apply(pts)
        n_w = normals @ obj.pose.R.T
        for p, nv in zip(pts_w, n_w):
            out.append(SurfaceSample(point=p, normal=nv, object_id=obj.id))
    return out


# ---------------------------------------------------------------------------
# Scene files
# ---------------------------------------------------------------------------

def _shape_to_dict(obj: SceneObject) -> dict:
    s = obj.shape
    if isinstance(s, Box):
        return {"type": "box", "size": [float(x) for x in s.size]}
    if isinstance(s, Sphere):
        return {"type": "sphere", "radius": s.radius}
    if isinstance(s, Cylinder):
        return {"type": "cylinder", "radius": s.radius, "height": s.height}
    if isinstance(s, TriMesh):
        if obj.mesh_path is None:
            raise ValueError("mesh objects need a mesh_path for serialization")
        return {"type": "mesh", "path": obj.mesh_path}
    raise TypeError(f"unsupported shape {type(s)!r}")


def _shape_from_dict(d: dict, base_dir: Path | None = None) -> tuple[Shape, str | None]:
    kind = d["type"]
    if kind == "box":
        return Box(np.asarray(d["size"], dtype=float)), None
    if kind == "sphere":
        return Sphere(float(d["radius"])), None
    if kind == "cylinder":
        return Cylinder(float(d["radius"]), float(d["height"])), None
    if kind == "mesh":
        path = Path(d["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_obj(path), d["path"]
    raise ValueError(f"unknown shape type {kind!r}")


def save_scene(path, scene: Scene) -> None:
    data = {
        "scene_id": scene.scene_id,
        "seed": scene.seed,
        "bin": scene.bin.to_dict(),
        "objects": [
            {"id": obj.id, "shape": _shape_to_dict(obj), "pose": obj.pose.to_dict()}
            for obj in scene.objects
        ],
    }
    Path(path).write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")


def load_scene(path) -> Scene:
    path = Path(path)
    data = json.loads(path.read_text())
    objects = []
    for od in data["objects"]:
        shape, mesh_path = _shape_from_dict(od["shape"], base_dir=path.parent)
        objects.append(
            SceneObject(shape, Pose.from_dict(od["pose"]), id=int(od["id"]), mesh_path=mesh_path)
        )
    return Scene(
        bin=BinModel.from_dict(data["bin"]),
        objects=objects,
        scene_id=int(data.get("scene_id", 0)),
        seed=int(data.get("seed", 0)),
    )
