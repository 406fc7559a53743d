"""Ground-truth grasp labeling: antipodal contact search and collision scoring.

For every surface sample an opposing contact on the same object is found by
casting a ray through the object along the inward normal.  Pairs whose
antipodal quality clears the threshold become grasp labels; each label gets
one binary collision-score per candidate approach direction, obtained by
probing the three-box gripper model against the scene.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    ContactGrasp,
    GraspConfiguration,
    GripperModel,
    approach_set,
    grasp_pose,
    normalize,
)
from .scene import Scene, SurfaceSample, surface_samples
from .volumetric import DEFAULT_VOXEL_SIZE

logger = logging.getLogger(__name__)

COLLISION_TOL = 1e-6  # tangential contact (sdf == 0) is not a collision
DEFAULT_PROBE_SPACING = DEFAULT_VOXEL_SIZE / 2.0
# one midpoint-refinement level makes probing sound against a plain probe at
# double density (every such probe point is some ambiguous probe's child)
REFINE_DEPTH = 1


@dataclass
class OracleParams:
    """Knobs for dense label generation."""

    n_samples: int = 400
    n_r: int = 18
    gamma_lo: float = np.pi / 2.0
    gamma_hi: float = 3.0 * np.pi / 2.0
    q_min: float = 0.5
    w_max: float | None = None  # default: gripper max opening
    probe_spacing: float = DEFAULT_PROBE_SPACING
    gripper: GripperModel = field(default_factory=GripperModel)

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "n_r": self.n_r,
            "gamma_lo": self.gamma_lo,
            "gamma_hi": self.gamma_hi,
            "q_min": self.q_min,
            "w_max": self.w_max,
            "probe_spacing": self.probe_spacing,
        }


@dataclass
class GraspLabel:
    config: GraspConfiguration
    object_id: int
    approach_points: np.ndarray  # (n_r, 3) hand reference point per approach

    @property
    def unreachable(self) -> bool:
        return bool(np.all(self.config.collision_scores <= 0.0))


@dataclass
class GraspLabelSet:
    scene_id: int
    seed: int
    labels: list[GraspLabel]
    params: dict
    stats: dict = field(default_factory=dict)


def antipodal_quality(c1, c2, n1, n2) -> float:
    """|cos(b, n1)| * |cos(b, n2)| for the baseline b from c1 to c2."""
    c1 = np.asarray(c1, dtype=float)
    c2 = np.asarray(c2, dtype=float)
    diff = c2 - c1
    dist = np.linalg.norm(diff)
    if dist < 1e-9:
        raise ValueError("contact points coincide")
    b = diff / dist
    n1 = normalize(n1)
    n2 = normalize(n2)
    return float(abs(b @ n1) * abs(b @ n2))


def find_opposing_contact(
    scene: Scene, s: SurfaceSample, w_max: float
) -> tuple[np.ndarray, np.ndarray] | None:
    """Nearest exit point of the inward ray through the sample's own object.

    Returns (contact point, outward normal) or None when the object is
    wider than w_max along the ray.
    """
    obj = scene.object_by_id(s.object_id)
    d = -normalize(s.normal)
    hits = obj.ray_hits(s.point, d)
    for t, n, entering in hits:
        if entering or t <= 1e-9:
            continue
        if t > w_max:
            return None
        return s.point + t * d, np.asarray(n, dtype=float)
    return None


def gripper_boxes(
    g: ContactGrasp, gm: GripperModel
) -> list[tuple[np.ndarray, np.ndarray]]:
    """The three collision boxes of a posed gripper.

    Returns (center_world, size) pairs, sizes in the grasp frame
    (x = baseline, y = closing-plane normal, z = approach); the shared frame
    rotation is grasp_pose(g)[0].  Fingertips lie in the z = 0 plane of the
    frame, fingers extend backward along -a, the palm sits behind them.
    """
    R, m, _ = grasp_pose(g, gm)
    b, a = g.b, g.a
    fl, ft, fw = gm.finger_length, gm.finger_thickness, gm.finger_width
    finger_size = np.array([ft, fw, fl])
    palm_size = np.array([g.w + 2 * ft, gm.palm_depth, gm.palm_height])
    off = 0.5 * g.w + 0.5 * ft
    boxes = [
        (m + off * b - 0.5 * fl * a, finger_size),
        (m - off * b - 0.5 * fl * a, finger_size),
        (m - (fl + 0.5 * gm.palm_height) * a, palm_size),
    ]
    return boxes


def _box_lattice(size: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Regular probe lattice spanning a box volume, spacing at most `spacing`.

    Returns (points, actual per-axis spacings); corners are always included.
    """
    axes = []
    steps = np.empty(3)
    for a, extent in enumerate(size):
        count = max(int(np.ceil(extent / spacing)) + 1, 2)
        axes.append(np.linspace(-extent / 2.0, extent / 2.0, count))
        steps[a] = extent / (count - 1)
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()]), steps


_CHILD_OFFSETS = np.array(
    [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)], dtype=float
)


def gripper_probe_points(
    g: ContactGrasp, gm: GripperModel, spacing: float = DEFAULT_PROBE_SPACING
) -> np.ndarray:
    """World-frame probe points filling the three gripper boxes."""
    R, _, _ = grasp_pose(g, gm)
    pts = []
    for center, size in gripper_boxes(g, gm):
        local, _ = _box_lattice(size, spacing)
        pts.append(local @ R.T + center)
    return np.vstack(pts)


def _refine_ambiguous(obj, amb_local, steps, half, center_w, R, depth: int) -> bool:
    """Nested-lattice refinement around ambiguous probes of one gripper box.

    Probes whose signed distance is below the lattice covering radius spawn
    exact midpoint children (clipped to the box), halving the lattice until
    `depth` levels down; a penetration beyond the tolerance at any level is
    a collision.  Children lie on the next-finer global lattice, so a plain
    probe at double density can never find a hit this check missed.
    """
    pts = amb_local
    step = steps.copy()
    for _ in range(depth):
        step = step / 2.0
        children = (pts[:, None, :] + _CHILD_OFFSETS[None, :, :] * step).reshape(-1, 3)
        np.clip(children, -half, half, out=children)
        # children of neighboring probes coincide on the shared finer lattice;
        # dedupe via exact integer lattice keys (cheap, collision-free)
        idx = np.round((children + half) / step).astype(np.int64)
        key = (idx[:, 0] << 42) | (idx[:, 1] << 21) | idx[:, 2]
        _, keep = np.unique(key, return_index=True)
        pts = children[keep]
        d = obj.sdf(pts @ R.T + center_w)
        if float(d.min()) < -COLLISION_TOL:
            return True
        thresh = 0.5 * float(np.linalg.norm(step)) + COLLISION_TOL
        pts = pts[d < thresh]
        if len(pts) == 0:
            return False
    return False


class _GraspProber:
    """Shared probing state for all approach directions of one contact grasp.

    Probe lattices are built once per grasp (they depend only on the opening
    width); every approach reuses them under its own frame rotation.
    """

    def __init__(self, scene: Scene, w: float, gm: GripperModel, spacing: float):
        self.scene = scene
        self.gm = gm
        fl, ft, fw = gm.finger_length, gm.finger_thickness, gm.finger_width
        finger_size = np.array([ft, fw, fl])
        palm_size = np.array([w + 2 * ft, gm.palm_depth, gm.palm_height])
        off = 0.5 * w + 0.5 * ft
        local_boxes = [
            (np.array([off, 0.0, -0.5 * fl]), finger_size),
            (np.array([-off, 0.0, -0.5 * fl]), finger_size),
            (np.array([0.0, 0.0, -(fl + 0.5 * gm.palm_height)]), palm_size),
        ]
        self.boxes = []
        stacked = []
        self.slices = []
        reach = 0.0
        start = 0
        for center_l, size in local_boxes:
            lattice, steps = _box_lattice(size, spacing)
            self.boxes.append((center_l, size / 2.0, lattice, steps))
            stacked.append(lattice + center_l)
            self.slices.append(slice(start, start + len(lattice)))
            start += len(lattice)
            reach = max(reach, float(np.linalg.norm(np.abs(center_l) + size / 2.0)))
        self.stacked = np.vstack(stacked)  # grasp-frame probe points, all boxes
        self.reach = reach

    def candidates(self, m: np.ndarray):
        """Bin parts and objects whose bounds can reach the gripper."""
        shapes = []
        for part in self.scene.bin.boxes() + self.scene.objects:
            dist = part.aabb_distance(m)
            if dist <= self.reach + 1e-3:
                shapes.append((dist, part))
        shapes.sort(key=lambda x: x[0])
        return [s for _, s in shapes]

    def scores(self, m: np.ndarray, rotations: np.ndarray, depth: int = REFINE_DEPTH) -> np.ndarray:
        """Collision-free flags for a batch of approach frames.

        Level-0 probing runs vectorized over every approach at once per
        candidate shape; only ambiguous (approach, box) pairs enter the
        refinement loop.
        """
        n_app = len(rotations)
        world = np.einsum("aij,pj->api", rotations, self.stacked) + m  # (n_app, P, 3)
        flat = world.reshape(-1, 3)
        alive = np.ones(n_app, dtype=bool)
        margin = max(
            0.5 * float(np.linalg.norm(steps)) for _, _, _, steps in self.boxes
        ) + 2 * COLLISION_TOL
        for cand in self.candidates(m):
            if not alive.any():
                break
            # points beyond `margin` of the AABB can be neither penetrating
            # nor ambiguous: skip their signed-distance evaluation
            lo, hi = cand.world_aabb()
            sel = np.all((flat >= lo - margin) & (flat <= hi + margin), axis=1)
            d = np.full(len(flat), np.inf)
            if sel.any():
                d[sel] = cand.sdf(flat[sel])
            d = d.reshape(n_app, -1)
            for (center_l, half, lattice, steps), sl in zip(self.boxes, self.slices):
                thresh = 0.5 * float(np.linalg.norm(steps)) + COLLISION_TOL
                seg = d[:, sl]
                mins = seg.min(axis=1)
                alive &= mins >= -COLLISION_TOL
                for ai in np.nonzero(alive & (mins < thresh))[0]:
                    amb = lattice[seg[ai] < thresh]
                    center_w = m + rotations[ai] @ center_l
                    if _refine_ambiguous(cand, amb, steps, half, center_w, rotations[ai], depth):
                        alive[ai] = False
        return alive.astype(float)


def collision_check(
    scene: Scene,
    g: ContactGrasp,
    gm: GripperModel,
    target_id: int | None = None,
    spacing: float = DEFAULT_PROBE_SPACING,
    depth: int = REFINE_DEPTH,
) -> bool:
    """True when the posed gripper intersects the bin or any object.

    Probing is locally refined (see _refine_ambiguous), so shallow grazes
    between lattice points are caught.  The target object may touch the
    finger inner faces tangentially (that is the grasp): contact sits at
    signed distance zero, inside the tolerance; the closing volume between
    the fingers is never probed, which leaves the target's material there
    free.  target_id is accepted for interface symmetry; the geometry above
    makes an explicit exemption unnecessary.
    """
    R, m, _ = grasp_pose(g, gm)
    prober = _GraspProber(scene, g.w, gm, spacing)
    return bool(prober.scores(m, R[None, :, :], depth=depth)[0] == 0.0)


def approach_collision_scores(
    scene: Scene,
    c: np.ndarray,
    b: np.ndarray,
    w: float,
    approaches: np.ndarray,
    gm: GripperModel,
    target_id: int | None = None,
    spacing: float = DEFAULT_PROBE_SPACING,
) -> np.ndarray:
    """Binary collision-score per approach direction (1 = collision-free)."""
    prober = _GraspProber(scene, w, gm, spacing)
    m = np.asarray(c, dtype=float) + 0.5 * w * np.asarray(b, dtype=float)
    rotations = []
    for a in approaches:
        gi = ContactGrasp(c=c, b=b, a=a, w=w)
        R, _, _ = grasp_pose(gi, gm)
        rotations.append(R)
    return prober.scores(m, np.stack(rotations))


def generate_labels(scene: Scene, params: OracleParams, seed: int) -> GraspLabelSet:
    """Dense ground-truth grasp labels for a scene; deterministic per seed.

    Pipeline per surface sample: opposing contact -> antipodal quality gate
    -> approach set -> per-approach collision-score.  Labels whose every
    approach collides are kept but flagged unreachable.
    """
    gm = params.gripper
    w_max = min(params.w_max, gm.max_opening) if params.w_max else gm.max_opening
    rng = np.random.default_rng(seed)
    samples = surface_samples(scene, params.n_samples, rng)

    labels: list[GraspLabel] = []
    n_no_pair = 0
    n_low_q = 0
    for s in samples:
        pair = find_opposing_contact(scene, s, w_max)
        if pair is None:
            n_no_pair += 1
            continue
        c2, n2 = pair
        q = antipodal_quality(s.point, c2, s.normal, n2)
        if q <= params.q_min:
            n_low_q += 1
            continue
        w = float(np.linalg.norm(c2 - s.point))
        b = normalize(c2 - s.point)
        gammas, approaches = approach_set(b, params.n_r, params.gamma_lo, params.gamma_hi)
        scores = approach_collision_scores(
            scene, s.point, b, w, approaches, gm,
            target_id=s.object_id, spacing=params.probe_spacing,
        )
        points = np.zeros((params.n_r, 3))
        for i, a in enumerate(approaches):
            _, _, t = grasp_pose(ContactGrasp(c=s.point, b=b, a=a, w=w), gm)
            points[i] = t
        config = GraspConfiguration(
            c=s.point, b=b, approaches=approaches, collision_scores=scores, w=w, q=q
        )
        labels.append(GraspLabel(config=config, object_id=s.object_id, approach_points=points))

    stats = {
        "n_samples": len(samples),
        "no_pair": n_no_pair,
        "low_quality": n_low_q,
        "emitted": len(labels),
        "unreachable": sum(1 for lab in labels if lab.unreachable),
    }
    logger.info("generate_labels(scene=%d seed=%d): %s", scene.scene_id, seed, stats)
    return GraspLabelSet(
        scene_id=scene.scene_id, seed=seed, labels=labels, params=params.to_dict(), stats=stats
    )


# ---------------------------------------------------------------------------
# Independent re-checks (soundness oracles)
# ---------------------------------------------------------------------------

def _sdf_normal(obj, p: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Outward normal from central differences of the object's SDF."""
    offsets = np.vstack([np.eye(3) * h, -np.eye(3) * h])
    d = obj.sdf(p + offsets)
    grad = (d[:3] - d[3:]) / (2 * h)
    return normalize(grad)


def recheck_labels(scene: Scene, label_set: GraspLabelSet) -> dict:
    """Recompute every label's antipodal quality through an independent route.

    Normals come from SDF gradients rather than the ray-cast reports; the
    contact pair is rebuilt from the stored (c, b, w).
    """
    n_bad = 0
    worst = 1.0
    q_min = float(label_set.params.get("q_min", 0.5))
    for lab in label_set.labels:
        obj = scene.object_by_id(lab.object_id)
        c1 = lab.config.c
        c2 = lab.config.c + lab.config.w * lab.config.b
        q = antipodal_quality(c1, c2, _sdf_normal(obj, c1), _sdf_normal(obj, c2))
        worst = min(worst, q)
        if q <= q_min:
            n_bad += 1
    return {"checked": len(label_set.labels), "failed": n_bad, "worst_quality": worst}


def _doubled_lattices(g: ContactGrasp, gm: GripperModel, spacing: float):
    """Plain gripper-box lattices at exactly double the base probe density."""
    out = []
    for center_l, size in (
        (np.array([0.5 * g.w + 0.5 * gm.finger_thickness, 0.0, -0.5 * gm.finger_length]),
         np.array([gm.finger_thickness, gm.finger_width, gm.finger_length])),
        (np.array([-(0.5 * g.w + 0.5 * gm.finger_thickness), 0.0, -0.5 * gm.finger_length]),
         np.array([gm.finger_thickness, gm.finger_width, gm.finger_length])),
        (np.array([0.0, 0.0, -(gm.finger_length + 0.5 * gm.palm_height)]),
         np.array([g.w + 2 * gm.finger_thickness, gm.palm_depth, gm.palm_height])),
    ):
        axes = []
        for extent in size:
            base_count = max(int(np.ceil(extent / spacing)) + 1, 2)
            axes.append(np.linspace(-extent / 2.0, extent / 2.0, 2 * (base_count - 1) + 1))
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        out.append((center_l, np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])))
    return out


def recheck_collisions(
    scene: Scene,
    label_set: GraspLabelSet,
    gm: GripperModel | None = None,
) -> dict:
    """Independent re-test of every collision-free approach.

    Deliberately simpler than the production path: one flat probe lattice
    per gripper box at double the base density, plain penetration rule, no
    pruning and no refinement.
    """
    gm = gm if gm is not None else GripperModel()
    spacing = float(label_set.params.get("probe_spacing", DEFAULT_PROBE_SPACING))
    shapes = scene.bin.boxes() + scene.objects
    checked = 0
    failed = 0
    for lab in label_set.labels:
        cfg = lab.config
        free = [i for i, s in enumerate(cfg.collision_scores) if s > 0.5]
        if not free:
            continue
        g0 = ContactGrasp(c=cfg.c, b=cfg.b, a=cfg.approaches[free[0]], w=cfg.w)
        boxes = _doubled_lattices(g0, gm, spacing)
        m = cfg.c + 0.5 * cfg.w * cfg.b
        reach = max(
            float(np.linalg.norm(np.abs(c_l)) + np.linalg.norm(lat, axis=1).max())
            for c_l, lat in boxes
        )
        near = [s for s in shapes if s.aabb_distance(m) <= reach + 1e-3]
        stacks = []
        for i in free:
            g = ContactGrasp(c=cfg.c, b=cfg.b, a=cfg.approaches[i], w=cfg.w)
            R, _, _ = grasp_pose(g, gm)
            stacks.append(np.vstack([(lat @ R.T) + (m + R @ center_l) for center_l, lat in boxes]))
        checked += len(free)
        pts_all = np.vstack(stacks)
        per = len(stacks[0])
        bad = np.zeros(len(free), dtype=bool)
        for s in near:
            # a penetrating point lies inside the shape, hence inside its AABB
            lo, hi = s.world_aabb()
            inside = np.all((pts_all >= lo - 1e-9) & (pts_all <= hi + 1e-9), axis=1)
            if not inside.any():
                continue
            d = np.full(len(pts_all), np.inf)
            d[inside] = s.sdf(pts_all[inside])
            bad |= d.reshape(len(free), per).min(axis=1) < -COLLISION_TOL
        failed += int(bad.sum())
    return {"checked": checked, "failed": failed}


# ---------------------------------------------------------------------------
# Label files (JSON lines: one header, then one grasp label per line)
# ---------------------------------------------------------------------------

def _label_to_dict(lab: GraspLabel) -> dict:
    cfg = lab.config
    return {
        "object_id": lab.object_id,
        "c": [float(x) for x in cfg.c],
        "b": [float(x) for x in cfg.b],
        "w": cfg.w,
        "q": cfg.q,
        "approaches": [[float(x) for x in a] for a in cfg.approaches],
        "collision_scores": [float(x) for x in cfg.collision_scores],
        "approach_points": [[float(x) for x in p] for p in lab.approach_points],
    }


def _label_from_dict(d: dict) -> GraspLabel:
    config = GraspConfiguration(
        c=np.asarray(d["c"]),
        b=np.asarray(d["b"]),
        approaches=np.asarray(d["approaches"]),
        collision_scores=np.asarray(d["collision_scores"]),
        w=float(d["w"]),
        q=float(d["q"]),
    )
    return GraspLabel(
        config=config,
        object_id=int(d["object_id"]),
        approach_points=np.asarray(d["approach_points"]),
    )


def save_labels(path, label_set: GraspLabelSet) -> None:
    header = {
        "scene_id": label_set.scene_id,
        "seed": label_set.seed,
        "params": label_set.params,
        "stats": label_set.stats,
    }
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for lab in label_set.labels:
            f.write(json.dumps(_label_to_dict(lab), sort_keys=True) + "\n")


def load_labels(path) -> GraspLabelSet:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"empty label file {path}")
    header = json.loads(lines[0])
    labels = [_label_from_dict(json.loads(line)) for line in lines[1:] if line.strip()]
    return GraspLabelSet(
        scene_id=int(header["scene_id"]),
        seed=int(header["seed"]),
        labels=labels,
        params=header.get("params", {}),
        stats=header.get("stats", {}),
    )
