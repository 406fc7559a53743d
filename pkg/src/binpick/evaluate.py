"""Clearing-episode evaluation: score composition, selection, execution.

An episode loops render -> fuse -> predict -> compose -> select -> execute
until the bin is empty, no executable grasp remains, or three consecutive
attempts fail.  Execution is analytic: a grasp succeeds when the gripper is
collision-free at the pre-grasp and final poses and the re-cast contact
pair lands on one object with antipodal quality at least 0.5.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import ContactGrasp, GraspConfiguration, GripperModel, grasp_pose, normalize
from .oracle import antipodal_quality, collision_check, DEFAULT_PROBE_SPACING
from .predictor import Predictor
from .render import add_depth_noise, render_depth, top_down_camera
from .scene import Scene
from .volumetric import GridSpec, LabelGrid, fuse_depth, trilinear, tsdf_normals

PRE_GRASP_STANDOFF = 0.1
SUCCESS_QUALITY = 0.5


class Termination(str, Enum):
    CLEARED = "cleared"
    NO_GRASP = "no_grasp"
    THREE_FAILURES = "three_failures"


@dataclass
class EpisodeResult:
    attempts: int
    successes: int
    objects_initial: int
    objects_removed: int
    termination: Termination

    def __post_init__(self):
        if self.successes > self.attempts:
            raise ValueError("successes cannot exceed attempts")
        if self.objects_removed > self.objects_initial:
            raise ValueError("cannot remove more objects than were present")

    def to_dict(self) -> dict:
        return {
            "attempts": self.attempts,
            "successes": self.successes,
            "objects_initial": self.objects_initial,
            "objects_removed": self.objects_removed,
            "termination": self.termination.value,
        }


def compose_quality(label_grid: LabelGrid, c: np.ndarray, q_prior: float) -> float:
    """Quality = interpolated contact confidence at c times the prior."""
    if not 0.0 <= q_prior <= 1.0:
        raise ValueError("q_prior must lie in [0, 1]")
    return float(trilinear(label_grid.contact, label_grid.spec, c)) * q_prior


def compose_collision(label_grid: LabelGrid, t: np.ndarray, sigma_prior: float) -> float:
    """Collision-score = interpolated approach confidence at t times the prior."""
    if not 0.0 <= sigma_prior <= 1.0:
        raise ValueError("sigma_prior must lie in [0, 1]")
    return float(trilinear(label_grid.approach, label_grid.spec, t)) * sigma_prior


def select_next_grasp(
    configs: list[GraspConfiguration],
    tried: set[tuple[int, int]],
    q_threshold: float = 0.5,
    sigma_threshold: float = 0.5,
    max_approaches: int = 8,
) -> tuple[int, int] | None:
    """Pick the next (config index, approach index) to execute.

    Configurations are visited in descending composed quality (ties by
    lexicographic contact coordinates); inside one configuration only its
    top `max_approaches` approaches ordered by descending collision-score
    (ties by approach index) are eligible.  Already-tried pairs are
    skipped; the first pair clearing both thresholds wins.
    """
    order = sorted(
        range(len(configs)),
        key=lambda i: (-configs[i].q, configs[i].c[0], configs[i].c[1], configs[i].c[2]),
    )
    for ci in order:
        cfg = configs[ci]
        if cfg.q <= q_threshold:
            break  # sorted: nothing better follows
        ranked = np.argsort(-cfg.collision_scores, kind="stable")[:max_approaches]
        for ai in ranked:
            ai = int(ai)
            if (ci, ai) in tried:
                continue
            if cfg.collision_scores[ai] > sigma_threshold:
                return ci, ai
    return None


@dataclass
class ExecutionOutcome:
    kind: str  # "success" | "collision" | "unstable"
    object_id: int | None = None
    realized_quality: float | None = None


def _realized_contacts(scene: Scene, g: ContactGrasp, gm: GripperModel):
    """Re-cast the closing line: first entry hit from each fingertip side."""
    m = g.c + 0.5 * g.w * g.b
    span = 0.5 * g.w + gm.finger_thickness
    hits = []
    for origin, direction in ((m - span * g.b, g.b), (m + span * g.b, -g.b)):
        best = None
        for obj in scene.objects:
            for t, n, entering in obj.ray_hits(origin, direction):
                if not entering or t <= 1e-9 or t > 2 * span:
                    continue
                if best is None or t < best[0]:
                    best = (t, origin + t * direction, n, obj.id)
                break  # hits sorted: first entering hit of this object
        hits.append(best)
    return hits


def execute_virtual(
    scene: Scene,
    g: ContactGrasp,
    gm: GripperModel,
    standoff: float = PRE_GRASP_STANDOFF,
    probe_spacing: float = DEFAULT_PROBE_SPACING,
) -> ExecutionOutcome:
    """Attempt a grasp against the live scene; removes the object on success.

    Collision at the pre-grasp (retreated `standoff` along -a) or final
    pose fails the attempt as "collision"; otherwise the realized contact
    pair is re-cast along the fingertip line and the attempt succeeds iff
    both contacts hit the same object with quality >= 0.5.
    """
    hits = _realized_contacts(scene, g, gm)
    target = None
    if hits[0] is not None and hits[1] is not None and hits[0][3] == hits[1][3]:
        target = hits[0][3]

    pre = ContactGrasp(c=g.c - standoff * g.a, b=g.b, a=g.a, w=g.w)
    for pose_grasp in (pre, g):
        if collision_check(scene, pose_grasp, gm, target_id=target, spacing=probe_spacing):
            return ExecutionOutcome(kind="collision")

    if target is None:
        return ExecutionOutcome(kind="unstable")
    _, c1, n1, _ = hits[0]
    _, c2, n2, _ = hits[1]
    if np.linalg.norm(c2 - c1) < 1e-9:
        return ExecutionOutcome(kind="unstable")
    q = antipodal_quality(c1, c2, n1, n2)
    if q < SUCCESS_QUALITY:
        return ExecutionOutcome(kind="unstable", realized_quality=q)
    scene.remove_object(target)
    return ExecutionOutcome(kind="success", object_id=target, realized_quality=q)


def run_episode(
    scene: Scene,
    predictor: Predictor,
    gm: GripperModel,
    spec: GridSpec,
    camera_height: float = 1.0,
    trunc: float | None = None,
    q_threshold: float = 0.5,
    sigma_threshold: float = 0.5,
    max_approaches: int = 8,
    noise: bool = False,
    rng: np.random.Generator | None = None,
    probe_spacing: float = DEFAULT_PROBE_SPACING,
) -> EpisodeResult:
    """One clearing episode over a (mutated) scene."""
    trunc = trunc if trunc is not None else 4.0 * spec.voxel_size
    intr, cam_pose = top_down_camera(height=camera_height)
    objects_initial = len(scene.objects)
    attempts = successes = removed = 0
    consecutive_failures = 0
    termination = Termination.CLEARED

    while scene.objects:
        depth = render_depth(scene, intr, cam_pose)
        if noise:
            if rng is None:
                raise ValueError("noise requires an rng")
            depth = add_depth_noise(depth, rng)
        tsdf = fuse_depth(depth, intr, cam_pose, spec, trunc)
        normals = tsdf_normals(tsdf)
        pred = predictor.predict(normals)

        scored = []
        for gp in pred.grasps:
            cfg = gp.config
            q = compose_quality(pred.label_grid, cfg.c, cfg.q)
            sigmas = np.array(
                [
                    compose_collision(pred.label_grid, gp.approach_points[i], cfg.collision_scores[i])
                    for i in range(cfg.n_r)
                ]
            )
            scored.append(
                GraspConfiguration(
                    c=cfg.c, b=cfg.b, approaches=cfg.approaches,
                    collision_scores=sigmas, w=cfg.w, q=q,
                )
            )

        tried: set[tuple[int, int]] = set()
        progressed = False
        while True:
            sel = select_next_grasp(scored, tried, q_threshold, sigma_threshold, max_approaches)
            if sel is None:
                termination = Termination.NO_GRASP
                break
            ci, ai = sel
            tried.add((ci, ai))
            cfg = scored[ci]
            grasp = ContactGrasp(c=cfg.c, b=cfg.b, a=cfg.approaches[ai], w=cfg.w)
            outcome = execute_virtual(scene, grasp, gm, probe_spacing=probe_spacing)
            attempts += 1
            if outcome.kind == "success":
                successes += 1
                removed += 1
                consecutive_failures = 0
                progressed = True
                break
            consecutive_failures += 1
            if consecutive_failures >= 3:
                termination = Termination.THREE_FAILURES
                break
        if not progressed:
            break

    if not scene.objects:
        termination = Termination.CLEARED
    # structural bound: three failures max between removals, plus the removals
    assert attempts <= objects_initial + 3 * (objects_initial + 1)
    return EpisodeResult(
        attempts=attempts,
        successes=successes,
        objects_initial=objects_initial,
        objects_removed=removed,
        termination=termination,
    )


def aggregate_metrics(results: list[EpisodeResult]) -> dict:
    """Pooled success rate and clearing rate over episodes.

    SR = total successes / total attempts (None when nothing was attempted);
    CR = total removed / total initial, over scenes that had objects.
    """
    if not results:
        raise ValueError("aggregate_metrics needs at least one episode result")
    attempts = sum(r.attempts for r in results)
    successes = sum(r.successes for r in results)
    with_objects = [r for r in results if r.objects_initial > 0]
    initial = sum(r.objects_initial for r in with_objects)
    removed = sum(r.objects_removed for r in with_objects)
    sr = successes / attempts if attempts > 0 else None
    cr = removed / initial if initial > 0 else None
    return {"SR": sr, "CR": cr}
