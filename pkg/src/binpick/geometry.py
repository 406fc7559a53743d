"""Grasp frame geometry for parallel-jaw grippers.

Conventions (world frame, +z up):
  c — contact point anchoring a grasp, meters
  b — baseline vector, unit, from the anchor contact toward the opposing one
  a — approach vector, unit, direction the gripper travels into the grasp;
      the hand body sits behind the fingertips along -a
  w — opening width, meters; the opposing contact is c + w*b

An approach set is built by rotating a vector orthogonal to b around b
through a fixed angle range.  With the default range [pi/2, 3*pi/2] and the
default +z reference, the interior angles approach from above and the two
endpoints are the horizontal extremes.
"""

from dataclasses import dataclass, field

import numpy as np

UNIT_TOL = 1e-9
ORTHO_TOL = 1e-6

WORLD_DOWN = np.array([0.0, 0.0, -1.0])
WORLD_UP = np.array([0.0, 0.0, 1.0])

# Reference for approach sets. +z makes the midpoint of [pi/2, 3*pi/2] the
# straight-down approach (cos(pi) * z_hat = -z_hat); the spec'd gravity
# reference would flip the arc upward, which no gripper can reach.
APPROACH_REF = WORLD_UP

_FALLBACK_REFS = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))
_PARALLEL_THRESH = 1.0 - 1e-6


def normalize(v: np.ndarray) -> np.ndarray:
    """Return v / ||v||; raises on (near-)zero input."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < UNIT_TOL):
        raise ValueError("cannot normalize a zero-length vector")
    return v / n


def is_unit(v: np.ndarray, tol: float = UNIT_TOL) -> bool:
    return abs(np.linalg.norm(np.asarray(v, dtype=float)) - 1.0) <= tol


def is_rotation(R: np.ndarray, tol: float = UNIT_TOL) -> bool:
    """Check R^T R = I and det(R) = 1 within tol."""
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    ortho = np.abs(R.T @ R - np.eye(3)).max() <= tol
    return bool(ortho and abs(np.linalg.det(R) - 1.0) <= tol)


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix about a unit axis (Rodrigues form)."""
    u = normalize(axis)
    c, s = np.cos(angle), np.sin(angle)
    ux, uy, uz = u
    K = np.array([[0.0, -uz, uy], [uz, 0.0, -ux], [-uy, ux, 0.0]])
    return c * np.eye(3) + s * K + (1.0 - c) * np.outer(u, u)


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion [w, x, y, z] to rotation matrix."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion [w, x, y, z] (w >= 0)."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


@dataclass
class Pose:
    """Rigid transform: p_world = R @ p_local + t."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float)
        self.t = np.asarray(self.t, dtype=float)
        if not is_rotation(self.R, tol=1e-6):
            raise ValueError("Pose.R is not a rotation matrix")

    def apply(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.R.T + self.t

    def apply_vector(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.R.T

    def inverse_apply(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.t) @ self.R

    def inverse_apply_vector(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.R

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def to_dict(self) -> dict:
        return {
            "translation": [float(x) for x in self.t],
            "quaternion": [float(x) for x in rotation_to_quat(self.R)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(quat_to_rotation(np.asarray(d["quaternion"])), np.asarray(d["translation"]))


@dataclass
class GripperModel:
    """Parallel-jaw gripper dimensions, meters.

    Collision geometry is three boxes: two fingers and a palm bracket.
    hand_standoff is the distance from the fingertip plane back to the
    approach reference point t.
    """

    max_opening: float = 0.08
    finger_length: float = 0.05
    finger_thickness: float = 0.01
    finger_width: float = 0.02
    palm_depth: float = 0.06
    palm_height: float = 0.03
    hand_standoff: float = 0.10

    def __post_init__(self):
        for name in (
            "max_opening",
            "finger_length",
            "finger_thickness",
            "finger_width",
            "palm_depth",
            "palm_height",
            "hand_standoff",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"GripperModel.{name} must be > 0")


@dataclass
class ContactGrasp:
    """One grasp: contact point, baseline, approach, opening width."""

    c: np.ndarray
    b: np.ndarray
    a: np.ndarray
    w: float

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.w = float(self.w)
        if self.w <= 0:
            raise ValueError("grasp width must be > 0")
        if not (is_unit(self.b, 1e-6) and is_unit(self.a, 1e-6)):
            raise ValueError("b and a must be unit vectors")
        if abs(float(self.a @ self.b)) > ORTHO_TOL:
            raise ValueError("approach vector must be orthogonal to baseline")


@dataclass
class GraspConfiguration:
    """A contact point with every candidate approach direction.

    collision_scores holds one value in [0, 1] per approach (binary for
    ground-truth labels, soft for predictions); q is the antipodal quality
    (again: true for labels, composed/prior for predictions).
    """

    c: np.ndarray
    b: np.ndarray
    approaches: np.ndarray  # (n_r, 3)
    collision_scores: np.ndarray  # (n_r,)
    w: float
    q: float

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        self.approaches = np.asarray(self.approaches, dtype=float)
        self.collision_scores = np.asarray(self.collision_scores, dtype=float)
        self.w = float(self.w)
        self.q = float(self.q)
        if self.approaches.shape[0] != self.collision_scores.shape[0]:
            raise ValueError("approaches and collision_scores must have equal length")
        if np.abs(self.approaches @ self.b).max() > ORTHO_TOL:
            raise ValueError("every approach must be orthogonal to the baseline")

    @property
    def n_r(self) -> int:
        return self.approaches.shape[0]


def gram_schmidt_perp(b: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to b, from projecting ref off b.

    Falls back to (1,0,0) then (0,1,0) when ref is (anti)parallel to b, so
    the result is always defined.
    """
    b = np.asarray(b, dtype=float)
    candidates = (np.asarray(ref, dtype=float),) + _FALLBACK_REFS
    for r in candidates:
        if abs(float(r @ b)) > _PARALLEL_THRESH:
            continue
        perp = r - float(r @ b) * b
        return normalize(perp)
    raise ValueError("no valid reference found (b is not unit?)")


def approach_set(
    b: np.ndarray,
    n_r: int,
    gamma_lo: float,
    gamma_hi: float,
    ref: np.ndarray = APPROACH_REF,
) -> tuple[np.ndarray, np.ndarray]:
    """Candidate approach directions for a baseline vector.

    Returns (gammas, vectors): n_r angles evenly spaced over
    [gamma_lo, gamma_hi] with both endpoints included, and the vectors
    obtained by rotating gram_schmidt_perp(b, ref) about b by each angle.
    """
    if n_r < 2:
        raise ValueError("n_r must be >= 2")
    if not gamma_lo < gamma_hi:
        raise ValueError("need gamma_lo < gamma_hi")
    b = normalize(b)
    b_perp = gram_schmidt_perp(b, ref)
    gammas = gamma_lo + (gamma_hi - gamma_lo) * np.arange(n_r) / (n_r - 1)
    # rotation about b, with b . b_perp = 0: R(b, g) b_perp = cos(g) b_perp + sin(g) (b x b_perp)
    cross = np.cross(b, b_perp)
    vecs = np.cos(gammas)[:, None] * b_perp + np.sin(gammas)[:, None] * cross
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return gammas, vecs


def contact_pair(c: np.ndarray, b: np.ndarray, w: float) -> tuple[np.ndarray, np.ndarray]:
    """The two fingertip contact points (c, c + w*b)."""
    if w <= 0:
        raise ValueError("width must be > 0")
    c = np.asarray(c, dtype=float)
    return c, c + w * np.asarray(b, dtype=float)


def grasp_pose(
    g: ContactGrasp, gm: GripperModel
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gripper frame for a grasp: (R, origin, t).

    origin is the midpoint between the fingertips; the frame axes are
    x = b, z = a, y = z x x; t = origin - hand_standoff * a is the hand
    reference point used for approach-direction collision scoring.
    """
    if g.w > gm.max_opening:
        raise ValueError(f"grasp width {g.w} exceeds max opening {gm.max_opening}")
    m = g.c + 0.5 * g.w * g.b
    x = g.b
    z = g.a
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    t = m - gm.hand_standoff * g.a
    return R, m, t
