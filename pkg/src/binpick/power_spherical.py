"""Power-spherical distributions on the unit 2-sphere.

Density p(x) = N(kappa)^-1 (1 + mu.x)^kappa with
log N = (a+b) log 2 + b log pi + lgamma(a) - lgamma(a+b), a = b + kappa,
b = (dim-1)/2 = 1 on S^2.  Unimodal around mu, closed under rotation,
uniform in the kappa -> 0 limit (N -> 4 pi).

Used to model grasp baseline-vector uncertainty; approach vectors then
follow a collision-weighted mixture of rotated copies of the baseline
distribution.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .geometry import APPROACH_REF, gram_schmidt_perp, is_rotation, is_unit, normalize, rotation_about_axis

_BETA_DIM = 1.0  # (dim - 1) / 2 on S^2


@dataclass
class PowerSpherical:
    """Mean direction mu (unit) and concentration kappa (> 0, finite)."""

    mu: np.ndarray
    kappa: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.kappa = float(self.kappa)
        if not is_unit(self.mu, 1e-9):
            raise ValueError("mu must be a unit vector")
        if not (self.kappa > 0 and np.isfinite(self.kappa)):
            raise ValueError("kappa must be positive and finite")


def ps_log_normalizer(kappa: float) -> float:
    """log of the S^2 normalizer N(kappa)."""
    alpha = _BETA_DIM + kappa
    return float(
        (alpha + _BETA_DIM) * np.log(2.0)
        + _BETA_DIM * np.log(np.pi)
        + gammaln(alpha)
        - gammaln(alpha + _BETA_DIM)
    )


def ps_log_pdf(x: np.ndarray, d: PowerSpherical) -> float | np.ndarray:
    """Log density at unit vector(s) x; -inf at the antipode of mu.

    x may be a single (3,) vector or a batch (m, 3).
    """
    x = np.asarray(x, dtype=float)
    norms = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("x must be a unit vector")
    dot = x @ d.mu
    # log1p keeps kappa ~ 100 stable near the antipode
    with np.errstate(divide="ignore"):
        val = d.kappa * np.log1p(np.clip(dot, -1.0, 1.0)) - ps_log_normalizer(d.kappa)
    return float(val) if val.ndim == 0 else val


def ps_sample(
    d: PowerSpherical, rng: np.random.Generator, n: int | None = None
) -> np.ndarray:
    """Draw sample(s) from the distribution using the marginal-beta construction.

    Z ~ Beta(kappa + 1, 1) via two gammas, s = 2Z - 1 is the cosine to mu;
    the azimuth is uniform; the frame is aligned to mu by the Householder
    reflection sending e1 to mu.  Only the passed rng is used.
    """
    m = 1 if n is None else int(n)
    alpha = d.kappa + _BETA_DIM
    g1 = rng.standard_gamma(alpha, size=m)
    g2 = rng.standard_gamma(_BETA_DIM, size=m)
    z = g1 / (g1 + g2)
    s = 2.0 * z - 1.0
    phi = rng.uniform(0.0, 2.0 * np.pi, size=m)
    r = np.sqrt(np.clip(1.0 - s * s, 0.0, None))
    y = np.column_stack([s, r * np.cos(phi), r * np.sin(phi)])

    e1 = np.array([1.0, 0.0, 0.0])
    v = e1 - d.mu
    vn = np.linalg.norm(v)
    if vn < 1e-12:
        out = y
    else:
        v = v / vn
        out = y - 2.0 * np.outer(y @ v, v)
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out[0] if n is None else out


def ps_rotate(d: PowerSpherical, R: np.ndarray) -> PowerSpherical:
    """Push the distribution through a rotation: PS(R mu, kappa)."""
    R = np.asarray(R, dtype=float)
    if not is_rotation(R, tol=1e-6):
        raise ValueError("R must be orthonormal with det +1")
    return PowerSpherical(normalize(R @ d.mu), d.kappa)


def kappa_map(kappa_prime: float, kappa0: float = 25.0, eps: float = 1e-6) -> float:
    """Map a predicted inverse-concentration to kappa in [kappa0, 4*kappa0]."""
    if kappa0 <= 0 or eps <= 0:
        raise ValueError("kappa0 and eps must be > 0")
    if kappa_prime < 0:
        raise ValueError("kappa_prime must be >= 0")
    return float(np.clip(kappa0 / (kappa_prime + eps), kappa0, 4.0 * kappa0))


@dataclass
class ApproachMixture:
    """Collision-weighted mixture of rotated copies of a base distribution.

    rotations[i] maps the base mean onto the i-th approach component's mean;
    weights[i] is the collision-score of that component.
    """

    base: PowerSpherical
    rotations: np.ndarray  # (n_r, 3, 3)
    weights: np.ndarray  # (n_r,)

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.rotations.shape[0] != self.weights.shape[0]:
            raise ValueError("rotations and weights must have equal length")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ValueError("weights must lie in [0, 1]")


def approach_rotations(
    mu: np.ndarray, gammas: np.ndarray, ref: np.ndarray = APPROACH_REF
) -> np.ndarray:
    """Rotation matrices sending mu onto its approach vectors.

    Composes the quarter-turn taking mu to its orthogonal reference vector
    with the rotation about mu by each angle, so rotations[i] @ mu equals
    the i-th entry of the approach set built from mu.
    """
    mu = normalize(mu)
    b_perp = gram_schmidt_perp(mu, ref)
    axis = np.cross(mu, b_perp)  # unit: mu and b_perp orthonormal
    R_perp = rotation_about_axis(axis, np.pi / 2.0)
    return np.stack([rotation_about_axis(mu, g) @ R_perp for g in np.atleast_1d(gammas)])


def approach_mixture_log_pdf(a: np.ndarray, m: ApproachMixture) -> float:
    """Log density of the approach-vector mixture at unit vector a.

    Components with zero weight contribute nothing; all-zero weights are an
    error (a fully colliding contact has no approach distribution).
    """
    wsum = float(m.weights.sum())
    if wsum <= 0.0:
        raise ValueError("approach mixture needs at least one positive weight")
    active = m.weights > 0.0
    means = m.rotations[active] @ m.base.mu
    comp = np.array(
        [ps_log_pdf(a, PowerSpherical(normalize(mean), m.base.kappa)) for mean in means]
    )
    if np.all(np.isneginf(comp)):
        return float("-inf")
    return float(logsumexp(comp, b=m.weights[active]) - np.log(wsum))
