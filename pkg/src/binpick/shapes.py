"""Solid shape primitives and triangle meshes.

Every shape lives in its own local frame (boxes and cylinders axis-aligned,
cylinder axis = z) and offers signed distances, ray casting, area-weighted
surface sampling and a structured probe-point set used by quasi-static
placement.  SceneObject wraps a shape with a rigid pose and an id and
exposes the same queries in world coordinates.

Ray directions need not be normalized; reported ray parameters t are in
units of the given direction (handy for z-depth rendering).
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose

_MESH_CHUNK = 2048


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5.0**0.5) * i
    return np.column_stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)]
    )


class Shape:
    """Interface: sdf, ray queries, surface sampling — all in local frame."""

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def ray_entry(self, o: np.ndarray, d: np.ndarray):
        """Batched first entry hit: (hit mask, t, outward normal)."""
        raise NotImplementedError

    def ray_hits(self, o: np.ndarray, d: np.ndarray):
        """All hits of one ray: sorted list of (t, outward normal, entering)."""
        raise NotImplementedError

    def area(self) -> float:
        raise NotImplementedError

    def sample_surface(self, n: int, rng: np.random.Generator):
        """(points, outward unit normals), area-weighted uniform."""
        raise NotImplementedError

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def probe_points(self) -> np.ndarray:
        """Deterministic surface points covering extremes (corners, rims)."""
        raise NotImplementedError

    def bounding_radius(self) -> float:
        lo, hi = self.aabb()
        return float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi))))


def _interval_entry_exit(t_lo, t_hi, lo_axis_n, hi_axis_n):
    """Helper shared by box/cylinder interval casting (single ray)."""
    hits = []
    if t_lo <= t_hi:
        hits.append((t_lo, lo_axis_n, True))
        hits.append((t_hi, hi_axis_n, False))
    return hits


@dataclass
class Box(Shape):
    size: np.ndarray  # full extents (3,)

    def __post_init__(self):
        self.size = np.asarray(self.size, dtype=float)
        if np.any(self.size <= 0):
            raise ValueError("box extents must be > 0")
        self.half = self.size / 2.0

    def sdf(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        q = np.abs(pts) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def _slabs(self, o, d):
        d_safe = np.where(d == 0.0, 1e-300, d)
        t1 = (-self.half - o) / d_safe
        t2 = (self.half - o) / d_safe
        return np.minimum(t1, t2), np.maximum(t1, t2)

    def ray_entry(self, o, d):
        o = np.atleast_2d(o)
        d = np.atleast_2d(d)
        tlo, thi = self._slabs(o, d)
        t_enter = tlo.max(axis=1)
        t_exit = thi.min(axis=1)
        hit = (t_enter <= t_exit) & (t_exit > 0) & (t_enter > 0)
        axis = tlo.argmax(axis=1)
        normals = np.zeros_like(o)
        rows = np.arange(len(o))
        normals[rows, axis] = -np.sign(d[rows, axis])
        return hit, t_enter, normals

    def ray_hits(self, o, d):
        o = np.asarray(o, dtype=float)
        d = np.asarray(d, dtype=float)
        tlo, thi = self._slabs(o[None, :], d[None, :])
        tlo, thi = tlo[0], thi[0]
        t_enter, t_exit = tlo.max(), thi.min()
        if t_enter > t_exit:
            return []
        ax_in, ax_out = int(tlo.argmax()), int(thi.argmin())
        n_in = np.zeros(3)
        n_in[ax_in] = -np.sign(d[ax_in]) if d[ax_in] != 0 else 1.0
        n_out = np.zeros(3)
        n_out[ax_out] = np.sign(d[ax_out]) if d[ax_out] != 0 else 1.0
        return _interval_entry_exit(float(t_enter), float(t_exit), n_in, n_out)

    def area(self):
        x, y, z = self.size
        return float(2.0 * (x * y + y * z + z * x))

    def sample_surface(self, n, rng):
        x, y, z = self.size
        face_areas = np.array([y * z, y * z, x * z, x * z, x * y, x * y])
        face = rng.choice(6, size=n, p=face_areas / face_areas.sum())
        u = rng.uniform(-1.0, 1.0, size=(n, 3)) * self.half
        pts = u.copy()
        normals = np.zeros((n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        rows = np.arange(n)
        pts[rows, axis] = sign * self.half[axis]
        normals[rows, axis] = sign
        return pts, normals

    def aabb(self):
        return -self.half.copy(), self.half.copy()

    def probe_points(self):
        hx, hy, hz = self.half
        xs = np.linspace(-hx, hx, 5)
        ys = np.linspace(-hy, hy, 5)
        zs = np.linspace(-hz, hz, 5)
        pts = []
        for axis, (u, v) in ((0, (ys, zs)), (1, (xs, zs)), (2, (xs, ys))):
            uu, vv = np.meshgrid(u, v, indexing="ij")
            for s in (-1.0, 1.0):
                face = np.empty((uu.size, 3))
                face[:, axis] = s * self.half[axis]
                other = [i for i in range(3) if i != axis]
                face[:, other[0]] = uu.ravel()
                face[:, other[1]] = vv.ravel()
                pts.append(face)
        return np.unique(np.vstack(pts), axis=0)


@dataclass
class Sphere(Shape):
    radius: float

    def __post_init__(self):
        self.radius = float(self.radius)
        if self.radius <= 0:
            raise ValueError("sphere radius must be > 0")

    def sdf(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.linalg.norm(pts, axis=1) - self.radius

    def _roots(self, o, d):
        a = np.sum(d * d, axis=1)
        b = 2.0 * np.sum(o * d, axis=1)
        c = np.sum(o * o, axis=1) - self.radius**2
        disc = b * b - 4 * a * c
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        return ok, t0, t1

    def ray_entry(self, o, d):
        o = np.atleast_2d(o)
        d = np.atleast_2d(d)
        ok, t0, t1 = self._roots(o, d)
        hit = ok & (t0 > 0)
        pts = o + t0[:, None] * d
        normals = np.zeros_like(o)
        normals[hit] = pts[hit] / self.radius
        return hit, t0, normals

    def ray_hits(self, o, d):
        o = np.asarray(o, dtype=float)[None, :]
        d = np.asarray(d, dtype=float)[None, :]
        ok, t0, t1 = self._roots(o, d)
        if not ok[0]:
            return []
        hits = []
        for t, entering in ((float(t0[0]), True), (float(t1[0]), False)):
            p = (o + t * d)[0]
            hits.append((t, p / self.radius, entering))
        return hits

    def area(self):
        return float(4.0 * np.pi * self.radius**2)

    def sample_surface(self, n, rng):
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * self.radius, v

    def aabb(self):
        r = self.radius
        return np.full(3, -r), np.full(3, r)

    def probe_points(self):
        pts = _fibonacci_sphere(256)
        poles = np.array([[0, 0, 1.0], [0, 0, -1.0], [1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])
        return np.vstack([pts, poles]) * self.radius


@dataclass
class Cylinder(Shape):
    """Capped cylinder, axis along local z."""

    radius: float
    height: float

    def __post_init__(self):
        self.radius = float(self.radius)
        self.height = float(self.height)
        if self.radius <= 0 or self.height <= 0:
            raise ValueError("cylinder dimensions must be > 0")
        self.half_h = self.height / 2.0

    def sdf(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        dr = np.hypot(pts[:, 0], pts[:, 1]) - self.radius
        dz = np.abs(pts[:, 2]) - self.half_h
        q = np.column_stack([dr, dz])
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def _intervals(self, o, d):
        # side interval
        a = d[:, 0] ** 2 + d[:, 1] ** 2
        b = 2.0 * (o[:, 0] * d[:, 0] + o[:, 1] * d[:, 1])
        c = o[:, 0] ** 2 + o[:, 1] ** 2 - self.radius**2
        parallel = a < 1e-30
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.clip(disc, 0.0, None))
        with np.errstate(divide="ignore", invalid="ignore"):
            s_lo = (-b - sq) / (2 * a)
            s_hi = (-b + sq) / (2 * a)
        inside_side = c <= 0
        s_lo = np.where(parallel, np.where(inside_side, -np.inf, np.inf), s_lo)
        s_hi = np.where(parallel, np.where(inside_side, np.inf, -np.inf), s_hi)
        miss_side = (~parallel) & (disc < 0)
        s_lo = np.where(miss_side, np.inf, s_lo)
        s_hi = np.where(miss_side, -np.inf, s_hi)
        # z slab interval
        dz_safe = np.where(d[:, 2] == 0.0, 1e-300, d[:, 2])
        z1 = (-self.half_h - o[:, 2]) / dz_safe
        z2 = (self.half_h - o[:, 2]) / dz_safe
        z_lo, z_hi = np.minimum(z1, z2), np.maximum(z1, z2)
        t_enter = np.maximum(s_lo, z_lo)
        t_exit = np.minimum(s_hi, z_hi)
        from_side_in = s_lo >= z_lo
        from_side_out = s_hi <= z_hi
        return t_enter, t_exit, from_side_in, from_side_out

    def _normal_at(self, p, from_side, d, entering):
        if from_side:
            n = np.array([p[0], p[1], 0.0])
            return n / max(np.linalg.norm(n), 1e-300)
        sign_d = np.sign(d[2]) if d[2] != 0 else 1.0
        return np.array([0.0, 0.0, sign_d if not entering else -sign_d])

    def ray_entry(self, o, d):
        o = np.atleast_2d(o)
        d = np.atleast_2d(d)
        t_enter, t_exit, side_in, _ = self._intervals(o, d)
        hit = (t_enter <= t_exit) & (t_enter > 0)
        pts = o + t_enter[:, None] * d
        normals = np.zeros_like(o)
        side = hit & side_in
        r = np.hypot(pts[side, 0], pts[side, 1])
        normals[side, 0] = pts[side, 0] / np.maximum(r, 1e-300)
        normals[side, 1] = pts[side, 1] / np.maximum(r, 1e-300)
        cap = hit & ~side_in
        normals[cap, 2] = -np.sign(d[cap, 2])
        return hit, t_enter, normals

    def ray_hits(self, o, d):
        o = np.asarray(o, dtype=float)
        d = np.asarray(d, dtype=float)
        t_enter, t_exit, side_in, side_out = self._intervals(o[None, :], d[None, :])
        te, tx = float(t_enter[0]), float(t_exit[0])
        if te > tx:
            return []
        p_in = o + te * d
        p_out = o + tx * d
        return [
            (te, self._normal_at(p_in, bool(side_in[0]), d, True), True),
            (tx, self._normal_at(p_out, bool(side_out[0]), d, False), False),
        ]

    def area(self):
        return float(2.0 * np.pi * self.radius * self.height + 2.0 * np.pi * self.radius**2)

    def sample_surface(self, n, rng):
        side_area = 2.0 * np.pi * self.radius * self.height
        cap_area = np.pi * self.radius**2
        total = side_area + 2 * cap_area
        which = rng.choice(3, size=n, p=[side_area / total, cap_area / total, cap_area / total])
        theta = rng.uniform(0, 2 * np.pi, size=n)
        pts = np.zeros((n, 3))
        normals = np.zeros((n, 3))
        side = which == 0
        pts[side, 0] = self.radius * np.cos(theta[side])
        pts[side, 1] = self.radius * np.sin(theta[side])
        pts[side, 2] = rng.uniform(-self.half_h, self.half_h, size=int(side.sum()))
        normals[side, 0] = np.cos(theta[side])
        normals[side, 1] = np.sin(theta[side])
        for w, sign in ((1, 1.0), (2, -1.0)):
            cap = which == w
            m = int(cap.sum())
            rr = self.radius * np.sqrt(rng.uniform(0, 1, size=m))
            pts[cap, 0] = rr * np.cos(theta[cap])
            pts[cap, 1] = rr * np.sin(theta[cap])
            pts[cap, 2] = sign * self.half_h
            normals[cap, 2] = sign
        return pts, normals

    def aabb(self):
        r, h = self.radius, self.half_h
        return np.array([-r, -r, -h]), np.array([r, r, h])

    def probe_points(self):
        theta = np.linspace(0, 2 * np.pi, 32, endpoint=False)
        ring = np.column_stack([np.cos(theta), np.sin(theta), np.zeros_like(theta)])
        pts = []
        for z in np.linspace(-self.half_h, self.half_h, 5):
            p = ring * self.radius
            p = p + np.array([0, 0, z])
            pts.append(p)
        for sign in (-1.0, 1.0):
            for frac in (0.0, 0.5):
                p = ring * (self.radius * frac)
                p = p + np.array([0, 0, sign * self.half_h])
                pts.append(p)
        return np.unique(np.round(np.vstack(pts), 12), axis=0)


@dataclass
class TriMesh(Shape):
    """Triangle mesh; faces must be consistently wound with outward normals
    and the surface watertight for the signed distance to make sense."""

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        self.faces = np.asarray(self.faces, dtype=int)
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be (F, 3) triangles")
        tri = self.vertices[self.faces]
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        self._areas2 = np.linalg.norm(cross, axis=1)  # 2x triangle area
        keep = self._areas2 > 1e-16
        self.faces = self.faces[keep]
        self._areas2 = self._areas2[keep]
        self._tri = self.vertices[self.faces]
        self._normals = cross[keep] / self._areas2[keep][:, None]
        # parity ray direction chosen away from edges/axes
        self._parity_dir = np.array([0.5773502691896258, 0.211324865405187, 0.788675134594813])
        self._parity_dir /= np.linalg.norm(self._parity_dir)

    def _mt_hits(self, o, d):
        """Moller-Trumbore for a batch of rays against all faces.

        Returns (m, F) t values with np.inf where there is no hit.
        """
        v0 = self._tri[:, 0]
        e1 = self._tri[:, 1] - v0
        e2 = self._tri[:, 2] - v0
        t_out = np.full((len(o), len(v0)), np.inf)
        for s in range(0, len(o), _MESH_CHUNK):
            ob = o[s : s + _MESH_CHUNK]
            db = d[s : s + _MESH_CHUNK]
            p = np.cross(db[:, None, :], e2[None, :, :])
            det = np.einsum("fk,mfk->mf", e1, p)
            ok = np.abs(det) > 1e-14
            inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
            tv = ob[:, None, :] - v0[None, :, :]
            u = np.einsum("mfk,mfk->mf", tv, p) * inv
            qv = np.cross(tv, e1[None, :, :])
            v = np.einsum("mk,mfk->mf", db, qv) * inv
            t = np.einsum("fk,mfk->mf", e2, qv) * inv
            valid = ok & (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1 + 1e-12)
            t_out[s : s + _MESH_CHUNK] = np.where(valid, t, np.inf)
        return t_out

    def sdf(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        dists = np.empty(len(pts))
        for s in range(0, len(pts), _MESH_CHUNK):
            dists[s : s + _MESH_CHUNK] = _point_tri_distance(
                pts[s : s + _MESH_CHUNK], self._tri
            )
        dirs = np.broadcast_to(self._parity_dir, pts.shape)
        t = self._mt_hits(pts, np.ascontiguousarray(dirs))
        crossings = (t > 1e-12) & np.isfinite(t)
        inside = crossings.sum(axis=1) % 2 == 1
        return np.where(inside, -dists, dists)

    def ray_entry(self, o, d):
        o = np.atleast_2d(o)
        d = np.atleast_2d(d)
        t = self._mt_hits(o, d)
        t = np.where(t > 1e-12, t, np.inf)
        idx = t.argmin(axis=1)
        t_best = t[np.arange(len(o)), idx]
        hit = np.isfinite(t_best)
        normals = self._normals[idx]
        return hit, t_best, normals

    def ray_hits(self, o, d):
        o = np.asarray(o, dtype=float)[None, :]
        d = np.asarray(d, dtype=float)[None, :]
        t = self._mt_hits(o, d)[0]
        hits = []
        for f in np.nonzero(np.isfinite(t))[0]:
            n = self._normals[f]
            entering = float(np.asarray(d[0]) @ n) < 0
            hits.append((float(t[f]), n, entering))
        hits.sort(key=lambda h: h[0])
        return hits

    def area(self):
        return float(self._areas2.sum() / 2.0)

    def sample_surface(self, n, rng):
        probs = self._areas2 / self._areas2.sum()
        idx = rng.choice(len(self.faces), size=n, p=probs)
        u = rng.uniform(size=(n, 1))
        v = rng.uniform(size=(n, 1))
        flip = (u + v > 1).ravel()
        u[flip] = 1 - u[flip]
        v[flip] = 1 - v[flip]
        tri = self._tri[idx]
        pts = tri[:, 0] + u * (tri[:, 1] - tri[:, 0]) + v * (tri[:, 2] - tri[:, 0])
        return pts, self._normals[idx]

    def aabb(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def probe_points(self):
        tri = self._tri
        mids = (
            0.5 * (tri[:, 0] + tri[:, 1]),
            0.5 * (tri[:, 1] + tri[:, 2]),
            0.5 * (tri[:, 2] + tri[:, 0]),
        )
        centroids = tri.mean(axis=1)
        return np.unique(np.vstack([self.vertices, centroids, *mids]), axis=0)


def _point_tri_distance(pts: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """Min unsigned distance from each point to any triangle.

    Barycentric clamp (Eberly); pts (m, 3), tri (F, 3, 3) -> (m,).
    """
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    # precomputable per-triangle terms
    d00 = np.einsum("fk,fk->f", ab, ab)
    d01 = np.einsum("fk,fk->f", ab, ac)
    d11 = np.einsum("fk,fk->f", ac, ac)
    denom = d00 * d11 - d01 * d01
    denom = np.where(np.abs(denom) < 1e-300, 1e-300, denom)

    ap = pts[:, None, :] - a[None, :, :]  # (m, F, 3)
    d20 = np.einsum("mfk,fk->mf", ap, ab)
    d21 = np.einsum("mfk,fk->mf", ap, ac)
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    v = np.clip(v, 0.0, 1.0)
    w = np.clip(w, 0.0, 1.0)
    over = v + w > 1.0
    # renormalize points projected outside the far edge onto it
    if np.any(over):
        s = np.where(over, v + w, 1.0)
        v = np.where(over, v / s, v)
        w = np.where(over, w / s, w)
    proj = a[None, :, :] + v[..., None] * ab[None, :, :] + w[..., None] * ac[None, :, :]
    d_edge = np.linalg.norm(pts[:, None, :] - proj, axis=2)

    # clamping each edge individually catches corner regions exactly
    for p0, e in ((a, ab), (a, ac), (b, c - b)):
        tpar = np.einsum("mfk,fk->mf", pts[:, None, :] - p0[None, :, :], e)
        tpar = np.clip(tpar / np.maximum(np.einsum("fk,fk->f", e, e), 1e-300), 0.0, 1.0)
        q = p0[None, :, :] + tpar[..., None] * e[None, :, :]
        d_edge = np.minimum(d_edge, np.linalg.norm(pts[:, None, :] - q, axis=2))
    return d_edge.min(axis=1)


def load_obj(path) -> TriMesh:
    """Minimal ASCII OBJ reader: v and triangular f lines only."""
    verts = []
    faces = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            if len(idx) != 3:
                raise ValueError("only triangular faces are supported")
            faces.append([i - 1 for i in idx])
    if not verts or not faces:
        raise ValueError(f"no triangle geometry in {path}")
    return TriMesh(np.asarray(verts), np.asarray(faces))


def save_obj(path, mesh: TriMesh) -> None:
    lines = [f"v {v[0]} {v[1]} {v[2]}" for v in mesh.vertices]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class SceneObject:
    """A posed shape with an id; all queries in world coordinates."""

    shape: Shape
    pose: Pose
    id: int
    mesh_path: str | None = None  # remembered for serialization

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        return self.shape.sdf(self.pose.inverse_apply(pts))

    def ray_entry(self, o, d):
        hit, t, n = self.shape.ray_entry(
            self.pose.inverse_apply(o), self.pose.inverse_apply_vector(d)
        )
        return hit, t, n @ self.pose.R.T

    def ray_hits(self, o, d):
        hits = self.shape.ray_hits(
            self.pose.inverse_apply(o), self.pose.inverse_apply_vector(d)
        )
        return [(t, self.pose.apply_vector(n), entering) for t, n, entering in hits]

    def surface_probes(self) -> np.ndarray:
        return self.pose.apply(self.shape.probe_points())

    def bounding_radius(self) -> float:
        r = self.__dict__.get("_bounding_radius")
        if r is None:
            lo, hi = self.shape.aabb()
            c = 0.5 * (lo + hi)
            r = float(np.linalg.norm(hi - c))
            self.__dict__["_bounding_radius"] = r
        return r

    def center(self) -> np.ndarray:
        c = self.__dict__.get("_center")
        if c is None:
            lo, hi = self.shape.aabb()
            c = self.pose.apply(0.5 * (lo + hi))
            self.__dict__["_center"] = c
        return c

    def world_aabb(self) -> tuple[np.ndarray, np.ndarray]:
        cached = self.__dict__.get("_world_aabb")
        if cached is None:
            lo, hi = self.shape.aabb()
            corners = np.array(
                [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
            )
            w = self.pose.apply(corners)
            cached = (w.min(axis=0), w.max(axis=0))
            self.__dict__["_world_aabb"] = cached
        return cached

    def aabb_distance(self, p: np.ndarray) -> float:
        """Distance from a point to the object's world AABB (0 inside)."""
        lo, hi = self.world_aabb()
        d = np.maximum(np.maximum(lo - p, p - hi), 0.0)
        return float(np.linalg.norm(d))
