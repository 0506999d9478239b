"""Collision/render primitives and their sphere-proxy coverings.

Capsules and cylinders are aligned with the local z axis. ``dims`` holds
the radius for spheres, half extents for boxes, and ``(radius,
half_length)`` for capsules and cylinders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, quat_from_axis_angle

SPHERE, BOX, CAPSULE, CYLINDER = "sphere", "box", "capsule", "cylinder"
KIND_CODES = {SPHERE: 0, BOX: 1, CAPSULE: 2, CYLINDER: 3}

# Point labels shared by sensing, datasets and segmentation heads.
LABEL_FUNCTIONAL, LABEL_REST, LABEL_HAND, LABEL_ARM = 0, 1, 2, 3
LABEL_NAMES = ("functional", "rest", "hand", "arm")


@dataclass(frozen=True)
class ShapePrimitive:
    kind: str
    dims: tuple[float, ...]
    pose: Pose = field(default_factory=Pose)
    link: int = -1
    label: int = LABEL_REST

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        expected = {SPHERE: 1, BOX: 3, CAPSULE: 2, CYLINDER: 2}[self.kind]
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != expected:
            raise ValueError(f"{self.kind} needs {expected} dims, got {len(dims)}")
        if any(d <= 0 for d in dims):
            raise ValueError(f"shape dimensions must be positive, got {dims}")
        object.__setattr__(self, "dims", dims)

    def bounding_radius(self) -> float:
        if self.kind == SPHERE:
            return self.dims[0]
        if self.kind == BOX:
            return float(np.linalg.norm(self.dims))
        r, h = self.dims
        if self.kind == CAPSULE:
            return r + h
        return float(np.hypot(r, h))


def capsule_between(p0, p1, radius: float, link: int, label: int) -> ShapePrimitive:
    """Capsule whose axis runs from ``p0`` to ``p1`` in the link frame."""
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    axis = p1 - p0
    length = float(np.linalg.norm(axis))
    z = np.array([0.0, 0.0, 1.0])
    u = axis / length
    c = np.cross(z, u)
    s = np.linalg.norm(c)
    if s < 1e-12:
        rot = np.array([1.0, 0, 0, 0]) if u[2] > 0 else quat_from_axis_angle((1, 0, 0), np.pi)
    else:
        rot = quat_from_axis_angle(c / s, np.arctan2(s, u @ z))
    return ShapePrimitive(CAPSULE, (radius, 0.5 * length), Pose(rot, 0.5 * (p0 + p1)), link, label)


def _grid(extent: float, spacing: float) -> np.ndarray:
    if extent <= 1e-12:
        return np.zeros(1)
    n = int(np.ceil(2 * extent / spacing - 1e-9)) + 1
    return np.linspace(-extent, extent, n)


def sphere_proxies(shape: ShapePrimitive, max_spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Spheres covering ``shape``'s surface, expressed in the link frame.

    Every centre lies inside the primitive; neighbouring centres are no
    further apart than ``max_spacing``.
    """
    kind, dims = shape.kind, shape.dims
    if kind == SPHERE:
        local = np.zeros((1, 3))
        radii = np.array([dims[0]])
    elif kind == CAPSULE:
        r, h = dims
        z = _grid(h, max_spacing)
        local = np.stack([np.zeros_like(z), np.zeros_like(z), z], axis=1)
        radii = np.full(len(z), r)
    elif kind == BOX:
        h = np.asarray(dims)
        rho = min(max_spacing, h.min())
        inner = h - rho
        sp = min(max_spacing, rho)
        axes = [_grid(e, sp) for e in inner]
        g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
        on_surface = np.zeros(len(g), dtype=bool)
        for k in range(3):
            if inner[k] <= 1e-12:
                on_surface[:] = True
            else:
                on_surface |= np.isclose(np.abs(g[:, k]), inner[k])
        local = g[on_surface]
        radii = np.full(len(local), rho)
    else:
        r, h = dims
        rho = min(max_spacing, r, h)
        ri, hi = r - rho, h - rho
        sp = min(max_spacing, rho)
        pts = []
        n_theta = max(1, int(np.ceil(2 * np.pi * ri / sp)))
        theta = np.arange(n_theta) * 2 * np.pi / n_theta
        ring = np.stack([ri * np.cos(theta), ri * np.sin(theta)], axis=1)
        for z in _grid(hi, sp):
            pts.append(np.column_stack([ring, np.full(n_theta, z)]))
        caps = [0.0] if hi <= 1e-12 else [-hi, hi]
        for z in caps:
            for rr in np.arange(ri - sp, 1e-12, -sp)[::-1]:
                nt = max(1, int(np.ceil(2 * np.pi * rr / sp)))
                th = np.arange(nt) * 2 * np.pi / nt
                pts.append(np.column_stack([rr * np.cos(th), rr * np.sin(th), np.full(nt, z)]))
            pts.append(np.array([[0.0, 0.0, z]]))
        local = np.unique(np.round(np.concatenate(pts), 12), axis=0)
        radii = np.full(len(local), rho)
    return shape.pose.apply(local), radii


def signed_distance_local(kind: str, dims, p: np.ndarray) -> np.ndarray:
    """Signed distance from shape-local points ``p`` to the primitive surface."""
    p = np.atleast_2d(p)
    if kind == SPHERE:
        return np.linalg.norm(p, axis=1) - dims[0]
    if kind == BOX:
        q = np.abs(p) - np.asarray(dims)
        outside = np.linalg.norm(np.maximum(q, 0), axis=1)
        inside = np.minimum(q.max(axis=1), 0)
        return outside + inside
    r, h = dims
    if kind == CAPSULE:
        z = np.clip(p[:, 2], -h, h)
        return np.linalg.norm(p - np.column_stack([np.zeros_like(z), np.zeros_like(z), z]), axis=1) - r
    d = np.column_stack([np.hypot(p[:, 0], p[:, 1]) - r, np.abs(p[:, 2]) - h])
    return np.minimum(d.max(axis=1), 0) + np.linalg.norm(np.maximum(d, 0), axis=1)


def surface_area(shape: ShapePrimitive) -> float:
    d = shape.dims
    if shape.kind == SPHERE:
        return 4 * np.pi * d[0] ** 2
    if shape.kind == BOX:
        a, b, c = (2 * x for x in d)
        return 2 * (a * b + b * c + a * c)
    r, h = d
    if shape.kind == CAPSULE:
        return 4 * np.pi * r * r + 2 * np.pi * r * 2 * h
    return 2 * np.pi * r * 2 * h + 2 * np.pi * r * r


def sample_surface(shape: ShapePrimitive, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` area-uniform samples on the primitive surface, in the link frame."""
    kind, d = shape.kind, shape.dims
    if n <= 0:
        return np.zeros((0, 3))
    if kind == SPHERE:
        v = rng.normal(size=(n, 3))
        local = d[0] * v / np.linalg.norm(v, axis=1, keepdims=True)
    elif kind == BOX:
        h = np.asarray(d)
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]] * 2)
        face = rng.choice(6, size=n, p=areas / areas.sum())
        local = rng.uniform(-1, 1, size=(n, 3)) * h
        ax = face % 3
        sign = np.where(face < 3, 1.0, -1.0)
        local[np.arange(n), ax] = sign * h[ax]
    elif kind == CAPSULE:
        r, h = d
        side = 2 * np.pi * r * 2 * h
        cap = 4 * np.pi * r * r
        on_side = rng.uniform(size=n) < side / (side + cap)
        th = rng.uniform(0, 2 * np.pi, size=n)
        local = np.column_stack([r * np.cos(th), r * np.sin(th), rng.uniform(-h, h, size=n)])
        v = rng.normal(size=(n, 3))
        v = r * v / np.linalg.norm(v, axis=1, keepdims=True)
        v[:, 2] += np.where(v[:, 2] >= 0, h, -h)
        local = np.where(on_side[:, None], local, v)
    else:
        r, h = d
        side = 2 * np.pi * r * 2 * h
        cap = 2 * np.pi * r * r
        on_side = rng.uniform(size=n) < side / (side + cap)
        th = rng.uniform(0, 2 * np.pi, size=n)
        rr = np.where(on_side, r, r * np.sqrt(rng.uniform(size=n)))
        z = np.where(on_side, rng.uniform(-h, h, size=n), np.where(rng.uniform(size=n) < 0.5, -h, h))
        local = np.column_stack([rr * np.cos(th), rr * np.sin(th), z])
    return shape.pose.apply(local)
