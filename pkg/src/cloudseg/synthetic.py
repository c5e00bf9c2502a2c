"""Synthetic labeled clouds: ground truth for tests and the evaluation suite.

The ``humanoid6`` shape is six primitives in a fixed pose, roughly unit
height:

* torso: open-bottomed box shell, x in [-0.20, 0.20], y in [-0.135, 0.135],
  z in [0.52, 0.78]
* head: sphere, radius 0.115, center (0, 0, 0.88), dipping below the torso
  top plane
* arms: horizontal cylinders, radius 0.065, from |x| = 0.195 out to 0.55 at
  z = 0.645, entering the torso through unsampled socket openings
* legs: vertical cylinders, radius 0.048, centers (+/-0.085, 0),
  z in [0, 0.57], reaching up into the open torso bottom

Points are sampled uniformly over the exposed surface. Joints overlap
geometrically, but occluded patches (socket rings, hidden caps, the torso
bottom) are not sampled, which mimics the self-occlusion shadows a scanner
leaves at articulations. Labels are per primitive; optional Gaussian position
noise is added last.
"""

from __future__ import annotations

import numpy as np

from .core import LabelMap, PointCloud
from .io_formats import LabeledCloud

KINDS = ("plane", "sphere", "dihedral", "two_blobs", "humanoid6")

# humanoid proportions (roughly unit height). Two sizing rules keep the shape
# segmentable at the acceptance noise level: (1) clearances between parts
# whose surfaces face the same way exceed the growing distance threshold plus
# 3 sigma of noise, and (2) every torso face is smaller than any limb, so
# smallest-first merging reassembles the torso before touching real parts
_LEG_R = 0.048
_LEG_X = 0.085
_LEG_Z = (0.0, 0.57)
_TORSO_XHW = 0.20
_TORSO_YHW = 0.135
_TORSO_Z = (0.52, 0.78)
_ARM_R = 0.065
_ARM_X = (0.195, 0.55)
_ARM_Z = 0.645
_ARM_SOCKET_R = 0.115  # unsampled opening around each arm in the side faces
_HEAD_R = 0.115
_HEAD_C = 0.88
_NECK_MOAT = 0.05  # unsampled ring between the head rim and the top face

HUMANOID_PARTS = ("torso", "head", "left_arm", "right_arm", "left_leg", "right_leg")


def _unit_disk(rng: np.random.Generator, n: int) -> np.ndarray:
    r = np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    return np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)


def _sphere_points(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _make_plane(rng, n=500, size=1.0):
    pts = np.zeros((n, 3))
    pts[:, 0] = rng.uniform(0.0, size, n)
    pts[:, 1] = rng.uniform(0.0, size, n)
    return pts, np.zeros(n, dtype=np.int64)


def _make_sphere(rng, n=500, radius=1.0):
    return radius * _sphere_points(rng, n), np.zeros(n, dtype=np.int64)


def _make_dihedral(rng, n=1000, angle_deg=90.0, size=1.0):
    """Two rectangular sheets sharing the y-axis edge; the angle between their
    face normals is ``angle_deg``."""
    n_a = n // 2
    n_b = n - n_a
    t_a = rng.uniform(0.0, size, n_a)
    y_a = rng.uniform(0.0, size, n_a)
    sheet_a = np.stack([t_a, y_a, np.zeros(n_a)], axis=1)
    beta = np.radians(angle_deg)
    direction = np.array([np.cos(beta), 0.0, np.sin(beta)])
    t_b = rng.uniform(0.0, size, n_b)
    y_b = rng.uniform(0.0, size, n_b)
    sheet_b = t_b[:, None] * direction[None, :]
    sheet_b[:, 1] = y_b
    pts = np.vstack([sheet_a, sheet_b])
    labels = np.concatenate([np.zeros(n_a, np.int64), np.ones(n_b, np.int64)])
    return pts, labels


def _make_two_blobs(rng, n=200, separation=10.0, radius=0.5):
    n_a = n // 2
    n_b = n - n_a
    a = radius * _sphere_points(rng, n_a) * rng.uniform(0, 1, (n_a, 1)) ** (1 / 3)
    b = radius * _sphere_points(rng, n_b) * rng.uniform(0, 1, (n_b, 1)) ** (1 / 3)
    b[:, 0] += separation
    pts = np.vstack([a, b])
    labels = np.concatenate([np.zeros(n_a, np.int64), np.ones(n_b, np.int64)])
    return pts, labels


def _head_plane_hole_radius() -> float:
    dz = _TORSO_Z[1] - _HEAD_C
    return float(np.sqrt(_HEAD_R**2 - dz**2)) + _NECK_MOAT


def _sample_torso(rng, n):
    xhw, yhw = _TORSO_XHW, _TORSO_YHW
    zlo, zhi = _TORSO_Z
    dz = zhi - zlo
    hole_head = _head_plane_hole_radius()
    top_area = 4 * xhw * yhw - np.pi * hole_head**2
    fb_area = 2 * xhw * dz
    side_area = max(0.0, 2 * yhw * dz - np.pi * _ARM_SOCKET_R**2)

    faces = ["top", "front", "back", "left", "right"]
    areas = np.array([top_area, fb_area, fb_area, side_area, side_area])
    counts = np.bincount(
        rng.choice(len(faces), size=n, p=areas / areas.sum()), minlength=len(faces)
    )

    chunks = []
    for face, m in zip(faces, counts):
        have = 0
        while have < m:
            batch = max(64, 2 * (m - have))
            u = rng.uniform(-xhw, xhw, batch)
            if face == "top":
                v = rng.uniform(-yhw, yhw, batch)
                keep = u**2 + v**2 > hole_head**2
                pts = np.stack([u[keep], v[keep], np.full(keep.sum(), zhi)], axis=1)
            elif face in ("front", "back"):
                z = rng.uniform(zlo, zhi, batch)
                y = yhw if face == "front" else -yhw
                pts = np.stack([u, np.full(batch, y), z], axis=1)
            else:
                w = rng.uniform(-yhw, yhw, batch)
                z = rng.uniform(zlo, zhi, batch)
                keep = w**2 + (z - _ARM_Z) ** 2 > _ARM_SOCKET_R**2
                x = xhw if face == "right" else -xhw
                pts = np.stack([np.full(keep.sum(), x), w[keep], z[keep]], axis=1)
            chunks.append(pts[: m - have])
            have += min(len(pts), m - have)
    return np.vstack(chunks)


def _sample_head(rng, n):
    out = np.empty((0, 3))
    while len(out) < n:
        batch = _HEAD_R * _sphere_points(rng, 2 * (n - len(out)) + 16)
        batch[:, 2] += _HEAD_C
        keep = batch[:, 2] >= _TORSO_Z[1]
        out = np.vstack([out, batch[keep]])
    return out[:n]


def _sample_arm(rng, n, side):
    x0, x1 = _ARM_X
    lateral = 2 * np.pi * _ARM_R * (x1 - x0)
    cap = np.pi * _ARM_R**2
    n_cap = int(round(n * cap / (lateral + cap)))
    n_lat = n - n_cap
    phi = rng.uniform(0, 2 * np.pi, n_lat)
    x = rng.uniform(x0, x1, n_lat)
    lat = np.stack([x, _ARM_R * np.cos(phi), _ARM_Z + _ARM_R * np.sin(phi)], axis=1)
    disk = _unit_disk(rng, n_cap) * _ARM_R
    capped = np.stack([np.full(n_cap, x1), disk[:, 0], _ARM_Z + disk[:, 1]], axis=1)
    pts = np.vstack([lat, capped])
    pts[:, 0] *= side
    return pts


def _sample_leg(rng, n, side):
    zlo, zhi = _LEG_Z
    lateral = 2 * np.pi * _LEG_R * (zhi - zlo)
    cap = np.pi * _LEG_R**2
    n_cap = int(round(n * cap / (lateral + cap)))
    n_lat = n - n_cap
    phi = rng.uniform(0, 2 * np.pi, n_lat)
    z = rng.uniform(zlo, zhi, n_lat)
    lat = np.stack(
        [side * _LEG_X + _LEG_R * np.cos(phi), _LEG_R * np.sin(phi), z], axis=1
    )
    disk = _unit_disk(rng, n_cap) * _LEG_R
    capped = np.stack(
        [side * _LEG_X + disk[:, 0], disk[:, 1], np.full(n_cap, zlo)], axis=1
    )
    return np.vstack([lat, capped])


def _humanoid_part_areas() -> np.ndarray:
    leg = 2 * np.pi * _LEG_R * (_LEG_Z[1] - _LEG_Z[0]) + np.pi * _LEG_R**2
    arm = 2 * np.pi * _ARM_R * (_ARM_X[1] - _ARM_X[0]) + np.pi * _ARM_R**2
    cap_h = _TORSO_Z[1] - (_HEAD_C - _HEAD_R)
    head = 4 * np.pi * _HEAD_R**2 - 2 * np.pi * _HEAD_R * cap_h
    xhw, yhw = _TORSO_XHW, _TORSO_YHW
    dz = _TORSO_Z[1] - _TORSO_Z[0]
    torso = (
        (4 * xhw * yhw - np.pi * _head_plane_hole_radius() ** 2)
        + 2 * (2 * xhw * dz)
        + 2 * max(0.0, 2 * yhw * dz - np.pi * _ARM_SOCKET_R**2)
    )
    return np.array([torso, head, arm, arm, leg, leg])


def _allocate(n: int, weights: np.ndarray) -> np.ndarray:
    raw = n * weights / weights.sum()
    counts = np.floor(raw).astype(int)
    remainder = raw - counts
    for i in np.argsort(-remainder)[: n - counts.sum()]:
        counts[i] += 1
    return counts


def _make_humanoid6(rng, n=6000):
    if n < 60:
        raise ValueError("humanoid6 needs at least 60 points")
    counts = _allocate(n, _humanoid_part_areas())
    parts = [
        _sample_torso(rng, counts[0]),
        _sample_head(rng, counts[1]),
        _sample_arm(rng, counts[2], side=-1.0),
        _sample_arm(rng, counts[3], side=+1.0),
        _sample_leg(rng, counts[4], side=-1.0),
        _sample_leg(rng, counts[5], side=+1.0),
    ]
    pts = np.vstack(parts)
    labels = np.concatenate(
        [np.full(len(p), i, dtype=np.int64) for i, p in enumerate(parts)]
    )
    return pts, labels


_GENERATORS = {
    "plane": _make_plane,
    "sphere": _make_sphere,
    "dihedral": _make_dihedral,
    "two_blobs": _make_two_blobs,
    "humanoid6": _make_humanoid6,
}


def make_synthetic(kind: str, params: dict | None = None, rng_seed: int = 0) -> LabeledCloud:
    """Generate a labeled cloud of the given kind, deterministically per seed.

    ``params`` are kind-specific (all have defaults): every kind takes ``n``;
    ``noise`` adds isotropic Gaussian position jitter after sampling.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {KINDS}")
    params = dict(params or {})
    noise = float(params.pop("noise", 0.0))
    if noise < 0.0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(rng_seed)
    pts, labels = _GENERATORS[kind](rng, **params)
    if noise > 0.0:
        pts = pts + rng.normal(0.0, noise, pts.shape)
    return LabeledCloud(
        cloud=PointCloud(pts),
        truth=LabelMap(labels),
        name=f"{kind}-seed{rng_seed}",
    )
