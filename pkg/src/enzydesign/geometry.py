"""Coordinate-space utilities.

k-nearest-neighbor selection over Cα positions, random rigid transforms
for equivariance testing, and spherical initialization of unknown
residue coordinates at the canonical Cα-Cα bond length.
"""
from __future__ import annotations

import numpy as np

CA_BOND_LENGTH = 3.75  # Ångström, consecutive Cα-Cα distance


class GeometryError(ValueError):
    pass


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Full N×N Euclidean distance matrix."""
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


def knn(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest neighbors of each point, self excluded.

    Returns an (N, min(k, N-1)) int array. Neighbors are ordered by
    increasing distance; ties broken by lower index (stable sort), so the
    graph is deterministic and invariant under rigid motion for generic
    point sets.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        raise GeometryError(f"knn needs at least 2 points, got {n}")
    if k < 1:
        raise GeometryError(f"knn needs k >= 1, got {k}")
    k = min(k, n - 1)
    d = pairwise_distances(points)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :k].astype(np.intp)


def random_rigid(rng) -> tuple[np.ndarray, np.ndarray]:
    """A rotation uniform over SO(3) and a translation uniform in [-10, 10]³.

    ``rng`` is a seed or a numpy Generator. The rotation comes from a
    normalized Gaussian quaternion, which is uniform on SO(3).
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    rot = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
    t = rng.uniform(-10.0, 10.0, size=3)
    return rot, t


def apply_rigid(rot: np.ndarray, t: np.ndarray, points: np.ndarray) -> np.ndarray:
    return points @ rot.T + t


def init_coordinates(given: np.ndarray, motif: np.ndarray, n: int, rng,
                     bond_length: float = CA_BOND_LENGTH) -> np.ndarray:
    """Full N×3 coordinates: given values at motif indices, chained
    spherical placements elsewhere.

    Each free residue sits on the sphere of radius ``bond_length`` around
    its predecessor (the origin for residue 0), with polar angle uniform
    in (0, π) and azimuth uniform in (0, 2π). Deterministic given the
    generator state.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    motif = np.asarray(motif, dtype=np.intp)
    given = np.asarray(given, dtype=np.float64).reshape(len(motif), 3)
    if motif.size and (motif.min() < 0 or motif.max() >= n):
        raise IndexError(f"motif index out of range for length {n}")
    motif_set = {int(i): row for i, row in zip(motif, given)}
    coords = np.zeros((n, 3))
    for i in range(n):
        if i in motif_set:
            coords[i] = motif_set[i]
        else:
            prev = coords[i - 1] if i > 0 else np.zeros(3)
            w1 = rng.uniform(0.0, np.pi)
            w2 = rng.uniform(0.0, 2.0 * np.pi)
            direction = np.array([
                np.sin(w1) * np.cos(w2),
                np.sin(w1) * np.sin(w2),
                np.cos(w1),
            ])
            coords[i] = prev + bond_length * direction
    return coords
