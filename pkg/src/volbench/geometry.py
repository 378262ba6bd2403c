from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from volbench.errors import VolbenchError

SEED_MASK = (1 << 64) - 1
DEGENERATE_SCALE = 1e-12


class GeometryError(VolbenchError):
    reason = "degenerate-geometry"


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: str = "physical_mm"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud has non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def as_points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def point_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distance. All metric distances go through here."""
    diff = a - b
    return np.sqrt(np.sum(diff * diff, axis=-1))


class NearestNeighborIndex:
    """Immutable 3D k-d tree (median splits) over a fixed point set.

    Returned distances are recomputed with :func:`point_distances` so that
    they match an exhaustive scan bit for bit.
    """

    def __init__(self, points):
        self.points = as_points(points)
        if len(self.points) == 0:
            raise GeometryError("cannot index an empty point cloud")
        self._tree = cKDTree(self.points, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries) -> tuple[np.ndarray, np.ndarray]:
        q = as_points(queries)
        _, idx = self._tree.query(q, k=1)
        idx = np.asarray(idx, dtype=np.intp)
        return point_distances(q, self.points[idx]), idx


def nearest_distances(queries, reference) -> np.ndarray:
    return NearestNeighborIndex(reference).query(queries)[0]


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def compose(self, first: "RigidTransform") -> "RigidTransform":
        """Transform that applies ``first`` and then ``self``."""
        return RigidTransform(
            self.rotation @ first.rotation,
            self.rotation @ first.translation + self.translation,
        )

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class IcpParams:
    max_correspondence_distance: float = 0.02
    max_iterations: int = 50
    rmse_convergence_tol: float = 1e-6

    def __post_init__(self):
        if not self.max_correspondence_distance > 0:
            raise ValueError("max_correspondence_distance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def normalize_unit_cube(cloud) -> PointCloud:
    """Center at the centroid and divide by the largest absolute coordinate."""
    pts = as_points(cloud)
    if len(pts) == 0:
        raise GeometryError("cannot normalize an empty point cloud")
    centered = pts - pts.mean(axis=0)
    scale = float(np.max(np.abs(centered)))
    if scale < DEGENERATE_SCALE:
        return PointCloud(np.zeros_like(pts), frame="normalized")
    return PointCloud(centered / scale, frame="normalized")


def apply_transform(cloud, t: RigidTransform) -> PointCloud:
    frame = cloud.frame if isinstance(cloud, PointCloud) else "normalized"
    pts = as_points(cloud)
    return PointCloud(pts @ t.rotation.T + t.translation, frame=frame)


def best_fit_transform(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rotation + translation mapping paired ``source`` rows onto ``target``."""
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    cov = (source - mu_s).T @ (target - mu_t)
    u, _, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, mu_t - rot @ mu_s)


def correspondences(source: np.ndarray, index: NearestNeighborIndex, threshold: float):
    dist, idx = index.query(source)
    inliers = dist <= threshold
    return inliers, idx, dist


def inlier_rmse(source, target, threshold: float, index: NearestNeighborIndex | None = None):
    """RMSE over nearest-neighbor pairs closer than ``threshold``; 0 when there are none."""
    if index is None:
        index = NearestNeighborIndex(target)
    inliers, _, dist = correspondences(as_points(source), index, threshold)
    n = int(inliers.sum())
    if n == 0:
        return 0.0, 0
    return float(np.sqrt(np.mean(dist[inliers] ** 2))), n


def icp_align(source, target, params: IcpParams | None = None) -> RigidTransform:
    """Point-to-point ICP of ``source`` onto ``target``.

    Never returns a transform whose inlier RMSE exceeds that of the identity.
    """
    params = params or IcpParams()
    src = as_points(source)
    tgt = as_points(target)
    if len(src) < 3 or len(tgt) < 3:
        raise GeometryError("ICP needs at least 3 points in each cloud")
    index = NearestNeighborIndex(tgt)
    thr = params.max_correspondence_distance

    identity_rmse, _ = inlier_rmse(src, tgt, thr, index)
    current = RigidTransform.identity()
    moved = src
    prev_rmse = identity_rmse
    ever_solved = False
    for _ in range(params.max_iterations):
        inliers, idx, _ = correspondences(moved, index, thr)
        if inliers.sum() < 3:
            break
        step = best_fit_transform(moved[inliers], tgt[idx[inliers]])
        current = step.compose(current)
        moved = src @ current.rotation.T + current.translation
        ever_solved = True
        rmse, _ = inlier_rmse(moved, tgt, thr, index)
        if prev_rmse - rmse < params.rmse_convergence_tol:
            prev_rmse = rmse
            break
        prev_rmse = rmse

    if not ever_solved or prev_rmse > identity_rmse:
        return RigidTransform.identity()
    return current


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; seeds are reduced modulo 2**64."""
    return np.random.Generator(np.random.PCG64(int(seed) & SEED_MASK))


def subsample_indices(size: int, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("subsample size must be >= 1")
    if size <= n:
        return np.arange(size)
    return make_rng(seed).choice(size, size=n, replace=False)


def subsample(cloud, n: int, seed: int) -> PointCloud:
    """Uniform draw of ``n`` points without replacement (PCG64 seeded by ``seed``)."""
    pts = as_points(cloud)
    frame = cloud.frame if isinstance(cloud, PointCloud) else "physical_mm"
    return PointCloud(pts[subsample_indices(len(pts), n, seed)], frame=frame)
