"""The five reconstruction metrics and the per-sample scoring protocol.

Pipeline for one (prediction, ground truth) pair: both clouds are centered
and scaled into [-1, 1]^3, the prediction is rigidly aligned to the ground
truth with ICP, and the aligned prediction is scored with F1@tau, voxel
IoU/Dice on a fixed grid, Chamfer distance and an assignment-based EMD.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from volbench.errors import VolbenchError
from volbench.geometry import (
    GeometryError,
    IcpParams,
    NearestNeighborIndex,
    apply_transform,
    as_points,
    icp_align,
    inlier_rmse,
    normalize_unit_cube,
    subsample,
)

log = logging.getLogger(__name__)

METRIC_NAMES = ("f1", "precision", "recall", "voxel_iou", "voxel_dice", "chamfer", "emd")


@dataclass(frozen=True)
class MetricConfig:
    tau: float = 0.01
    grid_size: int = 64
    emd_cap: int = 2048
    seed: int = 0
    icp: IcpParams = field(default_factory=IcpParams)
    # prediction mesh -> cloud conversion: "surface" sampling or raw "vertices"
    sample_points: int = 10_000
    mesh_mode: str = "surface"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if self.emd_cap < 1:
            raise ValueError("emd_cap must be >= 1")
        if self.sample_points < 1:
            raise ValueError("sample_points must be >= 1")
        if self.mesh_mode not in ("surface", "vertices"):
            raise ValueError(f"unknown mesh_mode {self.mesh_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricConfig":
        d = dict(d)
        icp = d.pop("icp", None) or {}
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        icp_unknown = set(icp) - set(IcpParams.__dataclass_fields__)
        if icp_unknown:
            raise ValueError(f"unknown icp keys: {sorted(icp_unknown)}")
        return cls(icp=IcpParams(**icp), **d)


@dataclass(frozen=True)
class OccupancyGrid:
    grid_size: int
    occupied: frozenset


@dataclass
class MetricRecord:
    sample_id: str = ""
    dataset: str = ""
    model: str = ""
    plane: str = ""
    status: str = "ok"
    reason: str | None = None
    f1: float | None = None
    precision: float | None = None
    recall: float | None = None
    voxel_iou: float | None = None
    voxel_dice: float | None = None
    chamfer: float | None = None
    emd: float | None = None
    n_pred: int | None = None
    n_gt: int | None = None
    seed: int | None = None

    @classmethod
    def skipped(cls, reason: str, **ids) -> "MetricRecord":
        return cls(status="skipped", reason=reason, **ids)

    def metrics(self) -> dict:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _nonempty(*clouds):
    for c in clouds:
        if len(c) == 0:
            raise GeometryError("empty point cloud")


def f1_at_tau(pred, gt, tau: float) -> tuple[float, float, float]:
    """Return ``(precision, recall, f1)`` at distance threshold ``tau``."""
    p, g = as_points(pred), as_points(gt)
    _nonempty(p, g)
    d_pred = NearestNeighborIndex(g).query(p)[0]
    d_gt = NearestNeighborIndex(p).query(g)[0]
    precision = float(np.mean(d_pred <= tau))
    recall = float(np.mean(d_gt <= tau))
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def voxel_indices(points, grid_size: int) -> np.ndarray:
    pts = as_points(points)
    voxel = 2.0 / grid_size
    idx = np.floor((pts + 1.0) / voxel).astype(np.int64)
    return np.clip(idx, 0, grid_size - 1)


def voxelize(cloud, grid_size: int) -> OccupancyGrid:
    """Occupied cells of a ``grid_size``^3 grid spanning [-1, 1]^3 (out-of-range points are clamped)."""
    idx = voxel_indices(cloud, grid_size)
    return OccupancyGrid(grid_size, frozenset(map(tuple, idx.tolist())))


def voxel_overlap(pred_grid: OccupancyGrid, gt_grid: OccupancyGrid) -> tuple[float, float]:
    if pred_grid.grid_size != gt_grid.grid_size:
        raise ValueError(f"grid size mismatch: {pred_grid.grid_size} vs {gt_grid.grid_size}")
    a, b = pred_grid.occupied, gt_grid.occupied
    if not a or not b:
        raise GeometryError("empty occupancy grid")
    inter = len(a & b)
    union = len(a | b)
    return inter / union, 2 * inter / (len(a) + len(b))


def chamfer(pred, gt) -> float:
    """Sum of the two directed mean nearest-neighbor distances (unsquared)."""
    p, g = as_points(pred), as_points(gt)
    _nonempty(p, g)
    forward = NearestNeighborIndex(g).query(p)[0]
    backward = NearestNeighborIndex(p).query(g)[0]
    return float(forward.mean() + backward.mean())


def emd(pred, gt, cap: int = 2048, seed: int = 0) -> float:
    """Mean cost of the optimal one-to-one matching after subsampling to a common size.

    Both clouds are subsampled with the same seed, so equal-size clouds keep
    the same index positions.
    """
    p, g = as_points(pred), as_points(gt)
    _nonempty(p, g)
    n = min(len(p), len(g), cap)
    ps = subsample(p, n, seed).points
    gs = subsample(g, n, seed).points
    cost = cdist(ps, gs)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / n)


def evaluate_pair(pred, gt, cfg: MetricConfig | None = None, **ids) -> MetricRecord:
    """Normalize, align and score one prediction; failures become skipped records."""
    cfg = cfg or MetricConfig()
    try:
        p, g = as_points(pred), as_points(gt)
        _nonempty(p, g)
        pred_n = normalize_unit_cube(p)
        gt_n = normalize_unit_cube(g)
        t = icp_align(pred_n, gt_n, cfg.icp)
        pred_a = apply_transform(pred_n, t)
        if log.isEnabledFor(logging.DEBUG):
            rmse, n_in = inlier_rmse(pred_a, gt_n, cfg.icp.max_correspondence_distance)
            log.debug("icp %s: rmse=%.3g inliers=%d", ids.get("sample_id"), rmse, n_in)

        precision, recall, f1 = f1_at_tau(pred_a, gt_n, cfg.tau)
        iou, dice = voxel_overlap(voxelize(pred_a, cfg.grid_size), voxelize(gt_n, cfg.grid_size))
        return MetricRecord(
            status="ok",
            f1=f1,
            precision=precision,
            recall=recall,
            voxel_iou=iou,
            voxel_dice=dice,
            chamfer=chamfer(pred_a, gt_n),
            emd=emd(pred_a, gt_n, cfg.emd_cap, cfg.seed),
            n_pred=len(p),
            n_gt=len(g),
            seed=cfg.seed,
            **ids,
        )
    except VolbenchError as exc:
        log.info("skipping %s: %s", ids.get("sample_id"), exc)
        return MetricRecord.skipped(exc.reason, seed=cfg.seed, **ids)
