"""Differentiable surrogate LiDAR detector over a BEV anchor lattice.

The model is deliberately simple so that its loss gradient with respect to
every input point has a closed form. Each anchor a on a regular BEV grid
accumulates a Gaussian kernel density of the cloud,

    d_a = sum_i exp(-||p_i - mu_a||^2_xy / (2 sigma^2)),

is scored ``o_a = sigmoid(weight * d_a + bias)``, and anchors above the
score threshold emit an axis-aligned template box at the density-weighted
centroid of their contributing points. Training-style supervision marks an
anchor positive when its center lies inside a ground-truth box footprint;
the loss is mean binary cross-entropy over all anchors.

Contributions are truncated at ``cutoff_sigmas`` standard deviations
(default 8, where a single point's weight is below 1.3e-14) so that density,
loss, and gradient all describe the same function and the kernels only touch
a local anchor window.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import points_in_rect
from .scene import BBox3D

SCORE_CLAMP = 1e-7  # BCE probability clamp, [1e-7, 1 - 1e-7]


@dataclass
class DetectorModel:
    """Anchor-grid configuration and scoring parameters."""

    cell_m: float = 2.0
    sigma_m: float = 1.0
    x_range: tuple = (0.0, 70.0)
    y_range: tuple = (-40.0, 40.0)
    weight: float = 1.0
    bias: float = -4.0
    score_threshold: float = 0.5
    box_template: tuple = (4.5, 1.8, 1.6)
    nms_iou: float = 0.5
    cutoff_sigmas: float = 8.0
    min_z_m: float | None = None     # crude ground removal: points below this
                                     # sensor-frame height are invisible to the model
    center_offset_m: float = 0.0     # shift detected centers this far radially away
                                     # from the sensor (visible-face -> body center)

    def __post_init__(self):
        self.cell_m = float(self.cell_m)
        self.sigma_m = float(self.sigma_m)
        self.x_range = (float(self.x_range[0]), float(self.x_range[1]))
        self.y_range = (float(self.y_range[0]), float(self.y_range[1]))
        self.box_template = tuple(float(v) for v in self.box_template)
        if self.min_z_m is not None:
            self.min_z_m = float(self.min_z_m)
        if self.cell_m <= 0:
            raise ValueError("cell_m must be positive")
        if self.sigma_m <= 0:
            raise ValueError("sigma_m must be positive")
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ValueError("x_range / y_range must be increasing")
        if not 0.0 < self.score_threshold < 1.0:
            raise ValueError("score_threshold must be in (0, 1)")
        if self.cutoff_sigmas <= 0:
            raise ValueError("cutoff_sigmas must be positive")
        self.center_offset_m = float(self.center_offset_m)
        if self.center_offset_m < 0:
            raise ValueError("center_offset_m must be >= 0")
        self.nx = int(round((self.x_range[1] - self.x_range[0]) / self.cell_m))
        self.ny = int(round((self.y_range[1] - self.y_range[0]) / self.cell_m))
        if self.nx < 1 or self.ny < 1:
            raise ValueError("anchor grid must have at least one cell per axis")

    @property
    def num_anchors(self) -> int:
        return self.nx * self.ny

    @property
    def cutoff_m(self) -> float:
        return self.cutoff_sigmas * self.sigma_m

    def anchor_centers(self) -> np.ndarray:
        """(num_anchors, 2) BEV anchor centers, flat index = ix * ny + iy."""
        ix = np.arange(self.nx)
        iy = np.arange(self.ny)
        ax = self.x_range[0] + (ix + 0.5) * self.cell_m
        ay = self.y_range[0] + (iy + 0.5) * self.cell_m
        gx, gy = np.meshgrid(ax, ay, indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def _grid_args(self):
        return (
            self.x_range[0],
            self.y_range[0],
            self.nx,
            self.ny,
            self.cell_m,
            self.sigma_m,
            self.cutoff_m,
        )


@dataclass
class Detection:
    """One detected box with its anchor score."""

    box: BBox3D
    score: float
    anchor_index: int


def _split_xyz(cloud):
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"point cloud must have shape (N, 3), got {pts.shape}")
    return (
        np.ascontiguousarray(pts[:, 0]),
        np.ascontiguousarray(pts[:, 1]),
        np.ascontiguousarray(pts[:, 2]),
    )


def _visible_xyz(model, cloud):
    """Split a cloud into columns, dropping points under ``min_z_m``.

    Returns (px, py, pz, visible_row_indices); the index array maps filtered
    rows back to rows of the input cloud.
    """
    px, py, pz = _split_xyz(cloud)
    if model.min_z_m is None:
        idx = np.arange(px.shape[0])
        return px, py, pz, idx
    idx = np.flatnonzero(pz >= model.min_z_m)
    return (
        np.ascontiguousarray(px[idx]),
        np.ascontiguousarray(py[idx]),
        np.ascontiguousarray(pz[idx]),
        idx,
    )


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def anchor_scores(model: DetectorModel, cloud) -> np.ndarray:
    """Unclamped sigmoid score per anchor."""
    px, py, _, _ = _visible_xyz(model, cloud)
    dens = kernels.bev_density(px, py, *model._grid_args())
    return _sigmoid(model.weight * dens + model.bias)


def anchor_targets(model: DetectorModel, gt_boxes) -> np.ndarray:
    """Binary anchor labels: 1 where the anchor center is inside a GT footprint."""
    centers = model.anchor_centers()
    t = np.zeros(model.num_anchors, dtype=bool)
    for box in gt_boxes:
        t |= points_in_rect(
            centers[:, 0],
            centers[:, 1],
            box.center[0],
            box.center[1],
            box.dims[0],
            box.dims[1],
            box.yaw,
        )
    return t.astype(np.float64)


def detect(model: DetectorModel, cloud) -> list[Detection]:
    """Run the surrogate detector on a cloud, returning NMS-filtered boxes."""
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.size == 0:
        return []
    px, py, pz, _ = _visible_xyz(model, pts)
    dens, sx, sy, sz = kernels.bev_moments(px, py, pz, *model._grid_args())
    scores = _sigmoid(model.weight * dens + model.bias)
    hot = np.flatnonzero(scores > model.score_threshold)
    l, w, h = model.box_template
    cands = []
    for a in hot:
        if dens[a] <= 0.0:
            continue
        cx = sx[a] / dens[a]
        cy = sy[a] / dens[a]
        cz = sz[a] / dens[a] + h / 2.0
        r = np.hypot(cx, cy)
        if model.center_offset_m > 0.0 and r > 0.0:
            cx += model.center_offset_m * cx / r
            cy += model.center_offset_m * cy / r
        cands.append(
            Detection(BBox3D(np.array([cx, cy, cz]), (l, w, h), 0.0), float(scores[a]), int(a))
        )
    # greedy NMS, highest score first, anchor index breaks ties
    cands.sort(key=lambda det: (-det.score, det.anchor_index))
    kept = []
    from .metrics import bev_iou

    for det in cands:
        if all(bev_iou(det.box, k.box) <= model.nms_iou for k in kept):
            kept.append(det)
    return kept


def _loss_terms(model, px, py, gt_boxes, targets=None):
    dens = kernels.bev_density(px, py, *model._grid_args())
    raw = _sigmoid(model.weight * dens + model.bias)
    o = np.clip(raw, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    t = anchor_targets(model, gt_boxes) if targets is None else targets
    loss = float(-np.mean(t * np.log(o) + (1.0 - t) * np.log(1.0 - o)))
    return loss, raw, o, t


def detection_loss(model: DetectorModel, cloud, gt_boxes, targets=None) -> float:
    """Mean BCE over anchors; ``targets`` may be precomputed via anchor_targets."""
    px, py, _, _ = _visible_xyz(model, cloud)
    loss, _, _, _ = _loss_terms(model, px, py, gt_boxes, targets)
    return loss


def loss_gradient(model: DetectorModel, cloud, gt_boxes, targets=None) -> np.ndarray:
    """Analytic d(loss)/d(point), shape (N, 3). The z column is zero."""
    _, grad = loss_and_gradient(model, cloud, gt_boxes, targets)
    return grad


def loss_and_gradient(model: DetectorModel, cloud, gt_boxes, targets=None):
    """Loss and gradient in one density pass (the attack loops live here)."""
    n_rows = np.asarray(cloud).shape[0]
    px, py, _, idx = _visible_xyz(model, cloud)
    cache = kernels.bev_cache(px, py, *model._grid_args())
    dens = cache[0]
    raw = _sigmoid(model.weight * dens + model.bias)
    o = np.clip(raw, SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    t = anchor_targets(model, gt_boxes) if targets is None else targets
    loss = float(-np.mean(t * np.log(o) + (1.0 - t) * np.log(1.0 - o)))
    # chain rule per anchor; the clamp zeroes gradients outside its window
    dl_do = -(t / o - (1.0 - t) / (1.0 - o)) / model.num_anchors
    active = (raw > SCORE_CLAMP) & (raw < 1.0 - SCORE_CLAMP)
    coef = np.where(active, dl_do * raw * (1.0 - raw) * model.weight, 0.0)
    gx, gy = kernels.bev_gradient_from_cache(cache, coef, model.sigma_m)
    grad = np.zeros((n_rows, 3))
    grad[idx, 0] = gx
    grad[idx, 1] = gy
    return loss, grad


def saliency(model: DetectorModel, cloud, gt_boxes, targets=None) -> np.ndarray:
    """Per-point saliency: L2 norm of the detection-loss gradient at each point."""
    grad = loss_gradient(model, cloud, gt_boxes, targets)
    return np.sqrt(np.einsum("ij,ij->i", grad, grad))
