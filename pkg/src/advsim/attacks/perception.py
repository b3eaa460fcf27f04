"""Point cloud attacks against the surrogate detector.

Three attack families share the same machinery:

* ``perturb_attack``: projected gradient descent on all point coordinates,
  minimizing ``-L_det + lambda * sum_i ||delta_i||^2`` with a normalized
  step and a point-wise L2 ball projection after every update.
* ``detach_attack``: greedy removal of the highest-saliency points, spread
  over several iterations with saliency recomputed on the reduced cloud.
* ``attach_attack``: injects copies of the most salient points and then
  optimizes them like the perturbation, with a Chamfer distance penalty
  keeping the injected points close to the original cloud.

All three are deterministic given their params (the only randomness is the
perturbation init, driven by ``seed``).
"""

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..detector import DetectorModel, anchor_targets, loss_and_gradient, saliency


class AttackParameterError(ValueError):
    """Raised when attack parameters are degenerate for the given cloud."""


@dataclass
class PerturbParams:
    epsilon_m: float
    steps: int = 40
    alpha_m: float | None = None     # defaults to epsilon_m / 30
    lam: float = 0.1                 # weight of the squared-displacement penalty
    seed: int = 0
    per_point_norm: bool = False     # normalize each point's gradient row instead
                                     # of the global Frobenius norm

    def __post_init__(self):
        self.epsilon_m = float(self.epsilon_m)
        if self.epsilon_m < 0:
            raise AttackParameterError("epsilon_m must be >= 0")
        if self.steps < 0:
            raise AttackParameterError("steps must be >= 0")
        if self.alpha_m is not None and self.alpha_m <= 0:
            raise AttackParameterError("alpha_m must be positive")
        if self.lam < 0:
            raise AttackParameterError("lambda must be >= 0")

    @property
    def alpha(self) -> float:
        return self.alpha_m if self.alpha_m is not None else self.epsilon_m / 30.0


@dataclass
class DetachParams:
    drop_ratio: float
    iterations: int = 10
    seed: int = 0                    # accepted for interface symmetry; the greedy
                                     # selection is deterministic and ignores it

    def __post_init__(self):
        self.drop_ratio = float(self.drop_ratio)
        if not 0.0 < self.drop_ratio < 1.0:
            raise AttackParameterError("drop_ratio must be in (0, 1)")
        if self.iterations < 1:
            raise AttackParameterError("iterations must be >= 1")


@dataclass
class AttachParams:
    epsilon_m: float
    k: int = 300
    steps: int = 40
    alpha_m: float | None = None
    lambda_chamfer: float = 1.0
    seed: int = 0
    per_point_norm: bool = False     # same meaning as for the perturbation

    def __post_init__(self):
        self.epsilon_m = float(self.epsilon_m)
        if self.epsilon_m < 0:
            raise AttackParameterError("epsilon_m must be >= 0")
        if self.k < 1:
            raise AttackParameterError("k must be >= 1")
        if self.steps < 0:
            raise AttackParameterError("steps must be >= 0")
        if self.alpha_m is not None and self.alpha_m <= 0:
            raise AttackParameterError("alpha_m must be positive")
        if self.lambda_chamfer < 0:
            raise AttackParameterError("lambda_chamfer must be >= 0")

    @property
    def alpha(self) -> float:
        return self.alpha_m if self.alpha_m is not None else self.epsilon_m / 30.0


@dataclass
class Perturbation:
    """Result of a point cloud attack.

    ``indices`` are the affected point indices: all points for the
    perturbation, removed original indices for detachment, and the row
    positions of injected points for attachment. ``deltas`` holds the
    per-affected-point displacement where that is meaningful.
    """

    cloud: np.ndarray
    indices: np.ndarray
    deltas: np.ndarray | None = None
    trace: list = field(default_factory=list)


def clip_to_ball(deltas: np.ndarray, epsilon: float) -> np.ndarray:
    """Project each row onto the L2 ball of radius epsilon."""
    deltas = np.asarray(deltas, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", deltas, deltas))
    scale = np.ones_like(norms)
    over = norms > epsilon
    scale[over] = epsilon / norms[over]
    return deltas * scale[:, None]


def _normalized(g: np.ndarray, per_point: bool) -> np.ndarray | None:
    """Gradient direction for the PGD step, or None when it vanishes."""
    if per_point:
        norms = np.sqrt(np.einsum("ij,ij->i", g, g))
        if not np.any(norms > 0.0):
            return None
        out = np.zeros_like(g)
        nz = norms > 0.0
        out[nz] = g[nz] / norms[nz, None]
        return out
    norm = np.sqrt(np.sum(g * g))
    if norm <= 0.0:
        return None
    return g / norm


def perturb_attack(model: DetectorModel, cloud, gt_boxes, params: PerturbParams) -> Perturbation:
    """PGD perturbation of every point within a per-point epsilon ball."""
    p = np.asarray(cloud, dtype=np.float64).copy()
    n = p.shape[0]
    indices = np.arange(n)
    if n == 0 or params.steps == 0 or params.epsilon_m == 0.0:
        return Perturbation(p, indices, np.zeros_like(p))
    rng = np.random.default_rng(params.seed)
    delta = rng.uniform(-params.epsilon_m, params.epsilon_m, size=p.shape)
    targets = anchor_targets(model, gt_boxes)
    trace = []
    for step in range(params.steps):
        det_loss, det_grad = loss_and_gradient(model, p + delta, gt_boxes, targets)
        loss = -det_loss + params.lam * float(np.sum(delta * delta))
        g = -det_grad + 2.0 * params.lam * delta
        direction = _normalized(g, params.per_point_norm)
        trace.append({"step": step, "loss": loss, "det_loss": det_loss})
        if direction is None:
            break
        delta = clip_to_ball(delta - params.alpha * direction, params.epsilon_m)
    delta = clip_to_ball(delta, params.epsilon_m)
    return Perturbation(p + delta, indices, delta, trace)


def detach_attack(model: DetectorModel, cloud, gt_boxes, params: DetachParams) -> Perturbation:
    """Remove the floor(N * drop_ratio) most salient points over several rounds.

    The budget splits as evenly as possible across iterations, earlier
    iterations taking the remainder. Saliency ties resolve to the lower
    original index.
    """
    p = np.asarray(cloud, dtype=np.float64).copy()
    n = p.shape[0]
    m = int(np.floor(n * params.drop_ratio))
    if m < 1:
        raise AttackParameterError(
            f"drop_ratio {params.drop_ratio} removes zero of {n} points"
        )
    base, extra = divmod(m, params.iterations)
    chunks = [base + 1] * extra + [base] * (params.iterations - extra)
    targets = anchor_targets(model, gt_boxes)
    original = np.arange(n)
    removed = []
    for size in chunks:
        if size == 0:
            continue
        s = saliency(model, p, gt_boxes, targets)
        order = np.lexsort((original, -s))
        drop = order[:size]
        removed.extend(int(original[i]) for i in drop)
        keep = np.ones(p.shape[0], dtype=bool)
        keep[drop] = False
        p = p[keep]
        original = original[keep]
    return Perturbation(p, np.array(removed, dtype=np.intp))


def attach_attack(model: DetectorModel, cloud, gt_boxes, params: AttachParams) -> Perturbation:
    """Inject k optimized points initialized from the most salient originals.

    The injected set starts as copies of the top-k salient points and is
    optimized to raise detection loss while a Chamfer penalty (and a hard
    epsilon ball around each start position) keeps it near the cloud.
    """
    p = np.ascontiguousarray(np.asarray(cloud, dtype=np.float64))
    n = p.shape[0]
    if params.k > n:
        raise AttackParameterError(f"cannot seed {params.k} points from a cloud of {n}")
    targets = anchor_targets(model, gt_boxes)
    s = saliency(model, p, gt_boxes, targets)
    seed_rows = np.lexsort((np.arange(n), -s))[: params.k]
    z0 = p[seed_rows].copy()
    z = z0.copy()
    total = n + params.k
    trace = []
    for step in range(params.steps):
        full = np.vstack([p, z])
        det_loss, det_grad = loss_and_gradient(model, full, gt_boxes, targets)
        d2, nn = kernels.nearest_sq(np.ascontiguousarray(z), p)
        chamfer = float(np.sum(d2)) / total
        loss = -det_loss + params.lambda_chamfer * chamfer
        g = -det_grad[n:] + params.lambda_chamfer * (2.0 / total) * (z - p[nn])
        direction = _normalized(g, params.per_point_norm)
        trace.append({"step": step, "loss": loss, "det_loss": det_loss, "chamfer": chamfer})
        if direction is None:
            break
        z = z0 + clip_to_ball(z - params.alpha * direction - z0, params.epsilon_m)
    adv = np.vstack([p, z])
    return Perturbation(adv, np.arange(n, total), z - z0, trace)
