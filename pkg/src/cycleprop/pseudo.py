"""Class-specific 3D pseudo-labels for images that only carry 2D annotations.

Class-agnostic 3D predictions are paired with the annotated 2D boxes through
their projected footprints: a minimum-cost bipartite matching on ``1 - IoU``
solved with the Hungarian algorithm. Each matched pair inherits the annotated
category and the predicted 3D box.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .boxes import Box2D, Box3D, Detection, Source, iou_2d, project_box3d_to_2d, wrap_angle
from .geom import CameraModel

PAD_COST = 10.0
DEFAULT_MAX_COST = 0.75


class Branch(str, enum.Enum):
    PRIMARY = "primary"
    NOISY = "noisy"


@dataclass(frozen=True)
class AgnosticPrediction:
    box3d: Box3D
    box2d: Box2D
    score: float = 1.0
    # index of the ground-truth box a simulated prediction was derived from
    origin: Optional[int] = None

    def to_record(self) -> dict:
        return {"box3d": self.box3d.as_list(), "box2d": self.box2d.as_list(), "score": float(self.score)}

    @classmethod
    def from_record(cls, rec: dict) -> AgnosticPrediction:
        return cls(Box3D.from_list(rec["box3d"]), Box2D(*map(float, rec["box2d"])), float(rec.get("score", 1.0)))


@dataclass(frozen=True)
class PseudoLabel:
    class_id: int
    box2d: Box2D
    box3d: Box3D
    match_iou: float
    branch: Branch = Branch.NOISY
    pred_index: int = -1

    def to_record(self) -> dict:
        # the detection record schema plus the routing tag
        rec = Detection(self.box3d, self.class_id, 1.0, Source.PSEUDO, self.box2d).to_record()
        rec["branch"] = Branch(self.branch).value
        rec["match_iou"] = float(self.match_iou)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> PseudoLabel:
        return cls(
            class_id=int(rec["class_id"]),
            box2d=Box2D(*map(float, rec["box2d"])),
            box3d=Box3D.from_list(rec["box3d"]),
            match_iou=float(rec["match_iou"]),
            branch=Branch(rec.get("branch", "noisy")),
        )


@dataclass
class PseudoLabelResult:
    labels: list = field(default_factory=list)
    unmatched: list = field(default_factory=list)  # ground-truth row indices


def build_cost_matrix(gt2d: Sequence[Box2D], preds: Sequence[AgnosticPrediction]) -> np.ndarray:
    """``cost[i, j] = 1 - IoU(gt2d[i], preds[j].box2d)``."""
    cost = np.empty((len(gt2d), len(preds)))
    for i, g in enumerate(gt2d):
        for j, p in enumerate(preds):
            cost[i, j] = 1.0 - iou_2d(g, p.box2d)
    return cost


def _solve_square(a: np.ndarray):
    """Shortest-augmenting-path Hungarian method on a square matrix.

    Returns ``(row_to_col, u, v)`` where ``u``/``v`` are optimal dual
    potentials: ``a[i, j] - u[i] - v[j] >= 0`` everywhere, with equality on
    the returned assignment.
    """
    n = a.shape[0]
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row (1-based) matched to column j
    way = [0] * (n + 1)
    rows = a.tolist()
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            row = rows[i0 - 1]
            ui0 = u[i0]
            delta, j1 = INF, 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = [0] * n
    for j in range(1, n + 1):
        row_to_col[p[j] - 1] = j - 1
    return row_to_col, np.array(u[1:]), np.array(v[1:])


def _lexicographic_min(match: list, tight: list) -> list:
    """Lexicographically smallest perfect matching of the tight-edge graph.

    ``match`` is some perfect matching using only tight edges; ``tight[i]`` is
    the sorted list of columns tight for row ``i``.
    """
    n = len(match)
    owner = [0] * n
    for r, c in enumerate(match):
        owner[c] = r
    col_fixed = [False] * n

    def augment(r, target, banned, seen):
        # move row r off its column toward the free column `target`
        for c in tight[r]:
            if col_fixed[c] or c == banned or seen[c]:
                continue
            seen[c] = True
            if c == target or augment(owner[c], target, banned, seen):
                match[r] = c
                owner[c] = r
                return True
        return False

    for i in range(n):
        for j in tight[i]:
            if col_fixed[j]:
                continue
            if match[i] == j:
                break
            freed = match[i]
            r = owner[j]
            seen = [False] * n
            seen[j] = True
            saved_match, saved_owner = match[:], owner[:]
            if augment(r, freed, j, seen):
                match[i] = j
                owner[j] = i
                break
            match[:], owner[:] = saved_match, saved_owner
        col_fixed[match[i]] = True
    return match


def hungarian(cost, pad_cost: float = PAD_COST) -> np.ndarray:
    """Minimum-cost one-to-one assignment.

    Parameters
    ----------
    cost : (M, N) array
        Finite costs; rectangular matrices are padded to square with
        ``pad_cost``.

    Returns
    -------
    (M,) int array
        Column assigned to each row, ``-1`` where the row is left unassigned
        (only when ``M > N``). Among optimal assignments the lexicographically
        smallest column sequence is returned.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2D matrix")
    m, n = cost.shape
    if m == 0 or n == 0:
        return np.full(m, -1, dtype=int)
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix has non-finite entries")
    size = max(m, n)
    a = np.full((size, size), float(pad_cost))
    a[:m, :n] = cost
    match, u, v = _solve_square(a)
    reduced = a - u[:, None] - v[None, :]
    tol = 1e-12 * size * max(1.0, float(np.abs(a).max()))
    tight = [[int(c) for c in np.flatnonzero(reduced[i] <= tol)] for i in range(size)]
    for i, c in enumerate(match):
        if c not in tight[i]:
            tight[i] = sorted(tight[i] + [c])
    match = _lexicographic_min(list(match), tight)
    out = np.array(match[:m], dtype=int)
    out[out >= n] = -1
    return out


def make_pseudo_labels(
    gt: Sequence[tuple[int, Box2D]],
    preds: Sequence[AgnosticPrediction],
    max_cost: float = DEFAULT_MAX_COST,
    pad_cost: float = PAD_COST,
) -> PseudoLabelResult:
    """Assign annotated categories to class-agnostic 3D predictions.

    Pairs whose cost exceeds ``max_cost`` (IoU below ``1 - max_cost``) are
    discarded; their ground-truth rows, and rows left without a partner, are
    listed in ``unmatched``. Every label is tagged for the noisy branch.
    """
    result = PseudoLabelResult()
    if not gt:
        return result
    if not preds:
        result.unmatched = list(range(len(gt)))
        return result
    boxes = [b for _, b in gt]
    cost = build_cost_matrix(boxes, preds)
    assign = hungarian(cost, pad_cost)
    for i, j in enumerate(assign):
        if j < 0:
            result.unmatched.append(i)
            continue
        iou = iou_2d(boxes[i], preds[j].box2d)
        if cost[i, j] > max_cost or iou < 1.0 - max_cost:
            result.unmatched.append(i)
            continue
        result.labels.append(
            PseudoLabel(
                class_id=int(gt[i][0]),
                box2d=boxes[i],
                box3d=preds[j].box3d,
                match_iou=iou,
                branch=Branch.NOISY,
                pred_index=int(j),
            )
        )
    return result


@dataclass(frozen=True)
class NoiseSpec:
    """Perturbations applied when simulating a class-agnostic detector.

    ``center_sigma`` and ``yaw_sigma`` are absolute standard deviations in
    metres and radians; ``size_sigma`` is the standard deviation of a
    log-normal scale factor. ``spurious_rate`` is the expected number of
    extra boxes per ground-truth box.
    """

    center_sigma: float = 0.0
    size_sigma: float = 0.0
    yaw_sigma: float = 0.0
    drop_prob: float = 0.0
    spurious_rate: float = 0.0
    spurious_size: tuple = (0.3, 1.5)
    max_spurious_tries: int = 50

    def __post_init__(self):
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")
        if min(self.center_sigma, self.size_sigma, self.yaw_sigma, self.spurious_rate) < 0:
            raise ValueError("noise levels must be non-negative")


def perturb_box(box: Box3D, noise: NoiseSpec, rng: np.random.Generator) -> Box3D:
    """Jitter centre, sizes and yaw; draws the same number of variates whatever the noise levels."""
    c = rng.normal(0.0, 1.0, 3)
    sz = rng.normal(0.0, 1.0, 3)
    dyaw = rng.normal()
    vals = box.as_list()
    if noise.center_sigma > 0:
        vals[0:3] = [vals[k] + noise.center_sigma * c[k] for k in range(3)]
    if noise.size_sigma > 0:
        vals[3:6] = [vals[3 + k] * math.exp(noise.size_sigma * sz[k]) for k in range(3)]
    if noise.yaw_sigma > 0:
        vals[6] = wrap_angle(vals[6] + noise.yaw_sigma * dyaw)
    return Box3D(*vals)


def simulate_agnostic_predictions(
    gt_boxes: Sequence[Box3D], camera: CameraModel, noise: NoiseSpec = NoiseSpec(), rng_seed=0
) -> list:
    """Stand-in for a class-agnostic 3D detector.

    Each ground-truth box is dropped with ``noise.drop_prob`` or perturbed,
    then a binomial number of spurious boxes is scattered over the region
    spanned by the ground truth. Footprints come from
    :func:`project_box3d_to_2d`; boxes without a valid footprint are not
    emitted. The random stream depends only on ``rng_seed``.
    """
    rng = np.random.default_rng(rng_seed)
    preds = []
    for k, box in enumerate(gt_boxes):
        dropped = rng.random() < noise.drop_prob
        pbox = perturb_box(box, noise, rng)
        score = float(rng.uniform(0.5, 1.0))
        if dropped:
            continue
        fp, ok = project_box3d_to_2d(pbox, camera)
        if ok:
            preds.append(AgnosticPrediction(pbox, fp, score, origin=k))
    n_spurious = int(rng.binomial(len(gt_boxes), min(noise.spurious_rate, 1.0))) if gt_boxes else 0
    if n_spurious:
        centers = np.array([b.center for b in gt_boxes])
        lo, hi = centers.min(axis=0) - 1.0, centers.max(axis=0) + 1.0
        lo_s, hi_s = noise.spurious_size
        for _ in range(n_spurious):
            for _ in range(noise.max_spurious_tries):
                ctr = rng.uniform(lo, hi)
                size = rng.uniform(lo_s, hi_s, 3)
                box = Box3D(*ctr, *size, rng.uniform(-math.pi, math.pi))
                fp, ok = project_box3d_to_2d(box, camera)
                if ok:
                    preds.append(AgnosticPrediction(box, fp, float(rng.uniform(0.05, 0.5))))
                    break
    return preds
