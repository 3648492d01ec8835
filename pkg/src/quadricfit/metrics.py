"""Evaluation metrics for recovered ellipsoids.

Volume overlap between a ground-truth and an estimated ellipsoid has no
closed form for general pairs, so it is estimated by Monte Carlo sampling
inside the axis-aligned bounding box of the union.  Orientation error is
the angle between undirected major axes.  Centroid success counts objects
whose recovered center lies within given distances of the truth.

All randomness is driven by explicit seeds so results are reproducible;
per-object evaluation seeds the sampler with (global seed, object index)
so serial and parallel runs agree bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import Ellipsoid3D

DEFAULT_MC_SAMPLES = 100_000
# Top semi-axes closer than this (relative) are both treated as "major"
# when measuring orientation error; the direction is unstable otherwise.
MAJOR_AXIS_TIE_REL = 0.01


def ellipsoid_aabb(ellipsoid: Ellipsoid3D) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounding box of a valid ellipsoid as (lo, hi) corners.

    The half-extent along world axis k is sqrt(sum_j R[k,j]^2 a_j^2).
    """
    if not ellipsoid.valid:
        raise InvalidInputError("bounding box requires a valid ellipsoid")
    half = np.sqrt((ellipsoid.rotation**2) @ (ellipsoid.semi_axes**2))
    return ellipsoid.center - half, ellipsoid.center + half


def _contains(ellipsoid: Ellipsoid3D, points: np.ndarray) -> np.ndarray:
    # Membership test in the ellipsoid's own frame: ||diag(1/a) R^T (x-c)|| <= 1.
    local = (points - ellipsoid.center) @ ellipsoid.rotation
    scaled = local / ellipsoid.semi_axes
    return np.einsum("ij,ij->i", scaled, scaled) <= 1.0


@dataclass(frozen=True)
class OverlapEstimate:
    """Monte Carlo intersection-over-union estimate with its standard error.

    ``union_hits`` is the number of samples that landed inside the union;
    the binomial standard error is computed on those hits.  Short-circuited
    cases (invalid estimate, disjoint bounding boxes) report zero samples.
    """

    value: float
    stderr: float
    samples: int
    union_hits: int


def volume_overlap_detail(
    gt: Ellipsoid3D,
    est: Ellipsoid3D,
    samples: int = DEFAULT_MC_SAMPLES,
    seed=0,
) -> OverlapEstimate:
    """Estimate vol(gt ∩ est) / vol(gt ∪ est) by uniform box sampling.

    An invalid estimate scores exactly 0.  Pairs whose bounding boxes are
    disjoint also score exactly 0 without drawing any samples.  ``seed``
    is anything ``numpy.random.default_rng`` accepts.
    """
    if not gt.valid:
        raise InvalidInputError("volume overlap requires a valid ground-truth ellipsoid")
    if not est.valid:
        return OverlapEstimate(0.0, 0.0, 0, 0)
    if samples <= 0:
        raise InvalidInputError("samples must be positive")

    lo_gt, hi_gt = ellipsoid_aabb(gt)
    lo_est, hi_est = ellipsoid_aabb(est)
    if np.any(lo_gt > hi_est) or np.any(lo_est > hi_gt):
        return OverlapEstimate(0.0, 0.0, 0, 0)

    lo = np.minimum(lo_gt, lo_est)
    hi = np.maximum(hi_gt, hi_est)
    rng = np.random.default_rng(seed)
    points = rng.uniform(lo, hi, size=(samples, 3))

    in_gt = _contains(gt, points)
    in_est = _contains(est, points)
    union_hits = int(np.count_nonzero(in_gt | in_est))
    inter_hits = int(np.count_nonzero(in_gt & in_est))
    if union_hits == 0:
        # Box sampling missed both bodies entirely; only conceivable for
        # pathological aspect ratios with tiny sample counts.
        return OverlapEstimate(0.0, math.nan, samples, 0)
    value = inter_hits / union_hits
    stderr = math.sqrt(max(value * (1.0 - value), 0.0) / union_hits)
    return OverlapEstimate(value, stderr, samples, union_hits)


def volume_overlap(
    gt: Ellipsoid3D,
    est: Ellipsoid3D,
    samples: int = DEFAULT_MC_SAMPLES,
    seed=0,
) -> float:
    """Intersection-over-union volume ratio in [0, 1]; 0 for invalid estimates."""
    return volume_overlap_detail(gt, est, samples=samples, seed=seed).value


def _major_axis_candidates(ellipsoid: Ellipsoid3D) -> np.ndarray:
    axes = ellipsoid.semi_axes
    keep = axes >= axes[0] * (1.0 - MAJOR_AXIS_TIE_REL)
    return ellipsoid.rotation[:, keep]


def orientation_error(gt: Ellipsoid3D, est: Ellipsoid3D) -> Optional[float]:
    """Angle in [0, pi/2] between undirected major axes, or None.

    Returns None when the estimate is not a real ellipsoid.  When an
    ellipsoid is nearly rotationally symmetric (top semi-axes within 1%)
    every near-major axis is a candidate and the smallest angle over
    candidate pairs is reported.
    """
    if not gt.valid:
        raise InvalidInputError("orientation error requires a valid ground-truth ellipsoid")
    if not est.valid:
        return None
    u = _major_axis_candidates(gt)
    v = _major_axis_candidates(est)
    cosines = np.abs(u.T @ v)
    best = float(np.max(cosines))
    return math.acos(min(best, 1.0))


def centroid_success(
    distances: Sequence[Optional[float]],
    thresholds: Sequence[float],
) -> tuple[float, ...]:
    """Percentage of centers within each threshold distance.

    ``None`` (or non-finite) entries stand for objects with no recoverable
    center and count as failures at every threshold.  An empty input yields
    0% everywhere.
    """
    total = len(distances)
    if total == 0:
        return tuple(0.0 for _ in thresholds)
    out = []
    for threshold in thresholds:
        hits = sum(
            1
            for d in distances
            if d is not None and math.isfinite(d) and d <= threshold
        )
        out.append(100.0 * hits / total)
    return tuple(out)


@dataclass(frozen=True)
class ObjectEval:
    """Per-object evaluation row."""

    object_id: str
    o3d: float
    theta_err: Optional[float]
    center_dist: Optional[float]
    valid: bool


@dataclass(frozen=True)
class EvalReport:
    """Per-object metrics plus the aggregates used in result tables.

    Invalid estimates contribute 0 to the overlap mean (they score zero
    volume overlap by definition) but are left out of the orientation-error
    mean, which has no value for them.
    """

    objects: tuple[ObjectEval, ...]
    thresholds: tuple[float, ...]

    @property
    def mean_o3d(self) -> float:
        if not self.objects:
            return 0.0
        return sum(o.o3d for o in self.objects) / len(self.objects)

    @property
    def mean_theta_err(self) -> Optional[float]:
        values = [o.theta_err for o in self.objects if o.theta_err is not None]
        if not values:
            return None
        return sum(values) / len(values)

    @property
    def pct_within(self) -> tuple[float, ...]:
        distances = [o.center_dist for o in self.objects]
        return centroid_success(distances, self.thresholds)

    def to_json(self) -> str:
        payload = {
            "objects": [
                {
                    "object_id": o.object_id,
                    "o3d": o.o3d,
                    "theta_err": o.theta_err,
                    "center_dist": o.center_dist,
                    "valid": o.valid,
                }
                for o in self.objects
            ],
            "aggregates": {
                "mean_o3d": self.mean_o3d,
                "mean_theta_err": self.mean_theta_err,
                "pct_within": [
                    {"threshold": t, "pct": p}
                    for t, p in zip(self.thresholds, self.pct_within)
                ],
            },
        }
        return json.dumps(payload, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["object_id", "o3d", "theta_err", "center_dist", "valid"])
        for o in self.objects:
            writer.writerow(
                [
                    o.object_id,
                    repr(o.o3d),
                    "" if o.theta_err is None else repr(o.theta_err),
                    "" if o.center_dist is None else repr(o.center_dist),
                    "true" if o.valid else "false",
                ]
            )
        return buf.getvalue()


def evaluate(
    gt_ellipsoids: Sequence[Ellipsoid3D],
    est_ellipsoids: Sequence[Ellipsoid3D],
    object_ids: Optional[Sequence[str]] = None,
    samples: int = DEFAULT_MC_SAMPLES,
    seed: int = 0,
    thresholds: Sequence[float] = (1.0, 2.0),
) -> EvalReport:
    """Evaluate estimated ellipsoids against ground truth, pairing by index.

    Each pair gets its own sampling stream seeded by (seed, index), so the
    report does not depend on evaluation order.  Estimates that are not
    real ellipsoids may still carry a center; their center distance is
    reported when available and missing otherwise.
    """
    if len(gt_ellipsoids) != len(est_ellipsoids):
        raise InvalidInputError("ground-truth and estimate lists differ in length")
    if object_ids is None:
        object_ids = [str(i) for i in range(len(gt_ellipsoids))]
    elif len(object_ids) != len(gt_ellipsoids):
        raise InvalidInputError("object_ids does not match the number of objects")

    rows = []
    for index, (gt, est) in enumerate(zip(gt_ellipsoids, est_ellipsoids)):
        o3d = volume_overlap(gt, est, samples=samples, seed=[seed, index])
        theta = orientation_error(gt, est)
        if est.center is None:
            center_dist = None
        else:
            center_dist = float(np.linalg.norm(gt.center - est.center))
        rows.append(
            ObjectEval(
                object_id=str(object_ids[index]),
                o3d=o3d,
                theta_err=theta,
                center_dist=center_dist,
                valid=est.valid,
            )
        )
    return EvalReport(objects=tuple(rows), thresholds=tuple(float(t) for t in thresholds))
