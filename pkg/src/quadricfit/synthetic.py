"""Synthetic benchmark: random scenes, exact projections, perturbation sweeps.

A scene is a set of random ellipsoids inside a cube observed by a camera
trajectory orbiting at fixed distance.  Ground-truth detections are the
exact perspective outlines; controlled errors are then injected per
detection and the estimators are scored against the true ellipsoids.

Three error kinds mimic detector failure modes, each drawn zero-mean
uniform with the given magnitude as boundary:

* TE shifts the ellipse center by (mean semi-axis) * nu per coordinate,
  with independent draws for the horizontal and vertical components;
* RE offsets the orientation angle by nu radians;
* SE rescales both semi-axes by (1 + nu) with a single shared draw, so
  the aspect ratio is preserved.

Everything is reproducible: scenes, perturbations and Monte Carlo
scoring all derive their streams from the scenario seed, keyed by grid
position so parallel and serial sweeps agree bit for bit.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .closed_form import ObjectObservations, build_system, solve_svd
from .errors import InvalidInputError, QuadricFitError
from .geometry import (
    CameraProjection,
    Ellipse2D,
    Ellipsoid3D,
    compose_quadric,
    outline_ellipse,
)
from .metrics import orientation_error, volume_overlap
from .regularized import make_regularized_problem, solve_regularized

PERTURBATION_KINDS = ("TE", "RE", "SE")
METHODS = ("PfD", "PfD+REG")

DEFAULT_INTRINSICS = np.array(
    [[1000.0, 0.0, 640.0], [0.0, 1000.0, 480.0], [0.0, 0.0, 1.0]]
)

# Magnitude grids for the standard sweep.  RE is capped at 45 degrees (a
# box detection cannot misalign by more), TE at 0.3 (a worse detection
# would not be matched to the object at all), SE at 0.5.
DEFAULT_MAGNITUDE_GRIDS = {
    "TE": (0.0, 0.06, 0.12, 0.18, 0.24, 0.3),
    "RE": tuple(float(np.deg2rad(d)) for d in (0.0, 9.0, 18.0, 27.0, 36.0, 45.0)),
    "SE": (0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
}


def _check_range(name: str, rng: Sequence[float], positive: bool = False) -> tuple[float, float]:
    lo, hi = float(rng[0]), float(rng[1])
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise InvalidInputError(f"{name} must be a finite (lo, hi) range, got {rng}")
    if positive and lo <= 0:
        raise InvalidInputError(f"{name} must be positive, got {rng}")
    return lo, hi


@dataclass(frozen=True)
class ScenarioConfig:
    """Scene and trajectory parameters for the synthetic world.

    Ellipsoid centers are uniform inside an axis-aligned cube centered at
    the origin.  The major semi-axis is uniform in ``major_axis_range``;
    the other two are that length times independent draws from
    ``axis_ratio_range``.  Cameras sit on a sphere of radius
    ``camera_distance`` and look at the cube center, sweeping azimuth and
    elevation jointly and evenly across their ranges.
    """

    n_objects: int = 50
    cube_side: float = 20.0
    major_axis_range: tuple[float, float] = (3.0, 12.0)
    axis_ratio_range: tuple[float, float] = (0.3, 1.0)
    n_views: int = 20
    camera_distance: float = 200.0
    azimuth_range_deg: tuple[float, float] = (0.0, 60.0)
    elevation_range_deg: tuple[float, float] = (0.0, 70.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_objects < 1:
            raise InvalidInputError("n_objects must be at least 1")
        if self.n_views < 2:
            raise InvalidInputError("n_views must be at least 2")
        if self.cube_side <= 0 or self.camera_distance <= 0:
            raise InvalidInputError("cube_side and camera_distance must be positive")
        object.__setattr__(
            self, "major_axis_range", _check_range("major_axis_range", self.major_axis_range, True)
        )
        object.__setattr__(
            self, "axis_ratio_range", _check_range("axis_ratio_range", self.axis_ratio_range, True)
        )
        object.__setattr__(
            self, "azimuth_range_deg", _check_range("azimuth_range_deg", self.azimuth_range_deg)
        )
        object.__setattr__(
            self,
            "elevation_range_deg",
            _check_range("elevation_range_deg", self.elevation_range_deg),
        )
        if not isinstance(self.seed, int) or self.seed < 0:
            raise InvalidInputError("seed must be a non-negative integer")


@dataclass(frozen=True)
class PerturbationSpec:
    """One detection-error kind with the boundary of its uniform draw.

    Magnitude units: fraction of the mean semi-axis for TE, radians for
    RE, relative size fraction for SE.  SE must stay below 1 or a draw
    could produce a nonpositive axis.
    """

    kind: str
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise InvalidInputError(
                f"kind must be one of {PERTURBATION_KINDS}, got {self.kind!r}"
            )
        if not math.isfinite(self.magnitude) or self.magnitude < 0:
            raise InvalidInputError(f"magnitude must be finite and >= 0, got {self.magnitude}")
        if self.kind == "SE" and self.magnitude >= 1.0:
            raise InvalidInputError("SE magnitude must be < 1 to keep axes positive")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix uniform over SO(3), via a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def lookat_camera(eye, target=(0.0, 0.0, 0.0), intrinsics=None, frame_id: int = 0) -> CameraProjection:
    """Pinhole camera at ``eye`` looking at ``target`` with +z as world up."""
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    if intrinsics is None:
        intrinsics = DEFAULT_INTRINSICS
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm == 0:
        raise InvalidInputError("camera eye and target coincide")
    z = forward / norm
    x = np.cross([0.0, 0.0, 1.0], z)
    xnorm = np.linalg.norm(x)
    if xnorm < 1e-12:
        raise InvalidInputError("viewing direction parallel to the up axis")
    x = x / xnorm
    y = np.cross(z, x)
    rot = np.stack([x, y, z])
    extrinsics = np.hstack([rot, (-rot @ eye)[:, None]])
    return CameraProjection(np.asarray(intrinsics) @ extrinsics, frame_id=frame_id)


def camera_trajectory(cfg: ScenarioConfig) -> list[CameraProjection]:
    """Evenly spaced joint azimuth/elevation sweep at fixed distance."""
    az_lo, az_hi = (math.radians(a) for a in cfg.azimuth_range_deg)
    el_lo, el_hi = (math.radians(e) for e in cfg.elevation_range_deg)
    cameras = []
    for k in range(cfg.n_views):
        frac = k / (cfg.n_views - 1)
        az = az_lo + (az_hi - az_lo) * frac
        el = el_lo + (el_hi - el_lo) * frac
        eye = cfg.camera_distance * np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
        )
        cameras.append(lookat_camera(eye, frame_id=k))
    return cameras


def generate_scene(
    cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None
) -> tuple[list[Ellipsoid3D], list[CameraProjection]]:
    """Draw the random ellipsoids and build the camera trajectory.

    Passing ``rng`` overrides the config seed (used by sweeps to derive
    per-trial scenes from one root seed).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    half = cfg.cube_side / 2.0
    ellipsoids = []
    for _ in range(cfg.n_objects):
        center = rng.uniform(-half, half, size=3)
        major = rng.uniform(*cfg.major_axis_range)
        ratios = rng.uniform(*cfg.axis_ratio_range, size=2)
        axes = np.array([major, ratios[0] * major, ratios[1] * major])
        ellipsoids.append(Ellipsoid3D.make(center=center, semi_axes=axes, rotation=random_rotation(rng)))
    return ellipsoids, camera_trajectory(cfg)


def project_gt_ellipse(ellipsoid: Ellipsoid3D, camera: CameraProjection) -> Ellipse2D:
    """Exact outline of an ellipsoid in one view."""
    return outline_ellipse(compose_quadric(ellipsoid), camera)


def perturb_ellipse(
    ellipse: Ellipse2D, spec: PerturbationSpec, rng: Optional[np.random.Generator] = None
) -> Ellipse2D:
    """Apply one error kind to a detection; draws come from ``rng``."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    m = spec.magnitude
    if spec.kind == "TE":
        nu = rng.uniform(-m, m, size=2)
        mean_axis = 0.5 * float(ellipse.semi_axes[0] + ellipse.semi_axes[1])
        return Ellipse2D(ellipse.center + mean_axis * nu, ellipse.semi_axes, ellipse.angle)
    if spec.kind == "RE":
        return Ellipse2D(ellipse.center, ellipse.semi_axes, ellipse.angle + rng.uniform(-m, m))
    scale = 1.0 + rng.uniform(-m, m)  # SE: one shared draw keeps the aspect ratio
    return Ellipse2D(ellipse.center, ellipse.semi_axes * scale, ellipse.angle)


@dataclass(frozen=True)
class SweepRow:
    """Aggregate accuracy of one method at one grid point."""

    error_kind: str
    magnitude: float
    method: str
    mean_o3d: float
    mean_theta_err: Optional[float]
    pct_valid_ellipsoids: float
    n_trials: int


@dataclass(frozen=True)
class SweepResult:
    """All grid-point rows of a perturbation sweep."""

    rows: tuple[SweepRow, ...]

    def rows_for(self, kind: Optional[str] = None, method: Optional[str] = None) -> list[SweepRow]:
        return [
            r
            for r in self.rows
            if (kind is None or r.error_kind == kind) and (method is None or r.method == method)
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["error_kind", "magnitude", "method", "mean_o3d", "mean_theta_err", "pct_valid", "n_trials"]
        )
        for r in self.rows:
            writer.writerow(
                [
                    r.error_kind,
                    repr(r.magnitude),
                    r.method,
                    repr(r.mean_o3d),
                    "" if r.mean_theta_err is None else repr(r.mean_theta_err),
                    repr(r.pct_valid_ellipsoids),
                    r.n_trials,
                ]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows]}, indent=2)


def _estimate_object(object_id, detections, cameras, methods, lam):
    """Run the requested methods on one object; failures become invalid."""
    out = {}
    cf = None
    system = None
    try:
        obs = ObjectObservations.from_ellipses(object_id, detections)
        system = build_system(obs, cameras)
        cf = solve_svd(system, object_id=object_id)
    except QuadricFitError:
        pass
    if "PfD" in methods:
        out["PfD"] = cf.ellipsoid if cf is not None else Ellipsoid3D.invalid()
    if "PfD+REG" in methods:
        refined = Ellipsoid3D.invalid()
        if system is not None and cf is not None:
            try:
                prob = make_regularized_problem(system, cf, lam=lam)
                refined = solve_regularized(prob).ellipsoid
            except QuadricFitError:
                pass
        out["PfD+REG"] = refined
    return out


def _sweep_point(cfg, kind, kind_idx, magnitude, mag_idx, methods, trials, mc_samples, lam):
    """Score every method at one (kind, magnitude) grid point.

    RNG streams are keyed by grid position so the result is independent
    of execution order: scenes use (seed, 0, trial), perturbations
    (seed, 1, kind, mag, trial), Monte Carlo scoring appends object and
    method indices.
    """
    spec = PerturbationSpec(kind=kind, magnitude=magnitude)
    stats = {m: {"o3d": 0.0, "theta": [], "valid": 0, "count": 0} for m in methods}
    for trial in range(trials):
        scene_rng = np.random.default_rng([cfg.seed, 0, trial])
        ellipsoids, camera_list = generate_scene(cfg, rng=scene_rng)
        cameras = {c.frame_id: c for c in camera_list}
        perturb_rng = np.random.default_rng([cfg.seed, 1, kind_idx, mag_idx, trial])
        for obj_idx, gt in enumerate(ellipsoids):
            try:
                detections = [
                    (cam.frame_id, perturb_ellipse(project_gt_ellipse(gt, cam), spec, perturb_rng))
                    for cam in camera_list
                ]
                estimates = _estimate_object(f"obj{obj_idx}", detections, cameras, methods, lam)
            except QuadricFitError:
                estimates = {m: Ellipsoid3D.invalid() for m in methods}
            for m_idx, method in enumerate(methods):
                est = estimates[method]
                mc_seed = [cfg.seed, 2, kind_idx, mag_idx, trial, obj_idx, m_idx]
                o3d = volume_overlap(gt, est, samples=mc_samples, seed=mc_seed)
                theta = orientation_error(gt, est)
                tally = stats[method]
                tally["o3d"] += o3d
                tally["count"] += 1
                if est.valid:
                    tally["valid"] += 1
                if theta is not None:
                    tally["theta"].append(theta)
    rows = []
    for method in methods:
        tally = stats[method]
        mean_theta = sum(tally["theta"]) / len(tally["theta"]) if tally["theta"] else None
        rows.append(
            SweepRow(
                error_kind=kind,
                magnitude=float(magnitude),
                method=method,
                mean_o3d=tally["o3d"] / tally["count"],
                mean_theta_err=mean_theta,
                pct_valid_ellipsoids=100.0 * tally["valid"] / tally["count"],
                n_trials=trials,
            )
        )
    return kind_idx, mag_idx, rows


def _sweep_point_star(args):
    return _sweep_point(*args)


def run_sweep(
    cfg: ScenarioConfig = ScenarioConfig(),
    grids: Optional[dict] = None,
    methods: Sequence[str] = METHODS,
    trials: int = 5,
    mc_samples: int = 10_000,
    lam="auto",
    max_workers: Optional[int] = None,
    parallel: bool = True,
) -> SweepResult:
    """Run the full perturbation sweep and aggregate accuracy per grid point.

    ``grids`` maps error kind to its magnitude list (defaults to
    DEFAULT_MAGNITUDE_GRIDS).  Grid points are independent and run in a
    process pool unless ``parallel`` is false; per-object failures are
    recorded as invalid estimates, never aborting the sweep.
    """
    if grids is None:
        grids = DEFAULT_MAGNITUDE_GRIDS
    if trials < 1:
        raise InvalidInputError("trials must be at least 1")
    if mc_samples < 1:
        raise InvalidInputError("mc_samples must be at least 1")
    methods = tuple(methods)
    for method in methods:
        if method not in METHODS:
            raise InvalidInputError(f"unknown method {method!r}; expected one of {METHODS}")
    if not methods:
        raise InvalidInputError("at least one method is required")

    tasks = []
    for kind_idx, (kind, magnitudes) in enumerate(grids.items()):
        for mag_idx, magnitude in enumerate(magnitudes):
            # constructing PerturbationSpec here validates kind and magnitude early
            PerturbationSpec(kind=kind, magnitude=float(magnitude))
            tasks.append(
                (cfg, kind, kind_idx, float(magnitude), mag_idx, methods, trials, mc_samples, lam)
            )

    results = None
    if parallel and len(tasks) > 1:
        try:
            with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as pool:
                results = list(pool.map(_sweep_point_star, tasks))
        except (OSError, PermissionError):
            results = None  # sandboxed environments may forbid subprocesses
    if results is None:
        results = [_sweep_point(*task) for task in tasks]

    results.sort(key=lambda item: (item[0], item[1]))
    rows = tuple(row for _, _, point_rows in results for row in point_rows)
    return SweepResult(rows=rows)
