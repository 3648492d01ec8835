"""Sphere-regularized nonlinear refinement of the closed-form fit (PfD+REG).

The unknowns are the dual quadric vector, the per-frame scales and a dual
sphere s = (t1, t2, t3, a, b), jointly minimizing

    || M w_hat ||^2  +  lambda * || v_hat - vech(S*(s)) ||^2

where v_hat is the dual quadric vech pinned to -1 in its last element (so
the trivial zero solution is excluded without a norm constraint) and

    S*(s) = [[a I - b t t^T, -b t], [-b t^T, -b]].

The pull toward a sphere keeps the estimate inside the ellipsoid manifold
when data is weak (few views, noisy boxes).  Positivity of a and b is
enforced by optimizing their logarithms.  Optimization is a small damped
Gauss-Newton loop with an analytic Jacobian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .closed_form import (
    DET_TOL,
    ClosedFormSolution,
    ObjectObservations,
    StackedSystem,
    build_system,
    primal_from_dual,
    solve_svd,
)
from .errors import (
    InitializationError,
    InvalidInputError,
    NoFiniteCenterError,
    NormalizationError,
)
from .geometry import (
    CameraProjection,
    DualQuadric,
    Ellipsoid3D,
    Quadric,
    decompose_quadric,
    quadric_center,
    sign_normalized,
    vech,
    vech_inv,
)

#: lambda = AUTO_LAMBDA_FACTOR * sigma_max(M)^2 when requested as "auto".
AUTO_LAMBDA_FACTOR = 0.01


@dataclass(frozen=True, eq=False)
class SphereParams:
    """Dual-sphere parameters (t1, t2, t3, a, b), a and b strictly positive."""

    center: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        c = np.array(self.center, dtype=float)
        if c.shape != (3,) or not np.all(np.isfinite(c)):
            raise InvalidInputError(f"sphere center must be a finite 3-vector, got {c}")
        object.__setattr__(self, "center", c)
        for name, val in (("a", self.a), ("b", self.b)):
            if not (math.isfinite(val) and val > 0):
                raise InvalidInputError(f"sphere parameter {name} must be positive, got {val}")


def sphere_dual(s: SphereParams) -> DualQuadric:
    """Dual quadric T diag(a,a,a,-b) T^T of the sphere parametrized by s."""
    t = s.center
    m = np.empty((4, 4))
    m[:3, :3] = s.a * np.eye(3) - s.b * np.outer(t, t)
    m[:3, 3] = -s.b * t
    m[3, :3] = -s.b * t
    m[3, 3] = -s.b
    return DualQuadric(m)


def _sphere_vech(t: np.ndarray, a: float, b: float) -> np.ndarray:
    t1, t2, t3 = t
    return np.array(
        [
            a - b * t1 * t1,
            -b * t1 * t2,
            -b * t1 * t3,
            -b * t1,
            a - b * t2 * t2,
            -b * t2 * t3,
            -b * t2,
            a - b * t3 * t3,
            -b * t3,
            -b,
        ]
    )


def _sphere_vech_jacobian(t: np.ndarray, a: float, b: float) -> np.ndarray:
    """10x5 partials of vech(S*(s)) w.r.t. (t1, t2, t3, a, b)."""
    t1, t2, t3 = t
    j = np.zeros((10, 5))
    j[:, 0] = [-2 * b * t1, -b * t2, -b * t3, -b, 0, 0, 0, 0, 0, 0]
    j[:, 1] = [0, -b * t1, 0, 0, -2 * b * t2, -b * t3, -b, 0, 0, 0]
    j[:, 2] = [0, 0, -b * t1, 0, 0, -b * t2, 0, -2 * b * t3, -b, 0]
    j[:, 3] = [1, 0, 0, 0, 1, 0, 0, 1, 0, 0]
    j[:, 4] = [-t1 * t1, -t1 * t2, -t1 * t3, -t1, -t2 * t2, -t2 * t3, -t2, -t3 * t3, -t3, -1]
    return j


def normalize_dual_vector(v: np.ndarray) -> np.ndarray:
    """Scale a dual-quadric vech so its last element equals -1.

    Raises:
        NormalizationError: the tenth element is (numerically) zero, so no
            scale can pin it.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (10,):
        raise InvalidInputError(f"dual vector must have 10 elements, got shape {v.shape}")
    if abs(v[9]) <= 1e-12 * np.linalg.norm(v):
        raise NormalizationError("tenth dual element is ~0; cannot normalize")
    return v / (-v[9])


def regularizer(v_hat: np.ndarray, s: SphereParams) -> float:
    """Squared distance between a normalized dual vector and the dual sphere."""
    v_hat = np.asarray(v_hat, dtype=float)
    if v_hat.shape != (10,):
        raise InvalidInputError(f"dual vector must have 10 elements, got shape {v_hat.shape}")
    if v_hat[9] >= -1e-12:
        raise NormalizationError(
            f"dual vector tenth element must be negative (got {v_hat[9]}); normalize first"
        )
    d = v_hat - _sphere_vech(s.center, s.a, s.b)
    return float(d @ d)


def initialize(cf: ClosedFormSolution) -> tuple[np.ndarray, np.ndarray, SphereParams]:
    """Volume-matched sphere start from a closed-form solution.

    The sphere has the primal's center and the radius of the equal-volume
    ball: a0 = |e1 e2 e3|^(-1/3) with e the primal 3x3 eigenvalues divided
    by minus the centered constant, b0 = 1.  The moduli make the start
    feasible even when the closed-form primal is not an ellipsoid.

    Returns (v_hat0, beta0, s0).
    """
    if cf.primal is None:
        raise InitializationError("closed-form solution has no primal quadric")
    q = cf.primal.matrix
    try:
        t0 = quadric_center(q)
    except NoFiniteCenterError as e:
        raise InitializationError(str(e)) from e
    cbar = q[3, 3] + q[:3, 3] @ t0
    if cbar == 0.0:
        raise InitializationError("centered constant is zero; no scale-free eigenvalues")
    e = np.linalg.eigvalsh(q[:3, :3]) / (-cbar)
    prod = abs(float(np.prod(e)))
    if prod == 0.0:
        raise InitializationError("zero normalized eigenvalue; cannot volume-match a sphere")
    s0 = SphereParams(center=t0, a=prod ** (-1.0 / 3.0), b=1.0)
    v0 = _sphere_vech(s0.center, s0.a, s0.b)

    v_tilde = vech(cf.dual_quadric.matrix)
    if abs(v_tilde[9]) <= 1e-12 * np.linalg.norm(v_tilde):
        raise InitializationError("closed-form dual has ~0 tenth element; betas not scalable")
    beta0 = cf.betas_internal / (-v_tilde[9])
    return v0, beta0, s0


@dataclass(frozen=True, eq=False)
class RegularizedProblem:
    """Frozen problem data: stacked system, weight and packed start point.

    Parameter packing: x = [v_free (9), beta (F), t (3), log a, log b];
    the tenth dual element is pinned at -1 and never optimized.
    """

    system: StackedSystem
    lam: float
    x0: np.ndarray
    closed_form: ClosedFormSolution

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise InvalidInputError(f"lambda must be finite and >= 0, got {self.lam}")

    @property
    def n_frames(self) -> int:
        return self.system.n_frames


def pack_parameters(v_hat: np.ndarray, betas: np.ndarray, s: SphereParams) -> np.ndarray:
    x = np.empty(9 + betas.size + 5)
    x[:9] = v_hat[:9]
    x[9 : 9 + betas.size] = betas
    x[9 + betas.size : 12 + betas.size] = s.center
    x[12 + betas.size] = math.log(s.a)
    x[13 + betas.size] = math.log(s.b)
    return x


def unpack_parameters(x: np.ndarray, n_frames: int) -> tuple[np.ndarray, np.ndarray, SphereParams]:
    v_hat = np.empty(10)
    v_hat[:9] = x[:9]
    v_hat[9] = -1.0
    betas = x[9 : 9 + n_frames].copy()
    t = x[9 + n_frames : 12 + n_frames]
    s = SphereParams(center=t, a=math.exp(x[12 + n_frames]), b=math.exp(x[13 + n_frames]))
    return v_hat, betas, s


def make_regularized_problem(
    system: StackedSystem,
    cf: ClosedFormSolution | None = None,
    lam: float | str = "auto",
) -> RegularizedProblem:
    """Bundle system, weight and sphere initialization into a problem.

    lam="auto" uses AUTO_LAMBDA_FACTOR times the squared largest singular
    value of M, tying the pull strength to the data term's scale.
    """
    if cf is None:
        cf = solve_svd(system)
    if lam == "auto":
        sigma1 = np.linalg.norm(system.matrix, ord=2)
        lam_value = AUTO_LAMBDA_FACTOR * sigma1**2
    else:
        lam_value = float(lam)
    v0, beta0, s0 = initialize(cf)
    return RegularizedProblem(
        system=system, lam=lam_value, x0=pack_parameters(v0, beta0, s0), closed_form=cf
    )


def residual_vector(prob: RegularizedProblem, x: np.ndarray) -> np.ndarray:
    """Stacked residual [M w_hat; sqrt(lam) (v_hat - vech(S*(s)))]."""
    n = prob.n_frames
    v_hat, betas, s = unpack_parameters(x, n)
    w = np.concatenate([v_hat, betas])
    r = np.empty(6 * n + 10)
    r[: 6 * n] = prob.system.matrix @ w
    r[6 * n :] = math.sqrt(prob.lam) * (v_hat - _sphere_vech(s.center, s.a, s.b))
    return r


def residual_jacobian(prob: RegularizedProblem, x: np.ndarray) -> np.ndarray:
    """Analytic Jacobian of residual_vector w.r.t. the packed parameters."""
    n = prob.n_frames
    _, _, s = unpack_parameters(x, n)
    m = prob.system.matrix
    sq = math.sqrt(prob.lam)

    j = np.zeros((6 * n + 10, 14 + n))
    j[: 6 * n, :9] = m[:, :9]
    j[: 6 * n, 9 : 9 + n] = m[:, 10 : 10 + n]
    j[6 * n : 6 * n + 9, :9] = sq * np.eye(9)  # d v_hat / d v_free; last row is pinned

    sphere_j = _sphere_vech_jacobian(s.center, s.a, s.b)
    sphere_j[:, 3] *= s.a  # chain rule for log a
    sphere_j[:, 4] *= s.b  # chain rule for log b
    j[6 * n :, 9 + n :] = -sq * sphere_j
    return j


@dataclass(frozen=True, eq=False)
class RegularizedSolution:
    """Refined estimate plus optimizer diagnostics."""

    object_id: str
    dual_quadric: DualQuadric
    primal: Quadric | None
    ellipsoid: Ellipsoid3D
    betas: np.ndarray
    betas_internal: np.ndarray
    sphere: SphereParams
    lam: float
    cost_history: tuple[float, ...]
    converged: bool
    iterations: int
    frame_ids: tuple[int, ...]
    warnings: tuple[str, ...] = ()


def solve_regularized(
    prob: RegularizedProblem,
    max_iters: int = 200,
    tol_cost: float = 1e-10,
    tol_step: float = 1e-12,
) -> RegularizedSolution:
    """Damped Gauss-Newton descent from the sphere start.

    Accepts only strictly decreasing steps, so the cost history is
    monotone; gives up (converged=False, warning) when no damping value
    yields a decrease.
    """
    x = prob.x0.copy()
    r = residual_vector(prob, x)
    cost = float(r @ r)
    history = [cost]
    warnings: list[str] = []

    mu = 0.0  # set from the first Jacobian
    nu = 2.0
    converged = False
    iterations = 0

    for iterations in range(1, max_iters + 1):
        j = residual_jacobian(prob, x)
        a = j.T @ j
        g = j.T @ r
        diag = np.maximum(np.diag(a), 1e-12 * max(np.max(np.diag(a)), 1.0))
        if mu == 0.0:
            mu = 1e-3 * float(np.max(diag))

        accepted = False
        while True:
            try:
                dx = np.linalg.solve(a + mu * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                dx = np.linalg.lstsq(a + mu * np.diag(diag), -g, rcond=None)[0]
            x_try = x + dx
            try:
                r_try = residual_vector(prob, x_try)
                cost_try = float(r_try @ r_try)
            except (InvalidInputError, OverflowError):
                cost_try = math.inf  # wild step (e.g. exp overflow): reject
            if not math.isfinite(cost_try):
                cost_try = math.inf
            if cost_try < cost:
                accepted = True
                step_norm = float(np.linalg.norm(dx))
                rel_drop = (cost - cost_try) / max(cost, 1e-300)
                x, r, cost = x_try, r_try, cost_try
                history.append(cost)
                mu = max(mu / 3.0, 1e-300)
                nu = 2.0
                if rel_drop < tol_cost or step_norm < tol_step * (np.linalg.norm(x) + tol_step):
                    converged = True
                break
            mu *= nu
            nu *= 2.0
            if mu > 1e32:
                break
        if not accepted:
            warnings.append("line_search_failure")
            break
        if converged:
            break
    else:
        iterations = max_iters

    if not converged and "line_search_failure" not in warnings:
        warnings.append("max_iterations_reached")

    return _package_solution(prob, x, history, converged, iterations, warnings)


def _package_solution(
    prob: RegularizedProblem,
    x: np.ndarray,
    history: list[float],
    converged: bool,
    iterations: int,
    warnings: list[str],
) -> RegularizedSolution:
    n = prob.n_frames
    v_hat, betas_internal, s = unpack_parameters(x, n)
    qstar = vech_inv(v_hat, 4)

    primal: Quadric | None = None
    ellipsoid = Ellipsoid3D.invalid()
    unit = qstar / np.linalg.norm(vech(qstar))
    if abs(np.linalg.det(unit)) < DET_TOL:
        warnings = warnings + ["primal_recovery_failed"]
    else:
        primal = Quadric(sign_normalized(primal_from_dual(qstar)))
        try:
            ellipsoid = decompose_quadric(primal)
        except NoFiniteCenterError:
            warnings = warnings + ["no_finite_center"]

    return RegularizedSolution(
        object_id=prob.closed_form.object_id,
        dual_quadric=DualQuadric(qstar),
        primal=primal,
        ellipsoid=ellipsoid,
        betas=betas_internal * prob.system.beta_factors,
        betas_internal=betas_internal,
        sphere=s,
        lam=prob.lam,
        cost_history=tuple(history),
        converged=converged,
        iterations=iterations,
        frame_ids=prob.system.frame_ids,
        warnings=tuple(warnings),
    )


def fit_pfd_reg(
    obs: ObjectObservations,
    cameras: dict[int, CameraProjection],
    lam: float | str = "auto",
    max_iters: int = 200,
    tol_cost: float = 1e-10,
    tol_step: float = 1e-12,
    condition: bool = True,
) -> RegularizedSolution:
    """Full PfD+REG pipeline: stack, closed-form init, refine."""
    system = build_system(obs, cameras, condition=condition)
    cf = solve_svd(system, object_id=obs.object_id)
    prob = make_regularized_problem(system, cf, lam=lam)
    return solve_regularized(prob, max_iters=max_iters, tol_cost=tol_cost, tol_step=tol_step)
