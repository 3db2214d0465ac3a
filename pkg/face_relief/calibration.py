"""Near point-light calibration against a coarse proxy mesh.

Levenberg-Marquardt over every light's position and illumination, with
albedo held at the proxy's albedo. Residuals are taken at the proxy surface
points seen through each covered pixel, shaded exactly as the renderer shades
them, and cover only points the light reaches under the current estimate;
that active set is recomputed for a fixed number of outer iterations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from face_relief.config import CalibrationSettings
from face_relief.errors import EmptyMaskError, InputError, InsufficientDataError, NonConvergenceError
from face_relief.geometry import posed_mesh, triangle_normals_and_centroids
from face_relief.models import CalibrationProblem, CalibrationReport, PointLight
from face_relief.objective_log import ObjectiveLog
from face_relief.raster import rasterize
from face_relief.renderer import surface_normals

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class PhotometricData:
    """Camera-space proxy surface samples, one per covered pixel, with their observations."""

    normals: np.ndarray  # (k, 3) interpolated shading normals
    points: np.ndarray  # (k, 3)
    albedo: np.ndarray  # (k, 3)
    intensities: np.ndarray  # (k, n_lights, 3)
    observed: np.ndarray  # (k, n_lights)
    triangles: np.ndarray  # (k,) owning proxy triangle
    facet_normals: np.ndarray  # (k, 3) normal of the owning triangle
    facet_centroids: np.ndarray  # (k, 3)

    @classmethod
    def from_problem(cls, problem: CalibrationProblem) -> "PhotometricData":
        posed = posed_mesh(problem.proxy, problem.pose)
        fragments = rasterize(posed.vertices, posed.triangles, problem.cam)
        mask = fragments.mask
        if not mask.any():
            raise EmptyMaskError("the proxy covers no pixel of the calibration camera")
        rows, cols = np.nonzero(mask)
        tri = fragments.tri_id[rows, cols]
        normals, centroids = triangle_normals_and_centroids(posed)
        intensities = np.stack([image.pixels[rows, cols] for image in problem.observations], axis=1)
        observed = np.stack([image.mask[rows, cols] for image in problem.observations], axis=1)
        return cls(
            normals=surface_normals(posed, fragments, smooth=True)[rows, cols],
            points=fragments.interpolate(posed.vertices, posed.triangles)[rows, cols],
            albedo=fragments.interpolate(posed.albedo, posed.triangles)[rows, cols],
            intensities=intensities,
            observed=observed,
            triangles=tri,
            facet_normals=normals[tri],
            facet_centroids=centroids[tri],
        )

    def lit(self, lights: Sequence[PointLight]) -> np.ndarray:
        """(k, n_lights) mask of samples whose triangle and shading normal both face each light."""
        positions = np.stack([light.position for light in lights])
        facet = np.einsum(
            "ik,ijk->ij", self.facet_normals, positions[None, :, :] - self.facet_centroids[:, None, :]
        )
        shading = np.einsum("ik,ijk->ij", self.normals, positions[None, :, :] - self.points[:, None, :])
        return (facet > 0.0) & (shading > 0.0)

    def triangle_counts(self, active: np.ndarray) -> list[int]:
        """Distinct proxy triangles contributing to each light's residuals."""
        return [int(np.unique(self.triangles[active[:, j]]).size) for j in range(active.shape[1])]


def _pack(lights: Sequence[PointLight]) -> np.ndarray:
    return np.concatenate([np.append(light.position, light.illumination) for light in lights])


def _unpack(theta: np.ndarray) -> list[PointLight]:
    return [PointLight(row[:3], float(row[3])) for row in theta.reshape(-1, 4)]


def photometric_residual_and_jacobian(
    lights: Sequence[PointLight],
    problem: Optional[CalibrationProblem] = None,
    active: Optional[np.ndarray] = None,
    data: Optional[PhotometricData] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Residuals ``rho beta (N . d) / |d|^3 - I`` and their analytic Jacobian.

    Rows run over active (sample, light) pairs and the three channels, in
    that nesting order. Columns are ``(P_x, P_y, P_z, beta)`` per light.
    When *active* is omitted it is the observed entries lit under *lights*.
    """
    if data is None:
        if problem is None:
            raise InputError("photometric residuals need a problem or prepared data")
        data = PhotometricData.from_problem(problem)
    if active is None:
        active = data.observed & data.lit(lights)
    k, n = active.shape
    positions = np.stack([light.position for light in lights])
    betas = np.array([light.illumination for light in lights])

    d = positions[None, :, :] - data.points[:, None, :]  # (k, n, 3)
    dist = np.linalg.norm(d, axis=2)
    ndotd = np.einsum("ik,ijk->ij", data.normals, d)
    shading = ndotd / dist**3  # (k, n)
    predicted = data.albedo[:, None, :] * (betas[None, :] * shading)[:, :, None]
    residual = predicted - data.intensities

    # d shading / d P  = N / |d|^3 - 3 (N . d) d / |d|^5
    grad_p = data.normals[:, None, :] / dist[:, :, None] ** 3 - 3.0 * (
        ndotd / dist**5
    )[:, :, None] * d
    rows_i, rows_j = np.nonzero(active)
    n_rows = len(rows_i) * 3
    jac = np.zeros((n_rows, 4 * n))
    rho = data.albedo[rows_i]  # (r, 3)
    beta = betas[rows_j]
    for c in range(3):
        r = np.arange(c, n_rows, 3)
        for axis in range(3):
            jac[r, 4 * rows_j + axis] = rho[:, c] * beta * grad_p[rows_i, rows_j, axis]
        jac[r, 4 * rows_j + 3] = rho[:, c] * shading[rows_i, rows_j]
    return residual[rows_i, rows_j].reshape(-1), jac


def _objective(residual: np.ndarray) -> float:
    return float(np.dot(residual, residual))


def calibrate_lights(
    problem: CalibrationProblem,
    settings: Optional[CalibrationSettings] = None,
    log: Optional[ObjectiveLog] = None,
) -> tuple[list[PointLight], CalibrationReport]:
    """Estimate light positions and illuminations; returns ``(lights, report)``."""
    settings = settings or CalibrationSettings()
    data = PhotometricData.from_problem(problem)
    lights = list(problem.initial_lights)

    front = data.lit(lights)
    for j, frac in enumerate(front.mean(axis=0) if len(front) else np.zeros(len(lights))):
        if frac < settings.min_front_fraction:
            raise InputError(
                f"initial light {j} faces only {frac:.0%} of the proxy "
                f"(need >= {settings.min_front_fraction:.0%})"
            )

    theta = _pack(lights)
    history: list[float] = []
    outer_objectives: list[float] = []
    residual = np.zeros(0)
    counts: list[int] = []
    step = 0
    for outer in range(settings.outer_iters):
        active = data.observed & data.lit(_unpack(theta))
        counts = data.triangle_counts(active)
        if min(counts) < settings.min_triangles:
            raise InsufficientDataError(
                f"need >= {settings.min_triangles} observed triangles per light, got {counts}",
                counts=counts,
            )
        theta, residual, inner_history, converged = _levenberg_marquardt(theta, active, data, settings)
        for value in inner_history:
            history.append(value)
            if log is not None:
                log.record("calibration", step, value, outer=outer)
            step += 1
        outer_objectives.append(inner_history[-1])
        if not converged and outer == settings.outer_iters - 1:
            raise NonConvergenceError(
                f"light calibration did not converge within {settings.max_inner_iters} iterations",
                diagnostics={"objective": inner_history[-1], "counts": counts},
            )
        logger.info(
            "Calibration outer %d: objective=%.6g residuals=%d",
            outer,
            inner_history[-1],
            residual.size,
        )

    lights = _unpack(theta)
    n_res = int(residual.size)
    report = CalibrationReport(
        rms_residual=math.sqrt(_objective(residual) / n_res) if n_res else 0.0,
        objective_history=history,
        outer_objectives=outer_objectives,
        n_residuals=n_res,
        triangles_per_light=counts,
    )
    return lights, report


def _levenberg_marquardt(
    theta: np.ndarray,
    active: np.ndarray,
    data: PhotometricData,
    settings: CalibrationSettings,
) -> tuple[np.ndarray, np.ndarray, list[float], bool]:
    """Damped Gauss-Newton with Marquardt diagonal scaling; accepted steps only."""
    residual, jac = photometric_residual_and_jacobian(_unpack(theta), active=active, data=data)
    value = _objective(residual)
    if not math.isfinite(value):
        raise NonConvergenceError("calibration objective is not finite", {"objective": value})
    history = [value]
    lam = settings.lambda_init
    for _ in range(settings.max_inner_iters):
        if value <= 0.0:
            return theta, residual, history, True
        jtj = jac.T @ jac
        grad = jac.T @ residual
        diag = np.diag(jtj).copy()
        diag[diag <= 0.0] = 1.0
        accepted = False
        while lam <= settings.lambda_max:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= settings.lambda_factor
                continue
            candidate = theta + delta
            if np.all(candidate[3::4] > 0.0):
                trial_res, trial_jac = photometric_residual_and_jacobian(
                    _unpack(candidate), active=active, data=data
                )
                trial = _objective(trial_res)
                if math.isfinite(trial) and trial < value:
                    accepted = True
                    break
            lam *= settings.lambda_factor
        if not accepted:
            # No damping level decreases the objective: stationary point.
            return theta, residual, history, True
        change = (value - trial) / value
        theta, residual, jac, value = candidate, trial_res, trial_jac, trial
        history.append(value)
        lam = max(lam / settings.lambda_factor, 1e-15)
        if change < settings.rel_tol:
            return theta, residual, history, True
    return theta, residual, history, False
