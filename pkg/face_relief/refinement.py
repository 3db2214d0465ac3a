"""Alternating normal / albedo refinement over the visible triangles of a proxy.

Per visible triangle i and available light j the refinement minimises

    sum_ij |I_ij - rho_i (N_i . L_ij)|^2
      + mu1 * sum_i |N_i - N_i^proxy|^2
      + mu2 * sum_i |rho_i - mean_{k in ring(i)} rho_k|^2

with L_ij = beta_j (P_j - V_i) / |P_j - V_i|^3 and |N_i| = 1. Observed
intensities are sampled once at the proxy centroids; geometry and lights are
frozen. Images are normalised to peak 1 (illumination divided by the same
constant) and mu1 / mu2 are relative to the photometric scale of the initial
state, so the weights do not depend on image exposure.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from face_relief.config import RefinementConfig
from face_relief.errors import EmptyVisibleSetError, UnderdeterminedError
from face_relief.geometry import (
    edge_adjacency,
    posed_mesh,
    triangle_albedo,
    triangle_normals_and_centroids,
)
from face_relief.models import (
    CameraIntrinsics,
    FaceMesh,
    ObservedIntensities,
    PointLight,
    Pose,
    RadianceImage,
    RefinementState,
    VisibilitySets,
)
from face_relief.objective_log import ObjectiveLog
from face_relief.renderer import available_lights, sample_observations, visible_triangles

logger = logging.getLogger(__name__)

ALBEDO_CG_RTOL = 1e-8
_MAX_BISECTIONS = 30


# ---------------------------------------------------------------------------
# Visible set
# ---------------------------------------------------------------------------


def build_visible_set(
    mesh: FaceMesh, pose: Pose, cam: CameraIntrinsics
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Visible triangle indices and, per visible triangle, its edge-adjacent visible neighbours."""
    visible = visible_triangles(mesh, pose, cam)
    indices = np.flatnonzero(visible)
    if indices.size == 0:
        raise EmptyVisibleSetError("no proxy triangle is visible from the camera")
    adjacency = edge_adjacency(mesh.triangles)
    rings = [adjacency[i][visible[adjacency[i]]] for i in indices]
    return indices, rings


def _local_rings(state: RefinementState, n_triangles: int) -> list[np.ndarray]:
    lookup = np.full(n_triangles, -1, dtype=np.int64)
    lookup[state.visible_set] = np.arange(len(state.visible_set))
    return [lookup[ring] for ring in state.one_rings]


def _light_vectors(centroids: np.ndarray, lights: Sequence[PointLight]) -> np.ndarray:
    """(k, n, 3) array of beta_j (P_j - V_i) / |P_j - V_i|^3."""
    positions = np.stack([light.position for light in lights])
    betas = np.array([light.illumination for light in lights])
    d = positions[None, :, :] - centroids[:, None, :]
    dist = np.linalg.norm(d, axis=2)
    return betas[None, :, None] * d / dist[:, :, None] ** 3


def _available(visibility: VisibilitySets, observations: ObservedIntensities) -> np.ndarray:
    return visibility.available & observations.observed


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def effective_weights(state: RefinementState, config: RefinementConfig) -> tuple[float, float]:
    return config.mu1 * state.photometric_scale, config.mu2 * state.albedo_scale


def _ring_means(albedo: np.ndarray, rings: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """One-ring mean albedo per triangle and a mask of triangles with a non-empty ring."""
    means = np.zeros_like(albedo)
    has_ring = np.array([len(r) > 0 for r in rings], dtype=bool)
    for i in np.flatnonzero(has_ring):
        means[i] = albedo[rings[i]].mean(axis=0)
    return means, has_ring


def refinement_objective(
    state: RefinementState,
    observations: ObservedIntensities,
    lights: Sequence[PointLight],
    visibility: VisibilitySets,
    config: RefinementConfig,
    rings: Optional[list[np.ndarray]] = None,
) -> float:
    """Photometric + normal-prior + albedo-smoothness objective of *state*."""
    mu1, mu2 = effective_weights(state, config)
    avail = _available(visibility, observations)
    lvec = _light_vectors(state.centroids, lights)
    shading = np.einsum("ik,ijk->ij", state.normals_hat, lvec)
    predicted = state.albedo_hat[:, None, :] * shading[:, :, None]
    photometric = float(np.sum(avail[:, :, None] * (observations.values - predicted) ** 2))
    prior = float(np.sum((state.normals_hat - state.prior_normals) ** 2))
    if rings is None:
        rings = _local_rings(state, int(state.visible_set.max()) + 1)
    means, has_ring = _ring_means(state.albedo_hat, rings)
    smooth = float(np.sum((state.albedo_hat[has_ring] - means[has_ring]) ** 2))
    return photometric + mu1 * prior + mu2 * smooth


# ---------------------------------------------------------------------------
# Normal step
# ---------------------------------------------------------------------------


def _per_triangle_normal_cost(
    normals: np.ndarray,
    albedo: np.ndarray,
    values: np.ndarray,
    lvec: np.ndarray,
    avail: np.ndarray,
    prior: np.ndarray,
    mu1: float,
) -> np.ndarray:
    shading = np.einsum("ik,ijk->ij", normals, lvec)
    residual = values - albedo[:, None, :] * shading[:, :, None]
    photometric = np.sum(avail[:, :, None] * residual**2, axis=(1, 2))
    return photometric + mu1 * np.sum((normals - prior) ** 2, axis=1)


def normal_step(
    state: RefinementState,
    observations: ObservedIntensities,
    lights: Sequence[PointLight],
    visibility: VisibilitySets,
    config: RefinementConfig,
) -> np.ndarray:
    """Per-triangle 3x3 solve with albedo fixed, renormalised under an objective guard."""
    mu1, _ = effective_weights(state, config)
    avail = _available(visibility, observations)
    if mu1 == 0.0:
        short = np.flatnonzero(avail.sum(axis=1) < 3)
        if short.size:
            raise UnderdeterminedError(state.visible_set[short].tolist())
    lvec = _light_vectors(state.centroids, lights)
    rho2 = np.sum(state.albedo_hat**2, axis=1)
    weights = avail * rho2[:, None]
    system = np.einsum("ij,ijk,ijl->ikl", weights, lvec, lvec) + mu1 * np.eye(3)[None]
    rho_dot_i = np.einsum("ic,ijc->ij", state.albedo_hat, observations.values) * avail
    rhs = np.einsum("ij,ijk->ik", rho_dot_i, lvec) + mu1 * state.prior_normals
    try:
        solution = np.linalg.solve(system, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        dets = np.linalg.det(system)
        bad = np.flatnonzero(np.abs(dets) <= 1e-300)
        raise UnderdeterminedError(state.visible_set[bad].tolist()) from None

    previous = state.normals_hat
    norms = np.linalg.norm(solution, axis=1)
    candidate = previous.copy()
    ok = norms > 0.0
    candidate[ok] = solution[ok] / norms[ok, None]

    def cost(n: np.ndarray, rows: np.ndarray) -> np.ndarray:
        return _per_triangle_normal_cost(
            n,
            state.albedo_hat[rows],
            observations.values[rows],
            lvec[rows],
            avail[rows],
            state.prior_normals[rows],
            mu1,
        )

    all_rows = np.arange(len(previous))
    before = cost(previous, all_rows)
    after = cost(candidate, all_rows)
    worse = np.flatnonzero(after > before)
    if worse.size:
        candidate[worse] = _bisect_toward(previous[worse], candidate[worse], before[worse], lambda n: cost(n, worse))
        logger.debug("Normal step damped %d triangle(s)", worse.size)
    return candidate


def _bisect_toward(previous: np.ndarray, target: np.ndarray, before: np.ndarray, cost) -> np.ndarray:
    """Halve the step from *previous* toward *target* until the cost does not increase."""
    result = previous.copy()
    pending = np.ones(len(previous), dtype=bool)
    fraction = 0.5
    for _ in range(_MAX_BISECTIONS):
        blend = previous + fraction * (target - previous)
        norms = np.linalg.norm(blend, axis=1, keepdims=True)
        blend = np.where(norms > 0.0, blend / np.where(norms > 0.0, norms, 1.0), previous)
        trial = cost(blend)
        accept = pending & (trial <= before)
        result[accept] = blend[accept]
        pending &= ~accept
        if not pending.any():
            break
        fraction *= 0.5
    return result


# ---------------------------------------------------------------------------
# Albedo step
# ---------------------------------------------------------------------------


def _smoothness_operator(rings: list[np.ndarray], k: int) -> sp.csr_matrix:
    """M with rows e_i - mean_{ring(i)} e_k (zero rows for empty rings)."""
    sizes = np.array([len(r) for r in rings])
    rows_with = np.flatnonzero(sizes > 0)
    diag_rows = rows_with
    nb_rows = np.repeat(rows_with, sizes[rows_with])
    nb_cols = np.concatenate([rings[i] for i in rows_with]) if rows_with.size else np.zeros(0, np.int64)
    nb_vals = -1.0 / np.repeat(sizes[rows_with], sizes[rows_with])
    rows = np.concatenate([diag_rows, nb_rows])
    cols = np.concatenate([diag_rows, nb_cols])
    vals = np.concatenate([np.ones(len(diag_rows)), nb_vals])
    return sp.csr_matrix((vals, (rows, cols)), shape=(k, k))


def albedo_step(
    state: RefinementState,
    observations: ObservedIntensities,
    lights: Sequence[PointLight],
    visibility: VisibilitySets,
    config: RefinementConfig,
    rings: Optional[list[np.ndarray]] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Sparse per-channel solve with normals fixed; returns ``(albedo, frozen)``.

    Triangles without observations whose albedo is not tied to any neighbour
    are left unchanged and reported in ``frozen``.
    """
    _, mu2 = effective_weights(state, config)
    k = len(state.albedo_hat)
    if rings is None:
        rings = _local_rings(state, int(state.visible_set.max()) + 1)
    avail = _available(visibility, observations)
    lvec = _light_vectors(state.centroids, lights)
    shading = np.einsum("ik,ijk->ij", state.normals_hat, lvec) * avail
    data_weight = np.sum(shading**2, axis=1)
    rhs = np.einsum("ij,ijc->ic", shading, observations.values)

    smooth = _smoothness_operator(rings, k)
    coupled = np.asarray(abs(smooth).sum(axis=0)).ravel() > 0.0
    if mu2 == 0.0:
        coupled[:] = False
    frozen = (data_weight <= 0.0) & ~coupled
    free = np.flatnonzero(~frozen)
    if frozen.any():
        logger.warning("Albedo left unchanged for %d unobserved, isolated triangle(s)", int(frozen.sum()))

    if free.size == 0:
        return state.albedo_hat.copy(), frozen

    system = (sp.diags(data_weight) + mu2 * (smooth.T @ smooth)).tocsr()
    system = system[free][:, free]
    diag = system.diagonal()
    inv_diag = np.where(diag > 0.0, 1.0 / np.where(diag > 0.0, diag, 1.0), 1.0)
    precond = LinearOperator(system.shape, matvec=lambda x: inv_diag * x, dtype=np.float64)

    albedo = state.albedo_hat.copy()
    for c in range(3):
        previous = state.albedo_hat[:, c]
        b = rhs[free, c]
        solution, info = cg(
            system, b, x0=previous[free], rtol=ALBEDO_CG_RTOL, maxiter=10 * max(len(free), 10), M=precond
        )
        if info != 0:
            logger.warning("Albedo CG (channel %d) stopped with info=%d", c, info)
        channel = previous.copy()
        channel[free] = np.maximum(solution, 0.0)
        if _channel_cost(channel, c, data_weight, rhs, smooth, mu2) > _channel_cost(
            previous, c, data_weight, rhs, smooth, mu2
        ):
            continue
        albedo[:, c] = channel
    return albedo, frozen


def _channel_cost(
    x: np.ndarray, c: int, data_weight: np.ndarray, rhs: np.ndarray, smooth: sp.csr_matrix, mu2: float
) -> float:
    """Albedo-dependent part of the objective for one channel (up to a constant)."""
    r = smooth @ x
    return float(np.dot(data_weight * x, x) - 2.0 * np.dot(rhs[:, c], x) + mu2 * np.dot(r, r))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def normalise_observations(
    images: Sequence[RadianceImage], lights: Sequence[PointLight]
) -> tuple[list[RadianceImage], list[PointLight], float]:
    """Scale images to peak 1 and divide illuminations by the same constant."""
    peak = max((float(img.pixels[img.mask].max()) for img in images if img.mask.any()), default=0.0)
    if peak <= 0.0:
        return list(images), list(lights), 1.0
    scaled = [RadianceImage(img.pixels / peak, img.mask, img.status) for img in images]
    return scaled, [light.scaled(1.0 / peak) for light in lights], peak


def initial_state(
    proxy: FaceMesh,
    pose: Pose,
    cam: CameraIntrinsics,
    observations: ObservedIntensities,
    lights: Sequence[PointLight],
    visibility: VisibilitySets,
    visible_set: np.ndarray,
    one_rings: list[np.ndarray],
) -> RefinementState:
    """Proxy normals, globally rescaled proxy albedo and the weight scales."""
    normals, centroids = triangle_normals_and_centroids(posed_mesh(proxy, pose))
    prior = normals[visible_set]
    centroids = centroids[visible_set]
    base_albedo = triangle_albedo(proxy)[visible_set]
    avail = _available(visibility, observations)
    lvec = _light_vectors(centroids, lights)
    shading = np.einsum("ik,ijk->ij", prior, lvec) * avail
    predicted = base_albedo[:, None, :] * shading[:, :, None]
    denom = float(np.sum(predicted**2))
    scale = float(np.sum(predicted * observations.values)) / denom if denom > 0.0 else 1.0
    if scale <= 0.0:
        scale = 1.0
    albedo = base_albedo * scale

    rho2 = np.sum(albedo**2, axis=1)
    photometric_scale = float(np.mean(np.sum(avail * rho2[:, None] * np.sum(lvec**2, axis=2), axis=1)))
    albedo_scale = float(np.mean(np.sum(shading**2, axis=1)))
    return RefinementState(
        normals_hat=prior.copy(),
        albedo_hat=albedo,
        visible_set=visible_set,
        one_rings=one_rings,
        centroids=centroids,
        prior_normals=prior,
        photometric_scale=photometric_scale if photometric_scale > 0.0 else 1.0,
        albedo_scale=albedo_scale if albedo_scale > 0.0 else 1.0,
        flagged=np.zeros(len(visible_set), dtype=bool),
    )


def refine(
    proxy: FaceMesh,
    pose: Pose,
    cam: CameraIntrinsics,
    observations: Sequence[RadianceImage],
    lights: Sequence[PointLight],
    config: Optional[RefinementConfig] = None,
    log: Optional[ObjectiveLog] = None,
) -> RefinementState:
    """Alternate normal and albedo steps from the proxy until the objective settles."""
    config = config or RefinementConfig()
    if not observations:
        raise EmptyVisibleSetError("refinement needs at least one observation image")
    images, lights, peak = normalise_observations(observations, lights)
    visible_set, one_rings = build_visible_set(proxy, pose, cam)
    sampled = sample_observations(images, proxy, pose, cam, visible_set)
    posed = posed_mesh(proxy, pose)
    visibility = VisibilitySets(available_lights(posed, lights).available[visible_set])

    state = initial_state(proxy, pose, cam, sampled, lights, visibility, visible_set, one_rings)
    rings = _local_rings(state, proxy.n_triangles)
    value = refinement_objective(state, sampled, lights, visibility, config, rings)
    state.objective_history.append(value)
    if log is not None:
        log.record("refinement", 0, value, peak=peak)
    logger.info(
        "Refinement start: %d visible triangles, %d light(s), objective=%.6g",
        len(visible_set),
        len(lights),
        value,
    )
    for iteration in range(1, config.max_outer_iters + 1):
        state.normals_hat = normal_step(state, sampled, lights, visibility, config)
        state.albedo_hat, frozen = albedo_step(state, sampled, lights, visibility, config, rings)
        state.flagged = frozen
        new_value = refinement_objective(state, sampled, lights, visibility, config, rings)
        state.objective_history.append(new_value)
        if log is not None:
            log.record("refinement", iteration, new_value)
        change = abs(value - new_value) / max(abs(value), 1e-300)
        value = new_value
        if change < config.convergence_tol:
            logger.info("Refinement converged after %d iteration(s): objective=%.6g", iteration, value)
            break
    else:
        logger.info("Refinement stopped at max_outer_iters=%d: objective=%.6g", config.max_outer_iters, value)
    return state
