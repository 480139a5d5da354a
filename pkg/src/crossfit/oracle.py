"""Brute-force grid search for inscribed octahedra in three dimensions.

Independent of the solver: it only evaluates the level-set residual on a
product grid of ZYZ Euler angles, centres and scales and keeps the grid
local minima.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import minimum_filter

from .bodies import ImplicitBody
from .configuration import CrossConfig
from .errors import BudgetError, CrossfitError, InputError, UnsupportedDimensionError
from .solver import Solution, SolveOptions, dedup, gauss_newton

log = logging.getLogger(__name__)

GRID_BUDGET = 10**8


@dataclass(frozen=True)
class GridSpec:
    euler_resolution: int = 24
    center_resolution: int = 9
    scale_resolution: int = 17
    coarse_tol: float = 0.25
    max_candidates: int = 64
    batch: int = 16

    def __post_init__(self):
        if min(self.euler_resolution, self.center_resolution, self.scale_resolution) < 2:
            raise InputError("grid resolutions must be at least 2")
        if not self.coarse_tol > 0 or self.max_candidates < 1:
            raise InputError("coarse_tol and max_candidates must be positive")


def zyz(alpha, beta, gamma) -> np.ndarray:
    """Rotation ``Rz(alpha) @ Ry(beta) @ Rz(gamma)``; broadcasts over the angles."""
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    return np.stack(
        [
            np.stack([ca * cb * cg - sa * sg, -ca * cb * sg - sa * cg, ca * sb], -1),
            np.stack([sa * cb * cg + ca * sg, -sa * cb * sg + ca * cg, sa * sb], -1),
            np.stack([-sb * cg, sb * sg, cb], -1),
        ],
        -2,
    )


@dataclass(frozen=True)
class EulerGrid:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    # gamma covers one quarter turn when the frame's 4-fold symmetry is used
    gamma_period: float


def euler_grid(n: int, standard_frame: bool) -> EulerGrid:
    """Nested angle grid: doubling ``n`` keeps every old node.

    With the standard frame, ``rho @ Rz(pi/2)`` describes the same octahedron
    as ``rho``, so gamma is restricted to ``[0, pi/2)`` when ``n % 4 == 0``.
    """
    alpha = 2 * np.pi * np.arange(n) / n
    beta = np.pi * np.arange(n + 1) / n
    if standard_frame and n % 4 == 0:
        gamma = 2 * np.pi * np.arange(n // 4) / n
        period = np.pi / 2
    else:
        gamma = 2 * np.pi * np.arange(n) / n
        period = 2 * np.pi
    return EulerGrid(alpha, beta, gamma, period)


def grid_size(spec: GridSpec, standard_frame: bool = True) -> int:
    g = euler_grid(spec.euler_resolution, standard_frame)
    return g.alpha.size * g.beta.size * g.gamma.size * spec.center_resolution**3 * spec.scale_resolution


@dataclass(frozen=True)
class Candidate:
    config: CrossConfig
    residual: float
    index: tuple[int, ...]


def _axes(body: ImplicitBody, spec: GridSpec, frame: np.ndarray):
    r_in = body.inradius_estimate
    offsets = np.linspace(-0.3, 0.3, spec.center_resolution) * r_in
    centers = body.interior_point + np.stack(
        np.meshgrid(offsets, offsets, offsets, indexing="ij"), -1
    ).reshape(-1, 3)
    scales = np.linspace(0.2, 2.0, spec.scale_resolution) * r_in
    return centers, scales


def residual_grid(body: ImplicitBody, frame=None, spec: GridSpec = GridSpec()):
    """Max-norm level-set residual on the whole grid (float32) plus its axes."""
    if body.dim != 3:
        raise UnsupportedDimensionError("brute-force search is implemented for d = 3 only")
    frame = np.eye(3) if frame is None else np.asarray(frame, dtype=float)
    standard = bool(np.array_equal(frame, np.eye(3)))
    total = grid_size(spec, standard)
    if total >= GRID_BUDGET:
        raise BudgetError(f"grid of {total} points exceeds the budget of {GRID_BUDGET}")
    g = euler_grid(spec.euler_resolution, standard)
    A, B, G = np.meshgrid(g.alpha, g.beta, g.gamma, indexing="ij")
    rots = zyz(A, B, G).reshape(-1, 3, 3)
    centers, scales = _axes(body, spec, frame)
    signed = np.array([1.0, -1.0])
    out = np.empty((rots.shape[0], centers.shape[0], scales.size), dtype=np.float32)
    for lo in range(0, rots.shape[0], spec.batch):
        R = rots[lo : lo + spec.batch]
        axes = np.swapaxes(R @ frame, 1, 2)  # (b, 3 axes, 3 comps)
        offs = (axes[:, :, None, :] * signed[None, None, :, None]).reshape(R.shape[0], 6, 3)
        pts = (
            centers[None, :, None, None, :]
            + scales[None, None, :, None, None] * offs[:, None, None, :, :]
        )
        vals = np.abs(body.value(pts)).max(axis=-1)
        out[lo : lo + R.shape[0]] = vals
    shape = (g.alpha.size, g.beta.size, g.gamma.size) + (spec.center_resolution,) * 3 + (scales.size,)
    return out.reshape(shape), g, centers, scales


def brute_force_search(body: ImplicitBody, frame=None, spec: GridSpec = GridSpec()) -> list[Candidate]:
    """Grid local minima of the max-norm residual below ``coarse_tol``.

    Sorted by residual, ties broken by grid index; at most ``max_candidates``.
    Angles wrap periodically when looking for neighbours.
    """
    frame = np.eye(3) if frame is None else np.asarray(frame, dtype=float)
    res, g, centers, scales = residual_grid(body, frame, spec)
    modes = ["wrap", "nearest", "wrap"] + ["nearest"] * 4
    is_min = (res == minimum_filter(res, size=3, mode=modes)) & (res < spec.coarse_tol)
    flat = np.flatnonzero(is_min)
    order = np.lexsort((flat, res.reshape(-1)[flat]))
    out = []
    for f in flat[order][: spec.max_candidates]:
        idx = np.unravel_index(f, res.shape)
        ia, ib, ig, cx, cy, cz, isc = (int(i) for i in idx)
        rho = zyz(g.alpha[ia], g.beta[ib], g.gamma[ig])
        c = centers[np.ravel_multi_index((cx, cy, cz), (spec.center_resolution,) * 3)]
        config = CrossConfig(c, scales[isc], rho, frame)
        out.append(Candidate(config, float(res[idx]), tuple(int(i) for i in idx)))
    return out


def refine_candidates(
    body: ImplicitBody, candidates: list[Candidate], opts: SolveOptions | None = None
) -> list[Solution]:
    opts = opts or SolveOptions()
    solved = []
    for cand in candidates:
        try:
            solved.append(gauss_newton(body, cand.config, "levelset", opts, "oracle_refined"))
        except CrossfitError:
            continue
    dropped = len(candidates) - len(solved)
    if dropped:
        log.info("dropped %d of %d non-convergent candidates", dropped, len(candidates))
    return dedup(solved)
