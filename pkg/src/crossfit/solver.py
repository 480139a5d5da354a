"""Zero-finding on the configuration space.

The residual maps are underdetermined: their zero sets are manifolds of
dimension at least (d-1)(d-2)/2.  Every linear solve therefore goes through
an SVD so that steps are minimum-norm and never wander along the solution
family unless asked to (``sweep_family``, ``transport``).
"""

from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.linalg import logm
from scipy.optimize import linear_sum_assignment

from .bodies import HomotopyFamily, ImplicitBody, body_at, ray_intersect
from .configuration import (
    CrossConfig,
    Form,
    apply_step,
    chart_dim,
    chord_scale,
    config_distance,
    jacobian,
    random_rotation,
    reorthonormalize,
    residual_values,
    vee,
    vertex_jacobian,
    vertices,
)
from .errors import (
    ContinuationStuckError,
    CrossfitError,
    DegenerationError,
    InputError,
    InteriorLostError,
    NonConvergenceError,
    PreconditionError,
)

log = logging.getLogger(__name__)

Provenance = Literal["direct", "continuation", "sweep", "oracle_refined"]


@dataclass(frozen=True)
class SolveOptions:
    max_iters: int = 200
    residual_tol: float = 1e-10
    step_tol: float = 1e-14
    damping: float = 1e-3
    rank_threshold: float = 1e-6
    # None means 1e-4 * bounding radius of the body being solved
    lambda_min: float | None = None
    seed_count: int = 32
    seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        for name in ("residual_tol", "step_tol", "damping", "rank_threshold"):
            if not getattr(self, name) > 0:
                raise InputError(f"{name} must be positive")
        if self.lambda_min is not None and not self.lambda_min > 0:
            raise InputError("lambda_min must be positive")
        if self.max_iters < 1 or self.seed_count < 1:
            raise InputError("max_iters and seed_count must be positive")

    def lambda_min_for(self, body: ImplicitBody) -> float:
        if self.lambda_min is not None:
            return self.lambda_min
        return 1e-4 * body.bounding_radius


@dataclass(frozen=True, eq=False)
class Solution:
    config: CrossConfig
    residual_norm: float
    nullity: int
    iterations: int
    provenance: Provenance = "direct"
    form: Form = "levelset"

    def to_document(self) -> dict:
        return {
            **self.config.to_document(),
            "residual_norm": self.residual_norm,
            "nullity": self.nullity,
            "iterations": self.iterations,
            "provenance": self.provenance,
            "form": self.form,
        }


@dataclass
class ContinuationTrace:
    samples: list[tuple[float, Solution]] = field(default_factory=list)
    accepted: int = 0
    rejected: int = 0
    min_dt: float = float("inf")
    max_dt: float = 0.0
    # t at which a degenerate start family was resolved, if that happened
    branch_probe: float | None = None

    @property
    def final(self) -> Solution:
        return self.samples[-1][1]


def expected_nullity(d: int) -> int:
    return (d - 1) * (d - 2) // 2


def spectrum(J: np.ndarray) -> np.ndarray:
    """Singular values of ``J`` padded with zeros to one per chart coordinate."""
    s = np.linalg.svd(J, compute_uv=False)
    return np.concatenate([s, np.zeros(max(0, J.shape[1] - s.size))])


def nullity_from_jacobian(J: np.ndarray, rank_threshold: float) -> int:
    s = np.linalg.svd(J, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return J.shape[1]
    rank = int(np.sum(s >= rank_threshold * s[0]))
    return J.shape[1] - rank


def numerical_nullity(body: ImplicitBody, solution: Solution, opts: SolveOptions | None = None) -> int:
    """Estimated local dimension of the solution family through ``solution``."""
    opts = opts or SolveOptions()
    J = jacobian(body, solution.config, solution.form)
    return nullity_from_jacobian(J, opts.rank_threshold)


def _null_basis(J: np.ndarray, rank_threshold: float) -> np.ndarray:
    _, s, Vt = np.linalg.svd(J, full_matrices=True)
    rank = int(np.sum(s >= rank_threshold * s[0])) if s.size and s[0] > 0 else 0
    return Vt[rank:].T


def _finish(body, config, form, r, iterations, provenance, opts) -> Solution:
    if form == "chord":
        config = config.replace(scale=chord_scale(body, config))
    sol = Solution(config, float(np.linalg.norm(r)), 0, iterations, provenance, form)
    return replace(sol, nullity=numerical_nullity(body, sol, opts))


def gauss_newton(
    body: ImplicitBody,
    start: CrossConfig,
    form: Form = "levelset",
    opts: SolveOptions | None = None,
    provenance: Provenance = "direct",
    history: list | None = None,
) -> Solution:
    """Levenberg-Marquardt on half the squared residual over the chart.

    Steps solve the damped normal equations through the SVD of the Jacobian;
    a step is accepted only if it lowers the cost (damping /3), otherwise the
    damping doubles and the step is retried.  ``history`` collects the cost
    after each accepted step.
    """
    opts = opts or SolveOptions()
    lam_min = opts.lambda_min_for(body)
    config = start
    r = residual_values(body, config, form)
    cost = 0.5 * float(r @ r)
    mu = opts.damping
    accepted = 0
    for it in range(opts.max_iters):
        if np.linalg.norm(r) < opts.residual_tol:
            return _finish(body, config, form, r, it, provenance, opts)
        J = jacobian(body, config, form)
        U, s, Vt = np.linalg.svd(J, full_matrices=False)
        ur = U.T @ r
        exterior = 0
        while True:
            delta = -Vt.T @ (s / (s * s + mu) * ur)
            if np.linalg.norm(delta) < opts.step_tol or mu > 1e20:
                raise NonConvergenceError(
                    f"stalled after {it} iterations (|r| = {np.sqrt(2 * cost):.3e})",
                    best=config,
                    residual_norm=float(np.sqrt(2 * cost)),
                )
            try:
                trial = apply_step(config, delta, form)
                r_trial = residual_values(body, trial, form)
            except PreconditionError:
                exterior += 1
                if exterior >= 20:
                    raise InteriorLostError(
                        "chord iteration keeps leaving the body interior"
                    ) from None
                mu *= 2.0
                continue
            except InputError:
                # non-positive scale
                mu *= 2.0
                continue
            cost_trial = 0.5 * float(r_trial @ r_trial)
            if cost_trial < cost:
                config, r, cost = trial, r_trial, cost_trial
                mu = max(mu / 3.0, 1e-15)
                break
            mu *= 2.0
        accepted += 1
        if history is not None:
            history.append(cost)
        if accepted % 10 == 0:
            fixed = config.replace(rotation=reorthonormalize(config.rotation))
            r_fixed = residual_values(body, fixed, form)
            if 0.5 * float(r_fixed @ r_fixed) <= cost:
                config, r, cost = fixed, r_fixed, 0.5 * float(r_fixed @ r_fixed)
        if form == "levelset" and config.scale < lam_min:
            raise DegenerationError(
                f"scale {config.scale:.3e} fell below lambda_min {lam_min:.3e}", config=config
            )
    if np.linalg.norm(r) < opts.residual_tol:
        return _finish(body, config, form, r, opts.max_iters, provenance, opts)
    raise NonConvergenceError(
        f"no convergence in {opts.max_iters} iterations (|r| = {np.linalg.norm(r):.3e})",
        best=config,
        residual_norm=float(np.linalg.norm(r)),
    )


# ---------------------------------------------------------------------------
# Multi-start
# ---------------------------------------------------------------------------


def seed_config(body: ImplicitBody, frame, seed: int) -> CrossConfig:
    d = body.dim
    rho = random_rotation(seed, d)
    rng = np.random.default_rng([seed, 1])
    center = body.interior_point + 0.1 * body.inradius_estimate * rng.standard_normal(d)
    if not body.value(center) < 0:
        center = body.interior_point
    frame = np.eye(d) if frame is None else np.asarray(frame, dtype=float)
    axes = (rho @ frame).T
    axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
    lengths = [ray_intersect(body, center, u) + ray_intersect(body, center, -u) for u in axes]
    # the frame vectors need not be unit length; the scale multiplies them
    scale = 0.5 * float(np.mean(lengths)) / float(np.mean(np.linalg.norm(frame, axis=0)))
    return CrossConfig(center, scale, rho, frame)


def dedup(solutions: list[Solution], tol: float = 1e-6) -> list[Solution]:
    kept: list[Solution] = []
    for sol in solutions:
        if all(config_distance(sol.config, k.config) > tol for k in kept):
            kept.append(sol)
    return kept


def _thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("CROSSFIT_THREADS", "1")))
    except ValueError:
        return 1


def multistart_solve(
    body: ImplicitBody,
    frame=None,
    form: Form = "levelset",
    opts: SolveOptions | None = None,
    stats: dict | None = None,
) -> list[Solution]:
    """Run ``gauss_newton`` from ``opts.seed_count`` seeds and deduplicate.

    ``stats``, if given, receives per-seed outcomes keyed by seed index.
    """
    opts = opts or SolveOptions()

    def run(k: int):
        seed = opts.seed + k
        try:
            return gauss_newton(body, seed_config(body, frame, seed), form, opts)
        except CrossfitError as exc:
            return exc

    workers = min(opts.workers or _thread_cap(), _thread_cap())
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(run, range(opts.seed_count)))
    else:
        outcomes = [run(k) for k in range(opts.seed_count)]

    found = [o for o in outcomes if isinstance(o, Solution)]
    if stats is not None:
        stats["seeds"] = [
            {"seed": opts.seed + k, "converged": isinstance(o, Solution),
             "detail": o.iterations if isinstance(o, Solution) else type(o).__name__}
            for k, o in enumerate(outcomes)
        ]
        stats["converged"] = len(found)
    return dedup(found)


# ---------------------------------------------------------------------------
# Homotopy continuation
# ---------------------------------------------------------------------------


def chart_distance(c1: CrossConfig, c2: CrossConfig) -> float:
    omega = vee(np.real(logm(c1.rotation.T @ c2.rotation)))
    return float(
        np.sqrt(np.sum((c1.center - c2.center) ** 2) + (c1.scale - c2.scale) ** 2 + omega @ omega)
    )


def continue_homotopy(
    family: HomotopyFamily,
    start_solution: Solution,
    opts: SolveOptions | None = None,
    dt0: float = 0.05,
    dt_min: float = 1e-6,
    max_jump: float = 0.5,
) -> ContinuationTrace:
    """Track an inscribed crosspolytope from ``family.start`` to ``family.end``.

    Euler predictor along the minimum-norm solution of ``J dz = -dR/dt dt``,
    Levenberg-Marquardt corrector at fixed ``t``.  When the start solution sits
    on a family larger than the generic dimension (a ball admits every
    rotation), only part of it continues into ``t > 0``; the start is then
    moved onto that part by solving at ``t = dt0`` and pulling back to ``t = 0``.
    """
    opts = opts or SolveOptions()
    d = family.dim
    trace = ContinuationTrace()
    config = start_solution.config
    if start_solution.form != "levelset":
        config = config.replace(scale=chord_scale(family.start, config))
    t0_body = body_at(family, 0.0)
    start = gauss_newton(t0_body, config, "levelset", opts, "continuation")

    if start.nullity > expected_nullity(d):
        try:
            probe = gauss_newton(body_at(family, dt0), start.config, "levelset", opts, "continuation")
            start = gauss_newton(t0_body, probe.config, "levelset", opts, "continuation")
            trace.branch_probe = dt0
        except DegenerationError as exc:
            exc.trace = trace
            raise
        except CrossfitError:
            log.info("branch probe failed; continuing from the given start")

    trace.samples.append((0.0, start))
    lam_min = opts.lambda_min_for(family.start)
    t, sol, dt, streak = 0.0, start, dt0, 0
    while t < 1.0:
        t_new = 1.0 if dt >= 1.0 - t else t + dt
        step = t_new - t
        body_t = body_at(family, t)
        verts = vertices(sol.config)
        J = jacobian(body_t, sol.config, "levelset")
        dRdt = family.end.value(verts) - family.start.value(verts)
        dz = np.linalg.lstsq(J, -dRdt * step, rcond=opts.rank_threshold)[0]
        try:
            predicted = apply_step(sol.config, dz, "levelset")
            new = gauss_newton(body_at(family, t_new), predicted, "levelset", opts, "continuation")
            ok = chart_distance(sol.config, new.config) < max_jump
        except DegenerationError as exc:
            exc.trace = trace
            raise
        except (CrossfitError, ValueError):
            ok = False
        if ok:
            t, sol = t_new, new
            trace.samples.append((t, sol))
            trace.accepted += 1
            trace.min_dt = min(trace.min_dt, step)
            trace.max_dt = max(trace.max_dt, step)
            if sol.config.scale < lam_min:
                raise DegenerationError(f"scale collapsed at t={t}", sol.config, trace)
            streak += 1
            if streak >= 3:
                dt *= 1.5
                streak = 0
        else:
            trace.rejected += 1
            streak = 0
            dt *= 0.5
            if dt < dt_min:
                raise ContinuationStuckError(f"step size underflow at t={t:.6g}", trace)
    return trace


# ---------------------------------------------------------------------------
# Moving along a solution family
# ---------------------------------------------------------------------------


def sweep_family(
    body: ImplicitBody,
    solution: Solution,
    steps: int = 50,
    step_size: float = 0.05,
    opts: SolveOptions | None = None,
) -> list[Solution]:
    """Walk along the solution family, re-correcting after every step.

    Returns pairwise-distinct solutions (vertex-set Hausdorff distance above
    ``step_size / 10``), starting with ``solution``.  A corrector failure ends
    the walk early with a ``RuntimeWarning``.
    """
    opts = opts or SolveOptions()
    form = solution.form
    if numerical_nullity(body, solution, opts) < 1:
        raise PreconditionError("solution is isolated; there is no family to sweep")
    found = [solution]
    current = solution
    direction = None
    for k in range(steps):
        J = jacobian(body, current.config, form)
        N = _null_basis(J, opts.rank_threshold)
        if direction is None:
            v = N[:, -1]
        else:
            v = N @ (N.T @ direction)
            norm = np.linalg.norm(v)
            v = N[:, -1] if norm < 1e-8 else v / norm
            if v @ direction < 0:
                v = -v
        direction = v
        try:
            trial = apply_step(current.config, step_size * v, form)
            current = gauss_newton(body, trial, form, opts, "sweep")
        except CrossfitError as exc:
            warnings.warn(f"sweep truncated after {k} steps: {exc}", RuntimeWarning, stacklevel=2)
            break
        if all(config_distance(current.config, s.config) > step_size / 10 for s in found):
            found.append(current)
    return found


def _matched_offsets(config: CrossConfig, target: np.ndarray) -> np.ndarray:
    V = vertices(config)
    D = np.linalg.norm(V[:, None, :] - target[None, :, :], axis=-1)
    rows, cols = linear_sum_assignment(D)
    return (V[rows] - target[cols]).reshape(-1)


def transport(
    body: ImplicitBody,
    solution: Solution,
    target: CrossConfig,
    opts: SolveOptions | None = None,
    max_steps: int = 400,
    max_move: float = 0.1,
) -> Solution:
    """Move ``solution`` along its own solution family towards ``target``.

    Each step stays on the zero set to first order (the residual part of the
    step is the minimum-norm Gauss-Newton correction) and spends the remaining
    null-space freedom on pulling the vertex set onto ``target``'s, matched by
    optimal assignment.  The result is a re-corrected solution; if ``target``
    lies on a different family the distance simply stops decreasing.
    """
    if solution.form != "levelset":
        raise InputError("transport works in the levelset chart")
    opts = opts or SolveOptions()
    tv = vertices(target)
    config = solution.config
    for _ in range(max_steps):
        r = residual_values(body, config, "levelset")
        m = _matched_offsets(config, tv)
        J = jacobian(body, config, "levelset")
        U, s, Vt = np.linalg.svd(J, full_matrices=True)
        rank = int(np.sum(s >= opts.rank_threshold * s[0]))
        Vr, N = Vt[:rank].T, Vt[rank:].T
        base = -Vr @ ((U[:, :rank].T @ r) / s[:rank])
        Jv = vertex_jacobian(config)
        y = np.linalg.lstsq(Jv @ N, -(m + Jv @ base), rcond=None)[0]
        delta = base + N @ y
        size = np.linalg.norm(delta)
        if size > max_move:
            delta *= max_move / size
        config = apply_step(config, delta, "levelset")
        if size < 1e-13:
            break
    return gauss_newton(body, config, "levelset", opts, "sweep")


def family_distance(
    body: ImplicitBody, solutions: list[Solution], target: CrossConfig, opts: SolveOptions | None = None
) -> tuple[float, Solution | None]:
    """Smallest vertex-set distance from ``target`` reachable along the families
    of ``solutions``; returns that distance and the transported solution."""
    best, best_sol = float("inf"), None
    for sol in solutions:
        try:
            moved = transport(body, sol, target, opts)
        except CrossfitError:
            continue
        dist = config_distance(moved.config, target)
        if dist < best:
            best, best_sol = dist, moved
        if best < 1e-9:
            break
    return best, best_sol
