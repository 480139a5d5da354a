"""Independent audits of configurations and solutions."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .bodies import ImplicitBody
from .configuration import CrossConfig, frame_is_regular, jacobian, residual_levelset, vertices
from .errors import CrossfitError

Guarantee = Literal["odd_prime_power", "centrally_symmetric_any_d", "none"]


@dataclass(frozen=True)
class VerificationReport:
    max_surface_defect: float
    frame_orthonormality_defect: float
    rotation_defect: float
    nullity: int
    expected_nullity: int
    guarantee: Guarantee
    passed: bool

    def to_document(self) -> dict:
        return asdict(self)


def smallest_prime_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


def is_odd_prime_power(n: int) -> bool:
    if n < 3:
        return False
    p = smallest_prime_factor(n)
    if p == 2:
        return False
    while n % p == 0:
        n //= p
    return n == 1


def classify_guarantee(d: int, body: ImplicitBody | None = None) -> Guarantee:
    """Which existence result covers dimension ``d`` (and ``body``).

    Odd prime powers are covered for every non-angular convex body; any other
    dimension only when the body is convex and centrally symmetric by
    construction.
    """
    if is_odd_prime_power(d):
        return "odd_prime_power"
    if body is not None and body.convex and body.centrally_symmetric:
        return "centrally_symmetric_any_d"
    return "none"


def _fd_nullity(body, config, form, rank_threshold) -> int:
    J = jacobian(body, config, form, method="fd")
    s = np.linalg.svd(J, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return J.shape[1]
    return J.shape[1] - int(np.sum(s >= rank_threshold * s[0]))


def check_solution(
    body: ImplicitBody,
    solution,
    tol: float = 1e-9,
    check_nullity: bool = True,
    rank_threshold: float = 1e-6,
) -> VerificationReport:
    """Recompute every defect of ``solution`` from scratch.

    ``solution`` may be a solver ``Solution`` or a bare ``CrossConfig``.  The
    nullity comes from a fresh finite-difference Jacobian.
    """
    config: CrossConfig = getattr(solution, "config", solution)
    form = getattr(solution, "form", "levelset")
    d = config.dim
    surface = float(np.abs(body.value(vertices(config))).max())
    rho = config.rotation
    rot_defect = float(np.abs(rho.T @ rho - np.eye(d)).max())
    if np.linalg.det(rho) <= 0:
        rot_defect = max(rot_defect, 1.0)
    E = config.frame
    frame_defect = float(np.abs(E.T @ E - np.eye(d)).max()) if frame_is_regular(E, 1e-6) else 0.0
    try:
        nullity = _fd_nullity(body, config, form, rank_threshold)
    except CrossfitError:
        # chord chart unavailable (e.g. centre outside); fall back to levelset
        nullity = _fd_nullity(body, config, "levelset", rank_threshold)
    expected = (d - 1) * (d - 2) // 2
    passed = surface < tol and rot_defect < tol and frame_defect < tol
    if check_nullity:
        passed = passed and nullity >= expected
    return VerificationReport(
        max_surface_defect=surface,
        frame_orthonormality_defect=frame_defect,
        rotation_defect=rot_defect,
        nullity=nullity,
        expected_nullity=expected,
        guarantee=classify_guarantee(d, body),
        passed=bool(passed),
    )


def random_signed_permutation(rng: np.random.Generator, d: int) -> np.ndarray:
    """Uniform signed permutation matrix with determinant +1."""
    perm = rng.permutation(d)
    signs = rng.choice([-1.0, 1.0], size=d)
    sigma = np.zeros((d, d))
    sigma[perm, np.arange(d)] = signs
    if np.linalg.det(sigma) < 0:
        sigma[:, 0] = -sigma[:, 0]
    return sigma


def induced_index_map(sigma: np.ndarray) -> np.ndarray:
    """``idx`` with ``residual(rho @ sigma)[k] == residual(rho)[idx[k]]``.

    Column ``i`` of ``sigma`` is ``s * e_j``, so vertex ``(i, +)`` of the new
    configuration is vertex ``(j, +)`` of the old one when ``s > 0`` and
    vertex ``(j, -)`` otherwise.
    """
    d = sigma.shape[0]
    idx = np.empty(2 * d, dtype=int)
    for i in range(d):
        j = int(np.flatnonzero(sigma[:, i])[0])
        flip = sigma[j, i] < 0
        idx[2 * i] = 2 * j + int(flip)
        idx[2 * i + 1] = 2 * j + int(not flip)
    return idx


def check_equivariance(body: ImplicitBody, config: CrossConfig, trials: int = 10, seed: int = 0) -> bool:
    """Residual of ``rho @ sigma`` equals the permuted residual of ``rho``."""
    rng = np.random.default_rng(seed)
    base = residual_levelset(body, config).values
    ok = True
    for _ in range(trials):
        sigma = random_signed_permutation(rng, config.dim)
        moved = residual_levelset(body, config.replace(rotation=config.rotation @ sigma)).values
        ok &= bool(np.all(np.abs(moved - base[induced_index_map(sigma)]) <= 1e-12))
    return ok
