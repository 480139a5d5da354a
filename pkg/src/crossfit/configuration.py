"""Crosspolytope configurations, the SO(d) chart and both residual maps.

A configuration ``(x, lam, rho, E)`` has the 2d vertices ``x +/- lam * rho @ E[:, i]``
listed as ``+e_1, -e_1, ..., +e_d, -e_d``.

Two residuals vanish exactly on inscribed crosspolytopes:

* levelset: the 2d surface values ``f(vertex)``;
* chord (convex bodies, regular frames): with ``a_i`` / ``b_i`` the distances
  from ``x`` to the surface along ``+/- rho e_i``, the vector
  ``(t_1..t_d, s_1 - s_bar, .., s_{d-1} - s_bar)`` where ``s = a + b`` and
  ``t = a - b``.  Adding a constant to every ``s_i`` leaves it unchanged, so the
  scale drops out and is recovered as ``s_bar / 2``.

Chart coordinates are ``(dx, [dlam], omega)``; ``omega`` has one entry per
pair ``i < j`` in lexicographic order and moves the rotation by
``rho @ expm(skew(omega))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Literal

import numpy as np
from scipy.linalg import expm

from .bodies import ImplicitBody, ray_intersect
from .errors import InputError, PreconditionError, UnsupportedFormError

Form = Literal["levelset", "chord"]
FORMS = ("levelset", "chord")

ORTHO_TOL = 1e-10
FD_STEP = 1e-6


def check_rotation(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InputError("rotation must be a square matrix")
    d = rho.shape[0]
    if np.abs(rho.T @ rho - np.eye(d)).max() >= ORTHO_TOL:
        raise InputError("rotation is not orthogonal")
    if np.linalg.det(rho) <= 0:
        raise InputError("rotation must have positive determinant")
    return rho


def frame_is_regular(frame: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.abs(frame.T @ frame - np.eye(frame.shape[0])).max() < tol)


@dataclass(frozen=True, eq=False)
class CrossConfig:
    center: np.ndarray
    scale: float
    rotation: np.ndarray
    frame: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        d = c.size
        rho = check_rotation(self.rotation)
        if rho.shape[0] != d:
            raise InputError("rotation and center dimensions differ")
        frame = np.eye(d) if self.frame is None else np.asarray(self.frame, dtype=float)
        if frame.shape != (d, d):
            raise InputError("frame must be a d x d matrix")
        if abs(np.linalg.det(frame)) < 1e-14:
            raise InputError("frame vectors must be linearly independent")
        if not self.scale > 0:
            raise InputError("scale must be positive")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "rotation", rho)
        object.__setattr__(self, "frame", frame)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def regular(self) -> bool:
        return frame_is_regular(self.frame)

    def replace(self, **changes) -> "CrossConfig":
        fields = dict(center=self.center, scale=self.scale, rotation=self.rotation, frame=self.frame)
        fields.update(changes)
        return CrossConfig(**fields)

    def to_document(self) -> dict:
        return {
            "center": self.center.tolist(),
            "scale": self.scale,
            "rotation": self.rotation.tolist(),
            "frame": self.frame.tolist(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> "CrossConfig":
        unknown = set(doc) - {"center", "scale", "rotation", "frame"}
        if unknown:
            raise InputError(f"unknown configuration fields: {sorted(unknown)}")
        try:
            return cls(
                center=np.asarray(doc["center"], dtype=float),
                scale=float(doc["scale"]),
                rotation=np.asarray(doc["rotation"], dtype=float),
                frame=None if doc.get("frame") is None else np.asarray(doc["frame"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed configuration: {exc}") from None


@dataclass(frozen=True, eq=False)
class ChordData:
    a: np.ndarray
    b: np.ndarray
    s: np.ndarray = field(init=False)
    t: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "s", self.a + self.b)
        object.__setattr__(self, "t", self.a - self.b)

    @property
    def mean_length(self) -> float:
        return float(np.mean(self.s))


@dataclass(frozen=True, eq=False)
class ResidualValue:
    form: str
    values: np.ndarray

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


# ---------------------------------------------------------------------------
# Vertices and residuals
# ---------------------------------------------------------------------------


def _signed_axes(config: CrossConfig) -> np.ndarray:
    """Rows ``+rho e_1, -rho e_1, ...``: shape ``(2d, d)``."""
    axes = (config.rotation @ config.frame).T
    return np.repeat(axes, 2, axis=0) * np.tile([1.0, -1.0], config.dim)[:, None]


def vertices(config: CrossConfig) -> np.ndarray:
    return config.center + config.scale * _signed_axes(config)


def _check_dims(body: ImplicitBody, config: CrossConfig):
    if body.dim != config.dim:
        raise InputError(f"body has dimension {body.dim}, configuration {config.dim}")


def levelset_values(body: ImplicitBody, config: CrossConfig) -> np.ndarray:
    _check_dims(body, config)
    return body.value(vertices(config))


def residual_levelset(body: ImplicitBody, config: CrossConfig) -> ResidualValue:
    return ResidualValue("levelset", levelset_values(body, config))


def _chord_axes(body, p, rho, frame):
    if not body.convex:
        raise UnsupportedFormError("the chord residual needs a convex body")
    frame = np.eye(len(p)) if frame is None else np.asarray(frame, dtype=float)
    if not frame_is_regular(frame):
        raise UnsupportedFormError("the chord residual needs an orthonormal frame")
    if not body.value(p) < 0:
        raise PreconditionError("chord centre is not interior to the body")
    return (rho @ frame).T


def chords(body: ImplicitBody, p, rho, frame=None) -> ChordData:
    p = np.asarray(p, dtype=float)
    if body.dim != p.size:
        raise InputError("point and body dimensions differ")
    axes = _chord_axes(body, p, np.asarray(rho, dtype=float), frame)
    a = np.array([ray_intersect(body, p, u) for u in axes])
    b = np.array([ray_intersect(body, p, -u) for u in axes])
    return ChordData(a, b)


def _chord_vector(cd: ChordData) -> np.ndarray:
    return np.concatenate([cd.t, cd.s[:-1] - cd.mean_length])


def residual_chord(body: ImplicitBody, p, rho, frame=None) -> ResidualValue:
    return ResidualValue("chord", _chord_vector(chords(body, p, rho, frame)))


def residual_values(body: ImplicitBody, config: CrossConfig, form: Form) -> np.ndarray:
    if form == "levelset":
        return levelset_values(body, config)
    if form == "chord":
        return _chord_vector(chords(body, config.center, config.rotation, config.frame))
    raise InputError(f"unknown residual form {form!r}")


def chord_scale(body: ImplicitBody, config: CrossConfig) -> float:
    """The scale ``s_bar / 2`` implied by the chords at this centre and rotation."""
    return 0.5 * chords(body, config.center, config.rotation, config.frame).mean_length


# ---------------------------------------------------------------------------
# Chart on SO(d)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _skew_basis(d: int) -> np.ndarray:
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    B = np.zeros((len(pairs), d, d))
    for k, (i, j) in enumerate(pairs):
        B[k, j, i] = 1.0
        B[k, i, j] = -1.0
    B.setflags(write=False)
    return B


def skew(omega, d: int) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    B = _skew_basis(d)
    if omega.shape != (B.shape[0],):
        raise InputError(f"expected {B.shape[0]} rotation coordinates")
    return np.tensordot(omega, B, axes=1)


def vee(S: np.ndarray) -> np.ndarray:
    d = S.shape[0]
    return np.array([S[j, i] for i in range(d) for j in range(i + 1, d)])


def retract(rho, omega) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    return rho @ expm(skew(omega, rho.shape[0]))


def reorthonormalize(rho: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(rho)
    q = q * np.sign(np.diag(r))
    return q


def random_rotation(seed: int, d: int) -> np.ndarray:
    """QR of a Gaussian matrix with column signs fixed, then det forced to +1."""
    if d < 2:
        raise InputError("random rotations need d >= 2")
    g = np.random.default_rng(seed).standard_normal((d, d))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, -1] = -q[:, -1]
    return q


def rotation_dim(d: int) -> int:
    return d * (d - 1) // 2


def chart_dim(d: int, form: Form) -> int:
    return d + (1 if form == "levelset" else 0) + rotation_dim(d)


def apply_step(config: CrossConfig, delta: np.ndarray, form: Form) -> CrossConfig:
    """Move ``config`` by chart coordinates ``delta``."""
    d = config.dim
    x = config.center + delta[:d]
    k = d
    scale = config.scale
    if form == "levelset":
        scale = config.scale + delta[d]
        k += 1
    return config.replace(center=x, scale=scale, rotation=retract(config.rotation, delta[k:]))


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------


def _rotated_generators(config: CrossConfig) -> np.ndarray:
    """``rho @ B_k @ E``: shape ``(P, d, d)``; column ``i`` is the axis velocity."""
    return config.rotation @ _skew_basis(config.dim) @ config.frame


def _levelset_jacobian(body, config):
    d = config.dim
    verts = vertices(config)
    g = body.grad(verts)  # (2d, d)
    signs = np.tile([1.0, -1.0], d)
    axes = _signed_axes(config)
    gen = _rotated_generators(config)  # (P, d, d)
    # velocity of vertex (i, sign) along generator k: sign * lam * gen[k, :, i]
    vel = np.repeat(np.transpose(gen, (2, 0, 1)), 2, axis=0)  # (2d, P, d)
    dw = config.scale * signs[:, None] * np.einsum("vpd,vd->vp", vel, g)
    dl = np.sum(g * axes, axis=1)
    return np.hstack([g, dl[:, None], dw])


def _chord_jacobian(body, config):
    d = config.dim
    p = config.center
    axes = _chord_axes(body, p, config.rotation, config.frame)
    gen = _rotated_generators(config)
    P = gen.shape[0]
    dlen = np.zeros((2, d, d + P))  # [a|b], axis, chart coordinate
    for i, u in enumerate(axes):
        for j, sign in enumerate((1.0, -1.0)):
            w = sign * u
            ell = ray_intersect(body, p, w)
            g = body.grad(p + ell * w)
            slope = float(g @ w)
            dlen[j, i, :d] = -g / slope
            dlen[j, i, d:] = -ell * sign * (gen[:, :, i] @ g) / slope
    da, db = dlen
    dt = da - db
    ds = da + db
    return np.vstack([dt, ds[:-1] - ds.mean(axis=0)])


def jacobian(
    body: ImplicitBody,
    config: CrossConfig,
    form: Form = "levelset",
    method: Literal["analytic", "fd"] = "analytic",
    step: float = FD_STEP,
) -> np.ndarray:
    """Derivative of the residual with respect to the chart at ``config``.

    ``analytic`` differentiates through ``body.grad`` (and, for chords, the
    implicit derivative of the ray length); ``fd`` uses central differences.
    """
    _check_dims(body, config)
    if method == "analytic":
        if form == "levelset":
            return _levelset_jacobian(body, config)
        if form == "chord":
            return _chord_jacobian(body, config)
        raise InputError(f"unknown residual form {form!r}")
    if method != "fd":
        raise InputError(f"unknown jacobian method {method!r}")
    n = chart_dim(config.dim, form)
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = step
        plus = residual_values(body, apply_step(config, e, form), form)
        minus = residual_values(body, apply_step(config, -e, form), form)
        cols.append((plus - minus) / (2 * step))
    return np.stack(cols, axis=1)


def vertex_jacobian(config: CrossConfig) -> np.ndarray:
    """Derivative of the flattened vertex array w.r.t. the levelset chart."""
    d = config.dim
    signs = np.tile([1.0, -1.0], d)
    axes = _signed_axes(config)
    gen = _rotated_generators(config)
    vel = np.repeat(np.transpose(gen, (2, 0, 1)), 2, axis=0)  # (2d, P, d)
    dw = config.scale * signs[:, None, None] * vel
    J = np.concatenate(
        [np.broadcast_to(np.eye(d), (2 * d, d, d)), axes[:, :, None], np.transpose(dw, (0, 2, 1))],
        axis=2,
    )
    return J.reshape(2 * d * d, -1)


def hausdorff(A: np.ndarray, B: np.ndarray) -> float:
    """Hausdorff distance between two finite point sets."""
    D = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=-1)
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def config_distance(c1: CrossConfig, c2: CrossConfig) -> float:
    return hausdorff(vertices(c1), vertices(c2))
