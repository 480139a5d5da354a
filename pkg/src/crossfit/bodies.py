"""Level-set bodies: value/gradient oracles, ray casting, blending and JSON parsing.

Every body is described by a function ``f`` with ``f < 0`` strictly inside,
``f = 0`` on the surface and ``f > 0`` outside.  All ``value``/``grad``
methods are vectorised over leading axes: ``x`` has shape ``(..., d)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any

import jsonschema
import numpy as np
from scipy.optimize import linprog, minimize
from scipy.special import logsumexp, softmax

from .errors import (
    DegenerateFamilyError,
    InputError,
    NoIntersectionError,
    ParseError,
    PreconditionError,
)

ROOT_TOL = 1e-12
BRACKET_CAP = 2.0**40
UNIT_TOL = 1e-12


class ImplicitBody:
    """Base class.  Subclasses set the attributes below in ``__init__``."""

    kind: str
    dim: int
    interior_point: np.ndarray
    convex: bool
    # origin of central symmetry when known by construction, else None
    symmetry_center: np.ndarray | None = None
    # radius of an origin-centred ball containing the zero set
    bounding_radius: float

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _closed_form_ray(self, origin: np.ndarray, direction: np.ndarray) -> float | None:
        return None

    def to_document(self) -> dict:
        raise TypeError(f"{self.kind} bodies have no JSON representation")

    @property
    def centrally_symmetric(self) -> bool:
        return self.symmetry_center is not None

    @cached_property
    def inradius_estimate(self) -> float:
        """Shortest axis-aligned ray from the interior point to the surface."""
        p = self.interior_point
        hits = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            hits.append(ray_intersect(self, p, e))
            hits.append(ray_intersect(self, p, -e))
        return float(min(hits))

    def __repr__(self) -> str:
        return f"<{type(self).__name__} kind={self.kind} dim={self.dim}>"


def _check_point(body: ImplicitBody, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != body.dim:
        raise InputError(f"expected points of dimension {body.dim}, got shape {x.shape}")
    return x


def evaluate(body: ImplicitBody, x) -> float | np.ndarray:
    """Level-set value ``f(x)``; a float for a single point."""
    x = _check_point(body, x)
    v = body.value(x)
    return float(v) if x.ndim == 1 else v


def gradient(body: ImplicitBody, x) -> np.ndarray:
    x = _check_point(body, x)
    return body.grad(x)


# ---------------------------------------------------------------------------
# Analytic kinds
# ---------------------------------------------------------------------------


class Ball(ImplicitBody):
    """``f(x) = |x|^2 - r^2``."""

    kind = "ball"

    def __init__(self, dim: int, radius: float = 1.0):
        if dim < 1:
            raise InputError("dim must be positive")
        if not radius > 0:
            raise InputError("radius must be positive")
        self.dim = int(dim)
        self.radius = float(radius)
        self.interior_point = np.zeros(self.dim)
        self.convex = True
        self.symmetry_center = np.zeros(self.dim)
        self.bounding_radius = self.radius

    def value(self, x):
        return np.einsum("...i,...i->...", x, x) - self.radius**2

    def grad(self, x):
        return 2.0 * x

    def _closed_form_ray(self, origin, direction):
        q = np.full(self.dim, 1.0 / self.radius**2)
        return _quadric_root(q, origin, direction)

    def to_document(self):
        return {"kind": "ball", "dim": self.dim, "radius": self.radius}


class Ellipsoid(ImplicitBody):
    """``f(x) = sum (x_i / a_i)^2 - 1``."""

    kind = "ellipsoid"

    def __init__(self, semi_axes):
        a = np.asarray(semi_axes, dtype=float)
        if a.ndim != 1 or a.size < 1 or not np.all(a > 0):
            raise InputError("semi_axes must be a non-empty list of positive numbers")
        self.semi_axes = a
        self.dim = a.size
        self.interior_point = np.zeros(self.dim)
        self.convex = True
        self.symmetry_center = np.zeros(self.dim)
        self.bounding_radius = float(a.max())
        self._q = 1.0 / a**2

    def value(self, x):
        return np.einsum("...i,i->...", x * x, self._q) - 1.0

    def grad(self, x):
        return 2.0 * x * self._q

    def _closed_form_ray(self, origin, direction):
        return _quadric_root(self._q, origin, direction)

    def to_document(self):
        return {"kind": "ellipsoid", "semi_axes": self.semi_axes.tolist()}


def _quadric_root(q, origin, direction) -> float:
    # positive root of A a^2 + 2 B a + C with C < 0, in cancellation-free form
    A = float(np.dot(q, direction * direction))
    B = float(np.dot(q, origin * direction))
    C = float(np.dot(q, origin * origin)) - 1.0
    disc = math.sqrt(B * B - A * C)
    if B >= 0:
        return -C / (B + disc)
    return (disc - B) / A


class Superellipsoid(ImplicitBody):
    """``f(x) = sum (x_i / a_i)^n - 1`` with even ``n >= 2``."""

    kind = "superellipsoid"

    def __init__(self, semi_axes, exponent: int):
        a = np.asarray(semi_axes, dtype=float)
        if a.ndim != 1 or a.size < 1 or not np.all(a > 0):
            raise InputError("semi_axes must be a non-empty list of positive numbers")
        if int(exponent) != exponent or exponent < 2 or exponent % 2:
            raise InputError("exponent must be an even integer >= 2")
        self.semi_axes = a
        self.exponent = int(exponent)
        self.dim = a.size
        self.interior_point = np.zeros(self.dim)
        self.convex = True
        self.symmetry_center = np.zeros(self.dim)
        self.bounding_radius = float(np.linalg.norm(a))

    def value(self, x):
        return np.sum(_ipow(x / self.semi_axes, self.exponent), axis=-1) - 1.0

    def grad(self, x):
        n = self.exponent
        return n * _ipow(x / self.semi_axes, n - 1) / self.semi_axes

    def to_document(self):
        return {
            "kind": "superellipsoid",
            "semi_axes": self.semi_axes.tolist(),
            "exponent": self.exponent,
        }


def _ipow(y: np.ndarray, n: int) -> np.ndarray:
    # repeated squaring; np.power with large integer exponents is much slower
    out = np.ones_like(y)
    base = y
    while n:
        if n & 1:
            out = out * base
        n >>= 1
        if n:
            base = base * base
    return out


class SmoothedPolytope(ImplicitBody):
    """Log-sum-exp surrogate of ``{x : <n_j, x> <= c_j for all j}``.

    ``f(x) = log(sum_j exp(beta * (<n_j, x> - c_j))) / beta``.  It is convex,
    smooth, and bounded above the polytope's max-of-halfspaces function, so
    the smoothed body sits inside the polytope.
    """

    kind = "smoothed_polytope"

    def __init__(self, normals, offsets, sharpness: float):
        N = np.atleast_2d(np.asarray(normals, dtype=float))
        c = np.asarray(offsets, dtype=float).reshape(-1)
        if N.shape[0] != c.size:
            raise InputError("one offset per halfspace is required")
        if not sharpness > 0:
            raise InputError("sharpness must be positive")
        if np.any(np.linalg.norm(N, axis=1) == 0):
            raise InputError("halfspace normals must be nonzero")
        self.normals = N
        self.offsets = c
        self.sharpness = float(sharpness)
        self.dim = N.shape[1]
        self.convex = True

        box = np.empty((self.dim, 2))
        for k in range(self.dim):
            for j, sign in enumerate((-1.0, 1.0)):
                cost = np.zeros(self.dim)
                cost[k] = -sign
                res = linprog(cost, A_ub=N, b_ub=c, bounds=[(None, None)] * self.dim)
                if res.status == 3:
                    raise InputError("halfspaces do not bound a polytope")
                if res.status != 0:
                    raise InputError("halfspaces describe an empty polytope")
                box[k, j] = sign * -res.fun
        self.bounding_radius = float(np.linalg.norm(np.abs(box).max(axis=1)))

        # start from the Chebyshev centre, then descend to the minimiser of f
        norms = np.linalg.norm(N, axis=1)
        cost = np.zeros(self.dim + 1)
        cost[-1] = -1.0
        cheb = linprog(
            cost,
            A_ub=np.hstack([N, norms[:, None]]),
            b_ub=c,
            bounds=[(None, None)] * self.dim + [(0, None)],
        )
        x0 = cheb.x[: self.dim]
        best = minimize(self.value, x0, jac=self.grad, method="BFGS", options={"gtol": 1e-10})
        p = best.x if best.fun < self.value(x0) else x0
        if not self.value(p) < 0:
            raise InputError("sharpness too low: the smoothed body is empty")
        self.interior_point = p

        pairs = {(tuple(np.round(n, 12)), round(float(o), 12)) for n, o in zip(N, c)}
        mirrored = {(tuple(np.round(-n, 12) + 0.0), round(float(o), 12)) for n, o in zip(N, c)}
        self.symmetry_center = np.zeros(self.dim) if pairs == mirrored else None

    def value(self, x):
        z = self.sharpness * (x @ self.normals.T - self.offsets)
        return logsumexp(z, axis=-1) / self.sharpness

    def grad(self, x):
        z = self.sharpness * (x @ self.normals.T - self.offsets)
        return softmax(z, axis=-1) @ self.normals

    def to_document(self):
        return {
            "kind": "smoothed_polytope",
            "halfspaces": [
                {"normal": n.tolist(), "offset": float(o)} for n, o in zip(self.normals, self.offsets)
            ],
            "sharpness": self.sharpness,
        }


class PerturbedSphere(ImplicitBody):
    """Star-shaped sphere ``f(x) = |x| - r(x/|x|)``.

    ``r(u) = 1 + sum_m c_m * prod_k u_k^{e_mk}``.  With ``sum |c_m| < 0.5`` the
    radius stays in ``(0.5, 1.5)``.  ``f`` is not differentiable at the origin;
    there it is defined as ``-1`` with zero gradient.
    """

    kind = "perturbed_sphere"

    def __init__(self, dim: int, monomials, coeffs):
        E = np.asarray(monomials, dtype=int).reshape(-1, dim) if len(coeffs) else np.zeros((0, dim), int)
        c = np.asarray(coeffs, dtype=float).reshape(-1)
        if E.shape[0] != c.size:
            raise InputError("one coefficient per monomial is required")
        if np.any(E < 0):
            raise InputError("monomial exponents must be non-negative")
        if np.sum(np.abs(c)) >= 0.5:
            raise InputError("sum of |coefficients| must be below 0.5")
        self.dim = int(dim)
        self.exponents = E
        self.coeffs = c
        self.interior_point = np.zeros(self.dim)
        self.convex = False
        odd = E.sum(axis=1) % 2 == 1
        self.symmetry_center = None if np.any(c[odd] != 0) else np.zeros(self.dim)
        self.bounding_radius = 1.0 + float(np.sum(np.abs(c)))

    def radius(self, u: np.ndarray) -> np.ndarray:
        if not self.coeffs.size:
            return np.ones(u.shape[:-1])
        mono = np.prod(u[..., None, :] ** self.exponents, axis=-1)
        return 1.0 + mono @ self.coeffs

    def _radius_grad(self, u):
        g = np.zeros(u.shape)
        if not self.coeffs.size:
            return g
        powers = u[..., None, :] ** self.exponents
        for k in range(self.dim):
            e = self.exponents[:, k]
            part = powers.copy()
            part[..., k] = e * u[..., None, k] ** np.maximum(e - 1, 0)
            g[..., k] = np.prod(part, axis=-1) @ self.coeffs
        return g

    def value(self, x):
        n = np.linalg.norm(x, axis=-1)
        safe = np.where(n > 0, n, 1.0)
        u = x / safe[..., None]
        return np.where(n > 0, n - self.radius(u), -1.0)

    def grad(self, x):
        n = np.linalg.norm(x, axis=-1)
        safe = np.where(n > 0, n, 1.0)[..., None]
        u = x / safe
        gr = self._radius_grad(u)
        tangential = gr - np.sum(gr * u, axis=-1, keepdims=True) * u
        g = u - tangential / safe
        return np.where(n[..., None] > 0, g, 0.0)

    def to_document(self):
        return {
            "kind": "perturbed_sphere",
            "dim": self.dim,
            "coeffs": [{"monomial": e.tolist(), "c": float(c)} for e, c in zip(self.exponents, self.coeffs)],
        }


class MovedBody(ImplicitBody):
    """Rigid image ``{Q y + shift : y in base}`` of another body."""

    kind = "moved"

    def __init__(self, base: ImplicitBody, rotation, shift):
        Q = np.asarray(rotation, dtype=float)
        shift = np.asarray(shift, dtype=float)
        if Q.shape != (base.dim, base.dim) or shift.shape != (base.dim,):
            raise InputError("rigid motion does not match body dimension")
        if np.abs(Q.T @ Q - np.eye(base.dim)).max() > 1e-10:
            raise InputError("rigid motion must be orthogonal")
        self.base, self.rotation, self.shift = base, Q, shift
        self.dim = base.dim
        self.convex = base.convex
        self.interior_point = Q @ base.interior_point + shift
        self.symmetry_center = (
            None if base.symmetry_center is None else Q @ base.symmetry_center + shift
        )
        self.bounding_radius = base.bounding_radius + float(np.linalg.norm(shift))

    def value(self, x):
        return self.base.value((x - self.shift) @ self.rotation)

    def grad(self, x):
        return self.base.grad((x - self.shift) @ self.rotation) @ self.rotation.T


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------


def ray_intersect(body: ImplicitBody, origin, direction) -> float:
    """Smallest ``a > 0`` with ``f(origin + a * direction) = 0``.

    Quadrics use their closed-form root.  Everything else doubles a bracket
    until the sign changes, then runs a Newton/bisection hybrid.  For
    non-convex bodies each doubling interval is also sampled at 8 interior
    points so a thin excursion outside the surface is not skipped.
    """
    o = _check_point(body, origin)
    u = _check_point(body, direction)
    if abs(np.linalg.norm(u) - 1.0) > UNIT_TOL:
        raise InputError("direction must be a unit vector")
    f0 = float(body.value(o))
    if not f0 < 0:
        raise PreconditionError(f"ray origin is not strictly interior (f = {f0:.3g})")

    closed = body._closed_form_ray(o, u)
    if closed is not None:
        return closed

    def phi(a):
        return float(body.value(o + a * u))

    initial = 1e-3 * body.bounding_radius
    samples = 1 if body.convex else 8
    lo, f_lo, hi = 0.0, f0, initial
    while True:
        prev, f_prev = lo, f_lo
        found = False
        for k in range(1, samples + 1):
            a = lo + (hi - lo) * k / samples
            fa = phi(a)
            if fa >= 0:
                lo, f_lo, hi, f_hi = prev, f_prev, a, fa
                found = True
                break
            prev, f_prev = a, fa
        if found:
            break
        lo, f_lo = prev, f_prev
        hi *= 2.0
        if hi > BRACKET_CAP * initial:
            raise NoIntersectionError("ray did not leave the body before the bracket cap")
    if f_hi == 0.0:
        return hi
    return _refine_root(body, o, u, lo, hi)


def _refine_root(body, o, u, lo, hi) -> float:
    a = 0.5 * (lo + hi)
    for _ in range(200):
        x = o + a * u
        fa = float(body.value(x))
        if abs(fa) <= ROOT_TOL:
            return a
        if fa < 0:
            lo = a
        else:
            hi = a
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            return a
        slope = float(body.grad(x) @ u)
        step = a - fa / slope if slope != 0 else np.nan
        a = step if lo < step < hi else 0.5 * (lo + hi)
    return a


# ---------------------------------------------------------------------------
# Homotopy blending
# ---------------------------------------------------------------------------


class BlendedBody(ImplicitBody):
    """``f_t = (1 - t) f_start + t f_end``."""

    kind = "blend"

    def __init__(self, start: ImplicitBody, end: ImplicitBody, t: float):
        self.start, self.end, self.t = start, end, float(t)
        self.dim = start.dim
        self.convex = start.convex and end.convex
        if (
            start.symmetry_center is not None
            and end.symmetry_center is not None
            and np.allclose(start.symmetry_center, end.symmetry_center, atol=1e-12)
        ):
            self.symmetry_center = start.symmetry_center
        # f_t <= 0 forces min(f_start, f_end) <= 0
        self.bounding_radius = max(start.bounding_radius, end.bounding_radius)
        self.interior_point = self._find_interior()

    def value(self, x):
        return (1.0 - self.t) * self.start.value(x) + self.t * self.end.value(x)

    def grad(self, x):
        return (1.0 - self.t) * self.start.grad(x) + self.t * self.end.grad(x)

    def _find_interior(self) -> np.ndarray:
        x = np.array(self.start.interior_point, dtype=float)
        fx = float(self.value(x))
        step = 0.1 * self.bounding_radius
        for _ in range(1000):
            if fx < 0:
                return x
            g = self.grad(x)
            gn = float(np.linalg.norm(g))
            if gn == 0:
                break
            trial = x - step * g / gn
            ft = float(self.value(trial))
            if ft < fx:
                x, fx = trial, ft
                step *= 1.5
            else:
                step *= 0.5
        raise DegenerateFamilyError(f"blend at t={self.t} has no interior point near the start body")


@dataclass(frozen=True)
class HomotopyFamily:
    start: ImplicitBody
    end: ImplicitBody

    def __post_init__(self):
        if self.start.dim != self.end.dim:
            raise InputError(
                f"homotopy endpoints differ in dimension ({self.start.dim} vs {self.end.dim})"
            )

    @property
    def dim(self) -> int:
        return self.start.dim


def body_at(family: HomotopyFamily, t: float) -> BlendedBody:
    if not 0.0 <= t <= 1.0:
        raise InputError(f"homotopy parameter {t} outside [0, 1]")
    return BlendedBody(family.start, family.end, t)


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_VEC = {"type": "array", "items": _NUM, "minItems": 1}

BODY_SCHEMA: dict[str, Any] = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {
            "enum": ["ball", "ellipsoid", "superellipsoid", "smoothed_polytope", "perturbed_sphere"]
        },
        "dim": {"type": "integer", "minimum": 1},
        "radius": {"type": "number", "exclusiveMinimum": 0},
        "semi_axes": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "exponent": {"type": "integer"},
        "halfspaces": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["normal", "offset"],
                "additionalProperties": False,
                "properties": {"normal": _VEC, "offset": _NUM},
            },
        },
        "sharpness": {"type": "number"},
        "coeffs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["monomial", "c"],
                "additionalProperties": False,
                "properties": {
                    "monomial": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                    "c": _NUM,
                },
            },
        },
    },
}

_KIND_FIELDS = {
    "ball": ({"dim"}, {"radius"}),
    "ellipsoid": ({"semi_axes"}, {"dim"}),
    "superellipsoid": ({"semi_axes", "exponent"}, {"dim"}),
    "smoothed_polytope": ({"halfspaces", "sharpness"}, {"dim"}),
    "perturbed_sphere": (set(), {"dim", "coeffs"}),
}


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def parse_body(text: str | bytes | dict) -> ImplicitBody:
    """Build a body from its JSON document (string or already-decoded dict)."""
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError("$", f"invalid JSON: {exc.msg}") from None
    else:
        doc = text
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(BODY_SCHEMA).iter_errors(doc))
    if err is not None:
        raise ParseError(_json_path(err.absolute_path), err.message)

    kind = doc["kind"]
    required, optional = _KIND_FIELDS[kind]
    for key in doc:
        if key != "kind" and key not in required | optional:
            raise ParseError(f"$.{key}", f"field not used by kind {kind!r}")
    for key in sorted(required):
        if key not in doc:
            raise ParseError(f"$.{key}", f"required for kind {kind!r}")

    dim = doc.get("dim")

    def check_dim(n: int, where: str):
        if dim is not None and dim != n:
            raise ParseError("$.dim", f"dim {dim} disagrees with {where} (length {n})")

    try:
        if kind == "ball":
            return Ball(dim, doc.get("radius", 1.0))
        if kind == "ellipsoid":
            check_dim(len(doc["semi_axes"]), "semi_axes")
            return Ellipsoid(doc["semi_axes"])
        if kind == "superellipsoid":
            n = doc["exponent"]
            if n < 2 or n % 2:
                raise ParseError("$.exponent", "exponent must be an even integer >= 2")
            check_dim(len(doc["semi_axes"]), "semi_axes")
            return Superellipsoid(doc["semi_axes"], n)
        if kind == "smoothed_polytope":
            if not doc["sharpness"] > 0:
                raise ParseError("$.sharpness", "sharpness must be > 0")
            hs = doc["halfspaces"]
            n = len(hs[0]["normal"])
            for j, h in enumerate(hs):
                if len(h["normal"]) != n:
                    raise ParseError(f"$.halfspaces[{j}].normal", f"expected length {n}")
            check_dim(n, "halfspace normals")
            return SmoothedPolytope(
                [h["normal"] for h in hs], [h["offset"] for h in hs], doc["sharpness"]
            )
        # perturbed_sphere
        coeffs = doc.get("coeffs", [])
        if dim is None:
            if not coeffs:
                raise ParseError("$.dim", "dim is required when no coefficients are given")
            dim = len(coeffs[0]["monomial"])
        for j, term in enumerate(coeffs):
            if len(term["monomial"]) != dim:
                raise ParseError(f"$.coeffs[{j}].monomial", f"expected {dim} exponents")
        if sum(abs(t["c"]) for t in coeffs) >= 0.5:
            raise ParseError("$.coeffs", "sum of |c| must be below 0.5")
        return PerturbedSphere(dim, [t["monomial"] for t in coeffs], [t["c"] for t in coeffs])
    except InputError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError("$", str(exc)) from None
