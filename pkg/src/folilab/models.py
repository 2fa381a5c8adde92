"""Built-in foliated geometries.

* ``flat_torus``   flat ``T^n`` foliated by the first ``k`` coordinate circles.
* ``hopf_s3``      Hopf fibration of ``S^3``; ``epsilon != 1`` gives the Berger
                   sphere, built as a constant vertical warping of the round metric.
* ``hopf_warped``  ``hopf_s3`` warped by a basic function from a small catalog.
* ``s3_x_s1``      ``S^3 x S^1`` foliated by the Hopf circles of the first factor.
* ``torus_x_hopf`` ``T^n x S^3`` with leaves spanned by torus circles and Hopf circles.

``S^3`` is the unit quaternions with two stereographic charts.  The Hopf
circles are the orbits of left multiplication by ``exp(i t)``; the height
``x0^2 + x1^2 - x2^2 - x3^2`` is the coordinate of the base ``S^2`` used by the
warped family.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .foliation import FoliatedModel, warp_metric
from .geometry import Atlas, ChartPoint, MetricModel, PeriodicFactor, SphereFactor

MODEL_NAMES = ("flat_torus", "hopf_s3", "hopf_warped", "s3_x_s1", "torus_x_hopf")
PHI_FAMILIES = ("constant", "height")

_DEFAULTS = {
    "flat_torus": {"n": 3, "k": 1},
    "hopf_s3": {"epsilon": 1.0},
    "hopf_warped": {"epsilon": 1.0, "phi": "height", "lambda": 0.3},
    "s3_x_s1": {"epsilon": 1.0, "circle_radius": 1.0},
    "torus_x_hopf": {"n": 2, "k": 1, "epsilon": 1.0},
}


@dataclass(frozen=True)
class ModelSpec:
    name: str
    params: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        if self.name not in _DEFAULTS:
            raise ValidationError(f"unknown model {self.name!r}; choose from {', '.join(MODEL_NAMES)}")
        unknown = set(self.params) - set(_DEFAULTS[self.name])
        if unknown:
            raise ValidationError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        out = dict(_DEFAULTS[self.name])
        out.update(self.params)
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "params": self.resolved()}

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        if "name" not in data:
            raise ValidationError("model spec needs a 'name'")
        return cls(str(data["name"]), dict(data.get("params", {})))


def validate_spec(spec: ModelSpec) -> dict:
    """Resolved parameters, or ``ValidationError`` listing every violated range."""
    params = spec.resolved()
    problems = []
    if "epsilon" in params:
        eps = params["epsilon"]
        if not (isinstance(eps, (int, float)) and 0.0 < eps < 2.0):
            problems.append(f"epsilon={eps!r} not in (0, 2)")
    if "lambda" in params:
        lam = params["lambda"]
        if not (isinstance(lam, (int, float)) and np.isfinite(lam)):
            problems.append(f"lambda={lam!r} is not finite")
    if "phi" in params and params["phi"] not in PHI_FAMILIES:
        problems.append(f"phi={params['phi']!r} not in {PHI_FAMILIES}")
    if "circle_radius" in params:
        r = params["circle_radius"]
        if not (isinstance(r, (int, float)) and r > 0 and np.isfinite(r)):
            problems.append(f"circle_radius={r!r} must be positive")
    if "n" in params:
        n, k = params["n"], params["k"]
        limit = 6 if spec.name == "flat_torus" else 3
        if not (isinstance(n, int) and 1 <= n <= limit) or (spec.name == "flat_torus" and n < 2):
            low = 2 if spec.name == "flat_torus" else 1
            problems.append(f"n={n!r} not in [{low}, {limit}]")
        if not (isinstance(k, int) and 0 <= k):
            problems.append(f"k={k!r} must be a nonnegative integer")
        elif spec.name == "flat_torus" and not (1 <= k < n):
            problems.append(f"k={k!r} not in [1, n)")
        elif spec.name == "torus_x_hopf" and not (k <= n):
            problems.append(f"k={k!r} exceeds n={n!r}")
    if problems:
        raise ValidationError(f"invalid parameters for {spec.name}: " + "; ".join(problems))
    return params


# ---------------------------------------------------------------------------
# Quaternion helpers
# ---------------------------------------------------------------------------


def qmul(a, b):
    """Quaternion product, components ``(w, x, y, z)`` on the last axis (broadcasting)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a0, a1, a2, a3 = np.moveaxis(a, -1, 0)
    b0, b1, b2, b3 = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
            a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
            a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
            a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
        ],
        axis=-1,
    )


def qconj(a):
    a = np.asarray(a, dtype=float)
    return a * np.array([1.0, -1.0, -1.0, -1.0])


def hopf_field(x):
    """Unit Hopf field ``i x`` at points ``x`` of the unit sphere."""
    x = np.asarray(x, dtype=float)
    return np.stack([-x[..., 1], x[..., 0], -x[..., 3], x[..., 2]], axis=-1)


def hopf_projection(x):
    """Imaginary part of ``conj(x) i x``: the base point on the unit 2-sphere, in ``(i, j, k)``."""
    return qmul(qmul(qconj(x), np.array([0.0, 1.0, 0.0, 0.0])), x)[..., 1:]


def height(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0] ** 2 + x[..., 1] ** 2 - x[..., 2] ** 2 - x[..., 3] ** 2


def height_gradient(x):
    x = np.asarray(x, dtype=float)
    return 2.0 * x * np.array([1.0, 1.0, -1.0, -1.0])


class S3Block:
    """Round ``S^3`` pieces expressed in the stereographic coordinates of one atlas factor."""

    def __init__(self, atlas: Atlas, factor: int):
        self.atlas = atlas
        self.factor = factor
        self.sphere: SphereFactor = atlas.factors[factor]
        self.slice = atlas.coord_slice(factor)

    def local_chart(self, chart_id):
        return self.atlas.chart_tuple(chart_id)[self.factor]

    def quaternion(self, chart_id, u):
        u = np.asarray(u, dtype=float)
        return self.sphere.embed(self.local_chart(chart_id), u[..., self.slice])

    def jacobian(self, chart_id, u):
        u = np.asarray(u, dtype=float)
        return self.sphere.embed_jacobian(self.local_chart(chart_id), u[..., self.slice])

    def pushforward(self, chart_id, u, w):
        """Chart components (of the full manifold) of ambient tangent vectors ``w`` of ``S^3``."""
        u = np.asarray(u, dtype=float)
        E = self.jacobian(chart_id, u)
        s = 1.0 + np.sum(u[..., self.slice] ** 2, axis=-1)
        local = (s**2 / 4.0)[..., None] * np.einsum("...ai,...a->...i", E, w)
        out = np.zeros(u.shape[:-1] + (self.atlas.dimension,))
        out[..., self.slice] = local
        return out

    def pullback(self, chart_id, u, covector):
        """Chart components of an ambient covector restricted to ``S^3``."""
        u = np.asarray(u, dtype=float)
        E = self.jacobian(chart_id, u)
        out = np.zeros(u.shape[:-1] + (self.atlas.dimension,))
        out[..., self.slice] = np.einsum("...ai,...a->...i", E, covector)
        return out

    def round_metric(self, chart_id, u):
        v = np.asarray(u, dtype=float)[..., self.slice]
        s = 1.0 + np.sum(v * v, axis=-1)
        return (4.0 / s**2)[..., None, None] * np.eye(3)

    def round_christoffel(self, chart_id, u):
        v = np.asarray(u, dtype=float)[..., self.slice]
        s = 1.0 + np.sum(v * v, axis=-1, keepdims=True)
        df = -2.0 * v / s  # gradient of log(2 / s)
        eye = np.eye(3)
        return (
            eye[:, :, None] * df[..., None, None, :]
            + eye[:, None, :] * df[..., None, :, None]
            - eye[None, :, :] * df[..., :, None, None]
        )

    def vertical(self, chart_id, u):
        return self.pushforward(chart_id, u, hopf_field(self.quaternion(chart_id, u)))

    def lift_field(self, axis):
        """Velocity field of the horizontal lift of the base rotation about ``axis`` (unit, ``(i, j, k)``).

        Right multiplication by ``exp(t a)`` commutes with the Hopf action and
        rotates the base; its horizontal part is the lift.
        """
        a = np.concatenate([[0.0], np.asarray(axis, dtype=float)])

        def velocity(chart_id, u):
            x = self.quaternion(chart_id, u)
            kx = qmul(x, a)
            v = hopf_field(x)
            hx = kx - np.sum(kx * v, axis=-1, keepdims=True) * v
            return self.pushforward(chart_id, u, hx)

        return velocity

    def point_from_quaternion(self, x, extra=None) -> ChartPoint:
        """Chart point for a quaternion (and coordinates of the other factors)."""
        n = self.atlas.dimension
        u = np.zeros(n) if extra is None else np.array(extra, dtype=float)
        charts = [0] * len(self.atlas.factors)
        local = 0 if x[3] < 0 else 1
        charts[self.factor] = local
        u[self.slice] = self.sphere.coords(local, np.asarray(x, dtype=float))
        cid = self.atlas.chart_id(charts)
        cid, u = self.atlas.best_chart(cid, u)
        return ChartPoint(cid, u)


# ---------------------------------------------------------------------------
# Constructors
# ---------------------------------------------------------------------------


def _flat_torus(n: int, k: int) -> FoliatedModel:
    atlas = Atlas([PeriodicFactor(n, 1.0)])
    eye = np.eye(n)

    def metric_fn(chart_id, u):
        u = np.asarray(u)
        return np.broadcast_to(eye, u.shape[:-1] + (n, n)).copy()

    def christoffel_fn(chart_id, u):
        u = np.asarray(u)
        return np.zeros(u.shape[:-1] + (n, n, n))

    def frame_fn(chart_id, u):
        u = np.asarray(u)
        return np.broadcast_to(eye[:, :k], u.shape[:-1] + (n, k)).copy()

    metric = MetricModel(n, atlas, metric_fn, christoffel_fn, name="flat_torus")
    return FoliatedModel(
        metric, frame_fn, k, totally_geodesic_claimed=True, name="flat_torus",
        extras={"loop_family": "torus", "horizontal_axes": list(range(k, n))},
    )


def _round_hopf() -> FoliatedModel:
    atlas = Atlas([SphereFactor()])
    block = S3Block(atlas, 0)

    def frame_fn(chart_id, u):
        return block.vertical(chart_id, u)[..., None]

    metric = MetricModel(3, atlas, block.round_metric, block.round_christoffel, name="hopf_s3")
    return FoliatedModel(
        metric, frame_fn, 1, totally_geodesic_claimed=True, name="hopf_s3",
        extras={"s3": block, "loop_family": "hopf"},
    )


def _constant_phi(value: float):
    def phi(chart_id, u):
        return np.full(np.asarray(u).shape[:-1], float(value))

    def dphi(chart_id, u):
        return np.zeros(np.asarray(u).shape)

    return phi, dphi


def _height_phi(block: S3Block, lam: float, offset: float = 0.0):
    def phi(chart_id, u):
        return offset + lam * height(block.quaternion(chart_id, u))

    def dphi(chart_id, u):
        x = block.quaternion(chart_id, u)
        return lam * block.pullback(chart_id, u, height_gradient(x))

    return phi, dphi


def _hopf(epsilon: float) -> FoliatedModel:
    fm = _round_hopf()
    if epsilon == 1.0:
        return fm
    phi, dphi = _constant_phi(np.log(epsilon))
    warped = warp_metric(fm, phi, dphi, name="hopf_s3")
    # a constant warping keeps the leaves totally geodesic
    return FoliatedModel(
        warped.metric, warped.vertical_frame_fn, 1, totally_geodesic_claimed=True,
        name="hopf_s3", extras=warped.extras,
    )


def _hopf_warped(epsilon: float, family: str, lam: float) -> FoliatedModel:
    base = _hopf(epsilon)
    block = base.extras["s3"]
    if family == "constant":
        phi, dphi = _constant_phi(lam)
    else:
        phi, dphi = _height_phi(block, lam)
    fm = warp_metric(base, phi, dphi, name="hopf_warped")
    fm.extras["phi_family"] = family
    fm.extras["lambda"] = lam
    return fm


def _s3_x_s1(epsilon: float, radius: float) -> FoliatedModel:
    atlas = Atlas([SphereFactor(), PeriodicFactor(1, 2.0 * np.pi)])
    block = S3Block(atlas, 0)
    log_eps = np.log(epsilon)

    def metric_fn(chart_id, u):
        u = np.asarray(u, dtype=float)
        g = np.zeros(u.shape[:-1] + (4, 4))
        g3 = block.round_metric(chart_id, u)
        if epsilon != 1.0:
            v = block.vertical(chart_id, u)[..., :3]
            gv = np.einsum("...ij,...j->...i", g3, v)
            g3 = g3 + np.expm1(2.0 * log_eps) * gv[..., :, None] * gv[..., None, :]
        g[..., :3, :3] = g3
        g[..., 3, 3] = radius**2
        return g

    christoffel_fn = None
    if epsilon == 1.0:
        def christoffel_fn(chart_id, u):
            u = np.asarray(u, dtype=float)
            out = np.zeros(u.shape[:-1] + (4, 4, 4))
            out[..., :3, :3, :3] = block.round_christoffel(chart_id, u)
            return out

    def frame_fn(chart_id, u):
        return block.vertical(chart_id, u)[..., None]

    metric = MetricModel(4, atlas, metric_fn, christoffel_fn, name="s3_x_s1")
    return FoliatedModel(
        metric, frame_fn, 1, totally_geodesic_claimed=True, name="s3_x_s1",
        extras={"s3": block, "loop_family": "hopf", "circle_axis": 3, "circle_length": 2.0 * np.pi * radius},
    )


def _torus_x_hopf(n: int, k: int, epsilon: float) -> FoliatedModel:
    atlas = Atlas([PeriodicFactor(n, 1.0), SphereFactor()])
    block = S3Block(atlas, 1)
    dim = n + 3
    log_eps = np.log(epsilon)

    def metric_fn(chart_id, u):
        u = np.asarray(u, dtype=float)
        g = np.zeros(u.shape[:-1] + (dim, dim))
        g[..., :n, :n] = np.eye(n)
        g3 = block.round_metric(chart_id, u)
        if epsilon != 1.0:
            v = block.vertical(chart_id, u)[..., n:]
            gv = np.einsum("...ij,...j->...i", g3, v)
            g3 = g3 + np.expm1(2.0 * log_eps) * gv[..., :, None] * gv[..., None, :]
        g[..., n:, n:] = g3
        return g

    def frame_fn(chart_id, u):
        u = np.asarray(u, dtype=float)
        F = np.zeros(u.shape[:-1] + (dim, k + 1))
        F[..., :k, :k] = np.eye(k)
        F[..., :, k] = block.vertical(chart_id, u)
        return F

    metric = MetricModel(dim, atlas, metric_fn, None, name="torus_x_hopf")
    return FoliatedModel(
        metric, frame_fn, k + 1, totally_geodesic_claimed=True, name="torus_x_hopf",
        extras={"s3": block, "loop_family": "hopf", "torus_vertical": k},
    )


def make_model(spec: ModelSpec | str, **params) -> FoliatedModel:
    """Construct a built-in foliated model from a :class:`ModelSpec` (or a name plus parameters)."""
    if isinstance(spec, str):
        spec = ModelSpec(spec, params)
    p = validate_spec(spec)
    if spec.name == "flat_torus":
        fm = _flat_torus(p["n"], p["k"])
    elif spec.name == "hopf_s3":
        fm = _hopf(float(p["epsilon"]))
    elif spec.name == "hopf_warped":
        fm = _hopf_warped(float(p["epsilon"]), p["phi"], float(p["lambda"]))
    elif spec.name == "s3_x_s1":
        fm = _s3_x_s1(float(p["epsilon"]), float(p["circle_radius"]))
    else:
        fm = _torus_x_hopf(p["n"], p["k"], float(p["epsilon"]))
    fm.extras["spec"] = ModelSpec(spec.name, p)
    return fm


def warping_function(fm: FoliatedModel):
    """``(phi, dphi)`` of the outermost warping applied to ``fm``, or ``None``."""
    warp = fm.extras.get("warp")
    if warp is None:
        return None
    return warp["phi"], warp["dphi"]


def s3_block(fm: FoliatedModel) -> Optional[S3Block]:
    return fm.extras.get("s3")
