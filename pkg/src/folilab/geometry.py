"""Chart-based Riemannian geometry: metrics, Christoffel symbols, curvature, geodesics.

Every manifold is described by an explicit atlas.  Points carry a chart id and
chart coordinates; tangent vectors carry components in the coordinate frame of
their base point's chart.  Metric functions are evaluated in batches (leading
axes are broadcast), which is what keeps the finite-difference stencils cheap.

Curvature convention: ``R(X, Y) = nabla_X nabla_Y - nabla_Y nabla_X - nabla_[X,Y]``
and the unreduced sectional curvature is ``<R(X, Y) Y, X>``, positive on the
round sphere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ArgumentError, DomainError, IntegrationError

CORE_FRACTION = 0.9
DEFAULT_FD_STEP = 1e-4

# 4th-order central difference stencil
_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])
_WEIGHTS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0


@dataclass(frozen=True, eq=False)
class ChartPoint:
    chart_id: int
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: ChartPoint
    components: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=float)
        if comps.shape != self.base.coords.shape:
            raise ArgumentError(
                f"components have shape {comps.shape}, base point has {self.base.coords.shape}"
            )
        object.__setattr__(self, "components", comps)


# ---------------------------------------------------------------------------
# Atlas factors
# ---------------------------------------------------------------------------


class SphereFactor:
    """Unit 3-sphere in R^4 with stereographic charts from the north (0) and south (1) poles.

    Chart domains are balls of radius ``radius`` around the origin.
    """

    dim = 3
    ambient_dim = 4
    n_charts = 2

    def __init__(self, radius: float = 2.0):
        self.radius = float(radius)

    @staticmethod
    def _sign(chart):
        return 1.0 if chart == 0 else -1.0

    def embed(self, chart, u):
        u = np.asarray(u, dtype=float)
        r2 = np.sum(u * u, axis=-1, keepdims=True)
        s = 1.0 + r2
        last = self._sign(chart) * (r2 - 1.0) / s
        return np.concatenate([2.0 * u / s, last], axis=-1)

    def embed_jacobian(self, chart, u):
        u = np.asarray(u, dtype=float)
        r2 = np.sum(u * u, axis=-1)[..., None, None]
        s = 1.0 + r2
        eye = np.eye(3)
        top = 2.0 * eye / s - 4.0 * u[..., :, None] * u[..., None, :] / s**2
        bottom = self._sign(chart) * 4.0 * u[..., None, :] / s**2
        return np.concatenate([top, bottom], axis=-2)

    def coords(self, chart, x):
        x = np.asarray(x, dtype=float)
        return x[..., :3] / (1.0 - self._sign(chart) * x[..., 3:4])

    def depth(self, chart, u):
        return np.linalg.norm(u, axis=-1) / self.radius

    def clearance(self, chart, u):
        return self.radius - np.linalg.norm(u, axis=-1)

    def ambient_distance(self, a, b):
        return np.linalg.norm(a - b, axis=-1)

    def random_ambient(self, rng):
        x = rng.standard_normal(4)
        return x / np.linalg.norm(x)


class PeriodicFactor:
    """Flat periodic coordinates (a torus factor) of period ``period``.

    The single chart is the box ``(-period/2, 3 period/2)^n``; leaving its core
    re-enters the same chart after reduction modulo the period.  The "ambient"
    representation is the unreduced coordinate itself.
    """

    n_charts = 1

    def __init__(self, n: int, period: float = 1.0):
        self.dim = int(n)
        self.ambient_dim = int(n)
        self.period = float(period)

    def embed(self, chart, u):
        return np.array(u, dtype=float)

    def embed_jacobian(self, chart, u):
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(np.eye(self.dim), u.shape + (self.dim,)).copy()

    def coords(self, chart, x):
        return np.mod(np.asarray(x, dtype=float), self.period)

    def depth(self, chart, u):
        return np.max(np.abs(np.asarray(u) - 0.5 * self.period), axis=-1) / self.period

    def clearance(self, chart, u):
        return self.period - np.max(np.abs(np.asarray(u) - 0.5 * self.period), axis=-1)

    def ambient_distance(self, a, b):
        d = np.mod(a - b + 0.5 * self.period, self.period) - 0.5 * self.period
        return np.linalg.norm(d, axis=-1)

    def random_ambient(self, rng):
        return rng.uniform(0.0, self.period, size=self.dim)


class Atlas:
    """Product atlas over a tuple of factors; chart ids are mixed-radix flattened."""

    def __init__(self, factors: Sequence):
        self.factors = tuple(factors)
        self.dims = [f.dim for f in self.factors]
        self.dimension = int(sum(self.dims))
        self._offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        amb = [f.ambient_dim for f in self.factors]
        self._amb_offsets = np.concatenate([[0], np.cumsum(amb)]).astype(int)
        self.ambient_dim = int(sum(amb))
        self._radix = [f.n_charts for f in self.factors]
        self.n_charts = int(np.prod(self._radix))

    # chart id bookkeeping
    def chart_tuple(self, chart_id):
        out = []
        for r in reversed(self._radix):
            out.append(chart_id % r)
            chart_id //= r
        return tuple(reversed(out))

    def chart_id(self, charts):
        cid = 0
        for c, r in zip(charts, self._radix):
            cid = cid * r + int(c)
        return cid

    def coord_slice(self, i):
        return slice(self._offsets[i], self._offsets[i + 1])

    def ambient_slice(self, i):
        return slice(self._amb_offsets[i], self._amb_offsets[i + 1])

    def _parts(self, u):
        return [u[..., self.coord_slice(i)] for i in range(len(self.factors))]

    def depth(self, chart_id, u):
        charts = self.chart_tuple(chart_id)
        return np.max(
            [f.depth(c, part) for f, c, part in zip(self.factors, charts, self._parts(u))], axis=0
        )

    def clearance(self, chart_id, u):
        charts = self.chart_tuple(chart_id)
        return np.min(
            [f.clearance(c, part) for f, c, part in zip(self.factors, charts, self._parts(u))],
            axis=0,
        )

    def embed(self, chart_id, u):
        charts = self.chart_tuple(chart_id)
        return np.concatenate(
            [f.embed(c, part) for f, c, part in zip(self.factors, charts, self._parts(u))],
            axis=-1,
        )

    def embed_jacobian(self, chart_id, u):
        u = np.asarray(u, dtype=float)
        charts = self.chart_tuple(chart_id)
        out = np.zeros(u.shape[:-1] + (self.ambient_dim, self.dimension))
        for i, (f, c, part) in enumerate(zip(self.factors, charts, self._parts(u))):
            out[..., self.ambient_slice(i), self.coord_slice(i)] = f.embed_jacobian(c, part)
        return out

    def coords_from_ambient(self, chart_id, x):
        charts = self.chart_tuple(chart_id)
        parts = [x[..., self.ambient_slice(i)] for i in range(len(self.factors))]
        return np.concatenate(
            [f.coords(c, part) for f, c, part in zip(self.factors, charts, parts)], axis=-1
        )

    def best_chart(self, chart_id, u):
        """Chart id and coordinates of the chart in which ``u`` sits deepest (per factor)."""
        charts = self.chart_tuple(chart_id)
        new_charts, new_parts = [], []
        for f, c, part in zip(self.factors, charts, self._parts(u)):
            x = f.embed(c, part)
            best = None
            for cand in range(f.n_charts):
                v = f.coords(cand, x)
                d = float(f.depth(cand, v))
                # prefer staying put on ties
                key = (d, cand != c)
                if best is None or key < best[0]:
                    best = (key, cand, v)
            new_charts.append(best[1])
            new_parts.append(best[2])
        return self.chart_id(new_charts), np.concatenate(new_parts)

    def transition(self, chart_from, u, chart_to):
        return self.coords_from_ambient(chart_to, self.embed(chart_from, u))

    def transition_jacobian(self, chart_from, u, chart_to):
        """Jacobian of the coordinate change ``u -> u'`` at ``u``."""
        v = self.transition(chart_from, u, chart_to)
        e_from = self.embed_jacobian(chart_from, u)
        e_to = self.embed_jacobian(chart_to, v)
        return np.linalg.lstsq(e_to, e_from, rcond=None)[0]

    def distance(self, p: ChartPoint, q: ChartPoint) -> float:
        xp = self.embed(p.chart_id, p.coords)
        xq = self.embed(q.chart_id, q.coords)
        sq = 0.0
        for i, f in enumerate(self.factors):
            s = self.ambient_slice(i)
            sq += float(f.ambient_distance(xp[s], xq[s])) ** 2
        return float(np.sqrt(sq))

    def random_point(self, rng) -> ChartPoint:
        x = np.concatenate([f.random_ambient(rng) for f in self.factors])
        start = 0
        cid, u = self.best_chart(start, self.coords_from_ambient(start, x))
        return ChartPoint(cid, u)

    def in_domain(self, chart_id, u, margin=0.0) -> bool:
        return bool(self.clearance(chart_id, u) > margin)


def recharter(atlas: Atlas, p: ChartPoint) -> ChartPoint:
    cid, u = atlas.best_chart(p.chart_id, p.coords)
    return ChartPoint(cid, u)


def transfer_vector(atlas: Atlas, v: TangentVector, chart_to: int) -> TangentVector:
    """Express ``v`` in chart ``chart_to``."""
    p = v.base
    if p.chart_id == chart_to:
        return v
    u_new = atlas.transition(p.chart_id, p.coords, chart_to)
    jac = atlas.transition_jacobian(p.chart_id, p.coords, chart_to)
    return TangentVector(ChartPoint(chart_to, u_new), jac @ v.components)


# ---------------------------------------------------------------------------
# Metric model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MetricModel:
    """A Riemannian manifold given by an atlas and a batched metric function.

    ``metric_fn(chart_id, u)`` maps coordinates of shape ``(..., n)`` to metric
    matrices of shape ``(..., n, n)``.  ``christoffel_fn`` (same calling
    convention, output ``(..., n, n, n)`` indexed ``[k, i, j]``) is optional.
    """

    dimension: int
    atlas: Atlas
    metric_fn: Callable[[int, np.ndarray], np.ndarray]
    christoffel_fn: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    fd_step: float = DEFAULT_FD_STEP
    name: str = ""
    meta: dict = field(default_factory=dict)

    def random_point(self, rng) -> ChartPoint:
        return self.atlas.random_point(rng)


def _check_domain(model: MetricModel, p: ChartPoint, margin: float = 0.0):
    if not (0 <= p.chart_id < model.atlas.n_charts):
        raise DomainError(f"unknown chart {p.chart_id}", chart_id=p.chart_id)
    if p.coords.shape != (model.dimension,):
        raise ArgumentError(f"point has {p.coords.shape} coordinates, expected {model.dimension}")
    if not model.atlas.in_domain(p.chart_id, p.coords, margin):
        raise DomainError(
            f"point {p.coords} is outside chart {p.chart_id} (required clearance {margin:g})",
            chart_id=p.chart_id,
        )


def metric_eval(model: MetricModel, p: ChartPoint) -> np.ndarray:
    _check_domain(model, p)
    return np.asarray(model.metric_fn(p.chart_id, p.coords), dtype=float)


def inner(model: MetricModel, x: TangentVector, y: TangentVector) -> float:
    _same_base(x, y)
    g = metric_eval(model, x.base)
    return float(x.components @ g @ y.components)


def norm(model: MetricModel, x: TangentVector) -> float:
    return float(np.sqrt(max(inner(model, x, x), 0.0)))


def _same_base(*vectors: TangentVector):
    b0 = vectors[0].base
    for v in vectors[1:]:
        b = v.base
        if b is b0:
            continue
        if b.chart_id != b0.chart_id or not np.array_equal(b.coords, b0.coords):
            raise ArgumentError("tangent vectors are based at different points")


# ---------------------------------------------------------------------------
# Finite differences
# ---------------------------------------------------------------------------


def stencil_points(u: np.ndarray, h: float) -> np.ndarray:
    """Points ``u + o h e_l`` of shape ``(n, 4, n)`` for the 4th-order stencil."""
    n = u.shape[-1]
    return u[..., None, None, :] + h * _OFFSETS[:, None] * np.eye(n)[:, None, :]


def stencil_derivative(values: np.ndarray, h: float, m_axis: int) -> np.ndarray:
    """Contract the stencil axis ``m_axis`` of ``values`` into a derivative."""
    return np.tensordot(values, _WEIGHTS, axes=([m_axis], [0])) / h


def usable_step(model: MetricModel, p: ChartPoint, h: float) -> float:
    """Shrink ``h`` until the stencil fits inside the chart, or raise."""
    clear = float(model.atlas.clearance(p.chart_id, p.coords))
    step = h
    for _ in range(5):
        if clear > 2.0 * step:
            return step
        step *= 0.5
    raise DomainError(
        f"point within {clear:.3g} of the boundary of chart {p.chart_id}; "
        f"finite differences need {2 * step:.3g}",
        chart_id=p.chart_id,
    )


def metric_derivative_batch(model: MetricModel, chart_id: int, u: np.ndarray, h: float):
    """Metric and its first derivatives at a batch of points.

    Returns ``g`` of shape ``(..., n, n)`` and ``dg[..., l, i, j] = d_l g_ij``.
    """
    n = u.shape[-1]
    batch = u.shape[:-1]
    pts = np.concatenate([u[..., None, :], stencil_points(u, h).reshape(batch + (4 * n, n))], axis=-2)
    vals = np.asarray(model.metric_fn(chart_id, pts), dtype=float)
    g = vals[..., 0, :, :]
    dg = stencil_derivative(vals[..., 1:, :, :].reshape(batch + (n, 4, n, n)), h, len(batch) + 1)
    return g, dg


def christoffels_from_metric(g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """``Gamma[k, i, j]`` from ``g`` and ``dg[l, i, j] = d_l g_ij`` (batched)."""
    ginv = np.linalg.inv(g)
    # lowered: Gamma_{l i j} = 1/2 (d_i g_lj + d_j g_li - d_l g_ij)
    d_i_glj = np.swapaxes(dg, -3, -2)  # [i, l, j] -> index as [l, i, j]
    low = 0.5 * (d_i_glj + np.swapaxes(d_i_glj, -2, -1) - dg)
    return np.einsum("...kl,...lij->...kij", ginv, low)


def christoffel_batch(model: MetricModel, chart_id: int, u: np.ndarray, h: Optional[float] = None):
    if model.christoffel_fn is not None:
        return np.asarray(model.christoffel_fn(chart_id, u), dtype=float)
    g, dg = metric_derivative_batch(model, chart_id, u, model.fd_step if h is None else h)
    return christoffels_from_metric(g, dg)


def christoffels(model: MetricModel, p: ChartPoint, fd_step: Optional[float] = None) -> np.ndarray:
    """Christoffel symbols ``Gamma[k, i, j] = Gamma^k_{ij}`` at ``p``."""
    _check_domain(model, p)
    if model.christoffel_fn is not None and fd_step is None:
        return christoffel_batch(model, p.chart_id, p.coords)
    h = usable_step(model, p, model.fd_step if fd_step is None else fd_step)
    g, dg = metric_derivative_batch(model, p.chart_id, p.coords, h)
    return christoffels_from_metric(g, dg)


def riemann_tensor(model: MetricModel, p: ChartPoint) -> np.ndarray:
    """Components ``R[l, k, i, j]`` with ``R(d_i, d_j) d_k = R[l, k, i, j] d_l``."""
    _check_domain(model, p)
    h_in = usable_step(model, p, model.fd_step)
    h_out = usable_step(model, p, 10.0 * model.fd_step)
    if h_out <= 2.0 * h_in:
        h_in = 0.25 * h_out
    u = p.coords
    n = model.dimension
    pts = np.concatenate([u[None, :], stencil_points(u, h_out).reshape(-1, n)], axis=0)
    gam = christoffel_batch(model, p.chart_id, pts, h_in)
    G = gam[0]
    dG = stencil_derivative(gam[1:].reshape(n, 4, n, n, n), h_out, 1)  # [a, l, i, j]
    R = (
        np.einsum("iljk->lkij", dG)
        - np.einsum("jlik->lkij", dG)
        + np.einsum("lim,mjk->lkij", G, G)
        - np.einsum("ljm,mik->lkij", G, G)
    )
    return R


def riemann(model: MetricModel, p: ChartPoint, x: TangentVector, y: TangentVector, z: TangentVector) -> TangentVector:
    """``R(X, Y) Z`` at ``p``."""
    _same_base(x, y, z)
    R = riemann_tensor(model, p)
    return TangentVector(p, np.einsum("lkij,i,j,k->l", R, x.components, y.components, z.components))


def sectional_from_tensor(R: np.ndarray, g: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.einsum("lkij,i,j,k,lm,m->", R, x, y, y, g, x))


def unreduced_sectional(model: MetricModel, x: TangentVector, y: TangentVector) -> float:
    """``<R(X, Y) Y, X>`` without dividing by the area term."""
    _same_base(x, y)
    p = x.base
    R = riemann_tensor(model, p)
    g = metric_eval(model, p)
    return sectional_from_tensor(R, g, x.components, y.components)


# ---------------------------------------------------------------------------
# RK4 integration with chart switching
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Raw output of :func:`integrate_state`: one record per step (and the start)."""

    t: np.ndarray
    chart_ids: np.ndarray
    coords: np.ndarray
    vectors: np.ndarray  # (N+1, n, m) tangent blocks in each record's chart

    def point(self, i) -> ChartPoint:
        return ChartPoint(int(self.chart_ids[i]), self.coords[i])


def integrate_state(
    model: MetricModel,
    start: ChartPoint,
    vectors: np.ndarray,
    rhs: Callable,
    dt: float,
    steps: int,
    t0: float = 0.0,
    core: float = CORE_FRACTION,
) -> Trajectory:
    """Classical RK4 for a point plus a block of tangent vectors.

    ``rhs(chart_id, t, x, W) -> (dx, dW)``.  After each step the point is moved
    to a better chart once it leaves the ``core`` fraction of its domain, and
    ``W`` is carried along with the transition Jacobian.
    """
    atlas = model.atlas
    chart = start.chart_id
    x = np.array(start.coords, dtype=float)
    W = np.array(vectors, dtype=float)
    if atlas.depth(chart, x) >= core:
        new_chart, x_new = atlas.best_chart(chart, x)
        W = atlas.transition_jacobian(chart, x, new_chart) @ W
        chart, x = new_chart, x_new
    ts = np.empty(steps + 1)
    charts = np.empty(steps + 1, dtype=int)
    xs = np.empty((steps + 1,) + x.shape)
    Ws = np.empty((steps + 1,) + W.shape)
    ts[0], charts[0], xs[0], Ws[0] = t0, chart, x, W
    t = t0
    for step in range(steps):
        try:
            k1x, k1w = rhs(chart, t, x, W)
            k2x, k2w = rhs(chart, t + 0.5 * dt, x + 0.5 * dt * k1x, W + 0.5 * dt * k1w)
            k3x, k3w = rhs(chart, t + 0.5 * dt, x + 0.5 * dt * k2x, W + 0.5 * dt * k2w)
            k4x, k4w = rhs(chart, t + dt, x + dt * k3x, W + dt * k3w)
        except DomainError as exc:
            raise IntegrationError(
                f"integration left chart {chart} at t={t:.6g}: {exc}",
                last_state=(t, ChartPoint(chart, x), W),
            ) from exc
        x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        W = W + (dt / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        t = t0 + (step + 1) * dt
        if atlas.depth(chart, x) >= core:
            new_chart, x_new = atlas.best_chart(chart, x)
            if atlas.depth(new_chart, x_new) >= 1.0:
                raise IntegrationError(
                    f"no chart covers the point reached at t={t:.6g}",
                    last_state=(ts[step], ChartPoint(int(charts[step]), xs[step]), Ws[step]),
                )
            W = atlas.transition_jacobian(chart, x, new_chart) @ W
            chart, x = new_chart, x_new
        ts[step + 1], charts[step + 1], xs[step + 1], Ws[step + 1] = t, chart, x, W
    return Trajectory(ts, charts, xs, Ws)


def geodesic_rhs(model: MetricModel):
    """Right-hand side for ``W = [v, ...]``: the first column is the velocity."""

    def rhs(chart, t, x, W):
        G = christoffel_batch(model, chart, x)
        v = W[:, 0]
        dW = np.zeros_like(W)
        dW[:, 0] = -np.einsum("kij,i,j->k", G, v, v)
        return v, dW

    return rhs


@dataclass(eq=False)
class GeodesicSegment:
    model: MetricModel
    t: np.ndarray
    chart_ids: np.ndarray
    coords: np.ndarray
    velocities: np.ndarray
    step: float

    @property
    def samples(self):
        out = []
        for i in range(len(self.t)):
            p = ChartPoint(int(self.chart_ids[i]), self.coords[i])
            out.append((float(self.t[i]), p, TangentVector(p, self.velocities[i])))
        return out

    def point(self, i) -> ChartPoint:
        return ChartPoint(int(self.chart_ids[i]), self.coords[i])

    def velocity(self, i) -> TangentVector:
        return TangentVector(self.point(i), self.velocities[i])

    def speeds(self) -> np.ndarray:
        out = np.empty(len(self.t))
        for i in range(len(self.t)):
            g = self.model.metric_fn(int(self.chart_ids[i]), self.coords[i])
            v = self.velocities[i]
            out[i] = np.sqrt(v @ g @ v)
        return out


def integrate_geodesic(model: MetricModel, v0: TangentVector, T: float, steps: int) -> GeodesicSegment:
    """Geodesic with initial velocity ``v0`` on ``[0, T]`` by RK4 with ``steps`` uniform steps."""
    if steps < 16:
        raise ArgumentError(f"steps must be at least 16, got {steps}")
    if not np.any(v0.components):
        raise ArgumentError("initial velocity is zero")
    _check_domain(model, v0.base)
    traj = integrate_state(
        model, v0.base, v0.components[:, None], geodesic_rhs(model), T / steps, steps
    )
    return GeodesicSegment(model, traj.t, traj.chart_ids, traj.coords, traj.vectors[:, :, 0], T / steps)
