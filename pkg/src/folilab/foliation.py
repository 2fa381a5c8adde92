"""Vertical/horizontal splitting, the O'Neill tensors A, A* and S, warping and fatness.

A foliation is given by a metric model plus a vertical frame field.  All
tensors are evaluated from the projector field ``Pv`` (g-orthogonal projection
onto the span of the frame) and its first derivatives:

* ``A_X Y   = Pv (nabla_X (Ph Y~))``           for horizontal ``X, Y``
* ``S_X xi  = -Pv (nabla_xi (Ph X~))``         for horizontal ``X``, vertical ``xi``
* ``A*_X xi`` is the horizontal vector with ``<A*_X xi, Y> = <xi, A_X Y>``

where ``Y~`` is the extension of ``Y`` with constant chart components.  With
these signs a holonomy field satisfies ``nabla_c' xi = -A*_c' xi - S_c' xi``
and a vertical warping by ``exp(2 phi)`` has ``<S_X xi, eta> = -dphi(X) <xi, eta>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import ArgumentError, DegeneracyError, NoKernelError, ValidationError
from .geometry import (
    ChartPoint,
    MetricModel,
    TangentVector,
    _check_domain,
    _same_base,
    christoffels_from_metric,
    stencil_derivative,
    stencil_points,
    usable_step,
)

VERTICALITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class FoliatedModel:
    """Metric model plus a batched vertical frame ``vertical_frame_fn(chart, u) -> (..., n, k)``."""

    metric: MetricModel
    vertical_frame_fn: Callable[[int, np.ndarray], np.ndarray]
    leaf_dim: int
    totally_geodesic_claimed: bool = False
    name: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.metric.dimension

    @property
    def horizontal_dim(self) -> int:
        return self.metric.dimension - self.leaf_dim

    @property
    def atlas(self):
        return self.metric.atlas

    def random_point(self, rng) -> ChartPoint:
        return self.metric.random_point(rng)


@dataclass(frozen=True, eq=False)
class Projectors:
    base: ChartPoint
    Pv: np.ndarray
    Ph: np.ndarray


@dataclass(frozen=True, eq=False)
class FatnessForm:
    base: ChartPoint
    xi: TangentVector
    omega: np.ndarray
    frame: np.ndarray  # orthonormal horizontal frame, columns


def vertical_projector(g: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Batched g-orthogonal projection onto the column span of ``frame``."""
    gf = g @ frame
    gram = np.swapaxes(frame, -1, -2) @ gf
    return frame @ np.linalg.solve(gram, np.swapaxes(gf, -1, -2))


def vertical_frame(fm: FoliatedModel, p: ChartPoint) -> list[TangentVector]:
    F = np.asarray(fm.vertical_frame_fn(p.chart_id, p.coords), dtype=float)
    return [TangentVector(p, F[:, j]) for j in range(F.shape[1])]


# ---------------------------------------------------------------------------
# Pointwise tensor data
# ---------------------------------------------------------------------------


class PointData:
    """Metric, connection and projector derivatives at one point.

    Everything the O'Neill tensors need comes from a single batched evaluation
    of the metric and frame on a 4th-order stencil.
    """

    def __init__(self, fm: FoliatedModel, p: ChartPoint, fd_step: Optional[float] = None):
        model = fm.metric
        self.point = p
        n = model.dimension
        h = usable_step(model, p, model.fd_step if fd_step is None else fd_step)
        u = p.coords
        pts = np.concatenate([u[None, :], stencil_points(u, h).reshape(4 * n, n)], axis=0)
        gs = np.asarray(model.metric_fn(p.chart_id, pts), dtype=float)
        fs = np.asarray(fm.vertical_frame_fn(p.chart_id, pts), dtype=float)
        pv = vertical_projector(gs, fs)
        self.g = gs[0]
        self.ginv = np.linalg.inv(self.g)
        self.frame = fs[0]
        self.Pv = pv[0]
        self.Ph = np.eye(n) - self.Pv
        # dPh[l, i, j] = d_l (Ph)^i_j
        self.dPh = -stencil_derivative(pv[1:].reshape(n, 4, n, n), h, 1)
        if model.christoffel_fn is not None:
            self.gamma = np.asarray(model.christoffel_fn(p.chart_id, u), dtype=float)
        else:
            dg = stencil_derivative(gs[1:].reshape(n, 4, n, n), h, 1)
            self.gamma = christoffels_from_metric(self.g, dg)

    # raw-array tensor algebra -------------------------------------------------

    def conn(self, x, y):
        return np.einsum("kij,i,j->k", self.gamma, x, y)

    def conn_matrix(self, x):
        """Matrix of ``W -> Gamma(x, W)``."""
        return np.einsum("kij,i->kj", self.gamma, x)

    def a_matrix(self, x):
        """Matrix ``M`` with ``A_x y = Pv M y`` for horizontal ``y``."""
        return np.einsum("l,lkj->kj", x, self.dPh) + self.conn_matrix(x)

    def a(self, x, y):
        return self.Pv @ (self.a_matrix(x) @ y)

    def a_bracket(self, x, y):
        """``A_x y`` as half the vertical part of the bracket of horizontal extensions."""
        dx = np.einsum("l,lkj->kj", x, self.dPh) @ y
        dy = np.einsum("l,lkj->kj", y, self.dPh) @ x
        return 0.5 * self.Pv @ (dx - dy)

    def a_star_matrix(self, x):
        """Matrix of ``xi -> A*_x xi`` (valid on vertical ``xi``)."""
        return self.Ph @ self.ginv @ self.a_matrix(x).T @ self.g

    def s_matrix(self, x):
        """Matrix of ``xi -> S_x xi`` (valid on vertical ``xi``, horizontal ``x``)."""
        n_x = np.einsum("ikj,j->ki", self.dPh, x) + self.conn_matrix(x)
        return -self.Pv @ n_x

    def holonomy_matrix(self, x):
        """Generator of the coordinate ODE for holonomy fields along velocity ``x``."""
        return -self.conn_matrix(x) - self.a_star_matrix(x) - self.s_matrix(x)

    def dual_matrix(self, x):
        """Generator of the coordinate ODE for dual holonomy fields along velocity ``x``."""
        return -self.conn_matrix(x) - self.a_star_matrix(x) + self.s_matrix(x)

    def inner(self, x, y):
        return float(x @ self.g @ y)

    def norm(self, x):
        return float(np.sqrt(max(x @ self.g @ x, 0.0)))

    def vertical_onb(self):
        return gram_schmidt(self.frame, self.g)

    def horizontal_onb(self):
        n = self.g.shape[0]
        k = self.frame.shape[1]
        return gram_schmidt(self.Ph @ np.eye(n), self.g, rank=n - k, pivot=True)


def point_data(fm: FoliatedModel, p: ChartPoint) -> PointData:
    _check_domain(fm.metric, p)
    return PointData(fm, p)


def gram_schmidt(vectors: np.ndarray, g: np.ndarray, rank: Optional[int] = None, pivot: bool = False, tol: float = 1e-10) -> np.ndarray:
    """g-orthonormalize columns.

    Without pivoting the columns are taken in order and must be independent.
    With pivoting the column of largest remaining norm is taken next (lowest
    index on ties) until ``rank`` vectors are collected.
    """
    cols = [np.array(v, dtype=float) for v in np.asarray(vectors, dtype=float).T]
    target = len(cols) if rank is None else rank
    out: list[np.ndarray] = []
    remaining = list(range(len(cols)))
    scale = max(1.0, max((float(np.sqrt(abs(c @ g @ c))) for c in cols), default=1.0))
    while len(out) < target:
        if not remaining:
            raise DegeneracyError("not enough independent vectors for an orthonormal frame")
        if pivot:
            norms = [float(np.sqrt(max(cols[i] @ g @ cols[i], 0.0))) for i in remaining]
            j = remaining[int(np.argmax(norms))]
        else:
            j = remaining[0]
        remaining.remove(j)
        v = cols[j]
        for e in out:
            v = v - (e @ g @ v) * e
        nv = float(np.sqrt(max(v @ g @ v, 0.0)))
        if nv <= tol * scale:
            if pivot:
                continue
            raise DegeneracyError("vertical frame is rank deficient")
        v = v / nv
        # second pass for stability
        for e in out:
            v = v - (e @ g @ v) * e
        v = v / np.sqrt(v @ g @ v)
        out.append(v)
        if pivot:
            for i in remaining:
                for e in out[-1:]:
                    cols[i] = cols[i] - (e @ g @ cols[i]) * e
    return np.array(out).T.reshape(g.shape[0], len(out))


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def projectors(fm: FoliatedModel, p: ChartPoint) -> Projectors:
    _check_domain(fm.metric, p)
    g = np.asarray(fm.metric.metric_fn(p.chart_id, p.coords), dtype=float)
    F = np.asarray(fm.vertical_frame_fn(p.chart_id, p.coords), dtype=float)
    gram = F.T @ g @ F
    sv = np.linalg.svd(gram, compute_uv=False)
    if sv.size == 0 or sv[-1] <= 1e-10 * max(1.0, sv[0]):
        raise DegeneracyError(f"vertical frame is rank deficient at chart {p.chart_id} point {p.coords}")
    Pv = vertical_projector(g, F)
    return Projectors(p, Pv, np.eye(fm.dimension) - Pv)


def _horizontal_input(pd: PointData, x: TangentVector, what: str) -> np.ndarray:
    comps = x.components
    vert = pd.norm(pd.Pv @ comps)
    if vert > VERTICALITY_TOL * max(1.0, pd.norm(comps)):
        raise ArgumentError(f"{what} is not horizontal (vertical part {vert:.3g})")
    return pd.Ph @ comps


def _vertical_input(pd: PointData, xi: TangentVector, what: str) -> np.ndarray:
    comps = xi.components
    hor = pd.norm(pd.Ph @ comps)
    if hor > VERTICALITY_TOL * max(1.0, pd.norm(comps)):
        raise ArgumentError(f"{what} is not vertical (horizontal part {hor:.3g})")
    return pd.Pv @ comps


def a_tensor(fm: FoliatedModel, x: TangentVector, y: TangentVector, method: str = "connection") -> TangentVector:
    """O'Neill ``A_X Y`` for horizontal ``X, Y``.

    ``method="bracket"`` evaluates ``1/2 [X~, Y~]^v`` instead, a second
    extension scheme used as a tensoriality self-check.
    """
    _same_base(x, y)
    pd = point_data(fm, x.base)
    xh = _horizontal_input(pd, x, "X")
    yh = _horizontal_input(pd, y, "Y")
    if method == "connection":
        out = pd.a(xh, yh)
    elif method == "bracket":
        out = pd.a_bracket(xh, yh)
    else:
        raise ArgumentError(f"unknown method {method!r}")
    return TangentVector(x.base, out)


def a_star(fm: FoliatedModel, x: TangentVector, xi: TangentVector) -> TangentVector:
    """Adjoint ``A*_X xi``: horizontal, with ``<A*_X xi, Y> = <xi, A_X Y>``."""
    _same_base(x, xi)
    pd = point_data(fm, x.base)
    xh = _horizontal_input(pd, x, "X")
    v = _vertical_input(pd, xi, "xi")
    return TangentVector(x.base, pd.a_star_matrix(xh) @ v)


def s_tensor(fm: FoliatedModel, x: TangentVector, xi: TangentVector) -> TangentVector:
    """Shape operator ``S_X xi`` of the leaves, vertical."""
    _same_base(x, xi)
    pd = point_data(fm, x.base)
    xh = _horizontal_input(pd, x, "X")
    v = _vertical_input(pd, xi, "xi")
    return TangentVector(x.base, pd.s_matrix(xh) @ v)


def warp_metric(
    fm: FoliatedModel,
    phi_fn: Callable[[int, np.ndarray], np.ndarray],
    dphi_fn: Callable[[int, np.ndarray], np.ndarray],
    *,
    check_points: int = 32,
    seed: int = 0,
    tol: float = 1e-8,
    name: Optional[str] = None,
) -> FoliatedModel:
    """Scale vertical lengths by ``exp(phi)``: ``g_phi(X + xi) = g(X) + exp(2 phi) g(xi)``.

    ``phi_fn`` and ``dphi_fn`` are batched like metric functions; ``dphi_fn``
    returns the differential as a covector in chart components.  The function
    must be basic (constant along leaves); this is checked at random points.
    """
    if not fm.totally_geodesic_claimed:
        raise ValidationError("vertical warping requires a model with totally geodesic leaves")
    rng = np.random.default_rng(seed)
    for _ in range(check_points):
        p = fm.random_point(rng)
        dphi = np.asarray(dphi_fn(p.chart_id, p.coords), dtype=float)
        F = np.asarray(fm.vertical_frame_fn(p.chart_id, p.coords), dtype=float)
        g = fm.metric.metric_fn(p.chart_id, p.coords)
        lengths = np.sqrt(np.einsum("ij,ik,kj->j", F, g, F))
        vert = np.abs(dphi @ F) / lengths
        if np.max(vert) > tol:
            raise ValidationError(
                f"warping function is not basic: |dphi(vertical)| = {np.max(vert):.3g} at chart "
                f"{p.chart_id} point {p.coords}"
            )
    base_metric = fm.metric.metric_fn
    frame_fn = fm.vertical_frame_fn

    def metric_fn(chart_id, u):
        g0 = np.asarray(base_metric(chart_id, u), dtype=float)
        F = np.asarray(frame_fn(chart_id, u), dtype=float)
        factor = np.expm1(2.0 * np.asarray(phi_fn(chart_id, u), dtype=float))
        return g0 + factor[..., None, None] * (g0 @ vertical_projector(g0, F))

    metric = replace(
        fm.metric,
        metric_fn=metric_fn,
        christoffel_fn=None,
        name=name or f"{fm.metric.name}+warp",
    )
    extras = dict(fm.extras)
    extras["warp"] = {"phi": phi_fn, "dphi": dphi_fn, "base": fm}
    return FoliatedModel(
        metric=metric,
        vertical_frame_fn=frame_fn,
        leaf_dim=fm.leaf_dim,
        totally_geodesic_claimed=False,
        name=name or f"{fm.name}+warp",
        extras=extras,
    )


def _unit_vertical_coefficients(pd: PointData, xi: TangentVector) -> np.ndarray:
    v = _vertical_input(pd, xi, "xi")
    nv = pd.norm(v)
    if abs(nv - 1.0) > 1e-8:
        raise ArgumentError(f"xi must be a unit vector (norm {nv:.12g})")
    return v


def _omega(pd: PointData, xi: np.ndarray):
    Z = pd.horizontal_onb()
    m = Z.shape[1]
    omega = np.empty((m, m))
    for i in range(m):
        M = pd.a_matrix(Z[:, i])
        omega[i] = (pd.Pv @ M @ Z).T @ pd.g @ xi
    return omega, Z


def fatness_form(fm: FoliatedModel, p: ChartPoint, xi: TangentVector) -> FatnessForm:
    """Skew form ``omega[i, j] = <A_{Z_i} Z_j, xi>`` on an orthonormal horizontal frame."""
    pd = point_data(fm, p)
    v = _unit_vertical_coefficients(pd, xi)
    omega, Z = _omega(pd, v)
    return FatnessForm(p, xi, omega, Z)


def unit_sphere_samples(k: int, count: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors in R^k (rows)."""
    if k == 1:
        return np.array([[1.0]])
    if k == 2:
        ang = np.pi * np.arange(count) / count  # xi and -xi give the same margin
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if k == 3:
        i = np.arange(count) + 0.5
        z = 1.0 - 2.0 * i / count
        r = np.sqrt(1.0 - z * z)
        th = np.pi * (1.0 + 5**0.5) * i
        return np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
    pts = np.random.default_rng(0).standard_normal((count, k))
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def fat_point_margin(fm: FoliatedModel, p: ChartPoint, num_xi_samples: int = 16) -> float:
    """Minimum over sampled unit vertical ``xi`` of the smallest singular value of ``omega``."""
    if num_xi_samples < 1:
        raise ArgumentError("num_xi_samples must be at least 1")
    pd = point_data(fm, p)
    E = pd.vertical_onb()
    margin = np.inf
    for c in unit_sphere_samples(fm.leaf_dim, num_xi_samples):
        omega, _ = _omega(pd, E @ c)
        if omega.size == 0:
            return 0.0
        margin = min(margin, float(np.linalg.svd(omega, compute_uv=False)[-1]))
    return float(margin)


def kernel_direction(fm: FoliatedModel, p: ChartPoint, xi: TangentVector, tol: float = 1e-6) -> TangentVector:
    """Unit horizontal ``X`` with ``A*_X xi = 0`` (null vector of the fatness form)."""
    pd = point_data(fm, p)
    v = _unit_vertical_coefficients(pd, xi)
    omega, Z = _omega(pd, v)
    _, s, vt = np.linalg.svd(omega)
    if s[-1] > tol * max(1.0, s[0]):
        raise NoKernelError(f"fatness form is nonsingular (smallest singular value {s[-1]:.3g})")
    c = vt[-1]
    c = c * np.sign(c[np.argmax(np.abs(c))])
    return TangentVector(p, Z @ c)
