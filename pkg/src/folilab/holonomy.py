"""Horizontal paths, holonomy transport and the groupoid of infinitesimal holonomy transformations.

Paths are concatenations of pieces (horizontal geodesics, or integral curves of
a horizontal velocity field).  Transport re-integrates each piece jointly with
the transported vectors, so the fields see exactly the RK4 stage points of the
curve.  Along a horizontal curve ``c``:

* holonomy fields solve   ``nabla_c' xi = -A*_c' xi - S_c' xi``
* dual holonomy fields    ``nabla_c' nu = -A*_c' nu + S_c' nu``

A :class:`HolonomyTransformation` stores the transported orthonormal vertical
frame of its source as a matrix in the orthonormal vertical frame of its
target.  Frames come from Gram-Schmidt on the model's vertical frame field,
which is a global field, so frames at the same point agree across charts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import (
    ArgumentError,
    ConditioningError,
    GroupoidError,
    ModelConsistencyError,
    SamplingError,
    TransportError,
)
from .foliation import FoliatedModel, PointData, gram_schmidt, unit_sphere_samples, vertical_projector
from .geometry import (
    ChartPoint,
    MetricModel,
    TangentVector,
    christoffel_batch,
    integrate_state,
    riemann_tensor,
    sectional_from_tensor,
)
from .models import hopf_field, hopf_projection
from .sampling import parallel_map, rng_for

DEFAULT_STEP = 0.02
LOOP_STEP = 0.01
POINT_TOL = 1e-7
DRIFT_LIMIT = 1e-6


# ---------------------------------------------------------------------------
# Pointwise frames (no derivatives needed)
# ---------------------------------------------------------------------------


def _metric_frame(fm: FoliatedModel, p: ChartPoint):
    g = np.asarray(fm.metric.metric_fn(p.chart_id, p.coords), dtype=float)
    F = np.asarray(fm.vertical_frame_fn(p.chart_id, p.coords), dtype=float)
    return g, F


def vertical_onb(fm: FoliatedModel, p: ChartPoint) -> np.ndarray:
    g, F = _metric_frame(fm, p)
    return gram_schmidt(F, g)


def horizontal_onb(fm: FoliatedModel, p: ChartPoint) -> np.ndarray:
    g, F = _metric_frame(fm, p)
    Ph = np.eye(fm.dimension) - vertical_projector(g, F)
    return gram_schmidt(Ph, g, rank=fm.horizontal_dim, pivot=True)


def random_horizontal_unit(fm: FoliatedModel, p: ChartPoint, rng) -> np.ndarray:
    Z = horizontal_onb(fm, p)
    c = rng.standard_normal(Z.shape[1])
    return Z @ (c / np.linalg.norm(c))


def _relative_verticality(fm, chart_ids, coords, vectors, horizontal_part: bool):
    """Per-record max over columns of the relative (horizontal or vertical) component."""
    out = np.zeros(len(chart_ids))
    if vectors.shape[-1] == 0:
        return out
    for chart in np.unique(chart_ids):
        mask = chart_ids == chart
        g = np.asarray(fm.metric.metric_fn(int(chart), coords[mask]), dtype=float)
        F = np.asarray(fm.vertical_frame_fn(int(chart), coords[mask]), dtype=float)
        Pv = vertical_projector(g, F)
        W = vectors[mask]
        part = W - Pv @ W if horizontal_part else Pv @ W
        num = np.einsum("bic,bij,bjc->bc", part, g, part)
        den = np.einsum("bic,bij,bjc->bc", W, g, W)
        ratio = np.sqrt(np.maximum(num, 0.0) / np.maximum(den, 1e-300))
        out[mask] = ratio.max(axis=-1)
    return out


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PathPiece:
    kind: str  # "geodesic" or "flow"
    start: ChartPoint
    duration: float
    steps: int
    velocity: Optional[np.ndarray] = None
    field: Optional[Callable] = None
    model: Optional[MetricModel] = None

    @property
    def dt(self) -> float:
        return self.duration / self.steps


@dataclass(eq=False)
class HorizontalPath:
    fm: FoliatedModel
    pieces: list
    t: np.ndarray
    chart_ids: np.ndarray
    coords: np.ndarray
    velocities: np.ndarray
    drift: np.ndarray
    closed: bool = False
    closure_gap: float = float("nan")
    label: str = ""

    @property
    def start(self) -> ChartPoint:
        return ChartPoint(int(self.chart_ids[0]), self.coords[0])

    @property
    def end(self) -> ChartPoint:
        return ChartPoint(int(self.chart_ids[-1]), self.coords[-1])

    def point(self, i) -> ChartPoint:
        return ChartPoint(int(self.chart_ids[i]), self.coords[i])

    def velocity(self, i) -> TangentVector:
        return TangentVector(self.point(i), self.velocities[i])

    @property
    def samples(self):
        return [(float(self.t[i]), self.point(i), self.velocity(i)) for i in range(len(self.t))]

    @property
    def max_drift(self) -> float:
        return float(self.drift.max()) if self.drift.size else 0.0

    def speeds(self) -> np.ndarray:
        out = np.empty(len(self.t))
        for chart in np.unique(self.chart_ids):
            mask = self.chart_ids == chart
            g = self.fm.metric.metric_fn(int(chart), self.coords[mask])
            v = self.velocities[mask]
            out[mask] = np.sqrt(np.einsum("bi,bij,bj->b", v, g, v))
        return out

    def length(self) -> float:
        total = 0.0
        speeds = self.speeds()
        for i in range(len(self.t) - 1):
            total += 0.5 * (speeds[i] + speeds[i + 1]) * (self.t[i + 1] - self.t[i])
        return total


def _path_rhs(fm: FoliatedModel, piece: PathPiece, n_hol: int, n_dual: int, n_par: int = 0):
    geo = piece.kind == "geodesic"
    path_model = piece.model if piece.model is not None else fm.metric
    same = path_model is fm.metric
    transport = (n_hol + n_dual + n_par) > 0
    off = 1 if geo else 0
    field_fn = piece.field

    def rhs(chart, t, x, W):
        pd = PointData(fm, ChartPoint(chart, x)) if transport else None
        dW = np.empty_like(W)
        if geo:
            v = W[:, 0]
            gam = pd.gamma if (pd is not None and same) else christoffel_batch(path_model, chart, x)
            dW[:, 0] = -np.einsum("kij,i,j->k", gam, v, v)
        else:
            v = np.asarray(field_fn(chart, x), dtype=float)
        if transport:
            base = -pd.conn_matrix(v) - pd.a_star_matrix(v)
            S = pd.s_matrix(v)
            if n_hol:
                dW[:, off:off + n_hol] = (base - S) @ W[:, off:off + n_hol]
            if n_dual:
                dW[:, off + n_hol:off + n_hol + n_dual] = (base + S) @ W[:, off + n_hol:off + n_hol + n_dual]
            if n_par:
                dW[:, off + n_hol + n_dual:] = base @ W[:, off + n_hol + n_dual:]
        return v, dW

    return rhs


def _run_piece(fm, piece: PathPiece, chart, x, W_fields, n_hol, n_dual, t0, n_par=0):
    """Integrate one piece from state ``(chart, x)`` carrying ``W_fields``."""
    atlas = fm.atlas
    start = piece.start
    if start.chart_id != chart:
        jac = atlas.transition_jacobian(chart, x, start.chart_id)
        W_fields = jac @ W_fields
    if piece.kind == "geodesic":
        W = np.concatenate([piece.velocity[:, None], W_fields], axis=1)
    else:
        W = W_fields
    traj = integrate_state(
        fm.metric, start, W, _path_rhs(fm, piece, n_hol, n_dual, n_par), piece.dt, piece.steps, t0=t0
    )
    if piece.kind == "geodesic":
        vel = traj.vectors[:, :, 0]
        fields = traj.vectors[:, :, 1:]
    else:
        vel = np.array([piece.field(int(c), u) for c, u in zip(traj.chart_ids, traj.coords)])
        fields = traj.vectors
    return traj, vel, fields


class PathBuilder:
    """Grow a horizontal path piece by piece from a start point."""

    def __init__(self, fm: FoliatedModel, start: ChartPoint, model: Optional[MetricModel] = None):
        self.fm = fm
        self.model = model
        self.pieces: list[PathPiece] = []
        self._records = []
        self.point = start
        self.t = 0.0
        self.last_velocity = None

    def _append(self, piece):
        traj, vel, _ = _run_piece(self.fm, piece, piece.start.chart_id, piece.start.coords,
                                  np.zeros((self.fm.dimension, 0)), 0, 0, self.t)
        self.pieces.append(piece)
        self._records.append((traj.t, traj.chart_ids, traj.coords, vel))
        self.point = traj.point(-1)
        self.last_velocity = vel[-1]
        self.t = float(traj.t[-1])
        return self

    def geodesic(self, velocity, duration: float, steps: int):
        return self._append(PathPiece("geodesic", self.point, float(duration), int(steps),
                                      velocity=np.asarray(velocity, dtype=float), model=self.model))

    def flow(self, field_fn, duration: float, steps: int):
        return self._append(PathPiece("flow", self.point, float(duration), int(steps), field=field_fn))

    def build(self, closed: bool = False, label: str = "") -> HorizontalPath:
        if self._records:
            t = np.concatenate([r[0] for r in self._records])
            charts = np.concatenate([r[1] for r in self._records])
            coords = np.concatenate([r[2] for r in self._records])
            vel = np.concatenate([r[3] for r in self._records])
        else:
            t = np.zeros(1)
            charts = np.array([self.point.chart_id])
            coords = self.point.coords[None, :].copy()
            vel = np.zeros((1, self.fm.dimension))
        drift = _relative_verticality(self.fm, charts, coords, vel[:, :, None], horizontal_part=False)
        drift[np.all(vel == 0, axis=1)] = 0.0
        path = HorizontalPath(self.fm, list(self.pieces), t, charts, coords, vel, drift, label=label)
        if closed:
            path.closed = True
            path.closure_gap = self.fm.atlas.distance(path.start, path.end)
        return path


def _steps_for(duration: float, max_step: float) -> int:
    return max(1, int(math.ceil(abs(duration) / max_step - 1e-12)))


def constant_path(fm: FoliatedModel, p: ChartPoint) -> HorizontalPath:
    return PathBuilder(fm, p).build()


def horizontal_geodesic(
    fm: FoliatedModel, p: ChartPoint, x: TangentVector | np.ndarray, T: float, steps: int,
    model: Optional[MetricModel] = None,
) -> HorizontalPath:
    """Geodesic with horizontal initial velocity; fails if horizontality is lost."""
    comps = x.components if isinstance(x, TangentVector) else np.asarray(x, dtype=float)
    g, F = _metric_frame(fm, p)
    vert = (vertical_projector(g, F) @ comps)
    if math.sqrt(max(vert @ g @ vert, 0.0)) > 1e-10 * max(1.0, math.sqrt(comps @ g @ comps)):
        raise ArgumentError("initial velocity is not horizontal")
    path = PathBuilder(fm, p, model).geodesic(comps, T, steps).build()
    if path.max_drift > 1e-5:
        raise ModelConsistencyError(f"horizontal geodesic drifted vertical by {path.max_drift:.3g}")
    return path


def random_horizontal_path(
    fm: FoliatedModel, p: ChartPoint, num_segments: int, seg_len: float, rng_seed,
    max_step: float = DEFAULT_STEP,
) -> HorizontalPath:
    """Broken horizontal geodesic with unit-speed segments in uniformly random horizontal directions."""
    if num_segments < 1:
        raise ArgumentError("num_segments must be at least 1")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    builder = PathBuilder(fm, p)
    steps = _steps_for(seg_len, max_step)
    for _ in range(num_segments):
        builder.geodesic(random_horizontal_unit(fm, builder.point, rng), seg_len, steps)
    return builder.build(label=f"random({num_segments}x{seg_len:g})")


def reverse_path(path: HorizontalPath) -> HorizontalPath:
    """The curve ``t -> c(1 - t)``, re-integrated from the end point."""
    fm = path.fm
    builder = PathBuilder(fm, path.end)
    for piece, idx in zip(reversed(path.pieces), _piece_end_indices(path)[::-1]):
        if piece.kind == "geodesic":
            builder.model = piece.model
            builder.geodesic(-path.velocities[idx], piece.duration, piece.steps)
        else:
            fn = piece.field
            builder.flow(lambda c, u, fn=fn: -np.asarray(fn(c, u)), piece.duration, piece.steps)
    return builder.build(closed=path.closed, label=f"reverse({path.label})")


def _piece_end_indices(path: HorizontalPath):
    out, idx = [], -1
    for piece in path.pieces:
        idx += piece.steps + 1
        out.append(idx)
    return out


def reparametrize(path: HorizontalPath, speed: float) -> HorizontalPath:
    """Same curve traversed ``speed`` times as fast (same number of steps)."""
    builder = PathBuilder(path.fm, path.start)
    for piece in path.pieces:
        if piece.kind == "geodesic":
            builder.model = piece.model
            builder.geodesic(speed * piece.velocity, piece.duration / speed, piece.steps)
        else:
            fn = piece.field
            builder.flow(lambda c, u, fn=fn: speed * np.asarray(fn(c, u)), piece.duration / speed, piece.steps)
    return builder.build(closed=path.closed, label=f"reparam({path.label})")


def concatenate(first: HorizontalPath, second: HorizontalPath) -> HorizontalPath:
    gap = first.fm.atlas.distance(first.end, second.start)
    if gap > POINT_TOL:
        raise GroupoidError(f"paths do not meet (gap {gap:.3g})")
    t_shift = first.t[-1] - second.t[0]
    pieces = list(first.pieces) + list(second.pieces)
    return HorizontalPath(
        first.fm, pieces,
        np.concatenate([first.t, second.t + t_shift]),
        np.concatenate([first.chart_ids, second.chart_ids]),
        np.concatenate([first.coords, second.coords]),
        np.concatenate([first.velocities, second.velocities]),
        np.concatenate([first.drift, second.drift]),
        label=f"{first.label}*{second.label}",
    )


# ---------------------------------------------------------------------------
# Transport
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FieldRun:
    """Joint transport output aligned with the path samples."""

    t: np.ndarray
    chart_ids: np.ndarray
    coords: np.ndarray
    velocities: np.ndarray
    hol: np.ndarray  # (N, n, a)
    dual: np.ndarray  # (N, n, b)
    par: Optional[np.ndarray] = None  # vertical-parallel block, nabla = -A*

    def point(self, i) -> ChartPoint:
        return ChartPoint(int(self.chart_ids[i]), self.coords[i])


def transport_block(fm: FoliatedModel, path: HorizontalPath, hol0=None, dual0=None, par0=None) -> FieldRun:
    """Transport blocks of vectors (columns, chart components at the path start) along ``path``.

    ``par0`` columns follow ``nabla_c' w = -A*_c' w``, which keeps them vertical
    with vanishing vertical covariant derivative.
    """
    n = fm.dimension

    def block(w):
        return np.zeros((n, 0)) if w is None else np.asarray(w, dtype=float).reshape(n, -1)

    hol0, dual0, par0 = block(hol0), block(dual0), block(par0)
    a, b, c = hol0.shape[1], dual0.shape[1], par0.shape[1]
    W = np.concatenate([hol0, dual0, par0], axis=1)
    if not path.pieces:
        return FieldRun(path.t.copy(), path.chart_ids.copy(), path.coords.copy(),
                        path.velocities.copy(), W[None, :, :a], W[None, :, a:a + b], W[None, :, a + b:])
    chart, x = path.start.chart_id, path.coords[0]
    ts, charts, xs, vs, Ws = [], [], [], [], []
    t0 = 0.0
    for piece in path.pieces:
        traj, vel, fields = _run_piece(fm, piece, chart, x, W, a, b, t0, c)
        ts.append(traj.t)
        charts.append(traj.chart_ids)
        xs.append(traj.coords)
        vs.append(vel)
        Ws.append(fields)
        chart, x, W, t0 = int(traj.chart_ids[-1]), traj.coords[-1], fields[-1], float(traj.t[-1])
    Wall = np.concatenate(Ws)
    return FieldRun(np.concatenate(ts), np.concatenate(charts), np.concatenate(xs),
                    np.concatenate(vs), Wall[:, :, :a], Wall[:, :, a:a + b], Wall[:, :, a + b:])


@dataclass(eq=False)
class TransportedField:
    path_ref: object
    kind: str
    t: np.ndarray
    chart_ids: np.ndarray
    coords: np.ndarray
    vectors: np.ndarray
    drift: np.ndarray

    @property
    def samples(self):
        return [
            (float(self.t[i]), TangentVector(ChartPoint(int(self.chart_ids[i]), self.coords[i]), self.vectors[i]))
            for i in range(len(self.t))
        ]

    def at(self, i) -> TangentVector:
        return TangentVector(ChartPoint(int(self.chart_ids[i]), self.coords[i]), self.vectors[i])

    @property
    def end(self) -> TangentVector:
        return self.at(-1)


def _check_vertical_start(fm, path, v: TangentVector, what):
    if fm.atlas.distance(v.base, path.start) > POINT_TOL:
        raise ArgumentError(f"{what} is not based at the path start")
    comps = v.components
    if v.base.chart_id != path.start.chart_id:
        comps = fm.atlas.transition_jacobian(v.base.chart_id, v.base.coords, path.start.chart_id) @ comps
    g, F = _metric_frame(fm, path.start)
    hor = comps - vertical_projector(g, F) @ comps
    if math.sqrt(max(hor @ g @ hor, 0.0)) > 1e-8 * max(1.0, math.sqrt(comps @ g @ comps)):
        raise ArgumentError(f"{what} is not vertical")
    return comps


def _field_from_run(fm, path, run: FieldRun, kind: str, drift_limit: float) -> TransportedField:
    block = run.hol if kind == "holonomy" else run.dual
    drift = _relative_verticality(fm, run.chart_ids, run.coords, block, horizontal_part=True)
    bad = np.nonzero(drift > drift_limit)[0]
    if bad.size:
        i = int(bad[0])
        raise TransportError(
            f"{kind} field lost verticality ({drift[i]:.3g}) at t={run.t[i]:.6g}",
            time=float(run.t[i]), last_state=run.point(i),
        )
    return TransportedField(path, kind, run.t, run.chart_ids, run.coords, block[:, :, 0], drift)


def transport_holonomy(fm: FoliatedModel, path: HorizontalPath, xi0: TangentVector,
                       drift_limit: float = DRIFT_LIMIT) -> TransportedField:
    comps = _check_vertical_start(fm, path, xi0, "xi0")
    run = transport_block(fm, path, hol0=comps[:, None])
    return _field_from_run(fm, path, run, "holonomy", drift_limit)


def transport_dual(fm: FoliatedModel, path: HorizontalPath, nu0: TangentVector,
                   drift_limit: float = DRIFT_LIMIT) -> TransportedField:
    comps = _check_vertical_start(fm, path, nu0, "nu0")
    run = transport_block(fm, path, dual0=comps[:, None])
    return _field_from_run(fm, path, run, "dual", drift_limit)


# ---------------------------------------------------------------------------
# The groupoid
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class HolonomyTransformation:
    fm: FoliatedModel
    source: ChartPoint
    target: ChartPoint
    matrix: np.ndarray
    source_frame: np.ndarray
    target_frame: np.ndarray
    path_ref: object = None

    @property
    def operator_norm(self) -> float:
        return float(np.linalg.svd(self.matrix, compute_uv=False)[0])

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)


def identity_transformation(fm: FoliatedModel, p: ChartPoint) -> HolonomyTransformation:
    E = vertical_onb(fm, p)
    return HolonomyTransformation(fm, p, p, np.eye(fm.leaf_dim), E, E, path_ref="identity")


def _coefficients(fm, p: ChartPoint, E: np.ndarray, W: np.ndarray) -> np.ndarray:
    g = np.asarray(fm.metric.metric_fn(p.chart_id, p.coords), dtype=float)
    return E.T @ g @ W


def lifted_transformations(fm: FoliatedModel, path: HorizontalPath, run: Optional[FieldRun] = None):
    """``c^(t)`` at every path sample: transformations from ``c(0)`` to ``c(t)``."""
    E0 = vertical_onb(fm, path.start)
    if run is None:
        run = transport_block(fm, path, hol0=E0)
    out = []
    for i in range(len(run.t)):
        q = run.point(i)
        Et = vertical_onb(fm, q)
        M = _coefficients(fm, q, Et, run.hol[i])
        out.append(HolonomyTransformation(fm, path.start, q, M, E0, Et, path_ref=(path, i)))
    return out


def holonomy_transformation(fm: FoliatedModel, path: HorizontalPath) -> HolonomyTransformation:
    E0 = vertical_onb(fm, path.start)
    run = transport_block(fm, path, hol0=E0)
    q = run.point(-1)
    Et = vertical_onb(fm, q)
    M = _coefficients(fm, q, Et, run.hol[-1])
    return HolonomyTransformation(fm, path.start, q, M, E0, Et, path_ref=path)


def compose(h2: HolonomyTransformation, h1: HolonomyTransformation) -> HolonomyTransformation:
    """``h2 o h1`` (first ``h1``, then ``h2``)."""
    gap = h1.fm.atlas.distance(h1.target, h2.source)
    if gap > POINT_TOL:
        raise GroupoidError(f"target of h1 and source of h2 differ by {gap:.3g}")
    return HolonomyTransformation(
        h1.fm, h1.source, h2.target, h2.matrix @ h1.matrix, h1.source_frame, h2.target_frame,
        path_ref=("compose", h2.path_ref, h1.path_ref),
    )


def invert(h: HolonomyTransformation, max_condition: float = 1e8) -> HolonomyTransformation:
    cond = np.linalg.cond(h.matrix)
    if not np.isfinite(cond) or cond > max_condition:
        raise ConditioningError(f"transformation has condition number {cond:.3g}")
    return HolonomyTransformation(
        h.fm, h.target, h.source, np.linalg.inv(h.matrix), h.target_frame, h.source_frame,
        path_ref=("inverse", h.path_ref),
    )


def _source_coefficients(h: HolonomyTransformation, v: TangentVector | np.ndarray) -> np.ndarray:
    if not isinstance(v, TangentVector):
        return np.asarray(v, dtype=float)
    fm = h.fm
    if fm.atlas.distance(v.base, h.source) > POINT_TOL:
        raise ArgumentError("vector is not based at the source of the transformation")
    comps = v.components
    if v.base.chart_id != h.source.chart_id:
        comps = fm.atlas.transition_jacobian(v.base.chart_id, v.base.coords, h.source.chart_id) @ comps
    return _coefficients(fm, h.source, h.source_frame, comps)


def zeta(h: HolonomyTransformation, xi0: TangentVector | np.ndarray) -> TangentVector:
    """The natural action ``h(xi0)``, a vertical vector at the target."""
    c = h.matrix @ _source_coefficients(h, xi0)
    return TangentVector(h.target, h.target_frame @ c)


def zeta_bar(h: HolonomyTransformation, nu0: TangentVector | np.ndarray) -> TangentVector:
    """The dual action ``(h*)^-1 nu0``."""
    c = np.linalg.solve(h.matrix.T, _source_coefficients(h, nu0))
    return TangentVector(h.target, h.target_frame @ c)


def rho(h: HolonomyTransformation, nu0: TangentVector | np.ndarray) -> float:
    """Squared norm of the dual action on the unit vector along ``nu0``."""
    c = _source_coefficients(h, nu0)
    c = c / np.linalg.norm(c)
    d = np.linalg.solve(h.matrix.T, c)
    return float(d @ d)


# ---------------------------------------------------------------------------
# Bounded holonomy
# ---------------------------------------------------------------------------


def _random_path_transformations(fm, p, index, num_segments, seg_len, seed, max_step):
    path = random_horizontal_path(fm, p, num_segments, seg_len, rng_for(seed, index), max_step)
    return lifted_transformations(fm, path)


@dataclass(eq=False)
class BoundEstimate:
    bound: float
    transformations: list
    per_path: np.ndarray


def holonomy_bound_samples(
    fm: FoliatedModel, p: ChartPoint, budget: int, num_segments: int = 3, seg_len: float = 0.5,
    seed: int = 0, max_step: float = DEFAULT_STEP,
) -> BoundEstimate:
    """Sample ``budget`` random paths from ``p``; the bound covers every lifted transformation and its inverse."""
    if budget < 1:
        raise ArgumentError("budget must be at least 1")
    runs = parallel_map(
        lambda i: _random_path_transformations(fm, p, i, num_segments, seg_len, seed, max_step),
        range(budget),
    )
    per_path = np.empty(budget)
    everything = []
    for i, hs in enumerate(runs):
        worst = 1.0
        for h in hs:
            s = h.singular_values()
            worst = max(worst, float(s[0]), float(1.0 / s[-1]))
        per_path[i] = worst
        everything.extend(hs)
    return BoundEstimate(float(per_path.max()), everything, per_path)


def holonomy_bound_estimate(
    fm: FoliatedModel, p: ChartPoint, budget: int, num_segments: int = 3, seg_len: float = 0.5,
    seed: int = 0, max_step: float = DEFAULT_STEP,
) -> float:
    return holonomy_bound_samples(fm, p, budget, num_segments, seg_len, seed, max_step).bound


# ---------------------------------------------------------------------------
# Supremum search for rho
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ThmMaxResult:
    h: HolonomyTransformation
    nu: TangentVector
    worst_margin: float
    best_rho: float
    evaluated: int
    margins: np.ndarray
    history: list = field(default_factory=list)  # (evaluated, best_rho) on improvement


def vertizontal_margin(fm: FoliatedModel, nu: TangentVector, num_x: int = 48) -> np.ndarray:
    """``K(X, nu) - |A*_X nu|^2`` over deterministic unit horizontal ``X`` at the base of ``nu``."""
    q = nu.base
    pd = PointData(fm, q)
    R = riemann_tensor(fm.metric, q)
    Z = pd.horizontal_onb()
    out = []
    for c in unit_sphere_samples(Z.shape[1], num_x):
        X = Z @ c
        K = sectional_from_tensor(R, pd.g, X, nu.components)
        a = pd.a_star_matrix(X) @ nu.components
        out.append(K - pd.inner(a, a))
    return np.array(out)


def thm_max_search(
    fm: FoliatedModel, p: ChartPoint, nu0: TangentVector | np.ndarray, budget: int, seed: int = 0,
    num_segments: int = 3, seg_len: float = 0.5, extension_len: float = 0.25,
    max_step: float = 0.05, num_x: int = 48,
) -> ThmMaxResult:
    """Stochastic search for large ``rho`` over transformations from ``p``.

    Moves alternate between fresh random paths from ``p`` and short random
    extensions of the incumbent.  Every recorded step of a move is one
    evaluated transformation; the search stops after ``budget`` of them.  A
    larger budget with the same seed replays the smaller search first, so the
    best ``rho`` is monotone in the budget.  The reported margin is evaluated
    at the best transformation found.
    """
    if budget < 1:
        raise ArgumentError("budget must be at least 1")
    E0 = vertical_onb(fm, p)
    c0 = _source_coefficients(HolonomyTransformation(fm, p, p, np.eye(fm.leaf_dim), E0, E0), nu0)
    c0 = c0 / np.linalg.norm(c0)
    best = {"rho": 1.0, "point": p, "W": E0.copy(), "M": np.eye(fm.leaf_dim), "ref": ("identity",)}
    evaluated = 0
    history = [(0, 1.0)]
    move = 0
    while evaluated < budget:
        rng = rng_for(seed, move)
        if move % 2 == 0:
            start, W0, ref0 = p, E0, ()
            lengths = [seg_len] * num_segments
        else:
            start, W0, ref0 = best["point"], best["W"], best["ref"]
            lengths = [extension_len]
        builder = PathBuilder(fm, start)
        for length in lengths:
            builder.geodesic(random_horizontal_unit(fm, builder.point, rng), length, _steps_for(length, max_step))
        path = builder.build()
        run = transport_block(fm, path, hol0=W0)
        for i in range(1, len(run.t)):
            if evaluated >= budget:
                break
            evaluated += 1
            q = run.point(i)
            M = _coefficients(fm, q, vertical_onb(fm, q), run.hol[i])
            d = np.linalg.solve(M.T, c0)
            r = float(d @ d)
            if r > best["rho"]:
                best = {"rho": r, "point": q, "W": run.hol[i].copy(), "M": M, "ref": ref0 + ((move, i),)}
                history.append((evaluated, r))
        move += 1
    q = best["point"]
    h = HolonomyTransformation(fm, p, q, best["M"], E0, vertical_onb(fm, q), path_ref=best["ref"])
    nu = zeta_bar(h, c0)
    margins = vertizontal_margin(fm, nu, num_x)
    return ThmMaxResult(h, nu, float(margins.max()), best["rho"], evaluated, margins, history)


# ---------------------------------------------------------------------------
# Dual leaves
# ---------------------------------------------------------------------------


class SpanAccumulator:
    """Span of vertical vectors pulled back to a base point, in orthonormal-frame coefficients."""

    def __init__(self, base: ChartPoint, leaf_dim: int, rel_tol: float = 1e-8, abs_tol: float = 1e-12):
        self.base = base
        self.leaf_dim = leaf_dim
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.vectors: list[np.ndarray] = []
        self.rank_history: list[int] = []

    def add(self, v) -> int:
        self.vectors.append(np.asarray(v, dtype=float).reshape(self.leaf_dim))
        r = self.rank
        self.rank_history.append(r)
        return r

    @property
    def singular_values(self) -> np.ndarray:
        if not self.vectors:
            return np.zeros(0)
        return np.linalg.svd(np.array(self.vectors).T, compute_uv=False)

    @property
    def rank(self) -> int:
        s = self.singular_values
        if s.size == 0 or s[0] <= self.abs_tol:
            return 0
        return int(np.sum(s > max(self.rel_tol * s[0], self.abs_tol)))

    def basis(self) -> np.ndarray:
        """Orthonormal basis (columns) of the span."""
        if not self.vectors:
            return np.zeros((self.leaf_dim, 0))
        u, _, _ = np.linalg.svd(np.array(self.vectors).T)
        return u[:, : self.rank]

    def complement(self) -> np.ndarray:
        if not self.vectors:
            return np.eye(self.leaf_dim)
        u, _, _ = np.linalg.svd(np.array(self.vectors).T)
        return u[:, self.rank:]


def dual_leaf_span(fm: FoliatedModel, path: HorizontalPath, num_times: int = 16) -> SpanAccumulator:
    """Accumulate ``c^(t)^-1 (A_c'(t) Z)`` over sampled times and a horizontal frame ``Z``."""
    if num_times < 2:
        raise ArgumentError("num_times must be at least 2")
    lifts = lifted_transformations(fm, path)
    acc = SpanAccumulator(path.start, fm.leaf_dim)
    idx = np.unique(np.linspace(0, len(lifts) - 1, num_times).round().astype(int))
    for i in idx:
        h = lifts[i]
        q = h.target
        pd = PointData(fm, q)
        v = path.velocities[i]
        Minv = np.linalg.inv(h.matrix)
        for Z in pd.horizontal_onb().T:
            a = pd.a(v, Z)
            acc.add(Minv @ (h.target_frame.T @ pd.g @ a))
    return acc


@dataclass
class OrthogonalityResult:
    applicable: bool
    a_star_residual: float = float("nan")
    span_residual: float = float("nan")

    @property
    def max_residual(self) -> float:
        if not self.applicable:
            return float("nan")
        return max(self.a_star_residual, self.span_residual)


def dual_orthogonality_check(fm: FoliatedModel, path: HorizontalPath, span: SpanAccumulator) -> OrthogonalityResult:
    """Transport a unit dual field orthogonal to the span and measure how orthogonal it stays."""
    if span.rank >= fm.leaf_dim:
        return OrthogonalityResult(False)
    E0 = vertical_onb(fm, path.start)
    c = span.complement()[:, 0]
    basis = span.basis()
    run = transport_block(fm, path, hol0=E0, dual0=E0 @ c)
    a_res = 0.0
    s_res = 0.0
    for i in range(len(run.t)):
        q = run.point(i)
        pd = PointData(fm, q)
        nu = run.dual[i, :, 0]
        a = pd.a_star_matrix(path.velocities[i]) @ nu
        a_res = max(a_res, pd.norm(a))
        if basis.shape[1]:
            pushed = run.hol[i] @ basis  # c^(t) applied to the span, chart components
            Q = gram_schmidt(pushed, pd.g)
            s_res = max(s_res, float(np.max(np.abs(Q.T @ pd.g @ nu))))
    return OrthogonalityResult(True, a_res, s_res)


# ---------------------------------------------------------------------------
# Closed loops and the holonomy group
# ---------------------------------------------------------------------------


def _ambient_lift_flow(x0, axes, T, steps):
    """RK4 in R^4 for the horizontal lifts of base rotations about each of ``axes``."""
    from .models import qmul

    a = np.concatenate([np.zeros((len(axes), 1)), axes], axis=1)
    # x -> x a and x -> i x are linear; build their matrices once
    basis = np.eye(4)
    R = np.stack([qmul(basis, np.broadcast_to(ai, (4, 4))).T for ai in a])
    L = hopf_field(basis).T
    x = np.tile(x0, (len(axes), 1))

    def f(x):
        kx = np.einsum("bij,bj->bi", R, x)
        v = x @ L.T
        return kx - np.sum(kx * v, axis=1, keepdims=True) * v

    dt = T / steps
    for _ in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def _fiber_offset(x0, x):
    ix0 = hopf_field(x0)
    return np.arctan2(x @ ix0, x @ x0)


def hopf_closed_loop(
    fm: FoliatedModel, p: ChartPoint, windings: int = 2, branch: int = 0, direction: float = 0.0,
    tol: float = 1e-6, max_step: float = LOOP_STEP,
) -> HorizontalPath:
    """Closed horizontal lift of a circle through the base point, traversed ``windings`` times.

    The base circles form a one-parameter family (their angular radius ``s``);
    the fiber offset of the lift's end point is driven to zero by a bracketed
    search on ``s``.  ``branch`` selects among the zeros in increasing ``s``.
    """
    block = fm.extras.get("s3")
    if block is None:
        raise ArgumentError(f"model {fm.name} has no Hopf factor")
    x0 = block.quaternion(p.chart_id, p.coords)
    b = hopf_projection(x0)
    helper = np.eye(3)[int(np.argmin(np.abs(b)))]
    e1 = np.cross(b, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(b, e1)
    w = math.cos(direction) * e1 + math.sin(direction) * e2
    T = windings * math.pi
    amb_steps = _steps_for(T, 0.005)

    def axes_for(s):
        s = np.atleast_1d(s)
        return np.cos(s)[:, None] * b + np.sin(s)[:, None] * w

    def offsets(s):
        return _fiber_offset(x0, _ambient_lift_flow(x0, axes_for(s), T, amb_steps))

    grid = np.linspace(0.0, math.pi, 24 * windings + 1)[1:-1]
    th = offsets(grid)
    roots = [
        i for i in range(len(grid) - 1)
        if th[i] == 0.0 or (np.sign(th[i]) != np.sign(th[i + 1]) and abs(th[i] - th[i + 1]) < math.pi)
    ]
    if branch >= len(roots):
        raise SamplingError(f"only {len(roots)} closing circles for {windings} windings", count=len(roots))
    lo, hi = grid[roots[branch]], grid[roots[branch] + 1]
    th_lo = th[roots[branch]]
    for _ in range(8):
        mids = np.linspace(lo, hi, 17)
        vals = offsets(mids)
        vals[0] = th_lo
        k = next((j for j in range(16) if np.sign(vals[j]) != np.sign(vals[j + 1]) or vals[j] == 0.0), 0)
        lo, hi, th_lo = mids[k], mids[k + 1], vals[k]
        if hi - lo < 1e-13:
            break
    s = 0.5 * (lo + hi)
    slope = float((offsets(s + 1e-6)[0] - offsets(s - 1e-6)[0]) / 2e-6)
    steps = _steps_for(T, max_step)
    path = None
    for _ in range(4):
        path = PathBuilder(fm, p).flow(block.lift_field(axes_for(s)[0]), T, steps).build(
            closed=True, label=f"hopf_loop(m={windings},branch={branch},dir={direction:.6g})"
        )
        if path.closure_gap <= tol or slope == 0.0:
            break
        s -= _fiber_offset(x0, block.quaternion(path.end.chart_id, path.end.coords)) / slope
    return path


def axis_closed_loop(fm: FoliatedModel, p: ChartPoint, axis: int, length: float, windings: int = 1,
                     max_step: float = DEFAULT_STEP) -> HorizontalPath:
    """Closed horizontal geodesic along a flat periodic coordinate direction."""
    v = np.zeros(fm.dimension)
    v[axis] = 1.0
    g, _ = _metric_frame(fm, p)
    v /= math.sqrt(v @ g @ v)
    T = windings * length
    return PathBuilder(fm, p).geodesic(v, T, _steps_for(T, max_step)).build(
        closed=True, label=f"axis_loop(axis={axis},w={windings})"
    )


def sample_closed_loop(fm: FoliatedModel, p: ChartPoint, index: int, seed: int, tol: float = 1e-6,
                       max_step: float = LOOP_STEP) -> HorizontalPath:
    """One closed horizontal loop at ``p`` drawn deterministically from ``(seed, index)``."""
    rng = rng_for(seed, index)
    family = fm.extras.get("loop_family")
    circle_axis = fm.extras.get("circle_axis")
    if family == "torus":
        axes = fm.extras["horizontal_axes"]
        return axis_closed_loop(fm, p, int(rng.choice(axes)), 1.0, int(rng.integers(1, 3)), max_step)
    if family == "hopf":
        if circle_axis is not None and rng.random() < 0.25:
            return axis_closed_loop(fm, p, circle_axis, fm.extras["circle_length"], 1, max_step)
        windings = int(rng.choice([2, 3]))
        branch = int(rng.integers(0, windings - 1))
        return hopf_closed_loop(fm, p, windings, branch, float(rng.uniform(0, 2 * math.pi)), tol, max_step)
    raise ArgumentError(f"model {fm.name} has no closed-loop family")


@dataclass(eq=False)
class InvariantMetric:
    Q: np.ndarray
    residual: float
    loops_used: int
    loops_checked: int
    elements: list


def invariant_metric_average(
    fm: FoliatedModel, p: ChartPoint, loop_budget: int = 8, seed: int = 0, tol: float = 1e-6,
    min_loops: int = 2, max_step: float = LOOP_STEP,
) -> InvariantMetric:
    """Average ``g^T g`` over sampled closed-loop transformations; check invariance on fresh loops.

    The first half of the budget builds the average, the second half is held
    out for the invariance residual ``max |g^T Q g - Q|``.
    """

    def attempt(i):
        try:
            loop = sample_closed_loop(fm, p, i, seed, tol, max_step)
        except SamplingError:
            return None
        if not loop.closure_gap <= tol:
            return None
        return holonomy_transformation(fm, loop).matrix

    mats = parallel_map(attempt, range(loop_budget))
    half = loop_budget // 2
    fit = [m for m in mats[:half] if m is not None]
    fresh = [m for m in mats[half:] if m is not None]
    if len(fit) < min_loops or len(fresh) < min_loops:
        raise SamplingError(
            f"found {len(fit)} + {len(fresh)} closed loops within budget {loop_budget}; need {min_loops} each",
            count=len(fit) + len(fresh),
        )
    Q = np.mean([m.T @ m for m in fit], axis=0)
    Q = 0.5 * (Q + Q.T)
    residual = max(float(np.linalg.norm(m.T @ Q @ m - Q, 2)) for m in fresh)
    return InvariantMetric(Q, residual, len(fit), len(fresh), fit + fresh)
