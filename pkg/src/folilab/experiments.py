"""Verification experiments: configuration, dispatch and report files.

Each experiment kind draws ``samples`` independent cases from generators
derived from ``(seed, index)`` and condenses them into one
:class:`ExperimentReport`.  Mathematical failures never raise; they show up
as residuals and ``pass = False``.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, FolilabError, ModelConsistencyError, NoKernelError, ValidationError
from .foliation import FoliatedModel, PointData, fat_point_margin, kernel_direction, vertical_projector
from .geometry import ChartPoint, TangentVector, riemann_tensor, sectional_from_tensor
from .holonomy import (
    PathBuilder,
    _relative_verticality,
    axis_closed_loop,
    dual_leaf_span,
    dual_orthogonality_check,
    holonomy_bound_samples,
    holonomy_transformation,
    hopf_closed_loop,
    random_horizontal_path,
    random_horizontal_unit,
    rho,
    thm_max_search,
    transport_block,
    vertical_onb,
)
from .models import ModelSpec, make_model, validate_spec
from .sampling import parallel_map, rng_for

EXPERIMENT_KINDS = (
    "validate_model",
    "gray_oneill",
    "warped_curvature",
    "fatness_scan",
    "theorem_a",
    "thm_max",
    "holonomy_bound",
    "dual_leaf",
    "closed_loop",
    "duality_suite",
)

REPORT_KEYS = ("config", "timing_s", "num_samples", "max_residual", "margin", "pass", "details")

# fixed CSV schemas; other kinds use the union of detail keys
CSV_COLUMNS = {"gray_oneill": ("t", "K_riemann", "K_formula", "residual")}

# fourth-order stencils on five equally spaced samples
_SECOND = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_FIRST = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


@dataclass
class ExperimentConfig:
    model: ModelSpec
    experiment: str
    samples: int
    seed: int = 0
    tolerance: float = 1e-6
    output_path: Optional[str] = None
    options: dict = field(default_factory=dict)

    def validate(self):
        if self.experiment not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENT_KINDS)}")
        if not isinstance(self.samples, int) or isinstance(self.samples, bool) or self.samples < 1:
            raise ConfigError(f"samples must be a positive integer, got {self.samples!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"seed must be a nonnegative integer, got {self.seed!r}")
        if not (isinstance(self.tolerance, (int, float)) and self.tolerance > 0 and math.isfinite(self.tolerance)):
            raise ConfigError(f"tolerance must be a positive number, got {self.tolerance!r}")
        try:
            validate_spec(self.model)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_dict(self) -> dict:
        out = {
            "model": self.model.to_dict(),
            "experiment": self.experiment,
            "samples": self.samples,
            "seed": self.seed,
            "tolerance": self.tolerance,
            "output_path": self.output_path,
        }
        if self.options:
            out["options"] = dict(self.options)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        allowed = {"model", "experiment", "samples", "seed", "tolerance", "output_path", "options"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        missing = {"model", "experiment", "samples"} - set(data)
        if missing:
            raise ConfigError(f"missing configuration keys: {sorted(missing)}")
        model = data["model"]
        if isinstance(model, str):
            model = {"name": model}
        if not isinstance(model, dict):
            raise ConfigError("'model' must be a name or an object with 'name' and 'params'")
        try:
            spec = ModelSpec.from_dict(model)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        cfg = cls(
            model=spec,
            experiment=data["experiment"],
            samples=data["samples"],
            seed=data.get("seed", 0),
            tolerance=data.get("tolerance", 1e-6),
            output_path=data.get("output_path"),
            options=dict(data.get("options") or {}),
        )
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    timing_s: Optional[float]
    num_samples: int
    max_residual: Optional[float]
    margin: Optional[float]
    passed: bool
    details: list

    def to_dict(self) -> dict:
        return _clean({
            "config": self.config.to_dict(),
            "timing_s": self.timing_s,
            "num_samples": self.num_samples,
            "max_residual": self.max_residual,
            "margin": self.margin,
            "pass": self.passed,
            "details": self.details,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"


def _clean(obj):
    """Plain JSON types; non-finite floats become ``null``."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def emit_report(report: ExperimentReport, path) -> None:
    """Write the JSON report and its CSV sibling (one row per detail record)."""
    path = Path(path)
    path.write_text(report.to_json(), encoding="utf-8")
    data = report.to_dict()["details"]
    columns = CSV_COLUMNS.get(report.config.experiment)
    if columns is None:
        columns = []
        for row in data:
            for key in row:
                if key not in columns:
                    columns.append(key)
    with path.with_suffix(".csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in data:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _unit_vertical(fm: FoliatedModel, p: ChartPoint, rng) -> np.ndarray:
    E = vertical_onb(fm, p)
    c = rng.standard_normal(E.shape[1])
    return E @ (c / np.linalg.norm(c))


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def _max(values, empty=0.0):
    vals = [v for v in values if v is not None]
    if not vals:
        return empty
    if any(not math.isfinite(v) for v in vals):
        return math.inf
    return float(max(vals))


def _run_samples(fn, cfg: ExperimentConfig):
    """Evaluate ``fn(i, rng)`` for every sample; library failures become error records."""

    def one(i):
        try:
            return fn(i, rng_for(cfg.seed, i))
        except ModelConsistencyError:
            raise
        except FolilabError as exc:
            return [{"sample": i, "error": f"{type(exc).__name__}: {exc}", "residual": math.inf}]

    out = []
    for rows in parallel_map(one, range(cfg.samples)):
        out.extend(rows if isinstance(rows, list) else [rows])
    return out


def _option(cfg, name, default):
    return cfg.options.get(name, default)


# ---------------------------------------------------------------------------
# Experiment kinds
# ---------------------------------------------------------------------------


def _periodic_shifts(atlas):
    for i, factor in enumerate(atlas.factors):
        period = getattr(factor, "period", None)
        if period is None:
            continue
        sl = atlas.coord_slice(i)
        for j in range(sl.start, sl.stop):
            yield j, period
            yield j, -period


def _validate_model(fm, cfg):
    atlas = fm.atlas
    k = fm.leaf_dim

    def sample(i, rng):
        p = fm.random_point(rng)
        g = np.asarray(fm.metric.metric_fn(p.chart_id, p.coords), dtype=float)
        F = np.asarray(fm.vertical_frame_fn(p.chart_id, p.coords), dtype=float)
        scale = np.abs(g).max()
        sym = float(np.abs(g - g.T).max() / scale)
        min_eig = float(np.linalg.eigvalsh(0.5 * (g + g.T))[0])
        gram = F.T @ g @ F
        frame_rank = int(np.sum(np.linalg.svd(gram, compute_uv=False) > 1e-10 * np.abs(gram).max()))
        Pv = vertical_projector(g, F)
        idem = float(np.abs(Pv @ Pv - Pv).max())
        gp = g @ Pv
        selfadj = float(np.abs(gp - gp.T).max() / scale)
        trace = float(abs(np.trace(Pv) - k))
        overlap = 0.0
        checked = 0
        for other in range(atlas.n_charts):
            if other == p.chart_id:
                continue
            u2 = atlas.transition(p.chart_id, p.coords, other)
            if not atlas.in_domain(other, u2):
                continue
            J = atlas.transition_jacobian(p.chart_id, p.coords, other)
            g2 = np.asarray(fm.metric.metric_fn(other, u2), dtype=float)
            F2 = np.asarray(fm.vertical_frame_fn(other, u2), dtype=float)
            checked += 1
            overlap = max(overlap, float(np.abs(J.T @ g2 @ J - g).max() / scale))
            Pv2 = vertical_projector(g2, F2)
            overlap = max(overlap, float(np.abs(J @ Pv - Pv2 @ J).max() / max(1.0, np.abs(J).max())))
        # periodic factors overlap with their own translates
        for j, shift in _periodic_shifts(atlas):
            u2 = p.coords.copy()
            u2[j] += shift
            if not atlas.in_domain(p.chart_id, u2):
                continue
            g2 = np.asarray(fm.metric.metric_fn(p.chart_id, u2), dtype=float)
            Pv2 = vertical_projector(g2, np.asarray(fm.vertical_frame_fn(p.chart_id, u2), dtype=float))
            checked += 1
            overlap = max(overlap, float(np.abs(g2 - g).max() / scale), float(np.abs(Pv2 - Pv).max()))
        residual = max(sym, idem, selfadj, trace, overlap)
        if min_eig <= 0 or frame_rank != k:
            residual = math.inf
        return {
            "sample": i, "chart": p.chart_id, "min_eig": min_eig, "symmetry": sym,
            "overlap": overlap, "overlaps_checked": checked, "idempotency": idem, "self_adjoint": selfadj,
            "trace": trace, "frame_rank": frame_rank, "residual": residual,
        }

    details = _run_samples(sample, cfg)
    res = _max(r["residual"] for r in details)
    return details, res, None, res <= cfg.tolerance


def _gray_oneill(fm, cfg):
    d = float(_option(cfg, "step", 0.01))

    def sample(i, rng):
        p = fm.random_point(rng)
        X = random_horizontal_unit(fm, p, rng)
        E = vertical_onb(fm, p)
        nu0 = _unit_vertical(fm, p, rng)
        xi0 = _unit_vertical(fm, p, rng)
        path = PathBuilder(fm, p).geodesic(X, 4 * d, 4).build()
        run = transport_block(fm, path, hol0=xi0, dual0=nu0, par0=E)
        pds = [PointData(fm, run.point(j)) for j in range(5)]
        f_nu = np.array([pds[j].inner(run.dual[j, :, 0], run.dual[j, :, 0]) for j in range(5)])
        f_xi = np.array([pds[j].inner(run.hol[j, :, 0], run.hol[j, :, 0]) for j in range(5)])
        f2_nu = float(_SECOND @ f_nu) / d**2
        f2_xi = float(_SECOND @ f_xi) / d**2
        pd, v = pds[2], path.velocities[2]
        nu, xi = run.dual[2, :, 0], run.hol[2, :, 0]
        R = riemann_tensor(fm.metric, run.point(2))
        S, Ast = pd.s_matrix(v), pd.a_star_matrix(v)
        s_nu, a_nu = S @ nu, Ast @ nu
        s_xi, a_xi = S @ xi, Ast @ xi
        K_nu = sectional_from_tensor(R, pd.g, v, nu)
        K_xi = sectional_from_tensor(R, pd.g, v, xi)
        F_nu = 0.5 * f2_nu - 3.0 * pd.inner(s_nu, s_nu) + pd.inner(a_nu, a_nu)
        F_xi = -0.5 * f2_xi + pd.inner(s_xi, s_xi) + pd.inner(a_xi, a_xi)
        # <(nabla S) nu, nu> from a vertically parallel field through nu(t)
        c = np.linalg.lstsq(run.par[2], nu, rcond=None)[0]
        q = [pds[j].inner(pds[j].s_matrix(path.velocities[j]) @ (run.par[j] @ c), run.par[j] @ c) for j in range(5)]
        dS = float(_FIRST @ np.array(q)) / d
        eq8 = 0.5 * f2_nu - 2.0 * pd.inner(s_nu, s_nu)
        t = float(run.t[2])
        return [
            {"sample": i, "field": "dual", "t": t, "K_riemann": K_nu, "K_formula": F_nu,
             "residual": _relative(K_nu, F_nu), "nablaS_fd": dS, "nablaS_formula": eq8,
             "nablaS_residual": _relative(dS, eq8)},
            {"sample": i, "field": "holonomy", "t": t, "K_riemann": K_xi, "K_formula": F_xi,
             "residual": _relative(K_xi, F_xi)},
        ]

    details = _run_samples(sample, cfg)
    res = _max(r["residual"] for r in details)
    return details, res, None, res <= cfg.tolerance


def _minimum_fiber_point(fm, rng):
    """A point where the height warping attains its minimum."""
    block = fm.extras["s3"]
    lam = fm.extras.get("lambda", 0.0)
    a = rng.uniform(0.0, 2.0 * math.pi)
    if lam > 0:
        x = np.array([0.0, 0.0, math.cos(a), math.sin(a)])
    else:
        x = np.array([math.cos(a), math.sin(a), 0.0, 0.0])
    return block.point_from_quaternion(x)


def _geodesic_hessian(fm, phi, p, X, d):
    vals = []
    for s in (-2, -1, 0, 1, 2):
        if s == 0:
            q = p
        else:
            q = PathBuilder(fm, p).geodesic(math.copysign(1.0, s) * X, abs(s) * d, 4 * abs(s)).build().end
        vals.append(float(phi(q.chart_id, q.coords)))
    return float(_SECOND @ np.array(vals)) / d**2


def _warped_curvature(fm, cfg):
    warp = fm.extras.get("warp")
    height_mode = fm.extras.get("phi_family") == "height" and fm.extras.get("lambda", 0.0) != 0.0
    d = float(_option(cfg, "step", 0.01))
    base = warp["base"] if warp is not None else fm

    def sample(i, rng):
        p = _minimum_fiber_point(fm, rng) if height_mode else fm.random_point(rng)
        X = random_horizontal_unit(fm, p, rng)
        xi = _unit_vertical(fm, p, rng)
        pd = PointData(fm, p)
        R = riemann_tensor(fm.metric, p)
        K = sectional_from_tensor(R, pd.g, X, xi)
        a = pd.a_star_matrix(X) @ xi
        a2 = pd.inner(a, a)
        row = {"sample": i, "K": K, "A_star_sq": a2}
        if not height_mode:
            row.update(hess=0.0, residual=abs(K - a2))
            return row
        g0 = np.asarray(base.metric.metric_fn(p.chart_id, p.coords), dtype=float)
        n0 = float(xi @ g0 @ xi)
        nphi = pd.inner(xi, xi)
        hess = _geodesic_hessian(fm, warp["phi"], p, X, d)
        s_norm = pd.norm(pd.s_matrix(X) @ xi)
        row.update(
            hess=hess, xi_norm0_sq=n0, xi_norm_phi_sq=nphi, s_norm=s_norm,
            residual=abs(K + 0.5 * n0 * hess - a2),
            residual_corrected=abs(K + nphi * hess - a2),
        )
        return row

    details = _run_samples(sample, cfg)
    res = _max(r["residual"] for r in details)
    return details, res, None, res <= cfg.tolerance


def _fatness_scan(fm, cfg):
    count = int(_option(cfg, "num_xi_samples", 16))

    def sample(i, rng):
        p = fm.random_point(rng)
        margin = fat_point_margin(fm, p, count)
        row = {"sample": i, "margin": margin, "fat": margin > cfg.tolerance, "kernel_residual": None}
        if margin <= cfg.tolerance:
            nu = vertical_onb(fm, p)[:, 0]
            X = kernel_direction(fm, p, TangentVector(p, nu), tol=max(cfg.tolerance, 1e-6)).components
            pd = PointData(fm, p)
            row["kernel_residual"] = pd.norm(pd.a_star_matrix(X) @ nu)
        return row

    details = _run_samples(sample, cfg)
    res = _max(r.get("kernel_residual", r.get("residual")) for r in details)
    margins = [r["margin"] for r in details if "margin" in r]
    margin = float(min(margins)) if margins else None
    return details, res, margin, res <= cfg.tolerance


def _theorem_a(fm, cfg):
    def sample(i, rng):
        p = fm.random_point(rng)
        nu = _unit_vertical(fm, p, rng)
        try:
            X = kernel_direction(fm, p, TangentVector(p, nu), tol=max(cfg.tolerance, 1e-6)).components
        except NoKernelError as exc:
            return {"sample": i, "kernel_found": False, "a_star_norm": math.inf, "K": None, "note": str(exc)}
        pd = PointData(fm, p)
        R = riemann_tensor(fm.metric, p)
        return {
            "sample": i, "kernel_found": True,
            "a_star_norm": pd.norm(pd.a_star_matrix(X) @ nu),
            "K": sectional_from_tensor(R, pd.g, X, nu),
        }

    details = _run_samples(sample, cfg)
    res = _max(r.get("a_star_norm", r.get("residual")) for r in details)
    ks = [r.get("K") for r in details]
    margin = math.inf if any(k is None for k in ks) else float(max(ks))
    return details, res, margin, res <= cfg.tolerance and margin <= cfg.tolerance


def _thm_max(fm, cfg):
    rng = rng_for(cfg.seed, 0)
    p = fm.random_point(rng)
    nu0 = TangentVector(p, _unit_vertical(fm, p, rng))
    result = thm_max_search(
        fm, p, nu0, cfg.samples, seed=cfg.seed,
        num_segments=int(_option(cfg, "num_segments", 3)),
        seg_len=float(_option(cfg, "seg_len", 0.5)),
        max_step=float(_option(cfg, "max_step", 0.05)),
    )
    details = [{"evaluated": e, "best_rho": r} for e, r in result.history]
    details.append({"evaluated": result.evaluated, "best_rho": result.best_rho,
                    "worst_margin": result.worst_margin})
    return details, None, result.worst_margin, result.worst_margin <= cfg.tolerance


def _holonomy_bound(fm, cfg):
    rng = rng_for(cfg.seed, 0)
    p = fm.random_point(rng)
    nu0 = _unit_vertical(fm, p, rng)
    segs = int(_option(cfg, "num_segments", 3))
    est = holonomy_bound_samples(
        fm, p, cfg.samples, num_segments=segs, seg_len=float(_option(cfg, "seg_len", 0.5)),
        seed=cfg.seed, max_step=float(_option(cfg, "max_step", 0.02)),
    )
    L = est.bound
    per = len(est.transformations) // cfg.samples
    details = []
    worst = 0.0
    for i in range(cfg.samples):
        hs = est.transformations[i * per:(i + 1) * per]
        rhos = np.array([rho(h, TangentVector(p, nu0)) for h in hs])
        viol = max(0.0, float(rhos.max()) / L**2 - 1.0, L**-2 / float(rhos.min()) - 1.0)
        worst = max(worst, viol)
        details.append({"path": i, "bound": float(est.per_path[i]), "rho_min": float(rhos.min()),
                        "rho_max": float(rhos.max()), "lemma_violation": viol})
    return details, worst, L - 1.0, worst <= cfg.tolerance


def _dual_leaf(fm, cfg):
    length = float(_option(cfg, "length", 1.0))
    times = int(_option(cfg, "num_times", 16))
    max_step = float(_option(cfg, "max_step", 0.02))

    def sample(i, rng):
        p = fm.random_point(rng)
        path = random_horizontal_path(fm, p, 1, length, rng, max_step=max_step)
        span = dual_leaf_span(fm, path, times)
        s = span.singular_values
        row = {"sample": i, "rank": span.rank, "leaf_dim": fm.leaf_dim,
               "sv_max": float(s[0]) if s.size else 0.0,
               "sv_min": float(s[min(fm.leaf_dim, s.size) - 1]) if s.size else 0.0}
        check = dual_orthogonality_check(fm, path, span)
        row.update(applicable=check.applicable, a_star_residual=check.a_star_residual,
                   span_residual=check.span_residual, residual=check.max_residual)
        return row

    details = _run_samples(sample, cfg)
    res = _max(r["residual"] for r in details if not (r.get("applicable") is False))
    return details, res, None, res <= cfg.tolerance


def _closed_loop(fm, cfg):
    rng = rng_for(cfg.seed, 0)
    p = fm.random_point(rng)
    gap_tol = float(_option(cfg, "closure_tol", 1e-6))
    family = fm.extras.get("loop_family")
    hopf_choices = [(2, 0), (3, 0), (3, 1)]

    def sample(i, rng):
        info = {"loop": i}
        if family == "torus":
            axes = fm.extras["horizontal_axes"]
            axis = int(axes[i % len(axes)])
            windings = 1 + (i // len(axes)) % 2
            loop = axis_closed_loop(fm, p, axis, 1.0, windings)
            info.update(kind="axis", windings=windings, branch=0, direction=float(axis))
        elif family == "hopf" and fm.extras.get("circle_axis") is not None and i % 4 == 3:
            loop = axis_closed_loop(fm, p, fm.extras["circle_axis"], fm.extras["circle_length"])
            info.update(kind="circle", windings=1, branch=0, direction=0.0)
        elif family == "hopf":
            m, b = hopf_choices[i % len(hopf_choices)]
            direction = float(rng.uniform(0.0, 2.0 * math.pi))
            loop = hopf_closed_loop(fm, p, m, b, direction, tol=gap_tol)
            info.update(kind="hopf", windings=m, branch=b, direction=direction)
        else:
            raise ConfigError(f"model {fm.name} has no closed-loop family")
        closed = loop.closure_gap <= gap_tol
        h = holonomy_transformation(fm, loop)
        dev = float(np.linalg.norm(h.matrix - np.eye(fm.leaf_dim), 2))
        info.update(closure_gap=loop.closure_gap, closed=closed, h_deviation=dev,
                    residual=dev if closed else None)
        return info

    details = _run_samples(sample, cfg)
    closed = [r["residual"] for r in details if r.get("residual") is not None]
    res = _max(closed, empty=math.inf)
    return details, res, None, res <= cfg.tolerance


def _duality_suite(fm, cfg):
    segs = int(_option(cfg, "num_segments", 3))
    seg_len = float(_option(cfg, "seg_len", 0.5))
    max_step = float(_option(cfg, "max_step", 0.01))

    def sample(i, rng):
        p = fm.random_point(rng)
        path = random_horizontal_path(fm, p, segs, seg_len, rng, max_step=max_step)
        E0 = vertical_onb(fm, p)
        run = transport_block(fm, path, hol0=E0, dual0=E0)
        g0 = fm.metric.metric_fn(p.chart_id, p.coords)
        pair0 = E0.T @ g0 @ E0
        pairing = 0.0
        inv_t = 0.0
        for j in range(len(run.t)):
            q = run.point(j)
            g = fm.metric.metric_fn(q.chart_id, q.coords)
            pairing = max(pairing, float(np.abs(run.hol[j].T @ g @ run.dual[j] - pair0).max()))
            Et = vertical_onb(fm, q)
            M = Et.T @ g @ run.hol[j]
            D = Et.T @ g @ run.dual[j]
            inv_t = max(inv_t, float(np.abs(D - np.linalg.inv(M).T).max()))
        vert = max(
            float(_relative_verticality(fm, run.chart_ids, run.coords, run.hol, True).max()),
            float(_relative_verticality(fm, run.chart_ids, run.coords, run.dual, True).max()),
        )
        return {"sample": i, "pairing_drift": pairing, "inverse_transpose": inv_t,
                "verticality": vert, "path_drift": path.max_drift,
                "residual": max(pairing, inv_t, vert)}

    details = _run_samples(sample, cfg)
    res = _max(r["residual"] for r in details)
    return details, res, None, res <= cfg.tolerance


_KINDS = {
    "validate_model": _validate_model,
    "gray_oneill": _gray_oneill,
    "warped_curvature": _warped_curvature,
    "fatness_scan": _fatness_scan,
    "theorem_a": _theorem_a,
    "thm_max": _thm_max,
    "holonomy_bound": _holonomy_bound,
    "dual_leaf": _dual_leaf,
    "closed_loop": _closed_loop,
    "duality_suite": _duality_suite,
}


def run_experiment(config: ExperimentConfig, timing: bool = True) -> ExperimentReport:
    config.validate()
    fm = make_model(config.model)
    if config.experiment == "warped_curvature" and fm.extras.get("s3") is None:
        raise ConfigError("warped_curvature needs a Hopf model (hopf_s3 or hopf_warped)")
    start = time.perf_counter()
    details, residual, margin, passed = _KINDS[config.experiment](fm, config)
    elapsed = time.perf_counter() - start
    if residual is not None and not math.isfinite(residual):
        passed = False
    return ExperimentReport(
        config=config,
        timing_s=elapsed if timing else None,
        num_samples=config.samples,
        max_residual=residual,
        margin=margin,
        passed=bool(passed),
        details=details,
    )
