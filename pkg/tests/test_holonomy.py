import numpy as np
import pytest

from conftest import model
from folilab.errors import ArgumentError, ConditioningError, GroupoidError, ModelConsistencyError, SamplingError
from folilab.foliation import point_data
from folilab.geometry import ChartPoint, TangentVector
from folilab.holonomy import (
    HolonomyTransformation,
    SpanAccumulator,
    axis_closed_loop,
    compose,
    concatenate,
    constant_path,
    dual_leaf_span,
    dual_orthogonality_check,
    holonomy_bound_samples,
    holonomy_bound_estimate,
    holonomy_transformation,
    hopf_closed_loop,
    horizontal_geodesic,
    identity_transformation,
    invariant_metric_average,
    invert,
    lifted_transformations,
    random_horizontal_path,
    random_horizontal_unit,
    reparametrize,
    reverse_path,
    rho,
    thm_max_search,
    transport_dual,
    transport_holonomy,
    vertical_onb,
    zeta,
    zeta_bar,
)
from folilab.models import warping_function


def unit_vertical(fm, p, rng=None):
    E = vertical_onb(fm, p)
    c = np.ones(E.shape[1]) if rng is None else rng.standard_normal(E.shape[1])
    return TangentVector(p, E @ (c / np.linalg.norm(c)))


def norm(fm, v):
    g = fm.metric.metric_fn(v.base.chart_id, v.base.coords)
    return float(np.sqrt(v.components @ g @ v.components))


def inner(fm, u, v):
    g = fm.metric.metric_fn(u.base.chart_id, u.base.coords)
    return float(u.components @ g @ v.components)


# paths ------------------------------------------------------------------------


def test_flat_geodesic_is_coordinate_line():
    fm = model("flat_torus")
    p = ChartPoint(0, np.array([0.1, 0.2, 0.3]))
    path = horizontal_geodesic(fm, p, np.array([0.0, 1.0, 0.0]), 0.4, 8)
    assert path.max_drift == 0.0
    assert np.allclose(path.coords[:, 1], 0.2 + path.t, atol=1e-14)
    assert np.abs(path.coords[:, [0, 2]] - [0.1, 0.3]).max() <= 1e-14


def test_hopf_geodesic_stays_horizontal(rng):
    fm = model("hopf_s3")
    p = fm.random_point(rng)
    path = horizontal_geodesic(fm, p, random_horizontal_unit(fm, p, rng), 2.0, 1024)
    assert path.max_drift <= 1e-8
    assert np.abs(path.speeds() - 1.0).max() <= 1e-8


def test_product_circle_geodesic(rng):
    fm = model("s3_x_s1")
    p = fm.random_point(rng)
    path = horizontal_geodesic(fm, p, np.array([0.0, 0.0, 0.0, 1.0]), 1.5, 64)
    assert np.abs(path.coords[:, :3] - p.coords[:3]).max() <= 1e-12
    assert path.max_drift <= 1e-12


def test_vertical_start_rejected(rng):
    fm = model("hopf_s3")
    p = fm.random_point(rng)
    with pytest.raises(ArgumentError):
        horizontal_geodesic(fm, p, unit_vertical(fm, p).components, 1.0, 32)


def test_broken_model_detected(rng):
    # a frame that is not tangent to a foliation: horizontality is not preserved
    from folilab.foliation import FoliatedModel

    def frame(chart, u):
        return np.broadcast_to([[1.0], [0.0], [0.0]], np.shape(u) + (1,))

    fm = FoliatedModel(model("hopf_s3").metric, frame, 1, name="bogus")
    p = ChartPoint(0, np.array([0.3, -0.4, 0.5]))
    with pytest.raises(ModelConsistencyError):
        horizontal_geodesic(fm, p, random_horizontal_unit(fm, p, rng), 2.0, 256)


def test_random_path_shape_and_determinism():
    fm = model("flat_torus")
    p = ChartPoint(0, np.array([0.5, 0.5, 0.5]))
    a = random_horizontal_path(fm, p, 5, 0.3, 11)
    b = random_horizontal_path(fm, p, 5, 0.3, 11)
    assert np.array_equal(a.coords, b.coords) and np.array_equal(a.velocities, b.velocities)
    assert a.length() == pytest.approx(1.5, abs=1e-9)
    assert len(random_horizontal_path(fm, p, 1, 0.3, 11).pieces) == 1
    with pytest.raises(ArgumentError):
        random_horizontal_path(fm, p, 0, 0.3, 11)


def test_concatenation_requires_meeting_paths(rng):
    fm = model("hopf_s3")
    p = fm.random_point(rng)
    a = random_horizontal_path(fm, p, 1, 0.4, 1)
    with pytest.raises(GroupoidError):
        concatenate(a, a)


# transport ----------------------------------------------------------------------


def test_flat_transport_is_constant():
    fm = model("flat_torus")
    p = ChartPoint(0, np.array([0.5, 0.5, 0.5]))
    path = random_horizontal_path(fm, p, 3, 0.4, 3)
    xi0 = TangentVector(p, np.array([0.7, 0.0, 0.0]))
    for field in (transport_holonomy(fm, path, xi0), transport_dual(fm, path, xi0)):
        assert np.abs(field.vectors - xi0.components).max() <= 1e-14


@pytest.mark.parametrize("eps", [1.0, 0.8])
def test_hopf_transport_keeps_norm_and_duals_agree(eps, rng):
    fm = model("hopf_s3", epsilon=eps)
    p = fm.random_point(rng)
    path = random_horizontal_path(fm, p, 3, 0.6, rng, max_step=0.01)
    xi0 = unit_vertical(fm, p)
    hol = transport_holonomy(fm, path, xi0)
    dual = transport_dual(fm, path, xi0)
    norms = [norm(fm, v) for _, v in hol.samples]
    assert np.ptp(norms) <= 1e-7
    assert np.abs(hol.vectors - dual.vectors).max() <= 1e-7
    assert hol.drift.max() <= 1e-8 and dual.drift.max() <= 1e-8


@pytest.mark.parametrize("name,params", [("hopf_warped", {}), ("hopf_warped", {"lambda": -0.6}), ("s3_x_s1", {"epsilon": 0.7}),
                                         ("torus_x_hopf", {"epsilon": 0.6})])
def test_duality_pairing_is_constant(name, params, rng):
    fm = model(name, **params)
    p = fm.random_point(rng)
    path = random_horizontal_path(fm, p, 3, 0.5, rng, max_step=0.01)
    xi = transport_holonomy(fm, path, unit_vertical(fm, p, rng))
    nu = transport_dual(fm, path, unit_vertical(fm, p, rng))
    pairing = [inner(fm, a, b) for (_, a), (_, b) in zip(xi.samples, nu.samples)]
    assert np.ptp(pairing) <= 1e-8


def test_holonomy_fields_ignore_basic_warping(rng):
    warped = model("hopf_warped", **{"lambda": 0.5})
    plain = warped.extras["warp"]["base"]
    p = warped.random_point(rng)
    X = random_horizontal_unit(warped, p, rng)
    xi0 = unit_vertical(plain, p)
    # horizontal geodesics agree, so both transports run along the same curve
    a = transport_holonomy(plain, horizontal_geodesic(plain, p, X, 1.5, 150), xi0)
    b = transport_holonomy(warped, horizontal_geodesic(warped, p, X, 1.5, 150), xi0)
    assert np.abs(a.vectors - b.vectors).max() <= 1e-7


def test_transport_start_checks(rng):
    fm = model("hopf_s3")
    p = fm.random_point(rng)
    path = random_horizontal_path(fm, p, 1, 0.3, 0)
    with pytest.raises(ArgumentError):
        transport_holonomy(fm, path, TangentVector(p, random_horizontal_unit(fm, p, rng)))
    q = fm.random_point(rng)
    with pytest.raises(ArgumentError):
        transport_dual(fm, path, unit_vertical(fm, q))


# the groupoid -----------------------------------------------------------------------


def test_constant_path_gives_identity(rng):
    fm = model("torus_x_hopf")
    p = fm.random_point(rng)
    h = holonomy_transformation(fm, constant_path(fm, p))
    assert np.abs(h.matrix - np.eye(2)).max() == 0.0


def test_round_hopf_transformations_are_trivial(rng):
    fm = model("hopf_s3")
    for i in range(5):
        p = fm.random_point(rng)
        h = holonomy_transformation(fm, random_horizontal_path(fm, p, 3, 0.7, i, max_step=0.01))
        assert h.matrix.shape == (1, 1)
        assert h.matrix[0, 0] == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("name", ["hopf_warped", "torus_x_hopf"])
def test_matrix_reproduces_transport(name, rng):
    fm = model(name)
    for i in range(50):
        p = fm.random_point(rng)
        path = random_horizontal_path(fm, p, 2, 0.3, i)
        xi0 = unit_vertical(fm, p, rng)
        h = holonomy_transformation(fm, path)
        end = transport_holonomy(fm, path, xi0).end
        assert np.abs(zeta(h, xi0).components - end.components).max() <= 1e-8


def test_groupoid_laws(rng):
    fm = model("hopf_warped", **{"lambda": 0.6})
    p = fm.random_point(rng)
    a = random_horizontal_path(fm, p, 2, 0.4, 1)
    b = random_horizontal_path(fm, a.end, 2, 0.4, 2)
    c = random_horizontal_path(fm, b.end, 1, 0.4, 3)
    ha, hb, hc = (holonomy_transformation(fm, x) for x in (a, b, c))
    assert np.abs(compose(ha, identity_transformation(fm, p)).matrix - ha.matrix).max() <= 1e-10
    left = compose(compose(hc, hb), ha).matrix
    right = compose(hc, compose(hb, ha)).matrix
    assert np.abs(left - right).max() <= 1e-9
    whole = holonomy_transformation(fm, concatenate(a, b))
    assert np.abs(whole.matrix - compose(hb, ha).matrix).max() <= 1e-7
    assert np.abs(compose(invert(ha), ha).matrix - 1.0).max() <= 1e-8
    assert np.abs(invert(identity_transformation(fm, p)).matrix - 1.0).max() == 0.0
    with pytest.raises(GroupoidError):
        compose(ha, hb)


def test_reverse_and_reparametrized_paths(rng):
    fm = model("torus_x_hopf", epsilon=0.7)
    p = fm.random_point(rng)
    path = random_horizontal_path(fm, p, 3, 0.4, 5, max_step=0.01)
    h = holonomy_transformation(fm, path)
    back = holonomy_transformation(fm, reverse_path(path))
    assert np.abs(back.matrix - invert(h).matrix).max() <= 1e-6
    fast = holonomy_transformation(fm, reparametrize(path, 2.5))
    assert np.abs(fast.matrix - h.matrix).max() <= 1e-7


def test_invert_rejects_singular_matrix(rng):
    fm = model("torus_x_hopf")
    p = fm.random_point(rng)
    E = vertical_onb(fm, p)
    h = HolonomyTransformation(fm, p, p, np.diag([1.0, 1e-10]), E, E)
    with pytest.raises(ConditioningError):
        invert(h)


def test_dual_action_matches_dual_transport(rng):
    fm = model("hopf_warped", **{"lambda": 0.5})
    p = fm.random_point(rng)
    path = random_horizontal_path(fm, p, 3, 0.5, 8, max_step=0.01)
    nu0 = unit_vertical(fm, p)
    dual = transport_dual(fm, path, nu0)
    for i, h in enumerate(lifted_transformations(fm, path)):
        assert np.abs(zeta_bar(h, nu0).components - dual.vectors[i]).max() <= 1e-7


def test_actions_pair_and_rho(rng):
    fm = model("torus_x_hopf", epsilon=0.8)
    p = fm.random_point(rng)
    h = holonomy_transformation(fm, random_horizontal_path(fm, p, 2, 0.5, 4))
    xi0, nu0 = unit_vertical(fm, p, rng), unit_vertical(fm, p, rng)
    assert inner(fm, zeta(h, xi0), zeta_bar(h, nu0)) == pytest.approx(inner(fm, xi0, nu0), abs=1e-9)
    ident = identity_transformation(fm, p)
    assert np.abs(zeta(ident, xi0).components - xi0.components).max() <= 1e-12
    assert np.abs(zeta_bar(ident, nu0).components - nu0.components).max() <= 1e-12
    assert rho(ident, nu0) == pytest.approx(1.0, abs=1e-12)
    assert rho(h, TangentVector(p, 3.0 * nu0.components)) == pytest.approx(norm(fm, zeta_bar(h, nu0)) ** 2, rel=1e-9)
    with pytest.raises(ArgumentError):
        zeta(h, unit_vertical(fm, h.target))


def test_round_hopf_rho_is_one(rng):
    fm = model("hopf_s3")
    p = fm.random_point(rng)
    for h in lifted_transformations(fm, random_horizontal_path(fm, p, 3, 0.5, 9, max_step=0.01))[::10]:
        assert rho(h, unit_vertical(fm, p)) == pytest.approx(1.0, abs=1e-7)


# bounded holonomy --------------------------------------------------------------------


def test_flat_bound_is_one():
    fm = model("flat_torus")
    assert holonomy_bound_estimate(fm, ChartPoint(0, np.array([0.5, 0.5, 0.5])), 5) == pytest.approx(1.0, abs=1e-9)


def test_warped_bound_is_plausible_and_stable(rng):
    fm = model("hopf_warped", **{"lambda": 0.3})
    p = fm.random_point(rng)
    phi, _ = warping_function(fm)
    est = holonomy_bound_samples(fm, p, 40, seed=1)
    doubled = holonomy_bound_estimate(fm, p, 80, seed=1)
    # lambda * height ranges over [-0.3, 0.3]
    assert 1.0 < est.bound <= np.exp(2 * 0.6)
    assert abs(doubled - est.bound) <= 0.05 * est.bound
    nu0 = unit_vertical(fm, p)
    L = est.bound
    for h in est.transformations[::7]:
        assert L**-2 * (1 - 1e-3) <= rho(h, nu0) <= L**2 * (1 + 1e-3)
        # the warped norm of a holonomy field follows exp(phi)
        ratio = np.exp(phi(h.target.chart_id, h.target.coords) - phi(p.chart_id, p.coords))
        assert h.operator_norm == pytest.approx(ratio, rel=1e-6)


def test_bound_budget_checked(rng):
    fm = model("hopf_s3")
    with pytest.raises(ArgumentError):
        holonomy_bound_estimate(fm, fm.random_point(rng), 0)


# supremum search ------------------------------------------------------------------------


def test_flat_search_margin_is_zero():
    fm = model("flat_torus")
    p = ChartPoint(0, np.array([0.5, 0.5, 0.5]))
    res = thm_max_search(fm, p, TangentVector(p, np.array([1.0, 0, 0])), 30, seed=0)
    assert abs(res.worst_margin) <= 1e-8
    assert res.evaluated == 30


def test_search_is_monotone_in_budget(rng):
    fm = model("hopf_warped", **{"lambda": 0.5})
    p = fm.random_point(rng)
    nu0 = unit_vertical(fm, p)
    small = thm_max_search(fm, p, nu0, 60, seed=4)
    large = thm_max_search(fm, p, nu0, 240, seed=4)
    assert large.best_rho >= small.best_rho
    assert large.history[: len(small.history)] == small.history
    assert norm(fm, large.nu) ** 2 == pytest.approx(large.best_rho, rel=1e-9)


# dual leaves -----------------------------------------------------------------------------


def test_span_accumulator_rank():
    acc = SpanAccumulator(ChartPoint(0, np.zeros(3)), 2)
    assert acc.rank == 0
    acc.add([1e-14, 0.0])
    assert acc.rank == 0
    acc.add([1.0, 1.0])
    acc.add([2.0, 2.0 + 1e-10])
    assert acc.rank == 1
    acc.add([0.0, 1.0])
    assert acc.rank == 2
    assert acc.rank_history == sorted(acc.rank_history)
    assert np.abs(acc.basis().T @ acc.basis() - np.eye(2)).max() <= 1e-12


def test_flat_span_is_empty():
    fm = model("flat_torus")
    p = ChartPoint(0, np.array([0.5, 0.5, 0.5]))
    path = random_horizontal_path(fm, p, 2, 0.3, 0)
    span = dual_leaf_span(fm, path)
    assert span.rank == 0
    assert dual_orthogonality_check(fm, path, span).max_residual <= 1e-9


def test_hopf_span_is_full(rng):
    fm = model("hopf_s3")
    p = fm.random_point(rng)
    path = horizontal_geodesic(fm, p, random_horizontal_unit(fm, p, rng), 1.0, 50)
    span = dual_leaf_span(fm, path)
    assert span.rank == 1
    assert not dual_orthogonality_check(fm, path, span).applicable
    with pytest.raises(ArgumentError):
        dual_leaf_span(fm, path, num_times=1)


def test_product_circle_direction_contributes_nothing(rng):
    fm = model("s3_x_s1")
    p = fm.random_point(rng)
    pd = point_data(fm, p)
    circle = np.array([0.0, 0.0, 0.0, 1.0])
    for Z in pd.horizontal_onb().T:
        assert pd.norm(pd.a(circle, Z)) <= 1e-9
    path = horizontal_geodesic(fm, p, random_horizontal_unit(fm, p, rng), 1.0, 50)
    assert dual_leaf_span(fm, path).rank == 1


def test_degenerate_product_keeps_torus_direction_orthogonal(rng):
    fm = model("torus_x_hopf", epsilon=0.8)
    p = fm.random_point(rng)
    path = random_horizontal_path(fm, p, 3, 0.5, 6)
    span = dual_leaf_span(fm, path)
    assert span.rank == 1
    res = dual_orthogonality_check(fm, path, span)
    assert res.applicable and res.max_residual <= 1e-6


# closed loops ------------------------------------------------------------------------------


def test_hopf_loop_closes_with_trivial_holonomy(rng):
    fm = model("hopf_s3")
    p = fm.random_point(rng)
    loop = hopf_closed_loop(fm, p, windings=2)
    assert loop.closure_gap <= 1e-6
    assert loop.max_drift <= 1e-8
    xi0 = unit_vertical(fm, p)
    end = transport_holonomy(fm, loop, xi0).end
    g = fm.metric.metric_fn(p.chart_id, p.coords)
    comps = end.components
    if end.base.chart_id != p.chart_id:
        comps = fm.atlas.transition_jacobian(end.base.chart_id, end.base.coords, p.chart_id) @ comps
    diff = comps - xi0.components
    assert np.sqrt(diff @ g @ diff) <= 1e-6


def test_torus_axis_loop():
    fm = model("flat_torus")
    p = ChartPoint(0, np.array([0.2, 0.2, 0.2]))
    loop = axis_closed_loop(fm, p, 2, 1.0, windings=2)
    assert loop.closure_gap <= 1e-12
    assert np.abs(holonomy_transformation(fm, loop).matrix - 1.0).max() <= 1e-12


def test_invariant_metric_on_round_hopf(rng):
    fm = model("hopf_s3")
    inv = invariant_metric_average(fm, fm.random_point(rng), loop_budget=4, seed=2)
    assert inv.Q.shape == (1, 1)
    assert inv.Q[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert inv.residual <= 1e-6


def test_invariant_metric_on_torus_is_identity():
    fm = model("flat_torus")
    inv = invariant_metric_average(fm, ChartPoint(0, np.array([0.5, 0.5, 0.5])), loop_budget=6, seed=0)
    assert np.abs(inv.Q - np.eye(1)).max() <= 1e-12
    assert inv.residual <= 1e-12
    assert np.all(np.linalg.eigvalsh(inv.Q) > 0)


def test_invariant_metric_reports_missing_loops():
    fm = model("flat_torus")
    with pytest.raises(SamplingError):
        invariant_metric_average(fm, ChartPoint(0, np.array([0.5, 0.5, 0.5])), loop_budget=2, seed=0, min_loops=2)
