import numpy as np
import pytest

from conftest import model
from folilab.errors import ValidationError
from folilab.foliation import a_tensor, kernel_direction, point_data, s_tensor
from folilab.geometry import TangentVector, metric_eval, unreduced_sectional
from folilab.models import MODEL_NAMES, ModelSpec, hopf_field, hopf_projection, make_model, validate_spec, warping_function


@pytest.mark.parametrize(
    "name,params,fragment",
    [
        ("hopf_s3", {"epsilon": 0.0}, "epsilon"),
        ("hopf_s3", {"epsilon": 2.5}, "epsilon"),
        ("hopf_warped", {"lambda": float("inf")}, "lambda"),
        ("hopf_warped", {"phi": "wiggle"}, "phi"),
        ("s3_x_s1", {"circle_radius": -1.0}, "circle_radius"),
        ("flat_torus", {"n": 7}, "n="),
        ("flat_torus", {"n": 3, "k": 3}, "k="),
        ("flat_torus", {"nn": 3}, "unknown"),
        ("klein_bottle", {}, "unknown model"),
    ],
)
def test_invalid_parameters(name, params, fragment):
    with pytest.raises(ValidationError, match=fragment):
        make_model(name, **params)


def test_errors_list_every_violation():
    with pytest.raises(ValidationError) as info:
        validate_spec(ModelSpec("flat_torus", {"n": 9, "k": -1}))
    assert "n=9" in str(info.value) and "k=-1" in str(info.value)


def test_model_spec_round_trip():
    spec = ModelSpec("hopf_warped", {"lambda": 0.5})
    again = ModelSpec.from_dict(spec.to_dict())
    assert again.resolved() == spec.resolved()
    assert make_model(spec).name == make_model(again).name


@pytest.mark.parametrize("name", MODEL_NAMES)
def test_dimensions(name):
    fm = model(name)
    expected = {"flat_torus": (3, 1), "hopf_s3": (3, 1), "hopf_warped": (3, 1), "s3_x_s1": (4, 1), "torus_x_hopf": (5, 2)}
    assert (fm.dimension, fm.leaf_dim) == expected[name]


def test_flat_torus_is_trivial(rng):
    fm = model("flat_torus")
    for _ in range(5):
        p = fm.random_point(rng)
        X = TangentVector(p, np.array([0.0, 1.0, 0.0]))
        Y = TangentVector(p, np.array([0.0, 0.3, 1.0]))
        xi = TangentVector(p, np.array([1.0, 0.0, 0.0]))
        assert np.abs(a_tensor(fm, X, Y).components).max() == 0.0
        assert np.abs(s_tensor(fm, X, xi).components).max() == 0.0
        assert unreduced_sectional(fm.metric, X, xi) == 0.0


def test_round_hopf_orthonormal_sectional(rng):
    fm = model("hopf_s3")
    for _ in range(10):
        p = fm.random_point(rng)
        pd = point_data(fm, p)
        basis = np.column_stack([pd.vertical_onb(), pd.horizontal_onb()])
        for i, j in [(0, 1), (0, 2), (1, 2)]:
            K = unreduced_sectional(fm.metric, TangentVector(p, basis[:, i]), TangentVector(p, basis[:, j]))
            assert K == pytest.approx(1.0, abs=1e-6)


def test_vertical_frame_is_hopf_action(rng):
    fm = model("hopf_s3")
    block = fm.extras["s3"]
    for _ in range(10):
        p = fm.random_point(rng)
        F = fm.vertical_frame_fn(p.chart_id, p.coords)[:, 0]
        x = block.quaternion(p.chart_id, p.coords)
        assert np.abs(block.jacobian(p.chart_id, p.coords) @ F - hopf_field(x)).max() <= 1e-12


def test_height_warping_is_basic(rng):
    fm = model("hopf_warped", epsilon=1.0, **{"lambda": 0.3})
    phi, dphi = warping_function(fm)
    h = 1e-5
    for _ in range(100):
        p = fm.random_point(rng)
        V = fm.vertical_frame_fn(p.chart_id, p.coords)[:, 0]
        d = dphi(p.chart_id, p.coords)
        assert abs(d @ V) <= 1e-9
        # central difference of phi as the independent check of the differential
        fd = np.array([(phi(p.chart_id, p.coords + h * e) - phi(p.chart_id, p.coords - h * e)) / (2 * h)
                       for e in np.eye(3)])
        assert np.abs(fd - d).max() <= 1e-8


def test_height_warping_depends_on_base_only(rng):
    fm = model("hopf_warped", **{"lambda": 0.7})
    phi, _ = warping_function(fm)
    block = fm.extras["s3"]
    for _ in range(10):
        x = rng.standard_normal(4)
        x /= np.linalg.norm(x)
        t = rng.uniform(0, 2 * np.pi)
        y = np.cos(t) * x + np.sin(t) * hopf_field(x)
        assert np.abs(hopf_projection(x) - hopf_projection(y)).max() <= 1e-12
        p, q = block.point_from_quaternion(x), block.point_from_quaternion(y)
        assert phi(p.chart_id, p.coords) == pytest.approx(phi(q.chart_id, q.coords), abs=1e-12)


def test_zero_amplitude_matches_hopf_bitwise(rng):
    warped, plain = model("hopf_warped", **{"lambda": 0.0}), model("hopf_s3")
    for _ in range(20):
        p = plain.random_point(rng)
        assert np.array_equal(metric_eval(warped.metric, p), metric_eval(plain.metric, p))


def test_product_has_flat_vertizontal_plane(rng):
    fm = model("s3_x_s1")
    for _ in range(5):
        p = fm.random_point(rng)
        xi = TangentVector(p, point_data(fm, p).vertical_onb()[:, 0])
        X = kernel_direction(fm, p, xi)
        # product metric: the circle direction is parallel, so the plane is flat
        assert abs(unreduced_sectional(fm.metric, X, xi)) <= 1e-8
