import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spaceform_lab.errors import InadmissiblePoint, UnsupportedCase
from spaceform_lab.geometry import (
    Model,
    SpaceForm,
    SupportKind,
    SupportSurface,
    ball_linear_potential,
    ball_to_half_space,
    conformal_factor,
    curvature_transform,
    geometry_oracle,
    killing_defect,
    killing_divergence,
    laplace_beltrami,
    normal_derivative,
    oracle_cases,
    potential_defects,
    support_potential,
    umbilical_solution,
    validate_support,
)

H2 = SpaceForm.half_space(2)
B2 = SpaceForm.poincare_ball(2)
S2 = SpaceForm.stereographic_sphere(2)


def fd_laplace_beltrami(chart, u, x, eps=1e-4):
    """Delta_g u by central differences of values only: exp(-2w) (Delta u + (n-2) dw . du)."""
    n = chart.n
    x = np.asarray(x, float)
    lap, grad_u, grad_w = 0.0, np.zeros(n), np.zeros(n)
    w = lambda y: conformal_factor(chart, y)[0]  # noqa: E731
    for i in range(n):
        e = np.zeros(n)
        e[i] = eps
        up, um, u0 = (float(u.value((x + d)[None])[0]) for d in (e, -e, 0 * e))
        lap += (up - 2 * u0 + um) / eps**2
        grad_u[i] = (up - um) / (2 * eps)
        grad_w[i] = (w(x + e) - w(x - e)) / (2 * eps)
    return math.exp(-2 * w(x)) * (lap + (n - 2) * grad_w @ grad_u)


def test_space_form_chart_curvature():
    assert H2.K == -1 and B2.K == -1 and S2.K == 1
    assert SpaceForm.from_dict(H2.to_dict()) == H2


def test_conformal_factor_half_space():
    omega, grad = conformal_factor(H2, [0.3, 2.0])
    assert omega == pytest.approx(-math.log(2.0))
    assert np.allclose(grad, [0.0, -0.5])


def test_conformal_factor_ball_origin():
    omega, grad = conformal_factor(B2, [0.0, 0.0])
    assert omega == pytest.approx(math.log(2.0))
    assert np.allclose(grad, 0.0)


def test_inadmissible_points_rejected():
    with pytest.raises(InadmissiblePoint):
        conformal_factor(H2, [0.0, -0.1])
    with pytest.raises(InadmissiblePoint):
        conformal_factor(B2, [1.0, 0.0])


def test_horocycle_has_curvature_one():
    # the line x_2 = 1 with outward normal +E_2 (pointing away from B^int = {x_2 > 1} is -E_2)
    k = curvature_transform(H2, 0.0, [0.0, -1.0], [0.7, 1.0])
    assert k == pytest.approx(1.0)


@given(h=st.floats(0.2, 5.0), ratio=st.floats(0.05, 0.95), t=st.floats(0, 2 * math.pi))
@settings(max_examples=60, deadline=None)
def test_circle_curvature_is_h_over_r(h, ratio, t):
    r = ratio * h
    N = np.array([math.cos(t), math.sin(t)])
    p = np.array([0.0, h]) + r * N
    assert curvature_transform(H2, 1.0 / r, N, p) == pytest.approx(h / r, rel=1e-10)


def test_equidistant_line_curvature_is_cos_theta():
    theta = 0.6
    # S = {x_1 tan(theta) + x_2 = 1}; its normal into {x_1 tan(theta) + x_2 > 1} is (sin, cos)
    N = -np.array([math.sin(theta), math.cos(theta)])
    for x1 in (-3.0, 0.0, 1.0):
        p = np.array([x1, 1.0 - x1 * math.tan(theta)])
        assert curvature_transform(H2, 0.0, N, p) == pytest.approx(math.cos(theta), rel=1e-12)


@pytest.mark.parametrize("chart", [H2, B2, S2, SpaceForm.half_space(3), SpaceForm.poincare_ball(3)])
def test_laplace_beltrami_matches_finite_differences(chart):
    rng = np.random.default_rng(1)
    a = rng.standard_normal(chart.n)
    if chart.model is Model.HALF_SPACE:
        u = umbilical_solution(chart, np.r_[np.zeros(chart.n - 1), 2.0], 1.0)
        pts = np.c_[rng.uniform(-1, 1, (5, chart.n - 1)), rng.uniform(0.5, 3.0, 5)]
    elif chart.model is Model.POINCARE_BALL:
        u = ball_linear_potential(a)
        pts = rng.uniform(-0.5, 0.5, (5, chart.n))
    else:
        u = umbilical_solution(chart, 0.3 * a, 0.7)
        pts = rng.uniform(-1.0, 1.0, (5, chart.n))
    for x in pts:
        assert laplace_beltrami(chart, u, x) == pytest.approx(fd_laplace_beltrami(chart, u, x), rel=1e-5, abs=1e-6)


@pytest.mark.parametrize("chart,center,radius", [
    (H2, (0.3, 2.0), 0.8),
    (B2, (0.1, -0.2), 0.4),
    (S2, (0.5, 0.2), 1.3),
    (SpaceForm.half_space(3), (0.0, 0.0, 1.5), 1.0),
])
def test_umbilical_solution_solves_overdetermined_problem(chart, center, radius):
    u = umbilical_solution(chart, center, radius)
    rng = np.random.default_rng(2)
    dirs = rng.standard_normal((50, chart.n))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    on = np.asarray(center) + radius * dirs
    inside = np.asarray(center) + 0.5 * radius * dirs
    assert np.max(np.abs(u.value(on))) < 1e-12
    lap = laplace_beltrami(chart, u, inside) + chart.n * chart.K * u.value(inside)
    assert np.allclose(lap, 1.0, atol=1e-10)
    du = normal_derivative(chart, u, on, dirs)
    assert np.ptp(du) < 1e-10 * max(1.0, abs(du).max())


@pytest.mark.parametrize("name,support,chart", oracle_cases(2) + oracle_cases(3))
def test_killing_pair_identities(name, support, chart):
    rows = geometry_oracle(n_samples=200, seed=3, dims=(chart.n,), cases=[(name, support, chart)])
    (row,) = rows
    for key, val in row.items():
        if key not in ("case", "n"):
            assert val < 1e-10, (key, val)


def test_killing_divergence_is_n_times_potential():
    name, support, chart = oracle_cases(2)[0]
    div, nV = killing_divergence(support, chart, [0.1, 0.2])
    assert div == pytest.approx(nV, abs=1e-12)


def test_potential_hessian_identity_half_space():
    support = SupportSurface.horosphere()
    V = support_potential(support, H2)
    assert V.value(np.array([[3.0, 0.25]]))[0] == pytest.approx(4.0)
    hess, neumann = potential_defects(support, H2, [0.5, 2.0])
    assert hess < 1e-12 and neumann is None
    hess, neumann = potential_defects(support, H2, [-1.0, 1.0])
    assert hess < 1e-12 and neumann < 1e-12


def test_ball_to_half_space_is_isometry():
    rng = np.random.default_rng(4)
    x = rng.uniform(-0.6, 0.6, (20, 2))
    y = ball_to_half_space(x)
    eps = 1e-6
    v = rng.standard_normal((20, 2))
    dy = (ball_to_half_space(x + eps * v) - ball_to_half_space(x - eps * v)) / (2 * eps)
    wx, _ = conformal_factor(B2, x)
    wy, _ = conformal_factor(H2, y)
    lx = np.exp(wx) * np.linalg.norm(v, axis=1)
    ly = np.exp(wy) * np.linalg.norm(dy, axis=1)
    assert np.allclose(lx, ly, rtol=1e-8)


def test_support_validation():
    with pytest.raises(ValueError):
        SupportSurface(SupportKind.HOROSPHERE, 2.0)
    with pytest.raises(ValueError):
        SupportSurface(SupportKind.EQUIDISTANT, 0.5, theta=0.4)
    with pytest.raises(UnsupportedCase):
        validate_support(SupportSurface.horosphere(), B2)
    with pytest.raises(UnsupportedCase):
        killing_defect(SupportSurface.geodesic_sphere(0.5, -1), H2, [0.0, 1.0])
    s = SupportSurface.equidistant(0.4, exterior=True)
    assert s.robin_kappa == pytest.approx(-math.cos(0.4))
    assert SupportSurface.from_dict(s.to_dict()) == s
