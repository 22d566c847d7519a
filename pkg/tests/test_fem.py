import json

import numpy as np
import pytest

from conftest import scenario_mesh, scenario_solution
from spaceform_lab.errors import EmptySigma, NotCoercive
from spaceform_lab.fem import (
    assemble,
    interpolant,
    manufactured_error,
    normal_derivative_stats,
    solve_mixed_bvp,
    weak_residual,
)
from spaceform_lab.geometry import constant_field
from spaceform_lab.mesh import metric_area, metric_length, polygon_mesh, refine
from spaceform_lab.scenarios import load_scenario
from spaceform_lab.spectra import steklov_dirichlet_spectrum


@pytest.fixture(scope="module")
def cap():
    return scenario_solution("horocycle_cap_orthogonal", 0.05)


def test_matrices_symmetric_and_mass_is_area(cap):
    system, _ = cap
    for mat in (system.A, system.M, system.B_T):
        assert abs(mat - mat.T).max() < 1e-12
    one = np.ones(system.mesh.n_vertices)
    assert one @ system.M @ one == pytest.approx(metric_area(system.mesh), rel=1e-3)
    assert one @ system.B_T @ one == pytest.approx(metric_length(system.mesh, system.mesh.robin_edges), rel=1e-6)
    assert np.abs(system.A @ one).max() < 1e-10


def test_load_is_negative_volume(cap):
    system, _ = cap
    assert system.f.sum() == pytest.approx(-metric_area(system.mesh), rel=1e-3)


def test_dirichlet_set_contains_gamma(cap):
    system, sol = cap
    assert set(system.mesh.gamma_vertices) <= set(system.dirichlet_dofs)
    assert np.all(sol.u[system.dirichlet_dofs] == 0.0)


def test_weak_residual_vanishes(cap):
    system, sol = cap
    assert np.abs(weak_residual(system, sol)).max() < 1e-12


def test_maximum_principle(cap):
    _, sol = cap
    assert sol.u.max() <= 1e-8
    assert sol.u.min() < 0


def test_solution_close_to_exact_umbilical(cap):
    _, sol = cap
    sc = load_scenario("horocycle_cap_orthogonal")
    e_l2, _ = manufactured_error(sol, sc.exact_solution)
    assert e_l2 < 1e-3
    c_hat, rel_std = normal_derivative_stats(sol)
    assert c_hat == pytest.approx(0.25, rel=2e-2)


def test_linear_in_source(cap):
    system, sol = cap
    sol2 = solve_mixed_bvp(system, f=constant_field(2.0))
    assert np.allclose(sol2.u, 2.0 * sol.u, atol=1e-12)


def test_robin_data_enters_load(cap):
    system, sol = cap
    sol_q = solve_mixed_bvp(system, q=constant_field(1.0))
    # for a nonzero q the solution changes, and the weak residual with that load vanishes
    L = system.operator()
    r = (L @ sol_q.u - system.load(q=constant_field(1.0)))[system.free_dofs]
    assert np.abs(r).max() < 1e-12
    assert not np.allclose(sol_q.u, sol.u)


def test_coercivity_threshold_matches_steklov(cap):
    system, _ = cap
    mu1 = float(steklov_dirichlet_spectrum(system).eigenvalues[0]) * system.kappa
    solve_mixed_bvp(system, kappa=0.95 * mu1)
    with pytest.raises(NotCoercive):
        solve_mixed_bvp(system, kappa=1.05 * mu1)


def test_interpolant_of_exact_solution_has_constant_normal_derivative():
    sc = load_scenario("appendix_two_horospheres")
    mesh = refine(scenario_mesh(sc.id, 0.05))
    sol = interpolant(mesh, sc.chart, sc.exact_solution)
    c_hat, rel = normal_derivative_stats(sol)
    assert c_hat == pytest.approx(0.5, rel=1e-2)


def test_convergence_rates_on_appendix():
    sc = load_scenario("appendix_two_horospheres")
    mesh = scenario_mesh(sc.id, 0.1)
    errs = []
    for _ in range(3):
        sol = solve_mixed_bvp(assemble(mesh, sc.chart, sc.support))
        errs.append(manufactured_error(sol, sc.exact_solution))
        mesh = refine(mesh)
    l2 = [e[0] for e in errs]
    h1 = [e[1] for e in errs]
    assert all(a / b > 3.0 for a, b in zip(l2, l2[1:]))
    assert all(a / b > 1.6 for a, b in zip(h1, h1[1:]))


def test_solution_json_layout(cap):
    _, sol = cap
    d = json.loads(sol.to_json())
    assert set(d) == {"u", "u_nu_sigma", "c_hat", "rel_std"}
    assert len(d["u"]) == sol.mesh.n_vertices
    assert len(d["u_nu_sigma"]) == len(sol.mesh.sigma_edges)


def test_empty_sigma_raises():
    sc = load_scenario("horocycle_cap_orthogonal")
    mesh = polygon_mesh(sc.chart, [(-0.5, 1.0), (0.5, 1.0), (0.0, 1.5)], 0.2, tags=["robin"] * 3)
    system = assemble(mesh, sc.chart, sc.support)
    with pytest.raises((EmptySigma, NotCoercive)):
        sol = solve_mixed_bvp(system)
        normal_derivative_stats(sol)
