import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from conftest import scenario_solution
from spaceform_lab.errors import IndefiniteBulk
from spaceform_lab.spectra import (
    lambda_bound,
    potential_alignment,
    rayleigh_quotient,
    robin_dirichlet_spectrum,
    sign_changes,
    steklov_dirichlet_spectrum,
)


def reduced(system):
    free = system.free_dofs
    L = (system.A - system.kappa * system.B_T).tocsr()[free][:, free]
    M = system.M.tocsr()[free][:, free]
    C = (system.A - system.n * system.K * system.M).tocsr()[free][:, free]
    B = system.B_T.tocsr()[free][:, free]
    return L, M, C, B


@pytest.mark.parametrize("sid", ["half_ball_sub", "horocycle_cap_orthogonal", "appendix_two_horospheres"])
def test_robin_dirichlet_matches_eigsh(sid):
    system, _ = scenario_solution(sid, 0.05)
    res = robin_dirichlet_spectrum(system, k=3)
    L, M, _, _ = reduced(system)
    ref = np.sort(spla.eigsh(L, k=3, M=M, sigma=lambda_bound(system) - 1.0, which="LM")[0])
    assert np.allclose(res.eigenvalues, ref, rtol=1e-8)
    assert np.all(np.diff(res.eigenvalues) >= 0)
    for j in range(3):
        assert rayleigh_quotient(system, res.eigenvectors[:, j]) == pytest.approx(res.eigenvalues[j], rel=1e-8)


@pytest.mark.parametrize("sid", ["half_ball_sub", "horocycle_cap_orthogonal", "appendix_two_horospheres"])
def test_steklov_matches_dense_pencil(sid):
    system, _ = scenario_solution(sid, 0.05)
    mu = steklov_dirichlet_spectrum(system, k=2).eigenvalues
    _, _, C, B = reduced(system)
    # kappa B x = (1/mu) C x; the largest 1/mu gives mu_1
    inv = sla.eigh(system.kappa * B.toarray(), C.toarray(), eigvals_only=True)
    ref = np.sort(1.0 / inv[inv > 1e-12])[:2]
    assert np.allclose(mu, ref, rtol=1e-8)


def test_first_eigenfunctions_have_one_sign():
    system, _ = scenario_solution("half_ball_sub", 0.05)
    rd = robin_dirichlet_spectrum(system, k=2)
    assert not sign_changes(system, rd.eigenvectors[:, 0])
    assert sign_changes(system, rd.eigenvectors[:, 1])
    sd = steklov_dirichlet_spectrum(system, k=1)
    assert not sign_changes(system, sd.eigenvectors[:, 0])


def test_half_ball_attains_both_bounds_with_potential_eigenfunction():
    system, _ = scenario_solution("half_ball_geodesic", 0.03)
    rd = robin_dirichlet_spectrum(system)
    sd = steklov_dirichlet_spectrum(system)
    assert rd.eigenvalues[0] == pytest.approx(-2.0, rel=2e-3)
    assert sd.eigenvalues[0] == pytest.approx(1.0, rel=2e-3)
    assert potential_alignment(system, sd.eigenvectors[:, 0]) < 1e-3


def test_strict_bounds_on_subdomain_and_cap():
    for sid in ("half_ball_sub", "horocycle_cap_orthogonal", "horocycle_cap_tilted"):
        system, _ = scenario_solution(sid, 0.08)
        assert robin_dirichlet_spectrum(system).margin > 0
        assert steklov_dirichlet_spectrum(system).margin > 0


def test_steklov_rejects_indefinite_bulk():
    system, _ = scenario_solution("horocycle_cap_orthogonal", 0.08)
    with pytest.raises(IndefiniteBulk):
        steklov_dirichlet_spectrum(system, K=50.0)
    with pytest.raises(ValueError):
        steklov_dirichlet_spectrum(system, kappa=0.0)


def test_spectrum_result_dict():
    system, _ = scenario_solution("half_ball_sub", 0.08)
    d = robin_dirichlet_spectrum(system).to_dict()
    assert d["problem"] == "RobinDirichlet" and d["bound"] == -2.0
    assert d["margin"] == pytest.approx(d["eigenvalues"][0] + 2.0)
