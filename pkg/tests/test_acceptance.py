"""The ten acceptance criteria at their stated tolerances, one pass/fail line each."""

import time

import numpy as np

from conftest import scenario_mesh, scenario_solution
from spaceform_lab.fem import assemble, manufactured_error, normal_derivative_stats, solve_mixed_bvp
from spaceform_lab.geometry import geometry_oracle
from spaceform_lab.hypersurface import (
    circle_curve,
    hkr_gap,
    minkowski_residual,
    newton_maclaurin_chain,
    newton_tensor,
)
from spaceform_lab.identities import (
    master_identity_residual,
    p_function,
    pohozaev_residual,
    umbilicity_defect,
)
from spaceform_lab.mesh import build_domain, polygon_mesh, refine
from spaceform_lab.scenarios import appendix_residuals, coercive_scenarios, load_scenario
from spaceform_lab.spectra import robin_dirichlet_spectrum, steklov_dirichlet_spectrum
from spaceform_lab.geometry import SpaceForm, SupportSurface


def _identities(scenario_id, h):
    sc = load_scenario(scenario_id)
    _, sol = scenario_solution(scenario_id, h)
    pf = p_function(sol)
    return sc, sol, pf


def test_criterion_1_geometry_oracle(record):
    t0 = time.perf_counter()
    rows = geometry_oracle(n_samples=1000, seed=0, dims=(2,))
    elapsed = time.perf_counter() - t0
    worst = max(v for row in rows for k, v in row.items() if k not in ("case", "n"))
    cases = {row["case"] for row in rows}
    ok = worst < 1e-10 and elapsed < 5.0 and len(cases) >= 3
    record(1, ok, f"worst defect {worst:.2e} over {sorted(cases)} in {elapsed:.2f} s")


def test_criterion_2_appendix_exactness(record):
    t0 = time.perf_counter()
    res = appendix_residuals(n_samples=10_000, seed=0)
    elapsed = time.perf_counter() - t0
    keys = ("pde", "dirichlet", "neumann", "robin")
    worst = max(res[k] for k in keys)
    record(2, worst < 1e-10 and elapsed < 5.0, f"worst residual {worst:.2e} in {elapsed:.2f} s")


def test_criterion_3_fem_convergence(record):
    sc = load_scenario("appendix_two_horospheres")
    t0 = time.perf_counter()
    mesh = build_domain(sc.domain, 0.1)
    errs, c_hat = [], None
    for level in range(5):
        if level:
            mesh = refine(mesh)
        sol = solve_mixed_bvp(assemble(mesh, sc.chart, sc.support))
        errs.append(manufactured_error(sol, sc.exact_solution))
        c_hat = normal_derivative_stats(sol)[0]
    elapsed = time.perf_counter() - t0
    l2 = [e[0] for e in errs]
    h1 = [e[1] for e in errs]
    ratios = [a / b for a, b in zip(l2, l2[1:])]
    ok = (all(r >= 2.5 for r in ratios) and all(b < a for a, b in zip(h1, h1[1:]))
          and abs(c_hat - 0.5) <= 0.02 * 0.5 and elapsed < 120)
    record(3, ok, f"L2 ratios {np.round(ratios, 2).tolist()}, c_hat {c_hat:.4f}, {elapsed:.1f} s")


def test_criterion_4_eigenvalue_bounds(record):
    t0 = time.perf_counter()
    out = {}
    for sid, h in (("half_ball_geodesic", 0.02), ("half_ball_sub", 0.02), ("horocycle_cap_orthogonal", 0.02)):
        sc = load_scenario(sid)
        system = assemble(scenario_mesh(sid, h), sc.chart, sc.support)
        lam = float(robin_dirichlet_spectrum(system).eigenvalues[0])
        mu = float(steklov_dirichlet_spectrum(system).eigenvalues[0])
        out[sid] = (lam, mu)
    elapsed = time.perf_counter() - t0
    lam, mu = out["half_ball_geodesic"]
    equal = abs(lam + 2.0) <= 0.02 * 2.0 and abs(mu - 1.0) <= 0.02
    lam_s, mu_s = out["half_ball_sub"]
    strict = lam_s + 2.0 > 0.05 and mu_s - 1.0 > 0.02
    lam_c, mu_c = out["horocycle_cap_orthogonal"]
    cap = lam_c > -2.0 and mu_c > 1.0
    detail = ", ".join(f"{k}: lambda1={v[0]:.4f} mu1={v[1]:.4f}" for k, v in out.items())
    record(4, equal and strict and cap and elapsed < 120, f"{detail}; {elapsed:.1f} s")


def test_criterion_5_maximum_principle(record):
    worst = {}
    for sc in coercive_scenarios():
        _, sol = scenario_solution(sc.id, sc.default_h)
        worst[sc.id] = float(sol.u.max())
    ok = len(worst) >= 3 and all(v <= 1e-8 for v in worst.values())
    record(5, ok, "max u: " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()))


def test_criterion_6_pohozaev_discrimination(record):
    rel = {}
    for sid in ("horocycle_cap_orthogonal", "appendix_two_horospheres"):
        sc, sol, pf = _identities(sid, 0.01)
        rel[sid] = pohozaev_residual(sol, pf, sc.support).relative
    sc = load_scenario("horocycle_cap_tilted")
    sc, sol, pf = _identities(sc.id, sc.acceptance_h)
    rel[sc.id] = pohozaev_residual(sol, pf, sc.support).relative
    ok = (abs(rel["horocycle_cap_orthogonal"]) < 1e-2 and abs(rel["appendix_two_horospheres"]) < 1e-2
          and abs(rel["horocycle_cap_tilted"]) > 5e-2)
    record(6, ok, ", ".join(f"{k}={v:+.2e}" for k, v in rel.items()))


def test_criterion_7_master_identity(record):
    rel = {}
    for sid in ("horocycle_cap_orthogonal", "appendix_two_horospheres"):
        sc, sol, pf = _identities(sid, 0.01)
        assert sc.overdetermined
        rel[sid] = master_identity_residual(sol, pf, sc.support).relative
    ok = all(abs(v) < 2e-2 for v in rel.values())
    record(7, ok, ", ".join(f"{k}={v:+.2e}" for k, v in rel.items()))


def test_criterion_8_overdetermined_iff_umbilical(record):
    _, sol = scenario_solution("horocycle_cap_orthogonal", 0.01)
    c_hat, rel_std = normal_derivative_stats(sol)
    umb = umbilicity_defect(sol.mesh, c_hat).relative
    tilted = load_scenario("horocycle_cap_tilted")
    _, sol_t = scenario_solution(tilted.id, tilted.acceptance_h)
    rel_std_t = normal_derivative_stats(sol_t)[1]
    ok = rel_std < 1e-2 and umb < 2e-2 and rel_std_t > 5e-2
    record(8, ok, f"orthogonal rel_std={rel_std:.2e} umbilicity={umb:.2e}; tilted rel_std={rel_std_t:.3f}")


def test_criterion_9_newton_algebra(record):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        m = int(rng.integers(2, 9))
        a = rng.standard_normal((m, m))
        h = 0.5 * (a + a.T)
        r = int(rng.integers(0, m))
        _, checks = newton_tensor(h, r)
        worst = max(worst, max(c[2] for c in checks.values()))
    eq_scalar = all(newton_maclaurin_chain(np.full(m, 1.7))["equality"] for m in range(2, 9))
    eq_generic = any(newton_maclaurin_chain(np.abs(rng.standard_normal(m)) + 0.1)["equality"]
                     for m in range(2, 9))
    holds = all(newton_maclaurin_chain(np.abs(rng.standard_normal(m)) + 0.1)["holds"] for m in range(2, 9))
    ok = worst < 1e-12 and eq_scalar and not eq_generic and holds
    record(9, ok, f"worst trace identity error {worst:.1e}; equality only on scalar inputs: {eq_scalar and not eq_generic}")


def test_criterion_10_minkowski_and_hkr(record):
    H = SpaceForm.half_space(2)
    S = SupportSurface.horosphere()
    mink = {m: minkowski_residual(circle_curve(H, (0.0, 2.0), 1.0, m, S)).relative for m in (100, 200, 400)}
    decay = [abs(mink[a]) / abs(mink[b]) for a, b in ((100, 200), (200, 400))]
    mink_ok = abs(mink[400]) < 1e-2 and all(d > 3.5 for d in decay)

    def gap(sid, m):
        curve = load_scenario(sid).build_curve(m)
        return hkr_gap(curve, polygon_mesh(curve.chart, curve.vertices, 0.01)).relative

    umb = gap("horocycle_cap_orthogonal", 400)
    pert = gap("perturbed_cap", 400)
    # quadrature tolerance: the discretization error of the gap, estimated on the equality case
    # and by halving the segment count on the perturbed curve
    quad = max(abs(umb), abs(pert - gap("perturbed_cap", 200)))
    hkr_ok = abs(umb) < 1e-2 and pert > 3 * quad
    record(10, mink_ok and hkr_ok,
           f"Minkowski {mink[400]:.1e} at 400 segments (decay {np.round(decay, 2).tolist()}); "
           f"HKR umbilical {umb:+.1e}, perturbed {pert:+.3f} vs quadrature tol {quad:.1e}")
