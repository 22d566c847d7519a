import json

import numpy as np
import pytest

from spaceform_lab.errors import UnknownScenario
from spaceform_lab.mesh import build_domain, check_mesh
from spaceform_lab.scenarios import (
    REGISTRY,
    Scenario,
    appendix_residuals,
    coercive_scenarios,
    load_scenario,
    scenario_ids,
)

REQUIRED = {
    "appendix_two_horospheres",
    "horocycle_cap_orthogonal",
    "horocycle_cap_tilted",
    "half_ball_geodesic",
    "half_ball_sub",
}


def test_registry_contents():
    assert REQUIRED <= set(scenario_ids())
    assert {s.id for s in coercive_scenarios()} == REQUIRED - {"half_ball_geodesic"}


def test_unknown_scenario():
    with pytest.raises(UnknownScenario):
        load_scenario("no_such_case")


@pytest.mark.parametrize("sid", sorted(REGISTRY))
def test_json_round_trip_is_exact(sid):
    sc = load_scenario(sid)
    text = sc.to_json()
    back = Scenario.from_json(text)
    assert back.to_json() == text
    assert json.loads(text)["id"] == sid


@pytest.mark.parametrize("sid", sorted(REGISTRY))
def test_provenance_tags(sid):
    for exp in load_scenario(sid).expected.values():
        assert exp.provenance in {"reference", "derived", "trivial"}
        assert exp.source


@pytest.mark.parametrize("sid", sorted(REQUIRED))
def test_domains_mesh_cleanly(sid):
    sc = load_scenario(sid)
    assert check_mesh(build_domain(sc.domain, 0.1)) == []


def test_curve_scenarios_build_curves():
    assert load_scenario("closed_umbilical_circle").build_curve(100).closed
    assert not load_scenario("perturbed_cap").build_curve(100).closed


def test_exact_solutions():
    assert load_scenario("appendix_two_horospheres").exact_solution is not None
    assert load_scenario("horocycle_cap_orthogonal").exact_solution is not None
    assert load_scenario("horocycle_cap_tilted").exact_solution is None


def test_appendix_residuals_are_exact_and_deterministic():
    a = appendix_residuals(n_samples=2000, seed=5)
    b = appendix_residuals(n_samples=2000, seed=5)
    assert a == b
    for key in ("pde", "dirichlet", "neumann", "robin"):
        assert a[key] < 1e-10


def test_appendix_value_at_origin():
    u = load_scenario("appendix_two_horospheres").exact_solution
    # the origin lies on Sigma's circle, and V0(0) = 1, V(0) = 0 give u(0) = 0
    assert u.value(np.array([[0.0, 0.0]]))[0] == pytest.approx(0.0)
