import math

import numpy as np
import pytest
from scipy.integrate import quad

from spaceform_lab.errors import DegenerateDomain
from spaceform_lab.geometry import SpaceForm, SupportSurface
from spaceform_lab.mesh import (
    Circle,
    DomainSpec,
    appendix_two_horospheres,
    build_domain,
    check_mesh,
    custom_polygon,
    half_ball,
    mesh_quality,
    metric_area,
    metric_length,
    polygon_mesh,
    read_mesh,
    refine,
    tilted_cap,
    triangle_angles,
    umbilical_cap,
    write_mesh,
)

H = SpaceForm.half_space(2)
S = SupportSurface.horosphere()


@pytest.fixture(scope="module")
def cap_mesh():
    return build_domain(umbilical_cap(H, S, (0.0, 1.0), 0.5), 0.05)


@pytest.fixture(scope="module")
def lens_mesh():
    return build_domain(appendix_two_horospheres(), 0.05)


def test_cap_is_valid(cap_mesh):
    assert check_mesh(cap_mesh) == []
    q = mesh_quality(cap_mesh)
    assert q["h_max"] <= 0.05
    assert q["min_angle"] > 20.0
    assert len(cap_mesh.gamma_vertices) == 2


def test_boundary_vertices_lie_on_their_curves(lens_mesh):
    for edges, ids in ((lens_mesh.sigma_edges, lens_mesh.sigma_curve_ids),
                       (lens_mesh.robin_edges, lens_mesh.robin_curve_ids)):
        for (a, b), cid in zip(edges, ids):
            curve = lens_mesh.curves[cid]
            assert abs(curve.residual(lens_mesh.vertices[a])) < 1e-9
            assert abs(curve.residual(lens_mesh.vertices[b])) < 1e-9


def test_contact_angles():
    orth = umbilical_cap(H, S, (0.0, 1.0), 0.5)
    assert np.allclose(orth.contact_angles(), math.pi / 2, atol=1e-12)
    tilted = tilted_cap(H, S, (0.0, 1.0), 2.0, -20.0)
    assert np.allclose(tilted.contact_angles(), math.radians(110.0), atol=1e-12)
    lens = appendix_two_horospheres()
    assert np.allclose(lens.contact_angles(), math.pi / 2, atol=1e-12)


def test_refine_quadruples_and_snaps(lens_mesh):
    fine = refine(lens_mesh)
    assert len(fine.triangles) == 4 * len(lens_mesh.triangles)
    assert check_mesh(fine) == []
    assert np.allclose(fine.vertices[fine.gamma_vertices], lens_mesh.vertices[lens_mesh.gamma_vertices])
    for (a, _), cid in zip(fine.sigma_edges, fine.sigma_curve_ids):
        assert abs(fine.curves[cid].residual(fine.vertices[a])) < 1e-9
    assert fine.h_max < 0.6 * lens_mesh.h_max


def test_graded_refinement_shrinks_corner_elements(cap_mesh):
    uniform = refine(cap_mesh)
    graded = refine(cap_mesh, graded=True)
    assert check_mesh(graded) == []
    assert len(graded.triangles) > len(uniform.triangles)
    assert graded.h_min < uniform.h_min


def test_horocycle_segment_length(cap_mesh):
    # T is a segment of x_2 = 1 of Euclidean length 1; its hyperbolic length is also 1
    assert metric_length(cap_mesh, cap_mesh.robin_edges) == pytest.approx(1.0, rel=1e-12)


def test_sigma_length_matches_quadrature(cap_mesh):
    exact, _ = quad(lambda t: 0.5 / (1.0 + 0.5 * math.sin(t)), 0.0, math.pi)
    fine = refine(refine(cap_mesh))
    assert metric_length(fine, fine.sigma_edges) == pytest.approx(exact, rel=1e-4)


def test_area_matches_quadrature(cap_mesh):
    # g-area of the half disk: integrate 1/y^2 over the region
    exact, _ = quad(lambda x: quad(lambda y: 1.0 / y**2, 1.0, 1.0 + math.sqrt(0.25 - x * x))[0], -0.5, 0.5)
    assert metric_area(refine(cap_mesh)) == pytest.approx(exact, rel=1e-3)


def test_polygon_mesh_equilateral_angles():
    m = polygon_mesh(SpaceForm.euclidean(2), [(0, 0), (1, 0), (0.5, math.sqrt(3) / 2)], 1.0)
    assert triangle_angles(m).min() == pytest.approx(60.0)


def test_untagged_polygon_edge_rejected():
    spec = custom_polygon(H, S, [(0, 1), (1, 1), (0, 2)], ["robin", "sigma", "other"])
    with pytest.raises(DegenerateDomain):
        build_domain(spec, 0.1)


def test_polygon_with_single_tag_rejected():
    spec = custom_polygon(H, S, [(0, 1), (1, 1), (0, 2)], ["sigma"] * 3)
    with pytest.raises(DegenerateDomain):
        build_domain(spec, 0.1)


def test_disjoint_sigma_and_t_rejected():
    spec = umbilical_cap(H, S, (0.0, 3.0), 0.5)
    with pytest.raises(DegenerateDomain):
        build_domain(spec, 0.1)


def test_custom_polygon_meshes():
    spec = custom_polygon(H, S, [(-0.5, 1), (0.5, 1), (0.5, 1.5), (-0.5, 1.5)], ["robin", "sigma", "sigma", "sigma"])
    mesh = build_domain(spec, 0.1)
    assert check_mesh(mesh) == []
    assert metric_length(mesh, mesh.robin_edges) == pytest.approx(1.0)


def test_half_ball_chord_is_sigma():
    mesh = build_domain(half_ball(0.5), 0.1)
    assert np.allclose(mesh.vertices[np.unique(mesh.sigma_edges)][:, 1], 0.0)


def test_mesh_and_spec_json_round_trip(tmp_path, lens_mesh):
    path = tmp_path / "mesh.json"
    write_mesh(lens_mesh, path)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, lens_mesh.vertices)
    assert np.array_equal(back.triangles, lens_mesh.triangles)
    assert np.array_equal(back.gamma_vertices, lens_mesh.gamma_vertices)
    assert refine(back).n_vertices == refine(lens_mesh).n_vertices
    spec = appendix_two_horospheres()
    assert DomainSpec.from_dict(spec.to_dict()).to_dict() == spec.to_dict()


def test_nonpositive_h_rejected():
    with pytest.raises(ValueError):
        build_domain(appendix_two_horospheres(), 0.0)


def test_circle_projection():
    c = Circle((0.0, 1.0), 2.0)
    assert np.allclose(c.project(np.array([3.0, 1.0])), [[2.0, 1.0]])
    assert c.residual(np.array([0.0, 4.0]))[0] == pytest.approx(1.0)
