"""Triangulated 2-D domains with analytic boundary pieces tagged Sigma / T.

A domain is a closed counterclockwise chain of boundary arcs, each lying on an
analytic curve (circle or straight line) and tagged ``"sigma"`` (Dirichlet,
overdetermined) or ``"robin"`` (the piece ``T`` on the support surface).  The
corner set Gamma is where tags change.  Boundary vertices are always placed on
the analytic curves, and refinement snaps new boundary midpoints back onto
them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import triangle

from .errors import DegenerateDomain
from .geometry import (
    Model,
    SpaceForm,
    SupportKind,
    SupportSurface,
    _omega,
    check_admissible,
)

SIGMA = "sigma"
ROBIN = "robin"
TAGS = (SIGMA, ROBIN)


# ---------------------------------------------------------------------------
# Analytic curves


@dataclass(frozen=True)
class Circle:
    center: tuple
    radius: float

    def point(self, t):
        t = np.asarray(t, dtype=float)
        c = np.asarray(self.center)
        return c + self.radius * np.stack([np.cos(t), np.sin(t)], axis=-1)

    def tangent(self, t):
        return np.array([-math.sin(t), math.cos(t)])

    def project(self, p):
        c = np.asarray(self.center)
        d = np.atleast_2d(p) - c
        return c + self.radius * d / np.linalg.norm(d, axis=1)[:, None]

    def residual(self, p):
        c = np.asarray(self.center)
        return np.linalg.norm(np.atleast_2d(p) - c, axis=1) - self.radius

    def param(self, p):
        c = np.asarray(self.center)
        return math.atan2(p[1] - c[1], p[0] - c[0])

    def to_dict(self):
        return {"type": "circle", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Line:
    """Straight line through ``origin`` with unit ``direction``; ``t`` is arc length."""

    origin: tuple
    direction: tuple

    def point(self, t):
        t = np.asarray(t, dtype=float)
        return np.asarray(self.origin) + t[..., None] * np.asarray(self.direction)

    def tangent(self, t):
        return np.asarray(self.direction, dtype=float)

    def project(self, p):
        o, d = np.asarray(self.origin), np.asarray(self.direction)
        q = np.atleast_2d(p) - o
        return o + (q @ d)[:, None] * d

    def residual(self, p):
        o, d = np.asarray(self.origin), np.asarray(self.direction)
        q = np.atleast_2d(p) - o
        return q[:, 0] * d[1] - q[:, 1] * d[0]

    def param(self, p):
        return float((np.asarray(p) - np.asarray(self.origin)) @ np.asarray(self.direction))

    def to_dict(self):
        return {"type": "line", "origin": list(self.origin), "direction": list(self.direction)}


def curve_from_dict(d: dict):
    if d["type"] == "circle":
        return Circle(tuple(d["center"]), float(d["radius"]))
    return Line(tuple(d["origin"]), tuple(d["direction"]))


def _line_through(a, b) -> Line:
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    d = d / np.linalg.norm(d)
    return Line(tuple(a), tuple(d))


@dataclass(frozen=True)
class Arc:
    """Portion ``t0 -> t1`` of ``curve`` traversed with the domain on the left."""

    curve: object
    t0: float
    t1: float
    tag: Optional[str]

    @property
    def start(self):
        return self.curve.point(self.t0)

    @property
    def end(self):
        return self.curve.point(self.t1)

    def length(self) -> float:
        scale = self.curve.radius if isinstance(self.curve, Circle) else 1.0
        return abs(self.t1 - self.t0) * scale

    def sample(self, h: float, sizing=None) -> np.ndarray:
        """Points from start to end (inclusive) with Euclidean spacing at most ``h``."""
        if sizing is None:
            m = max(1, math.ceil(self.length() / h - 1e-12))
            ts = np.linspace(self.t0, self.t1, m + 1)
        else:
            ts = _graded_params(self, h, sizing)
        pts = self.curve.point(ts)
        pts[0], pts[-1] = self.start, self.end
        return pts

    def tangent_at_start(self):
        s = 1.0 if self.t1 > self.t0 else -1.0
        return s * self.curve.tangent(self.t0)

    def tangent_at_end(self):
        s = 1.0 if self.t1 > self.t0 else -1.0
        return s * self.curve.tangent(self.t1)


def _graded_params(arc: Arc, h: float, sizing) -> np.ndarray:
    # march along the arc with step sizing(point) capped by h
    scale = arc.curve.radius if isinstance(arc.curve, Circle) else 1.0
    total = arc.t1 - arc.t0
    sgn = 1.0 if total > 0 else -1.0
    ts = [arc.t0]
    t = arc.t0
    while True:
        step = min(h, sizing(arc.curve.point(t))) / scale
        t = t + sgn * step
        if sgn * (arc.t1 - t) <= 0.3 * step:
            break
        ts.append(t)
    ts.append(arc.t1)
    ts = np.array(ts)
    # smooth the last gap by redistributing the final two intervals
    if len(ts) > 2:
        ts[-2] = 0.5 * (ts[-3] + ts[-1]) if abs(ts[-1] - ts[-2]) < 0.5 * abs(ts[-2] - ts[-3]) else ts[-2]
    return ts


# ---------------------------------------------------------------------------
# Domain specifications


@dataclass(frozen=True)
class Side:
    """A region bounded by a circle (inside the disk) or a line (left of ``direction``)."""

    curve: object
    tag: str


def _intersect(c1, c2) -> list:
    if isinstance(c1, Line) and isinstance(c2, Line):
        o1, d1 = np.asarray(c1.origin), np.asarray(c1.direction)
        o2, d2 = np.asarray(c2.origin), np.asarray(c2.direction)
        A = np.column_stack([d1, -d2])
        if abs(np.linalg.det(A)) < 1e-14:
            return []
        s = np.linalg.solve(A, o2 - o1)
        return [o1 + s[0] * d1]
    if isinstance(c1, Line):
        c1, c2 = c2, c1
    if isinstance(c2, Line):
        c = np.asarray(c1.center)
        o, d = np.asarray(c2.origin), np.asarray(c2.direction)
        q = o - c
        b = q @ d
        disc = b * b - (q @ q - c1.radius**2)
        if disc <= 0:
            return []
        r = math.sqrt(disc)
        return [o + (-b - r) * d, o + (-b + r) * d]
    a, b = np.asarray(c1.center), np.asarray(c2.center)
    r1, r2 = c1.radius, c2.radius
    dvec = b - a
    dist = np.linalg.norm(dvec)
    if dist >= r1 + r2 or dist <= abs(r1 - r2) or dist == 0:
        return []
    x = (dist**2 + r1**2 - r2**2) / (2 * dist)
    y = math.sqrt(max(r1**2 - x**2, 0.0))
    u = dvec / dist
    v = np.array([-u[1], u[0]])
    return [a + x * u + y * v, a + x * u - y * v]


def _inside(side: Side, p) -> bool:
    c = side.curve
    if isinstance(c, Circle):
        return float(c.residual(p)[0]) < 0
    return float(c.residual(p)[0]) < 0  # left of the direction


def _side_arc(side: Side, other: Side, pts) -> Arc:
    """The part of ``side``'s boundary lying inside ``other``, oriented counterclockwise."""
    c = side.curve
    p, q = pts
    if isinstance(c, Circle):
        tp, tq = c.param(p), c.param(q)
        # candidate ccw arc p -> q
        t1 = tq if tq > tp else tq + 2 * math.pi
        mid = c.point(0.5 * (tp + t1))
        if _inside(other, mid):
            return Arc(c, tp, t1, side.tag)
        t0 = tq
        t1 = tp if tp > tq else tp + 2 * math.pi
        return Arc(c, t0, t1, side.tag)
    tp, tq = c.param(p), c.param(q)
    line = Line(c.origin, c.direction)
    return Arc(line, min(tp, tq), max(tp, tq), side.tag)


@dataclass(frozen=True)
class DomainSpec:
    """Named domain scenario plus chart, support, and boundary geometry.

    ``kind`` is one of ``UmbilicalCapOrthogonal``, ``UmbilicalCapTilted``,
    ``AppendixTwoHorospheres``, ``HalfBall``, ``CustomPolygon``.  ``params`` is
    a JSON-friendly dict describing the geometry; :meth:`arcs` turns it into
    a closed counterclockwise chain of boundary arcs.
    """

    kind: str
    chart: SpaceForm
    support: SupportSurface
    params: dict = field(default_factory=dict)

    def arcs(self) -> list:
        p = self.params
        if self.kind == "CustomPolygon":
            verts = np.asarray(p["vertices"], dtype=float)
            tags = list(p["tags"])
            if len(tags) != len(verts):
                raise DegenerateDomain("one tag per polygon edge is required")
            if any(t not in TAGS for t in tags):
                raise DegenerateDomain("every polygon edge must be tagged sigma or robin")
            if _signed_area(verts) < 0:
                verts = verts[::-1]
                tags = tags[-2::-1] + [tags[-1]]
            arcs = []
            for i, tag in enumerate(tags):
                a, b = verts[i], verts[(i + 1) % len(verts)]
                line = _line_through(a, b)
                arcs.append(Arc(line, 0.0, float(np.linalg.norm(b - a)), tag))
            return arcs
        sides = [_side_from_dict(d) for d in p["sides"]]
        s1, s2 = sides
        pts = _intersect(s1.curve, s2.curve)
        if len(pts) != 2:
            raise DegenerateDomain("Sigma and T must meet in exactly two points")
        a1 = _side_arc(s1, s2, pts)
        a2 = _side_arc(s2, s1, pts)
        if np.linalg.norm(a1.end - a2.start) > 1e-9:
            a1, a2 = a2, a1
        if np.linalg.norm(a1.end - a2.start) > 1e-9 or np.linalg.norm(a2.end - a1.start) > 1e-9:
            raise DegenerateDomain("boundary arcs do not close up")
        return [a1, a2]

    def contact_angles(self) -> list:
        """Interior angles (radians) of the domain at each Sigma/T junction."""
        arcs = self.arcs()
        out = []
        for i, arc in enumerate(arcs):
            nxt = arcs[(i + 1) % len(arcs)]
            if arc.tag == nxt.tag:
                continue
            tin = -arc.tangent_at_end()
            tout = nxt.tangent_at_start()
            cross = tout[0] * tin[1] - tout[1] * tin[0]
            ang = math.atan2(cross, float(tout @ tin))
            out.append(ang % (2 * math.pi))
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "chart": self.chart.to_dict(),
            "support": self.support.to_dict(),
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(d["kind"], SpaceForm.from_dict(d["chart"]), SupportSurface.from_dict(d["support"]), d["params"])


def _side_to_dict(curve, tag):
    return {"curve": curve.to_dict(), "tag": tag}


def _side_from_dict(d) -> Side:
    return Side(curve_from_dict(d["curve"]), d["tag"])


def _signed_area(verts) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def support_curve(support: SupportSurface, chart: SpaceForm):
    """The support surface as a 2-D curve, oriented so ``B^int`` is its inside/left."""
    if chart.n != 2:
        raise DegenerateDomain("meshed scenarios are two-dimensional")
    kind = support.kind
    if kind is SupportKind.GEODESIC_SPHERE:
        return Circle((0.0, 0.0), float(support.R_model))
    if kind is SupportKind.HOROSPHERE and support.ideal_point is not None:
        xi = np.asarray(support.ideal_point)
        c = (1.0 - support.R_model) * xi
        return Circle(tuple(c), float(support.R_model))
    if kind is SupportKind.HOROSPHERE:
        # B^int = {x_2 > 1}: left of the direction (1, 0)
        return Line((0.0, 1.0), (1.0, 0.0))
    if kind is SupportKind.EQUIDISTANT:
        th = support.theta
        # B^int = {x_1 tan th + x_2 > 1}; the line passes through (0, 1)
        return Line((0.0, 1.0), (math.cos(th), -math.sin(th)))
    raise DegenerateDomain(f"no planar curve for support kind {kind.value}")


def umbilical_cap(chart: SpaceForm, support: SupportSurface, center, radius: float,
                  tilt_deg: float = 0.0) -> DomainSpec:
    """Disk ``|x - center| < radius`` intersected with ``B^int``.

    With ``tilt_deg = 0`` the caller is expected to place ``center`` on the
    support so that Sigma meets T orthogonally; ``tilt_deg`` is recorded for
    bookkeeping only (use :func:`tilted_cap` to construct tilted geometry).
    """
    sigma = Circle(tuple(float(c) for c in center), float(radius))
    T = support_curve(support, chart)
    kind = "UmbilicalCapOrthogonal" if tilt_deg == 0 else "UmbilicalCapTilted"
    params = {
        "sides": [_side_to_dict(sigma, SIGMA), _side_to_dict(T, ROBIN)],
        "center": list(sigma.center),
        "radius": float(radius),
        "tilt_deg": float(tilt_deg),
    }
    return DomainSpec(kind, chart, support, params)


def tilted_cap(chart: SpaceForm, support: SupportSurface, foot, radius: float,
               tilt_deg: float) -> DomainSpec:
    """Cap whose circle meets a straight support at interior angle ``90 - tilt_deg`` degrees.

    ``foot`` is the point of the support line closest to the circle centre; the
    centre is moved by ``radius * sin(tilt)`` out of ``B^int``.  A negative
    tilt moves it into ``B^int`` and gives an obtuse interior corner; the
    outward normals of Sigma and T then meet at ``90 + tilt_deg`` degrees.
    """
    T = support_curve(support, chart)
    if not isinstance(T, Line):
        raise DegenerateDomain("tilted caps are built over straight supports")
    d = np.asarray(T.direction)
    inward = np.array([-d[1], d[0]])
    c = np.asarray(foot, dtype=float) - radius * math.sin(math.radians(tilt_deg)) * inward
    return umbilical_cap(chart, support, c, radius, tilt_deg=tilt_deg)


def appendix_two_horospheres() -> DomainSpec:
    """Lens bounded by two orthogonal horocycles of the Poincare disk.

    Sigma lies on ``|x'|^2 + (x_2 - 1/2)^2 = 1/4``; T lies on
    ``|x'|^2 + (x_2 + 1/3)^2 = 4/9``, which is the support surface.
    """
    chart = SpaceForm.poincare_ball(2)
    support = SupportSurface.ball_horosphere(2.0 / 3.0, (0.0, -1.0))
    sigma = Circle((0.0, 0.5), 0.5)
    T = Circle((0.0, -1.0 / 3.0), 2.0 / 3.0)
    params = {"sides": [_side_to_dict(sigma, SIGMA), _side_to_dict(T, ROBIN)]}
    return DomainSpec("AppendixTwoHorospheres", chart, support, params)


def half_ball(R_model: float = 0.5, K: int = -1, cut: float = 0.0) -> DomainSpec:
    """Geodesic half ball ``{|x| < R, x_2 > cut}``; Sigma is the flat chord."""
    chart = SpaceForm.poincare_ball(2) if K == -1 else SpaceForm.stereographic_sphere(2)
    support = SupportSurface.geodesic_sphere(R_model, K)
    sigma = Line((0.0, float(cut)), (1.0, 0.0))
    T = Circle((0.0, 0.0), float(R_model))
    params = {"sides": [_side_to_dict(sigma, SIGMA), _side_to_dict(T, ROBIN)], "R_model": R_model, "cut": cut}
    return DomainSpec("HalfBall", chart, support, params)


def custom_polygon(chart: SpaceForm, support: SupportSurface, vertices, tags) -> DomainSpec:
    params = {"vertices": [list(map(float, v)) for v in vertices], "tags": list(tags)}
    return DomainSpec("CustomPolygon", chart, support, params)


# ---------------------------------------------------------------------------
# Meshes


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh with tagged, outward-oriented boundary edges.

    Boundary edges ``(a, b)`` are oriented counterclockwise around the domain,
    so the outward normal is ``(dy, -dx) / |e|``.  ``curves`` and the per-edge
    curve ids are optional and drive boundary snapping under refinement.
    """

    chart: SpaceForm
    vertices: np.ndarray
    triangles: np.ndarray
    sigma_edges: np.ndarray
    robin_edges: np.ndarray
    gamma_vertices: np.ndarray
    curves: tuple = ()
    sigma_curve_ids: Optional[np.ndarray] = None
    robin_curve_ids: Optional[np.ndarray] = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def h_max(self) -> float:
        return float(edge_lengths(self).max())

    @property
    def h_min(self) -> float:
        return float(edge_lengths(self).min())

    def edge_normals(self, edges: np.ndarray) -> np.ndarray:
        d = self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def edge_midpoints(self, edges: np.ndarray) -> np.ndarray:
        return 0.5 * (self.vertices[edges[:, 0]] + self.vertices[edges[:, 1]])

    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def sigma_chain(self) -> list:
        """Sigma vertices as ordered chains (lists of vertex indices)."""
        return _chains(self.sigma_edges)

    def to_dict(self) -> dict:
        d = {
            "dim": 2,
            "model": self.chart.model.value,
            "K": self.chart.K,
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "sigma_edges": self.sigma_edges.tolist(),
            "robin_edges": self.robin_edges.tolist(),
            "gamma_vertices": self.gamma_vertices.tolist(),
        }
        if self.curves:
            d["curves"] = [c.to_dict() for c in self.curves]
            d["sigma_curve_ids"] = self.sigma_curve_ids.tolist()
            d["robin_curve_ids"] = self.robin_curve_ids.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Mesh":
        if int(d.get("dim", 2)) != 2:
            raise ValueError("only 2-D meshes are supported")
        chart = SpaceForm(int(d["K"]), 2, Model(d["model"]))
        curves = tuple(curve_from_dict(c) for c in d.get("curves", []))
        sig = np.asarray(d["sigma_edges"], dtype=int).reshape(-1, 2)
        rob = np.asarray(d["robin_edges"], dtype=int).reshape(-1, 2)
        sid = rid = None
        if curves:
            sid = np.asarray(d["sigma_curve_ids"], dtype=int)
            rid = np.asarray(d["robin_curve_ids"], dtype=int)
        return cls(
            chart,
            np.asarray(d["vertices"], dtype=float).reshape(-1, 2),
            np.asarray(d["triangles"], dtype=int).reshape(-1, 3),
            sig,
            rob,
            np.asarray(d["gamma_vertices"], dtype=int),
            curves,
            sid,
            rid,
        )


def write_mesh(mesh: Mesh, path) -> None:
    Path(path).write_text(json.dumps(mesh.to_dict()))


def read_mesh(path) -> Mesh:
    return Mesh.from_dict(json.loads(Path(path).read_text()))


def _chains(edges: np.ndarray) -> list:
    nxt = {int(a): int(b) for a, b in edges}
    starts = set(nxt) - set(nxt.values())
    chains, seen = [], set()
    for s in sorted(starts) or sorted(nxt)[:1]:
        chain = [s]
        seen.add(s)
        while chain[-1] in nxt and nxt[chain[-1]] not in seen:
            chain.append(nxt[chain[-1]])
            seen.add(chain[-1])
        if chain[-1] in nxt and nxt[chain[-1]] == s:
            chain.append(s)
        chains.append(chain)
    return chains


def unique_edges(triangles: np.ndarray):
    """Return ``(edges, tri_edge)``: sorted unique edges and per-triangle edge ids.

    Local edge ``j`` of a triangle joins vertices ``j`` and ``j + 1``.
    """
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    es = np.sort(e, axis=1)
    edges, inv = np.unique(es, axis=0, return_inverse=True)
    tri_edge = inv.reshape(3, -1).T
    return edges, tri_edge


def edge_lengths(mesh: Mesh) -> np.ndarray:
    edges, _ = unique_edges(mesh.triangles)
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    return np.linalg.norm(d, axis=1)


def boundary_edges(triangles: np.ndarray) -> np.ndarray:
    """Directed boundary edges, oriented as in their (counterclockwise) triangle."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    es = np.sort(e, axis=1)
    _, inv, counts = np.unique(es, axis=0, return_inverse=True, return_counts=True)
    return e[counts[inv.ravel()] == 1]


def _gamma_from_edges(sigma: np.ndarray, robin: np.ndarray) -> np.ndarray:
    return np.array(sorted(set(sigma.ravel().tolist()) & set(robin.ravel().tolist())), dtype=int)


def check_mesh(mesh: Mesh) -> list:
    """Return a list of violated mesh invariants (empty when valid)."""
    problems = []
    if np.any(mesh.areas() <= 0):
        problems.append("triangles not positively oriented")
    bnd = {tuple(e) for e in boundary_edges(mesh.triangles).tolist()}
    sig = {tuple(e) for e in mesh.sigma_edges.tolist()}
    rob = {tuple(e) for e in mesh.robin_edges.tolist()}
    if sig & rob:
        problems.append("edges tagged both sigma and robin")
    if (sig | rob) != bnd:
        problems.append("boundary edges not tagged exactly once (or misoriented)")
    if not np.array_equal(np.sort(mesh.gamma_vertices), _gamma_from_edges(mesh.sigma_edges, mesh.robin_edges)):
        problems.append("gamma_vertices differ from the sigma/robin junction set")
    return problems


def triangle_angles(mesh: Mesh) -> np.ndarray:
    p = mesh.vertices[mesh.triangles]
    out = np.empty((len(p), 3))
    for j in range(3):
        a = p[:, (j + 1) % 3] - p[:, j]
        b = p[:, (j + 2) % 3] - p[:, j]
        cosang = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out[:, j] = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    return out


# Degree-2 symmetric rule on the reference triangle (barycentric coords, weights sum to 1).
TRI_QUAD2 = (
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
)


def metric_area(mesh: Mesh) -> float:
    """g-area of the mesh by the 3-point rule applied to ``exp(n omega)``."""
    bary, w = TRI_QUAD2
    p = mesh.vertices[mesh.triangles]
    q = np.einsum("qk,tkd->tqd", bary, p)
    omega, _ = _omega(mesh.chart, q.reshape(-1, 2))
    dens = np.exp(mesh.chart.n * omega).reshape(q.shape[:2])
    return float(np.sum(mesh.areas() * (dens @ w)))


def metric_length(mesh: Mesh, edges: np.ndarray) -> float:
    """g-length of a set of edges by the midpoint rule."""
    if len(edges) == 0:
        return 0.0
    mid = mesh.edge_midpoints(edges)
    check_admissible(mesh.chart, mid)
    omega, _ = _omega(mesh.chart, mid)
    d = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
    return float(np.sum(np.exp(omega) * np.linalg.norm(d, axis=1)))


def mesh_quality(mesh: Mesh) -> dict:
    ang = triangle_angles(mesh)
    L = edge_lengths(mesh)
    return {
        "min_angle": float(ang.min()),
        "max_angle": float(ang.max()),
        "h_max": float(L.max()),
        "h_min": float(L.min()),
        "n_triangles": int(len(mesh.triangles)),
        "n_vertices": int(mesh.n_vertices),
        "sigma_length": metric_length(mesh, mesh.sigma_edges),
        "robin_length": metric_length(mesh, mesh.robin_edges),
        "area": metric_area(mesh),
    }


def _cdt(pts, segs, area=None, max_areas=None, base=None):
    if base is None:
        data = {"vertices": pts, "segments": segs, "segment_markers": np.arange(1, len(segs) + 1)[:, None]}
        return triangle.triangulate(data, f"pq30a{area:.15f}Q")
    data = dict(base)
    data["triangle_max_area"] = max_areas
    return triangle.triangulate(data, "rpq30aQ")


def _mesh_from_cdt(chart, out, m, seg_tag_list, seg_curve_list, curves) -> Mesh:
    """Snap Steiner points inserted on boundary segments and tag the boundary."""
    verts = np.array(out["vertices"], dtype=float)
    subsegs = np.asarray(out["segments"], dtype=int)
    marks = np.asarray(out["segment_markers"], dtype=int).ravel() - 1
    seg_tag, seg_curve = {}, {}
    for (a, b), j in zip(subsegs.tolist(), marks.tolist()):
        key = (min(a, b), max(a, b))
        seg_tag[key] = seg_tag_list[j]
        seg_curve[key] = seg_curve_list[j]
        for v in (a, b):
            if v >= m:
                verts[v] = curves[seg_curve_list[j]].project(verts[v])[0]
    return _assemble(chart, verts, out["triangles"], seg_tag, seg_curve, curves)


def _assemble(chart, verts, tris, seg_tag, seg_curve, curves) -> Mesh:
    verts = np.asarray(verts, dtype=float)
    tris = np.asarray(tris, dtype=int)
    p = verts[tris]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    bnd = boundary_edges(tris)
    sig, rob, sid, rid = [], [], [], []
    for a, b in bnd.tolist():
        key = (min(a, b), max(a, b))
        if key not in seg_tag:
            raise DegenerateDomain(f"boundary edge {key} is not tagged")
        if seg_tag[key] == SIGMA:
            sig.append((a, b))
            sid.append(seg_curve[key])
        else:
            rob.append((a, b))
            rid.append(seg_curve[key])
    sig = np.array(sig, dtype=int).reshape(-1, 2)
    rob = np.array(rob, dtype=int).reshape(-1, 2)
    # canonical ordering of boundary edges
    so, ro = np.lexsort(sig.T[::-1]), np.lexsort(rob.T[::-1])
    return Mesh(
        chart,
        verts,
        tris,
        sig[so],
        rob[ro],
        _gamma_from_edges(sig, rob),
        tuple(curves),
        np.array(sid, dtype=int)[so],
        np.array(rid, dtype=int)[ro],
    )


def build_domain(spec: DomainSpec, target_h: float, graded: bool = False,
                 grade_ratio: float = 0.5, grade_levels: int = 3) -> Mesh:
    """Constrained Delaunay mesh of the domain with every edge no longer than ``target_h``.

    With ``graded=True`` element size shrinks geometrically (factor
    ``grade_ratio`` per layer, ``grade_levels`` layers) toward Gamma.
    """
    if not target_h > 0:
        raise ValueError("target_h must be positive")
    arcs = spec.arcs()
    tags = {a.tag for a in arcs}
    if tags != {SIGMA, ROBIN}:
        raise DegenerateDomain("both Sigma and T must be nonempty")
    for i, arc in enumerate(arcs):
        nxt = arcs[(i + 1) % len(arcs)]
        if np.linalg.norm(arc.end - nxt.start) > 1e-9:
            raise DegenerateDomain("boundary arcs do not form a closed chain")
        if arc.tag != nxt.tag:
            t1, t2 = arc.tangent_at_end(), nxt.tangent_at_start()
            if abs(t1[0] * t2[1] - t1[1] * t2[0]) < 1e-6:
                raise DegenerateDomain("Sigma and T meet tangentially")
    corners = [arcs[i].end for i in range(len(arcs)) if arcs[i].tag != arcs[(i + 1) % len(arcs)].tag]
    sizing = None
    if graded:
        h_min = target_h * grade_ratio**grade_levels

        def sizing(x):
            d = min(float(np.linalg.norm(np.asarray(x) - c)) for c in corners)
            return max(h_min, min(target_h, (1.0 - grade_ratio) * d + h_min))

    curves, curve_index = [], {}
    pts, seg_tag_list, seg_curve_list = [], [], []
    for arc in arcs:
        key = id(arc.curve)
        if key not in curve_index:
            curve_index[key] = len(curves)
            curves.append(arc.curve)
        s = arc.sample(0.95 * target_h, sizing)
        for k in range(len(s) - 1):
            pts.append(s[k])
            seg_tag_list.append(arc.tag)
            seg_curve_list.append(curve_index[key])
    pts = np.array(pts)
    if _signed_area(pts) <= 0:
        raise DegenerateDomain("domain is empty or clockwise")
    check_admissible(spec.chart, pts)
    m = len(pts)
    segs = np.column_stack([np.arange(m), (np.arange(m) + 1) % m])

    area = 0.4 * target_h**2
    for _ in range(40):
        out = _cdt(pts, segs, area)
        if graded:
            for _ in range(6):
                cen = out["vertices"][out["triangles"]].mean(axis=1)
                want = np.array([0.4 * sizing(c) ** 2 for c in cen])
                p = out["vertices"][out["triangles"]]
                d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
                have = 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
                if np.all(have <= want * 1.0001):
                    break
                out = _cdt(None, None, max_areas=want, base=out)
        verts = out["vertices"]
        if not np.allclose(verts[:m], pts):
            raise DegenerateDomain("mesher moved boundary vertices")
        e, _ = unique_edges(out["triangles"])
        hmax = np.linalg.norm(verts[e[:, 1]] - verts[e[:, 0]], axis=1).max()
        if hmax <= target_h:
            break
        area *= 0.85
    else:
        raise DegenerateDomain("could not reach the requested mesh size")
    mesh = _mesh_from_cdt(spec.chart, out, m, seg_tag_list, seg_curve_list, curves)
    check_admissible(spec.chart, mesh.vertices)
    return mesh


def polygon_mesh(chart: SpaceForm, vertices, target_h: float, tags: Optional[Sequence[str]] = None) -> Mesh:
    """Mesh a straight-edged polygon; edges default to the Sigma tag."""
    verts = np.asarray(vertices, dtype=float)
    if tags is None:
        tags = [SIGMA] * len(verts)
    if _signed_area(verts) < 0:
        verts = verts[::-1]
        tags = list(tags)[-2::-1] + [list(tags)[-1]]
    pts, tag_list, curve_ids, curves = [], [], [], []
    for i, tag in enumerate(tags):
        a, b = verts[i], verts[(i + 1) % len(verts)]
        curves.append(_line_through(a, b))
        k = max(1, math.ceil(np.linalg.norm(b - a) / (0.95 * target_h)))
        for j in range(k):
            pts.append(a + (b - a) * j / k)
            tag_list.append(tag)
            curve_ids.append(i)
    pts = np.array(pts)
    m = len(pts)
    segs = np.column_stack([np.arange(m), (np.arange(m) + 1) % m])
    area = 0.4 * target_h**2
    for _ in range(40):
        out = _cdt(pts, segs, area)
        e, _ = unique_edges(out["triangles"])
        v = out["vertices"]
        if np.linalg.norm(v[e[:, 1]] - v[e[:, 0]], axis=1).max() <= target_h:
            break
        area *= 0.85
    return _mesh_from_cdt(chart, out, m, tag_list, curve_ids, curves)


# ---------------------------------------------------------------------------
# Refinement


def _snap(mesh: Mesh, points: np.ndarray, edge_keys, lookup) -> np.ndarray:
    out = points.copy()
    for i, key in enumerate(edge_keys):
        cid = lookup.get(key)
        if cid is not None and mesh.curves:
            out[i] = mesh.curves[cid].project(points[i])[0]
    return out


def refine_marked(mesh: Mesh, marked: np.ndarray) -> Mesh:
    """Red-green refinement of the marked triangles with conforming closure.

    Marked triangles (and any triangle with two or more split edges) are split
    into four; triangles with a single split edge are bisected.  New boundary
    midpoints are snapped to their analytic curves when available.
    """
    tris = mesh.triangles
    edges, tri_edge = unique_edges(tris)
    split = np.zeros(len(edges), dtype=bool)
    split[tri_edge[np.asarray(marked, dtype=bool)].ravel()] = True
    while True:
        cnt = split[tri_edge].sum(axis=1)
        red = cnt >= 2
        new = split.copy()
        new[tri_edge[red].ravel()] = True
        if np.array_equal(new, split):
            break
        split = new
    ids = np.flatnonzero(split)
    mid = 0.5 * (mesh.vertices[edges[ids, 0]] + mesh.vertices[edges[ids, 1]])
    lookup = {}
    if mesh.curves:
        for e, c in zip(mesh.sigma_edges.tolist(), mesh.sigma_curve_ids.tolist()):
            lookup[(min(e), max(e))] = c
        for e, c in zip(mesh.robin_edges.tolist(), mesh.robin_curve_ids.tolist()):
            lookup[(min(e), max(e))] = c
    keys = [tuple(edges[i]) for i in ids]
    mid = _snap(mesh, mid, keys, lookup)
    new_index = np.full(len(edges), -1)
    new_index[ids] = mesh.n_vertices + np.arange(len(ids))
    verts = np.vstack([mesh.vertices, mid])

    out = []
    for t, (v, te) in enumerate(zip(tris, tri_edge)):
        m = new_index[te]  # midpoint of local edge j (v_j, v_j+1)
        c = int((m >= 0).sum())
        if c == 0:
            out.append(v)
        elif c == 3:
            a, b, cc = v
            ab, bc, ca = m
            out += [(a, ab, ca), (ab, b, bc), (ca, bc, cc), (ab, bc, ca)]
        else:
            j = int(np.flatnonzero(m >= 0)[0])
            a, b, cc = v[j], v[(j + 1) % 3], v[(j + 2) % 3]
            out += [(a, m[j], cc), (m[j], b, cc)]
    out = np.array(out, dtype=int)

    def split_edges(E, cids):
        E2, C2 = [], []
        for (a, b), cid in zip(E.tolist(), cids.tolist() if cids is not None else [None] * len(E)):
            key = (min(a, b), max(a, b))
            idx = _edge_id(edges, key)
            mm = new_index[idx]
            if mm >= 0:
                E2 += [(a, mm), (mm, b)]
                C2 += [cid, cid]
            else:
                E2.append((a, b))
                C2.append(cid)
        E2 = np.array(E2, dtype=int).reshape(-1, 2)
        C2 = np.array(C2, dtype=int) if cids is not None else None
        return E2, C2

    sig, sid = split_edges(mesh.sigma_edges, mesh.sigma_curve_ids)
    rob, rid = split_edges(mesh.robin_edges, mesh.robin_curve_ids)
    return replace(
        mesh,
        vertices=verts,
        triangles=out,
        sigma_edges=sig,
        robin_edges=rob,
        gamma_vertices=mesh.gamma_vertices.copy(),
        sigma_curve_ids=sid,
        robin_curve_ids=rid,
    )


def _edge_id(edges: np.ndarray, key) -> int:
    # edges are lexicographically sorted by np.unique
    lo = np.searchsorted(edges[:, 0], key[0], side="left")
    hi = np.searchsorted(edges[:, 0], key[0], side="right")
    j = lo + np.searchsorted(edges[lo:hi, 1], key[1])
    return int(j)


def refine(mesh: Mesh, graded: bool = False, grade_radius: Optional[float] = None) -> Mesh:
    """Uniform red refinement (each triangle -> 4), optionally graded toward Gamma.

    With ``graded=True`` an additional red-green pass refines the triangles
    within ``grade_radius`` (default: two local mesh sizes) of a Gamma vertex,
    so the element size near the corners drops by a further factor 0.5.
    """
    fine = refine_marked(mesh, np.ones(len(mesh.triangles), dtype=bool))
    if graded and len(fine.gamma_vertices):
        r = grade_radius if grade_radius is not None else 2.0 * fine.h_max
        cen = fine.centroids()
        g = fine.vertices[fine.gamma_vertices]
        d = np.min(np.linalg.norm(cen[:, None, :] - g[None, :, :], axis=2), axis=1)
        fine = refine_marked(fine, d < r)
    return fine
