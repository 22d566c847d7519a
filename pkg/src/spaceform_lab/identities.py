"""P-function, Pohozaev-type and related integral identities evaluated on FEM solutions.

For a solution of ``Delta_g u + nK u = 1`` the P-function is

    P = |grad_g u|^2 - (2/n) u + K u^2,

which is subharmonic, and when ``du/dnu = c`` on Sigma the weighted integrals
``int V (P - c^2)`` and ``int V u Delta_g P`` both vanish.  Everything here works
on P1 data: P is piecewise constant, second derivatives come from least-squares
quadratic patch fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import DegenerateCurve, RecoveryFailure
from .fem import TRI_QUAD4, SolutionField, boundary_triangles, element_gradients, normal_derivative_stats
from .geometry import (
    ScalarField,
    SpaceForm,
    SupportSurface,
    _omega,
    curvature_transform,
    orthonormal_hessian,
    support_potential,
)
from .mesh import Mesh

RANK_FAILURE_FRACTION = 0.01
MIN_PATCH = 6


@dataclass(frozen=True)
class IdentityReport:
    name: str
    value: float
    normalizer: float
    tolerance: Optional[float]
    details: dict = field(default_factory=dict)

    @property
    def relative(self) -> float:
        if self.normalizer == 0:
            return 0.0 if self.value == 0 else math.inf
        return self.value / self.normalizer

    @property
    def passed(self) -> Optional[bool]:
        if self.tolerance is None:
            return None
        return bool(abs(self.relative) <= self.tolerance)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "value": float(self.value),
            "normalizer": float(self.normalizer),
            "relative": float(self.relative),
            "tolerance": self.tolerance,
            "pass": self.passed,
        }
        d.update(self.details)
        return d


def scaled_tolerance(base: float, h: float, h_ref: float = 0.01) -> float:
    """Tolerance ``base`` at ``h_ref``, scaled linearly for coarser meshes."""
    return base * max(1.0, h / h_ref)


# ---------------------------------------------------------------------------
# P-function


@dataclass(frozen=True)
class PFunctionField:
    values: np.ndarray  # per triangle
    nodal: np.ndarray  # volume-weighted nodal average
    c: float


def _dvol(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    omega, _ = _omega(mesh.chart, points)
    return np.exp(mesh.chart.n * omega) * np.abs(mesh.areas())


def p_function(sol: SolutionField, mesh: Optional[Mesh] = None, chart: Optional[SpaceForm] = None,
               K: Optional[float] = None, c: Optional[float] = None) -> PFunctionField:
    """Per-triangle ``P = exp(-2 omega) |grad u|^2 - (2/n) u + K u^2`` at centroids."""
    mesh = sol.mesh if mesh is None else mesh
    chart = sol.chart if chart is None else chart
    K = chart.K if K is None else K
    n = chart.n
    cen = mesh.centroids()
    omega, _ = _omega(chart, cen)
    uc = sol.u[mesh.triangles].mean(axis=1)
    P = np.exp(-2.0 * omega) * np.einsum("td,td->t", sol.grad, sol.grad) - (2.0 / n) * uc + K * uc**2
    wts = _dvol(mesh, cen)
    num = np.bincount(mesh.triangles.ravel(), np.repeat(P * wts, 3), minlength=mesh.n_vertices)
    den = np.bincount(mesh.triangles.ravel(), np.repeat(wts, 3), minlength=mesh.n_vertices)
    nodal = num / np.where(den > 0, den, 1.0)
    if c is None:
        c = normal_derivative_stats(sol)[0] if len(mesh.sigma_edges) else 0.0
    return PFunctionField(P, nodal, float(c))


def p_function_exact(chart: SpaceForm, u: ScalarField, points) -> np.ndarray:
    """``P`` of an analytic field at ``points``."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    omega, _ = _omega(chart, x)
    g = u.grad(x)
    v = u.value(x)
    return np.exp(-2.0 * omega) * np.einsum("md,md->m", g, g) - (2.0 / chart.n) * v + chart.K * v**2


# ---------------------------------------------------------------------------
# Patch recovery


def _adjacency(mesh: Mesh) -> sp.csr_matrix:
    t = mesh.triangles
    r = np.concatenate([t[:, 0], t[:, 1], t[:, 2], t[:, 1], t[:, 2], t[:, 0]])
    c = np.concatenate([t[:, 1], t[:, 2], t[:, 0], t[:, 0], t[:, 1], t[:, 2]])
    nv = mesh.n_vertices
    A = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(nv, nv)).tocsr()
    A.data[:] = 1.0
    return (A + sp.identity(nv, format="csr")).tocsr()


def _padded_rows(P: sp.csr_matrix):
    P = P.tocsr()
    P.sort_indices()
    counts = np.diff(P.indptr)
    width = counts.max()
    idx = np.zeros((P.shape[0], width), dtype=int)
    mask = np.arange(width)[None, :] < counts[:, None]
    idx[mask] = P.indices
    return idx, mask


def _fit_quadratic(center: np.ndarray, pts: np.ndarray, vals: np.ndarray, mask: np.ndarray):
    """Batched weighted least-squares fit of a quadratic about each center.

    Returns value, gradient and Hessian at the centers plus a flag for
    rank-deficient patches.
    """
    d = pts - center[:, None, :]
    scale = np.sqrt(np.max(np.where(mask, np.einsum("pkd,pkd->pk", d, d), 0.0), axis=1))
    scale = np.where(scale > 0, scale, 1.0)
    s = d / scale[:, None, None]
    x, y = s[..., 0], s[..., 1]
    B = np.stack([np.ones_like(x), x, y, 0.5 * x * x, x * y, 0.5 * y * y], axis=-1)
    w = mask.astype(float)
    Bw = B * w[..., None]
    U, S, Vt = np.linalg.svd(Bw, full_matrices=False)
    ok = (mask.sum(axis=1) >= MIN_PATCH) & (S[:, -1] > 1e-8 * S[:, 0])
    Sinv = np.where(S > 1e-8 * S[:, :1], 1.0 / np.where(S > 0, S, 1.0), 0.0)
    coef = np.einsum("pji,pj,pkj,pk->pi", Vt, Sinv, U, vals * w)
    val = coef[:, 0]
    grad = coef[:, 1:3] / scale[:, None]
    H = np.empty((len(center), 2, 2))
    H[:, 0, 0] = coef[:, 3]
    H[:, 0, 1] = H[:, 1, 0] = coef[:, 4]
    H[:, 1, 1] = coef[:, 5]
    H /= (scale**2)[:, None, None]
    return val, grad, H, ~ok


def _check_rank(bad: np.ndarray, what: str) -> None:
    frac = bad.mean() if len(bad) else 0.0
    if frac > RANK_FAILURE_FRACTION:
        raise RecoveryFailure(f"{what}: patch fit rank deficient at {100 * frac:.1f}% of nodes")


@dataclass(frozen=True)
class Recovered:
    value: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    deficient: np.ndarray


def recover_nodal(mesh: Mesh, values: np.ndarray) -> Recovered:
    """Quadratic least-squares fit of nodal data over each node's 2-ring."""
    A = _adjacency(mesh)
    ring2 = (A @ A).tocsr()
    idx, mask = _padded_rows(ring2)
    v = mesh.vertices
    val, g, H, bad = _fit_quadratic(v, v[idx], values[idx], mask)
    _check_rank(bad, "nodal recovery")
    return Recovered(val, g, H, bad)


def recover_from_elements(mesh: Mesh, values: np.ndarray) -> Recovered:
    """Quadratic fit at each node of per-triangle data sampled at centroids of the 2-ring."""
    nv, nt = mesh.n_vertices, len(mesh.triangles)
    A = _adjacency(mesh)
    NT = sp.coo_matrix(
        (np.ones(3 * nt), (mesh.triangles.ravel(), np.repeat(np.arange(nt), 3))), shape=(nv, nt)
    ).tocsr()
    patch = (A @ NT).tocsr()
    idx, mask = _padded_rows(patch)
    cen = mesh.centroids()
    val, g, H, bad = _fit_quadratic(mesh.vertices, cen[idx], values[idx], mask)
    _check_rank(bad, "element recovery")
    return Recovered(val, g, H, bad)


def recovered_u_nu(sol: SolutionField) -> np.ndarray:
    """``u_nu`` on Sigma edges from patch-recovered nodal gradients (edge-averaged)."""
    mesh = sol.mesh
    rec = recover_nodal(mesh, sol.u)
    E = mesh.sigma_edges
    g = 0.5 * (rec.grad[E[:, 0]] + rec.grad[E[:, 1]])
    omega, _ = _omega(mesh.chart, mesh.edge_midpoints(E))
    return np.exp(-omega) * np.einsum("ed,ed->e", g, mesh.edge_normals(E))


# ---------------------------------------------------------------------------
# Integral identities


def pohozaev_residual(sol: SolutionField, pfield: PFunctionField, support: SupportSurface,
                      mesh: Optional[Mesh] = None, tolerance: Optional[float] = None,
                      h_ref: float = 0.01) -> IdentityReport:
    """``int V (P - c^2) dvol`` by the centroid rule; normalized by ``int V (|P| + c^2) dvol``.

    The default tolerance is ``1e-2`` at ``h_max = h_ref``, scaled linearly
    for coarser meshes.
    """
    mesh = sol.mesh if mesh is None else mesh
    cen = mesh.centroids()
    V = support_potential(support, mesh.chart).value(cen)
    dv = _dvol(mesh, cen)
    c2 = pfield.c**2
    value = float(np.sum(V * (pfield.values - c2) * dv))
    norm = float(np.sum(V * (np.abs(pfield.values) + c2) * dv))
    if tolerance is None:
        tolerance = scaled_tolerance(1e-2, mesh.h_max, h_ref)
    return IdentityReport("pohozaev", value, norm, tolerance, {"c": pfield.c, "h_max": mesh.h_max})


def master_identity_residual(sol: SolutionField, pfield: PFunctionField, support: SupportSurface,
                             mesh: Optional[Mesh] = None, tolerance: Optional[float] = None,
                             h_ref: float = 0.01) -> IdentityReport:
    """Weak evaluation of ``int V u Delta_g P dvol``.

    By Green's formula, with ``u = 0`` on Sigma,

        int V u Delta P = -int g(grad(V u), grad P) + int_T V u dP/dN dA.

    ``grad P`` is the element gradient of the nodal P built from the
    recovered nodal gradient of u; on T the adjacent element is used.  The
    normalizer is the sum of absolute values of the terms on the other side of
    the identity: the two volume terms ``2 P g(grad V, grad u)`` and
    ``2nK P u V`` and the two T-terms ``V u dP/dN`` and ``P d(Vu)/dN``.
    """
    mesh = sol.mesh if mesh is None else mesh
    chart = mesh.chart
    n, K = chart.n, chart.K
    Vf = support_potential(support, chart)
    rec = recover_nodal(mesh, sol.u)
    om_v, _ = _omega(chart, mesh.vertices)
    P_nodal = np.exp(-2.0 * om_v) * np.sum(rec.grad**2, axis=1) - (2.0 / n) * sol.u + K * sol.u**2
    gP = element_gradients(mesh, P_nodal)

    cen = mesh.centroids()
    omega, _ = _omega(chart, cen)
    area = np.abs(mesh.areas())
    uc = sol.u[mesh.triangles].mean(axis=1)
    V = Vf.value(cen)
    gV = Vf.grad(cen)
    gVu = gV * uc[:, None] + V[:, None] * sol.grad
    w_stiff = np.exp((n - 2) * omega) * area
    w_vol = np.exp(n * omega) * area
    vol_term = -float(np.sum(w_stiff * np.einsum("td,td->t", gVu, gP)))

    E = mesh.robin_edges
    bnd_term = 0.0
    bnd_norm = 0.0
    if len(E):
        mid = mesh.edge_midpoints(E)
        om_e, _ = _omega(chart, mid)
        N = mesh.edge_normals(E)
        L = np.linalg.norm(mesh.vertices[E[:, 1]] - mesh.vertices[E[:, 0]], axis=1)
        ds = np.exp((n - 1) * om_e) * L
        ue = 0.5 * (sol.u[E[:, 0]] + sol.u[E[:, 1]])
        Ve = Vf.value(mid)
        tri = boundary_triangles(mesh, E)
        dPdN = np.exp(-om_e) * np.einsum("ed,ed->e", gP[tri], N)
        gVue = Vf.grad(mid) * ue[:, None] + Ve[:, None] * sol.grad[tri]
        dVudN = np.exp(-om_e) * np.einsum("ed,ed->e", gVue, N)
        Pe = pfield.values[tri]
        bnd_term = float(np.sum(Ve * ue * dPdN * ds))
        bnd_norm = float(np.sum(np.abs(Ve * ue * dPdN) * ds) + np.sum(np.abs(Pe * dVudN) * ds))

    gVgu = np.exp(-2.0 * omega) * np.einsum("td,td->t", gV, sol.grad)
    norm = float(
        np.sum(np.abs(2.0 * pfield.values * gVgu) * w_vol)
        + np.sum(np.abs(2.0 * n * K * pfield.values * uc * V) * w_vol)
        + bnd_norm
    )
    value = vol_term + bnd_term
    if tolerance is None:
        tolerance = scaled_tolerance(2e-2, mesh.h_max, h_ref)
    return IdentityReport(
        "master_identity",
        value,
        norm,
        tolerance,
        {"volume_term": vol_term, "boundary_term": bnd_term, "h_max": mesh.h_max},
    )


# ---------------------------------------------------------------------------
# Subharmonicity


def _bump_laplacian(r2: np.ndarray, H: float) -> np.ndarray:
    # psi = (1 - s)^4 with s = r^2 / H^2; flat Laplacian in the plane
    s = r2 / H**2
    out = (16.0 / H**2) * (1.0 - s) ** 2 * (4.0 * s - 1.0)
    return np.where(s < 1.0, out, 0.0)


def _bump(r2: np.ndarray, H: float) -> np.ndarray:
    s = r2 / H**2
    return np.where(s < 1.0, (1.0 - s) ** 4, 0.0)


def _boundary_distance(mesh: Mesh, pts: np.ndarray) -> np.ndarray:
    E = np.vstack([mesh.sigma_edges, mesh.robin_edges])
    a = mesh.vertices[E[:, 0]]
    b = mesh.vertices[E[:, 1]]
    # sample the boundary densely and use a k-d tree; edges are short so this is accurate to O(h^2)
    s = np.linspace(0.0, 1.0, 5)
    samples = (a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]).reshape(-1, 2)
    d, _ = cKDTree(samples).query(pts)
    return d


def mollified_laplacian(mesh: Mesh, values: np.ndarray, H: float, max_points: int = 4000,
                        reference: Optional[np.ndarray] = None):
    """Local averages of ``Delta_g P`` for per-triangle data ``values``.

    At each test node ``x_i`` at distance more than ``H`` from the boundary,

        <Delta_g P>_i = int P Delta_g psi_i dvol / int psi_i dvol

    with ``psi_i`` a smooth bump of radius ``H``.  In two dimensions
    ``Delta_g psi dvol = Delta psi dx``, so only the flat Laplacian of the
    bump is needed.  The local value of P at the test node is subtracted first
    (the bump's Laplacian integrates to zero), which keeps the quadrature error
    proportional to the variation of P rather than to its size.

    Returns ``(points, estimates)``.
    """
    if mesh.chart.n != 2:
        raise ValueError("the mollified test is implemented in two dimensions")
    dist = _boundary_distance(mesh, mesh.vertices)
    cand = np.flatnonzero(dist > H * 1.001)
    if len(cand) > max_points:
        cand = cand[np.linspace(0, len(cand) - 1, max_points).astype(int)]
    pts = mesh.vertices[cand]
    bary, w = TRI_QUAD4
    tri_pts = mesh.vertices[mesh.triangles]
    qp = np.einsum("qk,tkd->tqd", bary, tri_pts)
    area = np.abs(mesh.areas())
    omega_q, _ = _omega(mesh.chart, qp.reshape(-1, 2))
    dens_q = np.exp(2.0 * omega_q).reshape(qp.shape[:2])
    cen = mesh.centroids()
    reach = H + float(np.max(np.linalg.norm(tri_pts - cen[:, None, :], axis=2)))
    tree = cKDTree(cen)
    near = tree.query_ball_point(pts, reach)
    ctree_idx = tree.query(pts)[1]
    out = np.empty(len(pts))
    for i, (p, tl) in enumerate(zip(pts, near)):
        tl = np.asarray(tl, dtype=int)
        d = qp[tl] - p
        r2 = np.einsum("tqd,tqd->tq", d, d)
        P0 = values[ctree_idx[i]] if reference is None else reference[i]
        lap = _bump_laplacian(r2, H) @ w
        mass = (_bump(r2, H) * dens_q[tl]) @ w
        out[i] = np.sum((values[tl] - P0) * lap * area[tl]) / np.sum(mass * area[tl])
    return pts, out


def subharmonicity_check(pfield: PFunctionField, sol: SolutionField, mesh: Optional[Mesh] = None,
                         H: Optional[float] = None, C: float = 1.0) -> IdentityReport:
    """Fraction of test nodes whose mollified ``Delta_g P`` falls below ``-C h``.

    ``H`` defaults to ``sqrt(h_max)`` capped by a quarter of the domain's
    inradius, so that it shrinks under refinement while the bump still
    averages over many elements.
    """
    mesh = sol.mesh if mesh is None else mesh
    h = mesh.h_max
    if H is None:
        inr = float(_boundary_distance(mesh, mesh.vertices).max())
        H = min(math.sqrt(h), 0.5 * inr)
    pts, est = mollified_laplacian(mesh, pfield.values, H)
    tol_h = C * h
    if len(est) == 0:
        return IdentityReport("subharmonicity", 0.0, 1.0, 0.0, {"n_test": 0, "H": H, "tol_h": tol_h})
    frac = float(np.mean(est < -tol_h))
    return IdentityReport(
        "subharmonicity",
        frac,
        1.0,
        0.0,
        {"min": float(est.min()), "max": float(est.max()), "n_test": int(len(est)), "H": H, "tol_h": tol_h},
    )


# ---------------------------------------------------------------------------
# Boundary Hessian and umbilicity


def boundary_hessian_defect(sol: SolutionField, support: SupportSurface, mesh: Optional[Mesh] = None,
                            tolerance: Optional[float] = None) -> IdentityReport:
    """``max |nabla^2 u(N, e_T)|`` over T-edge midpoints, relative to ``max |nabla^2 u|``.

    The Hessian is the quadratic patch fit of nodal u averaged over the two
    edge endpoints.
    """
    mesh = sol.mesh if mesh is None else mesh
    E = mesh.robin_edges
    if len(E) == 0 or not np.any(sol.u):
        return IdentityReport("boundary_hessian", 0.0, 1.0, tolerance, {"n_edges": int(len(E))})
    rec = recover_nodal(mesh, sol.u)
    mid = mesh.edge_midpoints(E)
    g = 0.5 * (rec.grad[E[:, 0]] + rec.grad[E[:, 1]])
    Hs = 0.5 * (rec.hess[E[:, 0]] + rec.hess[E[:, 1]])
    return _hessian_defect_report(mesh.chart, mid, g, Hs, mesh.edge_normals(E), tolerance)


def boundary_hessian_defect_exact(chart: SpaceForm, u: ScalarField, points, normals,
                                  tolerance: Optional[float] = 1e-10) -> IdentityReport:
    """Same quantity for an analytic field at given boundary points with Euclidean normals."""
    x = np.atleast_2d(np.asarray(points, dtype=float))
    return _hessian_defect_report(chart, x, u.grad(x), u.hess(x), np.atleast_2d(normals), tolerance)


def _hessian_defect_report(chart, x, grad, hess, N, tolerance):
    Ho = orthonormal_hessian(chart, x, grad, hess)
    Tt = np.column_stack([-N[:, 1], N[:, 0]])
    mixed = np.abs(np.einsum("mi,mij,mj->m", N, Ho, Tt))
    scale = float(np.max(np.linalg.norm(Ho, axis=(1, 2))))
    value = float(mixed.max())
    return IdentityReport("boundary_hessian", value, scale, tolerance, {"n_points": int(len(x))})


def discrete_curvature(chart: SpaceForm, prev: np.ndarray, cur: np.ndarray, nxt: np.ndarray,
                       outward: np.ndarray, strict: bool = False):
    """g-curvature at ``cur`` from the circle through three consecutive vertices.

    ``outward`` is a Euclidean direction on the side the curvature is measured
    toward (the domain's outward normal).  Collinear windows use the straight
    line through them (flat curvature zero) unless ``strict``, in which case
    :class:`DegenerateCurve` is raised.  Returns ``(k_g, degenerate_mask)``.
    """
    a = prev - cur
    b = nxt - cur
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    la, lb, lc = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1), np.linalg.norm(nxt - prev, axis=1)
    degenerate = np.abs(cross) <= 1e-12 * la * lb
    if strict and np.any(degenerate):
        raise DegenerateCurve("three consecutive vertices are collinear")
    safe = np.where(degenerate, 1.0, cross)
    # circumcenter relative to cur
    a2, b2 = np.einsum("md,md->m", a, a), np.einsum("md,md->m", b, b)
    cx = (b[:, 1] * a2 - a[:, 1] * b2) / (2.0 * safe)
    cy = (a[:, 0] * b2 - b[:, 0] * a2) / (2.0 * safe)
    R = la * lb * lc / (2.0 * np.abs(safe))
    Nd = -np.column_stack([cx, cy])
    Nd /= np.linalg.norm(Nd, axis=1)[:, None]
    kd = 1.0 / R
    flip = np.einsum("md,md->m", Nd, outward) < 0
    Nd[flip] *= -1.0
    kd = np.where(flip, -kd, kd)
    Nd[degenerate] = outward[degenerate] / np.linalg.norm(outward[degenerate], axis=1)[:, None]
    kd = np.where(degenerate, 0.0, kd)
    return np.asarray(curvature_transform(chart, kd, Nd, cur)), degenerate


def sigma_curvatures(mesh: Mesh, strict: bool = False):
    """g-curvatures at interior vertices of each Sigma chain (outward normal convention)."""
    ks, pts, deg = [], [], []
    for chain in mesh.sigma_chain():
        chain = np.asarray(chain)
        closed = len(chain) > 2 and chain[0] == chain[-1]
        if closed:
            chain = chain[:-1]
            prev, cur, nxt = np.roll(chain, 1), chain, np.roll(chain, -1)
        else:
            prev, cur, nxt = chain[:-2], chain[1:-1], chain[2:]
        if len(cur) == 0:
            continue
        P, C, Nx = mesh.vertices[prev], mesh.vertices[cur], mesh.vertices[nxt]
        d = Nx - P
        outward = np.column_stack([d[:, 1], -d[:, 0]])
        k, dg = discrete_curvature(mesh.chart, P, C, Nx, outward, strict)
        ks.append(k)
        pts.append(C)
        deg.append(dg)
    if not ks:
        raise DegenerateCurve("Sigma has no interior vertices")
    return np.concatenate(ks), np.vstack(pts), np.concatenate(deg)


def umbilicity_defect(mesh: Mesh, c: float, tolerance: Optional[float] = 2e-2,
                      strict: bool = False) -> IdentityReport:
    """``max |k_g - 1/(n c)| / (1/(n c))`` over interior Sigma vertices."""
    if not c > 0:
        raise ValueError("c must be positive")
    k, _, deg = sigma_curvatures(mesh, strict)
    target = 1.0 / (mesh.chart.n * c)
    rel = np.abs(k - target) / target
    return IdentityReport(
        "umbilicity",
        float(rel.max()),
        1.0,
        tolerance,
        {
            "target_curvature": target,
            "curvature_min": float(k.min()),
            "curvature_max": float(k.max()),
            "degenerate_windows": int(deg.sum()),
        },
    )
