"""P1 finite elements for ``Delta_g u + nK u = f`` with Dirichlet data on Sigma and Robin data on T.

With ``g = exp(2 omega) delta`` the weak form of the mixed problem

    Delta_g u + nK u = f  in Omega,   u = 0 on Sigma,   du/dN = kappa u + q on T

reads, for every test function ``v`` vanishing on Sigma,

    int exp((n-2) w) grad u . grad v  -  nK int exp(n w) u v  -  kappa int_T exp((n-1) w) u v
        = -int exp(n w) f v  +  int_T exp((n-1) w) q v.

The matrices below are exactly these three bilinear forms on P1 hat functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EmptySigma, NotCoercive, SingularSystem
from .geometry import ScalarField, SpaceForm, SupportSurface, _case, _omega, check_admissible
from .mesh import TRI_QUAD2, Mesh

GAUSS2 = (np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)]), np.array([0.5, 0.5]))

# Degree-4 symmetric rule (6 points), barycentric coordinates and weights summing to 1.
_a1, _b1, _w1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_a2, _b2, _w2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
TRI_QUAD4 = (
    np.array([
        [_a1, _a1, _b1], [_a1, _b1, _a1], [_b1, _a1, _a1],
        [_a2, _a2, _b2], [_a2, _b2, _a2], [_b2, _a2, _a2],
    ]),
    np.array([_w1] * 3 + [_w2] * 3),
)


def p1_gradients(vertices: np.ndarray, triangles: np.ndarray):
    """Per-triangle gradients of the three hat functions and the triangle areas.

    Returns ``(G, area)`` with ``G[t, j]`` the gradient of the hat function of
    local vertex ``j``.
    """
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    # rows of the inverse Jacobian give gradients of the barycentric coordinates 1 and 2
    g1 = np.column_stack([d2[:, 1], -d2[:, 0]]) / det[:, None]
    g2 = np.column_stack([-d1[:, 1], d1[:, 0]]) / det[:, None]
    G = np.stack([-g1 - g2, g1, g2], axis=1)
    return G, 0.5 * det


def _quad_points(mesh: Mesh, rule):
    bary, w = rule
    q = np.einsum("qk,tkd->tqd", bary, mesh.vertices[mesh.triangles])
    check_admissible(mesh.chart, q.reshape(-1, 2))
    return q, bary, w


def _weights(chart: SpaceForm, q: np.ndarray, power: float) -> np.ndarray:
    omega, _ = _omega(chart, q.reshape(-1, q.shape[-1]))
    return np.exp(power * omega).reshape(q.shape[:-1])


def _edge_quad(mesh: Mesh, edges: np.ndarray):
    s, w = GAUSS2
    a = mesh.vertices[edges[:, 0]]
    b = mesh.vertices[edges[:, 1]]
    q = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    check_admissible(mesh.chart, q.reshape(-1, 2))
    L = np.linalg.norm(b - a, axis=1)
    return q, s, w, L


@dataclass(frozen=True)
class FemSystem:
    """Assembled matrices of the mixed problem on one mesh.

    ``A`` stiffness, ``M`` weighted mass, ``B_T`` Robin boundary mass, ``f``
    the load vector ``-int v dvol`` for the unit right-hand side.
    """

    mesh: Mesh
    chart: SpaceForm
    support: SupportSurface
    A: sp.csr_matrix
    M: sp.csr_matrix
    B_T: sp.csr_matrix
    f: np.ndarray
    dirichlet_dofs: np.ndarray
    free_dofs: np.ndarray

    @property
    def K(self) -> int:
        return self.chart.K

    @property
    def n(self) -> int:
        return self.chart.n

    @property
    def kappa(self) -> float:
        return self.support.robin_kappa

    def operator(self, kappa: Optional[float] = None, K: Optional[float] = None) -> sp.csr_matrix:
        """``A - nK M - kappa B_T`` on all dofs."""
        kappa = self.kappa if kappa is None else kappa
        K = self.K if K is None else K
        return (self.A - self.n * K * self.M - kappa * self.B_T).tocsr()

    def load(self, f: Optional[ScalarField] = None, q: Optional[ScalarField] = None) -> np.ndarray:
        """Right-hand side ``-int f v dvol + int_T q v dA`` (unit ``f``, zero ``q`` by default)."""
        rhs = self.f.copy() if f is None else _volume_load(self.mesh, self.chart, f)
        if q is not None:
            rhs += _robin_load(self.mesh, self.chart, q)
        return rhs


def _volume_load(mesh: Mesh, chart: SpaceForm, f: ScalarField) -> np.ndarray:
    q, bary, w = _quad_points(mesh, TRI_QUAD4)
    dens = _weights(chart, q, chart.n) * f.value(q.reshape(-1, 2)).reshape(q.shape[:2])
    area = np.abs(mesh.areas())
    loc = -np.einsum("t,tq,q,qk->tk", area, dens, w, bary)
    return np.bincount(mesh.triangles.ravel(), loc.ravel(), minlength=mesh.n_vertices)


def _robin_load(mesh: Mesh, chart: SpaceForm, qf: ScalarField) -> np.ndarray:
    E = mesh.robin_edges
    if len(E) == 0:
        return np.zeros(mesh.n_vertices)
    q, s, w, L = _edge_quad(mesh, E)
    dens = _weights(chart, q, chart.n - 1) * qf.value(q.reshape(-1, 2)).reshape(q.shape[:2])
    phi = np.stack([1.0 - s, s], axis=1)
    loc = np.einsum("e,eq,q,qk->ek", L, dens, w, phi)
    return np.bincount(E.ravel(), loc.ravel(), minlength=mesh.n_vertices)


def assemble(mesh: Mesh, chart: SpaceForm, support: SupportSurface) -> FemSystem:
    """Assemble stiffness, weighted mass, Robin mass and the unit load on ``mesh``."""
    _case(support, chart)
    if chart.n != 2 or mesh.vertices.shape[1] != 2:
        raise ValueError("finite elements are implemented for n = 2 meshes")
    n = chart.n
    nv = mesh.n_vertices
    tris = mesh.triangles
    G, area = p1_gradients(mesh.vertices, tris)
    area = np.abs(area)

    q, bary, w = _quad_points(mesh, TRI_QUAD2)
    w_stiff = _weights(chart, q, n - 2) @ w
    w_mass = _weights(chart, q, n)

    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    Ke = np.einsum("t,tid,tjd->tij", area * w_stiff, G, G)
    Me = np.einsum("t,tq,q,qi,qj->tij", area, w_mass, w, bary, bary)
    A = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    M = sp.coo_matrix((Me.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()
    A = 0.5 * (A + A.T)
    M = 0.5 * (M + M.T)

    E = mesh.robin_edges
    if len(E):
        qe, s, we, L = _edge_quad(mesh, E)
        dens = _weights(chart, qe, n - 1)
        phi = np.stack([1.0 - s, s], axis=1)
        Be = np.einsum("e,eq,q,qi,qj->eij", L, dens, we, phi, phi)
        br = np.repeat(E, 2, axis=1).ravel()
        bc = np.tile(E, (1, 2)).ravel()
        B = sp.coo_matrix((Be.ravel(), (br, bc)), shape=(nv, nv)).tocsr()
        B = 0.5 * (B + B.T)
    else:
        B = sp.csr_matrix((nv, nv))

    f = -np.bincount(tris.ravel(), np.einsum("t,tq,q,qk->tk", area, w_mass, w, bary).ravel(), minlength=nv)
    dir_set = np.unique(np.concatenate([mesh.sigma_edges.ravel(), mesh.gamma_vertices]))
    free = np.setdiff1d(np.arange(nv), dir_set)
    return FemSystem(mesh, chart, support, A, M, B, f, dir_set, free)


# ---------------------------------------------------------------------------
# Solving


def factor_spd(S: sp.spmatrix):
    """Sparse LU restricted to diagonal pivots; raises unless ``S`` is positive definite.

    With a zero pivoting threshold and symmetric mode SuperLU factors
    ``P S P^T = L U`` without row exchanges, so ``U``'s diagonal holds the
    pivots of an ``L D L^T`` factorization.  They are all positive exactly
    when ``S`` is positive definite.
    """
    S = sp.csc_matrix(S)
    if S.shape[0] == 0:
        raise SingularSystem("no free degrees of freedom")
    try:
        lu = spla.splu(
            S,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options=dict(SymmetricMode=True),
        )
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc
    piv = lu.U.diagonal()
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise NotCoercive("factorization required off-diagonal pivoting (indefinite operator)")
    scale = np.abs(S.diagonal()).max()
    if np.any(np.abs(piv) <= 1e-14 * scale):
        raise SingularSystem("zero pivot in the symmetric factorization")
    if np.any(piv <= 0):
        raise NotCoercive(f"nonpositive pivot {piv.min():.3e}: the bilinear form is not coercive")
    return lu


@dataclass(frozen=True)
class SolutionField:
    """Nodal P1 solution with derived gradients and boundary normal derivatives."""

    mesh: Mesh
    chart: SpaceForm
    u: np.ndarray
    grad: np.ndarray
    u_nu_sigma: np.ndarray
    dN_robin: np.ndarray
    kappa: float
    K: float

    def to_dict(self) -> dict:
        c_hat, rel_std = normal_derivative_stats(self)
        return {
            "u": self.u.tolist(),
            "u_nu_sigma": [
                {"edge": [int(a), int(b)], "value": float(v)}
                for (a, b), v in zip(self.mesh.sigma_edges.tolist(), self.u_nu_sigma)
            ],
            "c_hat": c_hat,
            "rel_std": rel_std,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def element_gradients(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    G, _ = p1_gradients(mesh.vertices, mesh.triangles)
    return np.einsum("tk,tkd->td", u[mesh.triangles], G)


def boundary_triangles(mesh: Mesh, edges: np.ndarray) -> np.ndarray:
    """Index of the triangle adjacent to each (directed, counterclockwise) boundary edge."""
    tris = mesh.triangles
    lookup = {}
    for t, (a, b, c) in enumerate(tris.tolist()):
        lookup[(a, b)] = t
        lookup[(b, c)] = t
        lookup[(c, a)] = t
    return np.array([lookup[(a, b)] for a, b in edges.tolist()], dtype=int)


def edge_normal_derivative(mesh: Mesh, grads: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """``exp(-omega) grad u . N_delta`` at edge midpoints from per-edge gradients ``grads``."""
    if len(edges) == 0:
        return np.zeros(0)
    N = mesh.edge_normals(edges)
    omega, _ = _omega(mesh.chart, mesh.edge_midpoints(edges))
    return np.exp(-omega) * np.einsum("ed,ed->e", grads, N)


def solve_mixed_bvp(
    system: FemSystem,
    kappa: Optional[float] = None,
    K: Optional[float] = None,
    f: Optional[ScalarField] = None,
    q: Optional[ScalarField] = None,
) -> SolutionField:
    """Solve the mixed Robin-Dirichlet problem with homogeneous data on Sigma.

    ``kappa`` and ``K`` default to the system's support and chart; they may be
    overridden (for example to inflate the Robin coefficient).  ``f`` and
    ``q`` are the optional interior source and Robin data (defaults 1 and 0).
    Raises ``NotCoercive`` when the reduced operator is not positive definite.
    """
    kappa = system.kappa if kappa is None else float(kappa)
    K = system.K if K is None else K
    L = system.operator(kappa, K)
    free = system.free_dofs
    Lff = L[free][:, free]
    rhs = system.load(f, q)[free]
    lu = factor_spd(Lff)
    u = np.zeros(system.mesh.n_vertices)
    u[free] = lu.solve(rhs)
    return _make_solution(system.mesh, system.chart, u, kappa, K)


def _make_solution(mesh: Mesh, chart: SpaceForm, u: np.ndarray, kappa: float, K: float) -> SolutionField:
    grads = element_gradients(mesh, u)
    if len(mesh.sigma_edges):
        u_nu = edge_normal_derivative(mesh, grads[boundary_triangles(mesh, mesh.sigma_edges)], mesh.sigma_edges)
    else:
        u_nu = np.zeros(0)
    if len(mesh.robin_edges):
        dN = edge_normal_derivative(mesh, grads[boundary_triangles(mesh, mesh.robin_edges)], mesh.robin_edges)
    else:
        dN = np.zeros(0)
    return SolutionField(mesh, chart, u, grads, u_nu, dN, kappa, K)


def interpolant(mesh: Mesh, chart: SpaceForm, exact: ScalarField, kappa: float = 0.0, K: float = 0.0) -> SolutionField:
    """The nodal interpolant of ``exact`` packaged as a :class:`SolutionField`."""
    return _make_solution(mesh, chart, np.asarray(exact.value(mesh.vertices), dtype=float), kappa, K)


def weak_residual(system: FemSystem, sol: SolutionField) -> np.ndarray:
    """``B[u, v] + int v dvol`` for every free hat function ``v``."""
    L = system.operator(sol.kappa, sol.K)
    r = L @ sol.u - system.f
    return r[system.free_dofs]


def manufactured_error(sol: SolutionField, exact: ScalarField, mesh: Optional[Mesh] = None,
                       chart: Optional[SpaceForm] = None) -> tuple[float, float]:
    """Weighted ``L2`` error and ``H1`` seminorm error against ``exact`` (degree-4 quadrature)."""
    mesh = sol.mesh if mesh is None else mesh
    chart = sol.chart if chart is None else chart
    n = chart.n
    q, bary, w = _quad_points(mesh, TRI_QUAD4)
    flat = q.reshape(-1, 2)
    uh = np.einsum("qk,tk->tq", bary, sol.u[mesh.triangles])
    ue = exact.value(flat).reshape(q.shape[:2])
    ge = exact.grad(flat).reshape(q.shape)
    gh = sol.grad[:, None, :]
    area = np.abs(mesh.areas())
    wl2 = _weights(chart, q, n)
    wh1 = _weights(chart, q, n - 2)
    eL2 = np.einsum("t,tq,q->", area, wl2 * (uh - ue) ** 2, w)
    eH1 = np.einsum("t,tq,q->", area, wh1 * np.sum((gh - ge) ** 2, axis=2), w)
    return float(np.sqrt(eL2)), float(np.sqrt(eH1))


def normal_derivative_stats(sol: SolutionField, values: Optional[np.ndarray] = None) -> tuple[float, float]:
    """g-length-weighted mean ``c_hat`` of ``u_nu`` over Sigma and its relative standard deviation."""
    mesh = sol.mesh
    E = mesh.sigma_edges
    if len(E) == 0:
        raise EmptySigma("the mesh has no Sigma edges")
    vals = sol.u_nu_sigma if values is None else np.asarray(values)
    omega, _ = _omega(mesh.chart, mesh.edge_midpoints(E))
    d = mesh.vertices[E[:, 1]] - mesh.vertices[E[:, 0]]
    wts = np.exp(omega) * np.linalg.norm(d, axis=1)
    c_hat = float(np.sum(wts * vals) / np.sum(wts))
    var = float(np.sum(wts * (vals - c_hat) ** 2) / np.sum(wts))
    rel = float(np.sqrt(var) / abs(c_hat)) if c_hat != 0 else float("inf")
    return c_hat, rel
