"""First eigenvalues of the Robin-Dirichlet and Steklov-Dirichlet problems.

Robin-Dirichlet:   (A - kappa B_T) phi = lambda M phi        on free dofs
Steklov-Dirichlet: (A - nK M) phi = mu kappa B_T phi          on free dofs

The first is solved by shifted block inverse iteration with Rayleigh-Ritz
projection and locking of converged pairs.  The second is reduced exactly to
the T-dofs by a Schur complement (the discrete Dirichlet-to-Neumann map) and
solved densely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceFailure, IndefiniteBulk, NotCoercive
from .fem import FemSystem, factor_spd
from .geometry import SupportKind, support_potential

ROBIN_DIRICHLET = "RobinDirichlet"
STEKLOV_DIRICHLET = "SteklovDirichlet"


@dataclass(frozen=True)
class SpectrumResult:
    problem: str
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # nodal fields, one per column, zero on Sigma
    bound_reference: float
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return float(self.eigenvalues[0] - self.bound_reference)

    def to_dict(self) -> dict:
        d = {
            "problem": self.problem,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "bound": float(self.bound_reference),
            "margin": self.margin,
        }
        d.update(self.extra)
        return d


def lambda_bound(system: FemSystem) -> float:
    """Lower bound for lambda_1: ``nK`` for geodesic-sphere supports, ``-n`` otherwise."""
    if system.support.kind is SupportKind.GEODESIC_SPHERE:
        return float(system.n * system.K)
    return -float(system.n)


def rayleigh_quotient(system: FemSystem, phi: np.ndarray, kappa: Optional[float] = None) -> float:
    kappa = system.kappa if kappa is None else kappa
    L = system.A - kappa * system.B_T
    return float(phi @ (L @ phi)) / float(phi @ (system.M @ phi))


def _m_orthonormalize(X: np.ndarray, M, against: Optional[np.ndarray] = None) -> np.ndarray:
    if against is not None and against.shape[1]:
        X = X - against @ (against.T @ (M @ X))
    G = X.T @ (M @ X)
    G = 0.5 * (G + G.T)
    w, U = np.linalg.eigh(G)
    keep = w > 1e-14 * w.max()
    return X @ (U[:, keep] / np.sqrt(w[keep]))


def robin_dirichlet_spectrum(
    system: FemSystem,
    kappa: Optional[float] = None,
    k: int = 1,
    shift: Optional[float] = None,
    tol: float = 1e-10,
    maxiter: int = 500,
    seed: int = 0,
) -> SpectrumResult:
    """Smallest ``k`` eigenpairs of the Robin-Dirichlet problem.

    The shift defaults to ``bound - 1``, below lambda_1 by the lower bounds for
    these domains, so the shifted operator is positive definite.  Should the
    factorization report otherwise the shift is lowered further.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    kappa = system.kappa if kappa is None else float(kappa)
    free = system.free_dofs
    if len(system.dirichlet_dofs) == 0:
        raise ValueError("the Dirichlet set is empty")
    bound = lambda_bound(system)
    sigma = bound - 1.0 if shift is None else float(shift)
    L = (system.A - kappa * system.B_T).tocsr()[free][:, free]
    M = system.M.tocsr()[free][:, free]
    nf = len(free)
    k = min(k, nf)
    lu = None
    for _ in range(8):
        try:
            lu = factor_spd(L - sigma * M)
            break
        except NotCoercive:
            sigma -= max(1.0, abs(sigma))
    if lu is None:
        raise ConvergenceFailure("could not find a shift below the spectrum")

    p = min(nf, k + max(2, k))
    rng = np.random.default_rng(seed)
    X = _m_orthonormalize(rng.standard_normal((nf, p)) + 1.0, M)
    locked = np.zeros((nf, 0))
    locked_vals = []
    prev = np.full(p, np.inf)
    it = 0
    for it in range(1, maxiter + 1):
        Y = lu.solve(M @ X)
        Y = _m_orthonormalize(Y, M, locked)
        Lr = Y.T @ (L @ Y)
        Lr = 0.5 * (Lr + Lr.T)
        vals, C = np.linalg.eigh(Lr)
        X = Y @ C
        need = k - len(locked_vals)
        done = np.abs(vals - prev[: len(vals)]) <= tol * np.maximum(1.0, np.abs(vals))
        # lock the leading run of converged pairs
        nlock = 0
        while nlock < min(need, len(vals)) and done[nlock]:
            nlock += 1
        if nlock:
            locked = np.column_stack([locked, X[:, :nlock]])
            locked_vals += vals[:nlock].tolist()
            X = X[:, nlock:]
            vals = vals[nlock:]
            if len(locked_vals) >= k:
                break
            if X.shape[1] < p - len(locked_vals):
                X = np.column_stack([X, rng.standard_normal((nf, p - len(locked_vals) - X.shape[1]))])
            X = _m_orthonormalize(X, M, locked)
        prev = np.concatenate([vals, np.full(p, np.inf)])[:p]
    else:
        raise ConvergenceFailure(f"inverse iteration did not converge in {maxiter} iterations")

    order = np.argsort(locked_vals)
    vals = np.asarray(locked_vals)[order]
    vecs = np.zeros((system.mesh.n_vertices, k))
    vecs[free] = locked[:, order]
    for j in range(k):
        i = np.argmax(np.abs(vecs[:, j]))
        if vecs[i, j] < 0:
            vecs[:, j] *= -1
    return SpectrumResult(ROBIN_DIRICHLET, vals, vecs, bound, it, {"shift": sigma, "kappa": kappa})


def steklov_schur(system: FemSystem, K: Optional[float] = None):
    """Dense Dirichlet-to-Neumann matrix ``S`` on the T-dofs and the pieces used to build it.

    Returns ``(S, B_TT, t_dofs, i_dofs, lu, Z)`` where ``lu`` factors ``C_II``
    and ``Z = C_II^{-1} C_IT``.
    Raises ``IndefiniteBulk`` if ``C = A - nK M`` is not positive definite on
    the free dofs.
    """
    K = system.K if K is None else K
    mesh = system.mesh
    free = system.free_dofs
    robin_nodes = np.unique(mesh.robin_edges.ravel())
    t_dofs = np.intersect1d(free, robin_nodes)
    i_dofs = np.setdiff1d(free, t_dofs)
    if len(t_dofs) == 0:
        raise ValueError("T carries no free dofs")
    C = (system.A - system.n * K * system.M).tocsr()
    try:
        factor_spd(C[free][:, free])
    except NotCoercive as exc:
        raise IndefiniteBulk(str(exc)) from exc
    C_II = C[i_dofs][:, i_dofs]
    C_IT = C[i_dofs][:, t_dofs].toarray()
    C_TT = C[t_dofs][:, t_dofs].toarray()
    lu = factor_spd(C_II)
    Z = lu.solve(C_IT)
    S = C_TT - C_IT.T @ Z
    B_TT = system.B_T.tocsr()[t_dofs][:, t_dofs].toarray()
    return S, B_TT, t_dofs, i_dofs, lu, Z


def steklov_dirichlet_spectrum(
    system: FemSystem,
    kappa: Optional[float] = None,
    K: Optional[float] = None,
    k: int = 1,
) -> SpectrumResult:
    """Smallest ``k`` Steklov-Dirichlet eigenvalues ``mu`` via the Schur complement on T."""
    kappa = system.kappa if kappa is None else float(kappa)
    if kappa <= 0:
        raise ValueError("the Steklov problem needs kappa > 0")
    S, B_TT, t_dofs, i_dofs, _, Z = steklov_schur(system, K)
    asym = np.abs(S - S.T).max() / max(np.abs(S).max(), 1e-300)
    if not np.isfinite(asym):
        raise ConvergenceFailure("Schur complement is not finite")
    S = 0.5 * (S + S.T)
    try:
        vals, psi = sla.eigh(S, kappa * B_TT)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    k = min(k, len(vals))
    vecs = np.zeros((system.mesh.n_vertices, k))
    vecs[t_dofs] = psi[:, :k]
    vecs[i_dofs] = -Z @ psi[:, :k]
    for j in range(k):
        i = np.argmax(np.abs(vecs[:, j]))
        if vecs[i, j] < 0:
            vecs[:, j] *= -1
    extra = {"schur_asymmetry": float(asym), "kappa": kappa}
    return SpectrumResult(STEKLOV_DIRICHLET, vals[:k], vecs, 1.0, 0, extra)


def potential_alignment(system: FemSystem, phi: np.ndarray) -> float:
    """Cosine distance between ``phi`` and the support potential ``V`` on the T-dofs."""
    robin_nodes = np.intersect1d(system.free_dofs, np.unique(system.mesh.robin_edges.ravel()))
    V = support_potential(system.support, system.chart).value(system.mesh.vertices[robin_nodes])
    a = phi[robin_nodes]
    return float(1.0 - abs(a @ V) / (np.linalg.norm(a) * np.linalg.norm(V)))


def sign_changes(system: FemSystem, phi: np.ndarray, rel_tol: float = 1e-8) -> bool:
    """True if ``phi`` takes both signs (beyond ``rel_tol``) on interior nodes."""
    v = phi[system.free_dofs]
    t = rel_tol * np.abs(v).max()
    return bool(np.any(v > t) and np.any(v < -t))

