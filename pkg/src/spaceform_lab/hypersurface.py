"""Discrete curves on a support surface and the algebra of higher-order mean curvatures.

Curves are polylines in model coordinates.  Principal (geodesic) curvatures
come from circumscribed circles of consecutive vertex triples mapped through
the conformal factor.  The symmetric-function algebra (``S_r``, ``H_r``,
Newton tensors, Newton-MacLaurin) is dimension-generic and accepts arbitrary
principal-curvature lists.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import comb

from .errors import BadIndex, BadMode, DegenerateCurve, NonpositiveMeanCurvature, NotOrthogonal
from .geometry import (
    SpaceForm,
    SupportSurface,
    _killing_field,
    _omega,
    curvature_transform,
    support_level,
    support_normal,
    support_potential,
)
from .identities import IdentityReport
from .mesh import Mesh, TRI_QUAD2

ORTHOGONALITY_TOL_DEG = 2.0
POSITIVITY_TOL = 1e-9


# ---------------------------------------------------------------------------
# Symmetric functions and Newton tensors


def elementary_symmetric(kappas) -> np.ndarray:
    """``[S_0, S_1, ..., S_m]`` of the last axis of ``kappas`` (``S_0 = 1``)."""
    k = np.atleast_2d(np.asarray(kappas, dtype=float))
    m = k.shape[-1]
    S = np.zeros(k.shape[:-1] + (m + 1,))
    S[..., 0] = 1.0
    for j in range(m):
        # multiply the generating polynomial by (1 + k_j t)
        S[..., 1:] = S[..., 1:] + k[..., j : j + 1] * S[..., :-1]
    return S if np.ndim(kappas) > 1 else S[0]


def normalized_mean_curvatures(kappas) -> np.ndarray:
    """``H_r = S_r / binom(m, r)`` for ``r = 0..m`` with ``m`` principal curvatures."""
    S = elementary_symmetric(kappas)
    m = S.shape[-1] - 1
    return S / comb(m, np.arange(m + 1))


@dataclass(frozen=True)
class CurvatureData:
    kappas: np.ndarray  # (vertices, n - 1)
    S: np.ndarray  # (vertices, n)
    H: np.ndarray  # (vertices, n)

    @classmethod
    def from_kappas(cls, kappas) -> "CurvatureData":
        k = np.asarray(kappas, dtype=float)
        if k.ndim == 1:
            k = k[:, None]
        return cls(k, elementary_symmetric(k), normalized_mean_curvatures(k))


def newton_tensor(h, r: int):
    """Newton tensor ``T_r`` of a symmetric matrix ``h`` and its trace identities.

    ``T_0 = I`` and ``T_r = S_r I - h T_{r-1}``.  Returns ``(T_r, report)``
    where ``report`` maps each identity to ``(lhs, rhs, rel_error)``:

    * ``trace``:      tr T_r        = (m - r) S_r
    * ``trace_h``:    tr (T_r h)    = (r + 1) S_{r+1}
    * ``trace_h2``:   tr (T_r h^2)  = S_1 S_{r+1} - (r + 2) S_{r+2}
    * ``adjugate``:   T_r           = coefficient of t^r in adj(I + t h)

    with ``m`` the size of ``h``.  Errors are relative to the magnitude of
    the terms in the expansion ``T_r = sum_j (-h)^j S_{r-j}`` that the
    recursion accumulates, i.e. ``sum_j |h|^j S_{r-j}(|kappa|)`` times the
    extra powers of ``|h|`` in each identity.
    """
    h = np.asarray(h, dtype=float)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError("h must be a square matrix")
    m = h.shape[0]
    if not isinstance(r, (int, np.integer)) or r < 0 or r > m - 1:
        raise BadIndex(f"r must lie in [0, {m - 1}], got {r}")
    h = 0.5 * (h + h.T)
    kap = np.linalg.eigvalsh(h)
    S = elementary_symmetric(kap)
    Sa = elementary_symmetric(np.abs(kap))
    hn = float(np.abs(kap).max())

    def Sx(arr, j):
        return arr[j] if 0 <= j <= m else 0.0

    def term_scale(p):
        return sum(hn**j * Sx(Sa, p - j) for j in range(p + 1))

    T = np.eye(m)
    for j in range(1, r + 1):
        T = Sx(S, j) * np.eye(m) - h @ T
    h2 = h @ h
    out = {}

    def rec(name, lhs, rhs, scale):
        scale = max(scale, np.finfo(float).tiny)
        out[name] = (float(lhs), float(rhs), float(abs(lhs - rhs) / scale))

    base = term_scale(r)
    rec("trace", np.trace(T), (m - r) * Sx(S, r), m * base)
    rec("trace_h", np.trace(T @ h), (r + 1) * Sx(S, r + 1), m * hn * base + (r + 1) * Sx(Sa, r + 1))
    rec(
        "trace_h2",
        np.trace(T @ h2),
        Sx(S, 1) * Sx(S, r + 1) - (r + 2) * Sx(S, r + 2),
        m * hn**2 * base + Sx(Sa, 1) * Sx(Sa, r + 1) + (r + 2) * Sx(Sa, r + 2),
    )
    Tadj = _adjugate_coefficient(h, r)
    err = np.linalg.norm(T - Tadj)
    out["adjugate"] = (float(np.linalg.norm(T)), float(np.linalg.norm(Tadj)), float(err / max(math.sqrt(m) * base, 1e-300)))
    return T, out


def _adjugate_coefficient(h: np.ndarray, r: int) -> np.ndarray:
    """Coefficient of ``t^r`` in ``adj(I + t h)`` by discrete Fourier sampling on a circle."""
    m = h.shape[0]
    norm = max(np.linalg.norm(h, 2), 1e-300)
    rho = 0.5 / norm
    N = m  # adj(I + t h) has degree m - 1 in t
    ts = rho * np.exp(2j * np.pi * np.arange(N) / N)
    acc = np.zeros((m, m), dtype=complex)
    for t in ts:
        A = np.eye(m) + t * h
        acc += np.linalg.det(A) * np.linalg.inv(A) * t ** (-r)
    return (acc / N).real


def newton_maclaurin_chain(kappas, tol: float = 1e-12) -> dict:
    """Check ``H_r^(1/r) <= H_(r-1)^(1/(r-1))`` along the chain, per point.

    Valid in the positive cone (all ``H_r > 0``).  Returns a dict with per-link
    gaps, ``holds`` (no link violated beyond ``tol``), and ``equality`` (all
    links tight within ``tol``).  Equality throughout happens exactly at
    umbilical points.
    """
    k = np.atleast_2d(np.asarray(kappas, dtype=float))
    H = normalized_mean_curvatures(k)
    m = k.shape[1]
    if m < 2:
        return {"gaps": np.zeros((len(k), 0)), "holds": np.ones(len(k), bool), "equality": np.ones(len(k), bool)}
    if np.any(H[:, 1:] <= 0):
        raise NonpositiveMeanCurvature("the chain requires all H_r > 0")
    roots = H[:, 1:] ** (1.0 / np.arange(1, m + 1))
    gaps = roots[:, :-1] - roots[:, 1:]  # H_{r-1}^(1/(r-1)) - H_r^(1/r), r = 2..m
    scale = np.abs(roots[:, :-1])
    rel = gaps / scale
    return {
        "gaps": rel,
        "holds": np.all(rel >= -tol, axis=1),
        "equality": np.all(np.abs(rel) <= tol, axis=1),
    }


# ---------------------------------------------------------------------------
# Discrete curves


@dataclass(frozen=True)
class DiscreteHypersurface:
    """A polyline in model coordinates; the enclosed region lies to its left."""

    chart: SpaceForm
    vertices: np.ndarray
    closed: bool
    support: Optional[SupportSurface] = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2:
            raise DegenerateCurve("vertices must be an (m, 2) array")
        if len(v) < 5:
            raise DegenerateCurve("at least 5 vertices are required")
        seg = np.diff(np.vstack([v, v[:1]]) if self.closed else v, axis=0)
        if np.any(np.linalg.norm(seg, axis=1) == 0):
            raise DegenerateCurve("repeated consecutive vertices")

    def segments(self):
        v = self.vertices
        if self.closed:
            return v, np.roll(v, -1, axis=0)
        return v[:-1], v[1:]

    def vertex_normals(self) -> np.ndarray:
        """Euclidean unit normals pointing to the right of the direction of travel."""
        v = self.vertices
        if self.closed:
            d = np.roll(v, -1, axis=0) - np.roll(v, 1, axis=0)
        else:
            d = np.gradient(v, axis=0)
        N = np.column_stack([d[:, 1], -d[:, 0]])
        return N / np.linalg.norm(N, axis=1)[:, None]

    def endpoint_residuals(self) -> np.ndarray:
        if self.closed or self.support is None:
            return np.zeros(0)
        return np.abs(np.ravel(support_level(self.support, self.chart, self.vertices[[0, -1]])))

    def to_dict(self) -> dict:
        return {
            "model": self.chart.model.value,
            "K": self.chart.K,
            "n": self.chart.n,
            "vertices": self.vertices.tolist(),
            "closed": self.closed,
            "support": self.support.to_dict() if self.support is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteHypersurface":
        from .geometry import Model

        model = Model(d["model"])
        K = int(d.get("K", {"half_space": -1, "poincare_ball": -1, "stereographic_sphere": 1, "euclidean": 0}[model.value]))
        chart = SpaceForm(K, int(d.get("n", 2)), model)
        sup = SupportSurface.from_dict(d["support"]) if d.get("support") else None
        return cls(chart, np.asarray(d["vertices"], dtype=float), bool(d["closed"]), sup)


def read_polyline(path) -> DiscreteHypersurface:
    return DiscreteHypersurface.from_dict(json.loads(Path(path).read_text()))


def write_polyline(curve: DiscreteHypersurface, path) -> None:
    Path(path).write_text(json.dumps(curve.to_dict()))


def circle_curve(chart: SpaceForm, center, radius: float, m: int, support: Optional[SupportSurface] = None):
    """Closed counterclockwise polygon inscribed in a Euclidean circle."""
    t = 2.0 * np.pi * np.arange(m) / m
    v = np.asarray(center, float) + radius * np.column_stack([np.cos(t), np.sin(t)])
    return DiscreteHypersurface(chart, v, True, support)


def cap_curve(chart: SpaceForm, support: SupportSurface, center, radius: float, m: int,
              bump: float = 0.0, tilt_deg: float = 0.0) -> DiscreteHypersurface:
    """Arc of ``r(phi) = radius (1 + bump cos 2 phi)`` about ``center`` inside ``{x_2 > 1}``.

    Intended for the horosphere ``x_2 = 1``.  With ``tilt_deg = 0`` the centre
    should lie on the horosphere; the arc then runs from ``phi = 0`` to ``pi``
    (counterclockwise, so the cap is on its left), and the ``cos 2 phi``
    perturbation keeps both endpoints orthogonal.  With a tilt the centre is
    lowered by ``radius sin(tilt)`` and the arc is clipped at ``x_2 = 1``.
    """
    c = np.asarray(center, dtype=float).copy()
    if tilt_deg:
        c[1] -= radius * math.sin(math.radians(tilt_deg))
    lvl = 1.0
    if bump == 0.0:
        s = (lvl - c[1]) / radius
        phi0 = math.asin(max(-1.0, min(1.0, s)))
        phi = np.linspace(phi0, math.pi - phi0, m)
        v = c + radius * np.column_stack([np.cos(phi), np.sin(phi)])
        v[[0, -1], 1] = lvl
    else:
        if tilt_deg:
            raise ValueError("perturbed tilted caps are not supported")
        phi = np.linspace(0.0, math.pi, m)
        r = radius * (1.0 + bump * np.cos(2.0 * phi))
        v = c + r[:, None] * np.column_stack([np.cos(phi), np.sin(phi)])
        v[[0, -1], 1] = c[1]
    return DiscreteHypersurface(chart, v, False, support)


def principal_curvatures(surface: DiscreteHypersurface, chart: Optional[SpaceForm] = None,
                         strict: bool = False) -> CurvatureData:
    """Per-vertex g-curvature of a curve from circumscribed circles of vertex triples.

    The curvature is measured with respect to the normal pointing right of the
    direction of travel (outward for a counterclockwise boundary).  Endpoints
    of open curves reuse the circle of their adjacent triple, evaluated at the
    endpoint.
    """
    chart = surface.chart if chart is None else chart
    v = surface.vertices
    m = len(v)
    if surface.closed:
        prev, cur, nxt = np.roll(v, 1, axis=0), v, np.roll(v, -1, axis=0)
        k, _ = _circle_curvature(chart, prev, cur, nxt, cur, surface.vertex_normals(), strict)
    else:
        prev, cur, nxt = v[:-2], v[1:-1], v[2:]
        N = surface.vertex_normals()
        k_in, _ = _circle_curvature(chart, prev, cur, nxt, cur, N[1:-1], strict)
        k0, _ = _circle_curvature(chart, v[:1], v[1:2], v[2:3], v[:1], N[:1], strict)
        k1, _ = _circle_curvature(chart, v[-3:-2], v[-2:-1], v[-1:], v[-1:], N[-1:], strict)
        k = np.concatenate([k0, k_in, k1])
    return CurvatureData.from_kappas(k.reshape(m, 1))


def _circle_curvature(chart, a, b, c, at, outward, strict):
    """g-curvature at ``at`` of the circle through ``a, b, c`` (batched)."""
    u = a - b
    w = c - b
    cross = u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0]
    lu, lw = np.linalg.norm(u, axis=1), np.linalg.norm(w, axis=1)
    degenerate = np.abs(cross) <= 1e-12 * lu * lw
    if strict and np.any(degenerate):
        raise DegenerateCurve("three consecutive vertices are collinear")
    safe = np.where(degenerate, 1.0, cross)
    u2, w2 = np.einsum("md,md->m", u, u), np.einsum("md,md->m", w, w)
    cx = (w[:, 1] * u2 - u[:, 1] * w2) / (2.0 * safe)
    cy = (u[:, 0] * w2 - w[:, 0] * u2) / (2.0 * safe)
    center = b + np.column_stack([cx, cy])
    d = at - center
    R = np.linalg.norm(d, axis=1)
    Nd = d / R[:, None]
    kd = 1.0 / R
    flip = np.einsum("md,md->m", Nd, outward) < 0
    Nd[flip] *= -1.0
    kd = np.where(flip, -kd, kd)
    on = outward / np.linalg.norm(outward, axis=1)[:, None]
    Nd[degenerate] = on[degenerate]
    kd = np.where(degenerate, 0.0, kd)
    return np.atleast_1d(curvature_transform(chart, kd, Nd, at)), degenerate


def _segment_data(surface: DiscreteHypersurface, H: np.ndarray):
    """Midpoints, Euclidean normals, g-length elements and midpoint curvature data."""
    a, b = surface.segments()
    mid = 0.5 * (a + b)
    d = b - a
    L = np.linalg.norm(d, axis=1)
    N = np.column_stack([d[:, 1], -d[:, 0]]) / L[:, None]
    omega, _ = _omega(surface.chart, mid)
    ds = np.exp(omega) * L
    Hm = 0.5 * (H + np.roll(H, -1, axis=0)) if surface.closed else 0.5 * (H[:-1] + H[1:])
    return mid, N, omega, ds, Hm


def endpoint_contact_angles(surface: DiscreteHypersurface) -> np.ndarray:
    """Angles (degrees) between the curve and the support at each endpoint."""
    if surface.closed or surface.support is None:
        return np.zeros(0)
    v = surface.vertices
    out = []
    for p, t in ((v[0], v[1] - v[0]), (v[-1], v[-2] - v[-1])):
        N = support_normal(surface.support, surface.chart, p)
        c = abs(float(t @ N)) / np.linalg.norm(t)
        out.append(math.degrees(math.asin(min(1.0, c))))
    return np.array(out)


def minkowski_residual(surface: DiscreteHypersurface, chart: Optional[SpaceForm] = None,
                       support: Optional[SupportSurface] = None, k: int = 1,
                       tolerance: Optional[float] = 1e-2, strict: bool = False) -> IdentityReport:
    """``int H_{k-1} V dA - int H_k g(X, nu) dA`` by segment-midpoint quadrature.

    Open curves must meet the support orthogonally (within 2 degrees); if not,
    the residual is still computed but no pass/fail is attached, or
    :class:`NotOrthogonal` is raised when ``strict``.
    """
    chart = surface.chart if chart is None else chart
    support = surface.support if support is None else support
    if support is None:
        raise ValueError("a support surface is needed to fix the Killing pair")
    m = chart.n - 1
    if not 1 <= k <= m:
        raise BadIndex(f"k must lie in [1, {m}]")
    cd = principal_curvatures(surface, chart)
    mid, N, omega, ds, Hm = _segment_data(surface, cd.H)
    V = support_potential(support, chart).value(mid)
    X = np.array([_killing_field(support, chart, p)[0] for p in mid])
    gXnu = np.exp(omega) * np.einsum("md,md->m", X, N)
    lhs = float(np.sum(Hm[:, k - 1] * V * ds))
    rhs = float(np.sum(Hm[:, k] * gXnu * ds))
    details = {"lhs": lhs, "rhs": rhs, "segments": int(len(ds)), "k": k}
    if not surface.closed:
        ang = endpoint_contact_angles(surface)
        details["contact_angles_deg"] = ang.tolist()
        if np.any(np.abs(ang - 90.0) > ORTHOGONALITY_TOL_DEG):
            if strict:
                raise NotOrthogonal(f"contact angles {ang.tolist()} are not within 2 degrees of 90")
            details["not_orthogonal"] = True
            tolerance = None
    return IdentityReport("minkowski", lhs - rhs, abs(lhs) + abs(rhs), tolerance, details)


def hkr_gap(surface: DiscreteHypersurface, enclosed_mesh: Mesh, chart: Optional[SpaceForm] = None,
            support: Optional[SupportSurface] = None, tolerance: Optional[float] = 1e-2) -> IdentityReport:
    """``int_Sigma V / H_1 dA - int_Omega n V dvol`` with ``V = 1/x_n`` (or the support's potential).

    ``value`` is the gap and ``relative`` the gap over the volume side.  With a
    tolerance the report passes when the relative gap is below it (the
    equality case); the sign of the gap is in ``details["gap"]``.
    """
    chart = surface.chart if chart is None else chart
    support = surface.support if support is None else support
    if support is None:
        raise ValueError("a support surface is needed to fix the weight V")
    cd = principal_curvatures(surface, chart)
    H1 = cd.H[:, 1]
    # a discrete geodesic carries round-off curvature of either sign
    if np.any(H1 <= POSITIVITY_TOL):
        raise NonpositiveMeanCurvature(f"H_1 reaches {H1.min():.3e}")
    Vf = support_potential(support, chart)
    mid, N, omega, ds, Hm = _segment_data(surface, cd.H)
    lhs = float(np.sum(Vf.value(mid) / Hm[:, 1] * ds))
    bary, w = TRI_QUAD2
    q = np.einsum("qk,tkd->tqd", bary, enclosed_mesh.vertices[enclosed_mesh.triangles])
    flat = q.reshape(-1, 2)
    om_q, _ = _omega(chart, flat)
    dens = (chart.n * Vf.value(flat) * np.exp(chart.n * om_q)).reshape(q.shape[:2])
    rhs = float(np.sum(np.abs(enclosed_mesh.areas()) * (dens @ w)))
    gap = lhs - rhs
    return IdentityReport("hkr", gap, rhs, tolerance, {"lhs": lhs, "rhs": rhs, "gap": gap})



ALEXANDROV_CONSISTENT = "consistent-with-umbilical"
ALEXANDROV_INCONSISTENT = "inconsistent"


def alexandrov_classify(
    surface_or_kappas,
    chart: Optional[SpaceForm] = None,
    support: Optional[SupportSurface] = None,
    mode: Sequence = ("constant_Hk", 1),
    cv_tol: float = 1e-2,
) -> dict:
    """Classify by the coefficient of variation of ``H_k`` (or ``H_k / H_l``).

    ``mode`` is ``("constant_Hk", k)`` or ``("quotient", k, l)`` with
    ``l < k``.  The input is a :class:`DiscreteHypersurface` or an array of
    principal curvatures of shape ``(points, n - 1)``; for the latter the
    Newton-MacLaurin chain is also evaluated per point.
    """
    if isinstance(surface_or_kappas, DiscreteHypersurface):
        cd = principal_curvatures(surface_or_kappas, chart)
    else:
        cd = CurvatureData.from_kappas(np.atleast_2d(np.asarray(surface_or_kappas, dtype=float)))
    m = cd.kappas.shape[1]
    if not mode or mode[0] not in ("constant_Hk", "quotient"):
        raise BadMode(f"unknown mode {mode!r}")
    if mode[0] == "constant_Hk":
        if len(mode) != 2 or not 1 <= int(mode[1]) <= m:
            raise BadMode(f"constant_Hk needs k in [1, {m}]")
        q = cd.H[:, int(mode[1])]
    else:
        if len(mode) != 3:
            raise BadMode("quotient mode needs (k, l)")
        k, l = int(mode[1]), int(mode[2])
        if not 0 <= l < k <= m:
            raise BadMode(f"quotient needs 0 <= l < k <= {m}")
        if np.any(cd.H[:, l] <= 0):
            raise NonpositiveMeanCurvature("quotient mode requires H_l > 0")
        q = cd.H[:, k] / cd.H[:, l]
    mean = float(np.mean(q))
    cv = float(np.std(q) / abs(mean)) if mean != 0 else math.inf
    out = {
        "mode": list(mode),
        "mean": mean,
        "cv": cv,
        "verdict": ALEXANDROV_CONSISTENT if cv < cv_tol else ALEXANDROV_INCONSISTENT,
    }
    if m >= 2 and np.all(cd.H[:, 1:] > 0):
        chain = newton_maclaurin_chain(cd.kappas)
        out["chain_holds"] = bool(np.all(chain["holds"]))
        out["umbilical_points"] = chain["equality"].tolist()
    return out
