"""Closed-form geometry of the conformal models of the space forms.

Every model carries a metric ``g = exp(2 omega) * delta`` on an open subset of
R^n.  Christoffel symbols of such a metric only involve the Euclidean gradient
of ``omega``::

    Gamma^k_ij = delta_ik omega_j + delta_jk omega_i - delta_ij omega_k

so everything below (covariant Hessians, Lie derivatives of the metric,
curvature of hypersurfaces) is evaluated exactly from hard-coded formulas for
``omega`` and its gradient.  Tensor norms are always reported in a
g-orthonormal frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import InadmissiblePoint, NotOnSupport, UnsupportedCase

BOUNDARY_MARGIN = 1e-9
ON_SUPPORT_TOL = 1e-9


class Model(str, Enum):
    HALF_SPACE = "half_space"
    POINCARE_BALL = "poincare_ball"
    STEREOGRAPHIC_SPHERE = "stereographic_sphere"
    EUCLIDEAN = "euclidean"


_MODEL_CURVATURE = {
    Model.HALF_SPACE: -1,
    Model.POINCARE_BALL: -1,
    Model.STEREOGRAPHIC_SPHERE: 1,
    Model.EUCLIDEAN: 0,
}


@dataclass(frozen=True)
class SpaceForm:
    """A conformal chart of the space form of curvature ``K`` in dimension ``n``."""

    K: int
    n: int
    model: Model

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        if self.n < 2:
            raise ValueError(f"dimension must be >= 2, got {self.n}")
        if _MODEL_CURVATURE[self.model] != self.K:
            raise ValueError(
                f"model {self.model.value} requires K={_MODEL_CURVATURE[self.model]}, got K={self.K}"
            )

    @classmethod
    def half_space(cls, n: int = 2) -> "SpaceForm":
        return cls(-1, n, Model.HALF_SPACE)

    @classmethod
    def poincare_ball(cls, n: int = 2) -> "SpaceForm":
        return cls(-1, n, Model.POINCARE_BALL)

    @classmethod
    def stereographic_sphere(cls, n: int = 2) -> "SpaceForm":
        return cls(1, n, Model.STEREOGRAPHIC_SPHERE)

    @classmethod
    def euclidean(cls, n: int = 2) -> "SpaceForm":
        return cls(0, n, Model.EUCLIDEAN)

    def to_dict(self) -> dict:
        return {"K": self.K, "n": self.n, "model": self.model.value}

    @classmethod
    def from_dict(cls, d: dict) -> "SpaceForm":
        return cls(int(d["K"]), int(d["n"]), Model(d["model"]))


def _points(chart: SpaceForm, p) -> tuple[np.ndarray, bool]:
    x = np.asarray(p, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != chart.n:
        raise ValueError(f"expected points of dimension {chart.n}, got shape {x.shape}")
    return x, single


def admissible_mask(chart: SpaceForm, p) -> np.ndarray:
    x, _ = _points(chart, p)
    if chart.model is Model.HALF_SPACE:
        return x[:, -1] > BOUNDARY_MARGIN
    if chart.model is Model.POINCARE_BALL:
        return np.einsum("ij,ij->i", x, x) < (1.0 - BOUNDARY_MARGIN) ** 2
    return np.all(np.isfinite(x), axis=1)


def check_admissible(chart: SpaceForm, p) -> tuple[np.ndarray, bool]:
    x, single = _points(chart, p)
    ok = admissible_mask(chart, x)
    if not np.all(ok):
        bad = x[~ok][0]
        raise InadmissiblePoint(f"point {bad.tolist()} is outside the {chart.model.value} domain")
    return x, single


def _unwrap(single: bool, *arrays):
    if single:
        out = tuple(a[0] for a in arrays)
    else:
        out = arrays
    return out[0] if len(out) == 1 else out


def conformal_factor(chart: SpaceForm, p):
    """Return ``(omega, grad_omega)`` with ``g = exp(2 omega) delta`` at ``p``.

    ``p`` may be a single point of shape ``(n,)`` or an array ``(m, n)``.
    """
    x, single = check_admissible(chart, p)
    omega, grad = _omega(chart, x)
    return _unwrap(single, omega, grad)


def _omega(chart: SpaceForm, x: np.ndarray):
    r2 = np.einsum("ij,ij->i", x, x)
    if chart.model is Model.HALF_SPACE:
        xn = x[:, -1]
        grad = np.zeros_like(x)
        grad[:, -1] = -1.0 / xn
        return -np.log(xn), grad
    if chart.model is Model.POINCARE_BALL:
        d = 1.0 - r2
        return math.log(2.0) - np.log(d), 2.0 * x / d[:, None]
    if chart.model is Model.STEREOGRAPHIC_SPHERE:
        e = 1.0 + r2
        return math.log(2.0) - np.log(e), -2.0 * x / e[:, None]
    return np.zeros(len(x)), np.zeros_like(x)


def christoffel(grad_omega: np.ndarray) -> np.ndarray:
    """Christoffel symbols ``Gamma[k, i, j]`` of ``exp(2 omega) delta`` at one point."""
    w = np.asarray(grad_omega, dtype=float)
    n = w.shape[0]
    eye = np.eye(n)
    return (
        np.einsum("ki,j->kij", eye, w)
        + np.einsum("kj,i->kij", eye, w)
        - np.einsum("ij,k->kij", eye, w)
    )


# ---------------------------------------------------------------------------
# Scalar fields with exact derivatives


@dataclass(frozen=True)
class ScalarField:
    """A scalar field with exact Euclidean gradient and Hessian.

    The three callables take an ``(m, n)`` array and return arrays of shape
    ``(m,)``, ``(m, n)`` and ``(m, n, n)``.
    """

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]

    def __call__(self, p):
        x = np.atleast_2d(np.asarray(p, dtype=float))
        v = self.value(x)
        return v[0] if np.ndim(p) == 1 else v

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(
            lambda x: self.value(x) + other.value(x),
            lambda x: self.grad(x) + other.grad(x),
            lambda x: self.hess(x) + other.hess(x),
        )

    def scaled(self, a: float) -> "ScalarField":
        return ScalarField(
            lambda x: a * self.value(x),
            lambda x: a * self.grad(x),
            lambda x: a * self.hess(x),
        )

    def shifted(self, c: float) -> "ScalarField":
        return ScalarField(lambda x: self.value(x) + c, self.grad, self.hess)


def constant_field(c: float) -> ScalarField:
    return ScalarField(
        lambda x: np.full(len(x), float(c)),
        lambda x: np.zeros_like(x),
        lambda x: np.zeros(x.shape + (x.shape[1],)),
    )


def _outer(a, b):
    return np.einsum("mi,mj->mij", a, b)


def ball_linear_potential(a) -> ScalarField:
    """``2 <a, x> / (1 - |x|^2)`` on the Poincare ball (Hessian = V g)."""
    a = np.asarray(a, dtype=float)

    def value(x):
        d = 1.0 - np.einsum("ij,ij->i", x, x)
        return 2.0 * (x @ a) / d

    def grad(x):
        d = 1.0 - np.einsum("ij,ij->i", x, x)
        ax = x @ a
        return 2.0 * a[None, :] / d[:, None] + 4.0 * (ax / d**2)[:, None] * x

    def hess(x):
        d = 1.0 - np.einsum("ij,ij->i", x, x)
        ax = x @ a
        A = np.broadcast_to(a, x.shape)
        eye = np.eye(x.shape[1])
        return (
            4.0 * (_outer(A, x) + _outer(x, A)) / (d**2)[:, None, None]
            + 4.0 * (ax / d**2)[:, None, None] * eye
            + 16.0 * (ax / d**3)[:, None, None] * _outer(x, x)
        )

    return ScalarField(value, grad, hess)


def ball_radial_potential() -> ScalarField:
    """``V0 = (1 + |x|^2) / (1 - |x|^2)`` on the Poincare ball."""

    def value(x):
        r2 = np.einsum("ij,ij->i", x, x)
        return (1.0 + r2) / (1.0 - r2)

    def grad(x):
        d = 1.0 - np.einsum("ij,ij->i", x, x)
        return 4.0 * x / (d**2)[:, None]

    def hess(x):
        d = 1.0 - np.einsum("ij,ij->i", x, x)
        eye = np.eye(x.shape[1])
        return 4.0 * eye / (d**2)[:, None, None] + 16.0 * _outer(x, x) / (d**3)[:, None, None]

    return ScalarField(value, grad, hess)


def sphere_linear_potential(a) -> ScalarField:
    """``2 <a, x> / (1 + |x|^2)`` on the stereographic sphere (Hessian = -V g)."""
    a = np.asarray(a, dtype=float)

    def value(x):
        e = 1.0 + np.einsum("ij,ij->i", x, x)
        return 2.0 * (x @ a) / e

    def grad(x):
        e = 1.0 + np.einsum("ij,ij->i", x, x)
        ax = x @ a
        return 2.0 * a[None, :] / e[:, None] - 4.0 * (ax / e**2)[:, None] * x

    def hess(x):
        e = 1.0 + np.einsum("ij,ij->i", x, x)
        ax = x @ a
        A = np.broadcast_to(a, x.shape)
        eye = np.eye(x.shape[1])
        return (
            -4.0 * (_outer(A, x) + _outer(x, A)) / (e**2)[:, None, None]
            - 4.0 * (ax / e**2)[:, None, None] * eye
            + 16.0 * (ax / e**3)[:, None, None] * _outer(x, x)
        )

    return ScalarField(value, grad, hess)


def sphere_radial_potential() -> ScalarField:
    """``(1 - |x|^2) / (1 + |x|^2)`` on the stereographic sphere."""

    def value(x):
        r2 = np.einsum("ij,ij->i", x, x)
        return (1.0 - r2) / (1.0 + r2)

    def grad(x):
        e = 1.0 + np.einsum("ij,ij->i", x, x)
        return -4.0 * x / (e**2)[:, None]

    def hess(x):
        e = 1.0 + np.einsum("ij,ij->i", x, x)
        eye = np.eye(x.shape[1])
        return -4.0 * eye / (e**2)[:, None, None] + 16.0 * _outer(x, x) / (e**3)[:, None, None]

    return ScalarField(value, grad, hess)


def half_space_potential(alpha: float, b, gamma: float) -> ScalarField:
    """``(alpha + <b, x> + gamma |x|^2) / x_n`` on the half space, with ``b_n = 0``."""
    b = np.asarray(b, dtype=float)
    if abs(b[-1]) > 0:
        raise ValueError("the last component of b must vanish")

    def q(x):
        return alpha + x @ b + gamma * np.einsum("ij,ij->i", x, x)

    def value(x):
        return q(x) / x[:, -1]

    def grad(x):
        xn = x[:, -1]
        dq = b[None, :] + 2.0 * gamma * x
        out = dq / xn[:, None]
        out[:, -1] -= q(x) / xn**2
        return out

    def hess(x):
        m, n = x.shape
        xn = x[:, -1]
        dq = b[None, :] + 2.0 * gamma * x
        en = np.zeros((m, n))
        en[:, -1] = 1.0
        return (
            2.0 * gamma * np.eye(n) / xn[:, None, None]
            - (_outer(dq, en) + _outer(en, dq)) / (xn**2)[:, None, None]
            + 2.0 * (q(x) / xn**3)[:, None, None] * _outer(en, en)
        )

    return ScalarField(value, grad, hess)


# ---------------------------------------------------------------------------
# Support hypersurfaces


class SupportKind(str, Enum):
    GEODESIC_SPHERE = "geodesic_sphere"
    HOROSPHERE = "horosphere"
    EQUIDISTANT = "equidistant"
    GEODESIC_HYPERPLANE = "geodesic_hyperplane"


def geodesic_sphere_kappa(R_model: float, K: int) -> float:
    """Principal curvature of the centred sphere ``|x| = R_model`` in the ball/sphere chart."""
    if K == -1:
        return (1.0 + R_model**2) / (2.0 * R_model)
    if K == 1:
        return (1.0 - R_model**2) / (2.0 * R_model)
    return 1.0 / R_model


@dataclass(frozen=True)
class SupportSurface:
    """An umbilical support hypersurface ``S`` with principal curvature ``kappa``.

    Standard positions (model coordinates):

    * geodesic sphere: ``|x| = R_model`` in the ball or stereographic chart;
    * horosphere: ``x_n = 1`` in the half space, or, in the ball, the Euclidean
      sphere of radius ``R_model`` internally tangent to the unit sphere at
      ``ideal_point``;
    * equidistant: ``x_1 tan(theta) + x_n = 1`` in the half space.

    The outward normal is that of the region ``B^int`` bounded by ``S``.  With
    ``exterior=True`` the domain sits in ``B^ext``: the normal and the Robin
    coefficient both flip sign.
    """

    kind: SupportKind
    kappa: float
    R_model: Optional[float] = None
    theta: Optional[float] = None
    ideal_point: Optional[tuple] = None
    exterior: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", SupportKind(self.kind))
        if self.ideal_point is not None:
            object.__setattr__(self, "ideal_point", tuple(float(c) for c in self.ideal_point))
        k = self.kappa
        if self.kind is SupportKind.HOROSPHERE:
            if abs(k - 1.0) > 1e-12:
                raise ValueError(f"a horosphere has kappa = 1, got {k}")
            if self.ideal_point is not None and not (self.R_model and 0 < self.R_model < 1):
                raise ValueError("a ball horosphere needs 0 < R_model < 1")
        elif self.kind is SupportKind.EQUIDISTANT:
            if self.theta is None or not 0.0 < self.theta < math.pi / 2:
                raise ValueError("an equidistant hypersurface needs theta in (0, pi/2)")
            if abs(k - math.cos(self.theta)) > 1e-12:
                raise ValueError(f"equidistant kappa must equal cos(theta), got {k}")
        elif self.kind is SupportKind.GEODESIC_SPHERE:
            if self.R_model is None or not self.R_model > 0:
                raise ValueError("a geodesic sphere needs R_model > 0")
            if not k > 0:
                raise ValueError("a geodesic sphere has kappa > 0")
        elif abs(k) > 1e-12:
            raise ValueError("a geodesic hyperplane has kappa = 0")

    @classmethod
    def horosphere(cls, exterior: bool = False) -> "SupportSurface":
        return cls(SupportKind.HOROSPHERE, 1.0, exterior=exterior)

    @classmethod
    def ball_horosphere(cls, radius: float, ideal_point, exterior: bool = False) -> "SupportSurface":
        xi = np.asarray(ideal_point, dtype=float)
        xi = xi / np.linalg.norm(xi)
        return cls(SupportKind.HOROSPHERE, 1.0, R_model=radius, ideal_point=tuple(xi), exterior=exterior)

    @classmethod
    def equidistant(cls, theta: float, exterior: bool = False) -> "SupportSurface":
        return cls(SupportKind.EQUIDISTANT, math.cos(theta), theta=theta, exterior=exterior)

    @classmethod
    def geodesic_sphere(cls, R_model: float, K: int = -1, exterior: bool = False) -> "SupportSurface":
        return cls(SupportKind.GEODESIC_SPHERE, geodesic_sphere_kappa(R_model, K), R_model=R_model, exterior=exterior)

    @property
    def robin_kappa(self) -> float:
        """Coefficient of the Robin condition along the outward normal of the domain."""
        return -self.kappa if self.exterior else self.kappa

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "kappa": self.kappa,
            "R_model": self.R_model,
            "theta": self.theta,
            "ideal_point": list(self.ideal_point) if self.ideal_point is not None else None,
            "exterior": self.exterior,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SupportSurface":
        ip = d.get("ideal_point")
        return cls(
            SupportKind(d["kind"]),
            float(d["kappa"]),
            R_model=d.get("R_model"),
            theta=d.get("theta"),
            ideal_point=tuple(ip) if ip is not None else None,
            exterior=bool(d.get("exterior", False)),
        )


def _case(support: SupportSurface, chart: SpaceForm) -> str:
    kind, model = support.kind, chart.model
    if kind is SupportKind.GEODESIC_SPHERE and model is Model.POINCARE_BALL:
        if not support.kappa > 1.0:
            raise UnsupportedCase("a hyperbolic geodesic sphere has kappa > 1")
        return "ball_sphere"
    if kind is SupportKind.GEODESIC_SPHERE and model is Model.STEREOGRAPHIC_SPHERE:
        return "spherical_sphere"
    if kind in (SupportKind.HOROSPHERE, SupportKind.EQUIDISTANT) and model is Model.HALF_SPACE:
        if support.ideal_point is not None:
            raise UnsupportedCase("ball horosphere data given with the half-space chart")
        return "half_space"
    if kind is SupportKind.HOROSPHERE and model is Model.POINCARE_BALL and support.ideal_point is not None:
        return "ball_horosphere"
    raise UnsupportedCase(f"no closed form for {kind.value} in the {model.value} chart")


def validate_support(support: SupportSurface, chart: SpaceForm) -> None:
    """Raise ``UnsupportedCase``/``ValueError`` if ``support`` is inconsistent with ``chart``."""
    case = _case(support, chart)
    if case in ("ball_sphere", "spherical_sphere"):
        R = support.R_model
        if case == "ball_sphere" and not R < 1.0:
            raise ValueError("R_model must lie inside the unit ball")
        expected = geodesic_sphere_kappa(R, chart.K)
        if abs(expected - support.kappa) > 1e-9 * max(1.0, expected):
            raise ValueError(f"kappa {support.kappa} does not match R_model {R} (expected {expected})")


def support_level(support: SupportSurface, chart: SpaceForm, p) -> np.ndarray:
    """Signed Euclidean level-set function of ``S``: negative inside ``B^int``.

    Its Euclidean gradient on ``S`` is the unit outward normal of ``B^int``.
    """
    x, single = _points(chart, p)
    case = _case(support, chart)
    if case in ("ball_sphere", "spherical_sphere"):
        val = np.linalg.norm(x, axis=1) - support.R_model
    elif case == "ball_horosphere":
        c = (1.0 - support.R_model) * np.asarray(support.ideal_point)
        val = np.linalg.norm(x - c, axis=1) - support.R_model
    elif support.kind is SupportKind.HOROSPHERE:
        val = 1.0 - x[:, -1]
    else:
        th = support.theta
        val = (1.0 - x[:, 0] * math.tan(th) - x[:, -1]) * math.cos(th)
    return _unwrap(single, val)


def support_normal(support: SupportSurface, chart: SpaceForm, p) -> np.ndarray:
    """Euclidean unit normal of ``S`` pointing out of the domain (``B^int`` unless exterior)."""
    x, single = _points(chart, p)
    case = _case(support, chart)
    if case in ("ball_sphere", "spherical_sphere"):
        N = x / np.linalg.norm(x, axis=1)[:, None]
    elif case == "ball_horosphere":
        c = (1.0 - support.R_model) * np.asarray(support.ideal_point)
        d = x - c
        N = d / np.linalg.norm(d, axis=1)[:, None]
    elif support.kind is SupportKind.HOROSPHERE:
        N = np.zeros_like(x)
        N[:, -1] = -1.0
    else:
        th = support.theta
        N = np.zeros_like(x)
        N[:, 0] = -math.sin(th)
        N[:, -1] = -math.cos(th)
    if support.exterior:
        N = -N
    return _unwrap(single, N)


# ---------------------------------------------------------------------------
# Conformal Killing fields and their potentials


@dataclass(frozen=True)
class KillingData:
    X: np.ndarray
    V: float
    V0: Optional[float] = None


def support_potential(support: SupportSurface, chart: SpaceForm) -> ScalarField:
    """The weight ``V`` attached to ``S``: Hessian ``-K V g`` and ``dV/dN = kappa V`` on ``S``."""
    case = _case(support, chart)
    n = chart.n
    en = np.zeros(n)
    en[-1] = 1.0
    if case == "ball_sphere":
        return ball_linear_potential(en)
    if case == "spherical_sphere":
        return sphere_linear_potential(en)
    if case == "half_space":
        return half_space_potential(1.0, np.zeros(n), 0.0)
    # Horosphere in the ball: the potential whose level sets are the horospheres
    # sharing its ideal point, normalized to 1 on S.
    rho = support.R_model
    xi = np.asarray(support.ideal_point)
    return (ball_radial_potential() + ball_linear_potential(-xi)).scaled((1.0 - rho) / rho)


def auxiliary_potential(chart: SpaceForm) -> ScalarField:
    """``V0``: ``(1+|x|^2)/(1-|x|^2)`` in the ball, ``(1-|x|^2)/(1+|x|^2)`` on the sphere."""
    if chart.model is Model.POINCARE_BALL:
        return ball_radial_potential()
    if chart.model is Model.STEREOGRAPHIC_SPHERE:
        return sphere_radial_potential()
    raise UnsupportedCase("V0 is only defined in the ball models")


def _killing_field(support: SupportSurface, chart: SpaceForm, x: np.ndarray):
    """Return ``X`` and its Jacobian ``DX[k, i] = d_i X^k`` at a single point."""
    case = _case(support, chart)
    n = chart.n
    en = np.zeros(n)
    en[-1] = 1.0
    if case == "half_space":
        return x - en, np.eye(n)
    if case == "ball_horosphere":
        raise UnsupportedCase("no closed-form Killing field for a horosphere in the ball chart; use the half-space chart")
    R2 = support.R_model**2
    c = 2.0 / (1.0 - R2) if case == "ball_sphere" else 2.0 / (1.0 + R2)
    xn = x[-1]
    X = c * (xn * x - 0.5 * (x @ x + R2) * en)
    DX = c * (np.outer(x, en) + xn * np.eye(n) - np.outer(en, x))
    return X, DX


def killing_pair(support: SupportSurface, chart: SpaceForm, p) -> KillingData:
    """Evaluate the conformal Killing field ``X`` and its potential ``V`` at ``p``."""
    x, _ = check_admissible(chart, p)
    x = x[0]
    X, _ = _killing_field(support, chart, x)
    V = float(support_potential(support, chart).value(x[None])[0])
    V0 = None
    if chart.model in (Model.POINCARE_BALL, Model.STEREOGRAPHIC_SPHERE):
        V0 = float(auxiliary_potential(chart).value(x[None])[0])
    return KillingData(X=X, V=V, V0=V0)


def killing_defect(support: SupportSurface, chart: SpaceForm, p) -> float:
    """g-norm of ``(1/2)(nabla_i X_j + nabla_j X_i) - V g_ij`` at ``p``."""
    x, _ = check_admissible(chart, p)
    x = x[0]
    X, DX = _killing_field(support, chart, x)
    V = support_potential(support, chart).value(x[None])[0]
    omega, dw = _omega(chart, x[None])
    g = math.exp(2.0 * omega[0])
    gam = christoffel(dw[0])
    cov = DX + np.einsum("kij,j->ki", gam, X)  # nabla_i X^k stored as [k, i]
    lower = g * cov
    T = 0.5 * (lower + lower.T) - V * g * np.eye(chart.n)
    return float(np.linalg.norm(T) / g)


def killing_divergence(support: SupportSurface, chart: SpaceForm, p) -> tuple[float, float]:
    """Return ``(div X, n V)`` at ``p``; they agree for a conformal Killing field."""
    x, _ = check_admissible(chart, p)
    x = x[0]
    X, DX = _killing_field(support, chart, x)
    V = support_potential(support, chart).value(x[None])[0]
    _, dw = _omega(chart, x[None])
    gam = christoffel(dw[0])
    div = np.trace(DX) + np.einsum("kkj,j->", gam, X)
    return float(div), float(chart.n * V)


def tangency_defect(support: SupportSurface, chart: SpaceForm, p_on_S) -> float:
    """``|g(X, N)|`` at a point of ``S``."""
    x, _ = check_admissible(chart, p_on_S)
    res = abs(float(support_level(support, chart, x)[0]))
    if res > ON_SUPPORT_TOL:
        raise NotOnSupport(f"level-set residual {res:.3e} at {x[0].tolist()}")
    x = x[0]
    X, _ = _killing_field(support, chart, x)
    omega, _ = _omega(chart, x[None])
    N = support_normal(support, chart, x)
    return float(abs(math.exp(omega[0]) * (X @ N)))


def covariant_hessian(chart: SpaceForm, x: np.ndarray, grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Coordinate components of the covariant Hessian, batched over points."""
    _, dw = _omega(chart, x)
    wg = np.einsum("mi,mi->m", dw, grad)
    eye = np.eye(chart.n)
    return hess - (_outer(dw, grad) + _outer(grad, dw)) + wg[:, None, None] * eye


def orthonormal_hessian(chart: SpaceForm, x: np.ndarray, grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Covariant Hessian in the g-orthonormal frame ``e_i = exp(-omega) E_i``."""
    omega, _ = _omega(chart, x)
    return covariant_hessian(chart, x, grad, hess) * np.exp(-2.0 * omega)[:, None, None]


def _field_defects(field: ScalarField, support: SupportSurface, chart: SpaceForm, x: np.ndarray):
    v = field.value(x[None])[0]
    dv = field.grad(x[None])
    H = orthonormal_hessian(chart, x[None], dv, field.hess(x[None]))[0]
    hess_def = float(np.linalg.norm(H + chart.K * v * np.eye(chart.n)))
    return v, dv[0], hess_def


def potential_defects(support: SupportSurface, chart: SpaceForm, p, which: str = "V"):
    """Return ``(hessian_defect, neumann_defect)`` of a potential at ``p``.

    ``hessian_defect = |nabla^2 V + K V g|`` (g-norm).  ``neumann_defect =
    |dV/dN - kappa V|`` is evaluated only when ``p`` lies on ``S``; otherwise
    it is ``None``.  ``which="V0"`` checks the auxiliary ball potential instead,
    for which only the Hessian identity is meaningful.
    """
    x, _ = check_admissible(chart, p)
    x = x[0]
    if which == "V":
        field = support_potential(support, chart)
    elif which == "V0":
        field = auxiliary_potential(chart)
    else:
        raise ValueError(f"unknown potential {which!r}")
    v, dv, hess_def = _field_defects(field, support, chart, x)
    if which == "V0":
        return hess_def, None
    if abs(float(np.ravel(support_level(support, chart, x))[0])) > ON_SUPPORT_TOL:
        return hess_def, None
    omega, _ = _omega(chart, x[None])
    N = support_normal(support, chart, x)
    dVdN = math.exp(-omega[0]) * (dv @ N)
    return hess_def, float(abs(dVdN - support.robin_kappa * v))


def laplace_beltrami(chart: SpaceForm, u: ScalarField, p):
    """``Delta_g u = exp(-2 omega) (Delta u + (n - 2) <grad omega, grad u>)``."""
    x, single = check_admissible(chart, p)
    omega, dw = _omega(chart, x)
    du = u.grad(x)
    lap = np.trace(u.hess(x), axis1=1, axis2=2)
    out = np.exp(-2.0 * omega) * (lap + (chart.n - 2) * np.einsum("mi,mi->m", dw, du))
    return _unwrap(single, out)


def normal_derivative(chart: SpaceForm, u: ScalarField, p, N_euclid) -> np.ndarray:
    """Derivative of ``u`` along the g-unit vector ``exp(-omega) N_euclid``."""
    x, single = check_admissible(chart, p)
    N = np.atleast_2d(np.asarray(N_euclid, dtype=float))
    omega, _ = _omega(chart, x)
    out = np.exp(-omega) * np.einsum("mi,mi->m", u.grad(x), N)
    return _unwrap(single, out)


def curvature_transform(chart: SpaceForm, k_euclid, N_euclid, p):
    """Curvature in ``g`` of a curve/umbilical hypersurface with flat curvature ``k_euclid``.

    Sign convention: a Euclidean circle with its outward normal has
    ``k_euclid = +1/r``; the result is ``exp(-omega) (k + d omega(N))``.
    """
    x, single = check_admissible(chart, p)
    N = np.atleast_2d(np.asarray(N_euclid, dtype=float))
    omega, dw = _omega(chart, x)
    k = np.asarray(k_euclid, dtype=float)
    out = np.exp(-omega) * (k + np.einsum("mi,mi->m", dw, N))
    return _unwrap(single, out)


def umbilical_solution(chart: SpaceForm, center, radius: float) -> ScalarField:
    """Exact ``u`` with ``nabla^2 u = (1/n - K u) g`` vanishing on a model sphere.

    ``u = 1/(nK) + W`` where ``W`` is the potential (``nabla^2 W = -K W g``)
    equal to ``-1/(nK)`` on the Euclidean sphere ``|x - center| = radius``.
    Such ``u`` solves ``Delta u + nK u = 1`` and has constant normal derivative
    on that sphere.
    """
    K, n = chart.K, chart.n
    m = np.asarray(center, dtype=float)
    s = float(m @ m - radius**2)
    w0 = -1.0 / (n * K)
    if chart.model is Model.POINCARE_BALL:
        if abs(1.0 - s) < 1e-14:
            raise ValueError("sphere is tangent to the ideal boundary in a degenerate way")
        a = w0 * (1.0 + s) / (1.0 - s)
        W = ball_radial_potential().scaled(a) + ball_linear_potential(-m * (a + w0))
    elif chart.model is Model.STEREOGRAPHIC_SPHERE:
        a = w0 * (1.0 - s) / (1.0 + s)
        W = sphere_radial_potential().scaled(a) + sphere_linear_potential(m * (a + w0))
    elif chart.model is Model.HALF_SPACE:
        if abs(m[-1]) < 1e-14:
            raise ValueError("a circle centred on the ideal boundary is a geodesic")
        gamma = w0 / (2.0 * m[-1])
        b = -2.0 * gamma * m
        b[-1] = 0.0
        W = half_space_potential(gamma * s, b, gamma)
    else:
        raise UnsupportedCase("umbilical solutions are built for curved models only")
    return W.shifted(1.0 / (n * K))


def ball_to_half_space(x) -> np.ndarray:
    """Isometry from the Poincare ball onto the half space sending ``-E_n`` to infinity.

    ``y = (2 x', 1 - |x|^2) / |x + E_n|^2``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xp = x.copy()
    xp[:, -1] += 1.0
    den = np.einsum("ij,ij->i", xp, xp)
    y = 2.0 * x / den[:, None]
    y[:, -1] = (1.0 - np.einsum("ij,ij->i", x, x)) / den
    return y


# ---------------------------------------------------------------------------
# Pointwise oracle over the supported cases


def oracle_cases(n: int = 2) -> list:
    """``(name, support, chart)`` for the three closed-form cases (equidistant counted with horospheres)."""
    return [
        ("ball_geodesic_sphere", SupportSurface.geodesic_sphere(0.5, -1), SpaceForm.poincare_ball(n)),
        ("sphere_geodesic_sphere", SupportSurface.geodesic_sphere(0.5, 1), SpaceForm.stereographic_sphere(n)),
        ("half_space_horosphere", SupportSurface.horosphere(), SpaceForm.half_space(n)),
        ("half_space_equidistant", SupportSurface.equidistant(0.4), SpaceForm.half_space(n)),
    ]


def sample_points(support: SupportSurface, chart: SpaceForm, count: int, rng: np.random.Generator,
                  on_support: bool = False) -> np.ndarray:
    """Random admissible points of ``B^int`` with ``x_n > 0``, or points of ``S`` itself."""
    n = chart.n
    case = _case(support, chart)
    if case in ("ball_sphere", "spherical_sphere"):
        d = rng.standard_normal((count, n))
        d /= np.linalg.norm(d, axis=1)[:, None]
        d[:, -1] = np.abs(d[:, -1]) + 1e-3
        d /= np.linalg.norm(d, axis=1)[:, None]
        r = support.R_model if on_support else support.R_model * rng.uniform(0.05, 0.98, count) ** (1.0 / n)
        return d * np.atleast_1d(r)[:, None]
    x = np.empty((count, n))
    x[:, :-1] = rng.uniform(-2.0, 2.0, (count, n - 1))
    if support.kind is SupportKind.EQUIDISTANT:
        x[:, 0] = rng.uniform(-2.0, 0.9 / math.tan(support.theta), count)
        base = 1.0 - x[:, 0] * math.tan(support.theta)
    else:
        base = np.ones(count)
    x[:, -1] = base if on_support else base + rng.uniform(0.01, 4.0, count)
    return x


def geometry_oracle(n_samples: int = 1000, seed: int = 0, dims=(2,), cases=None) -> list:
    """Maximum Killing, tangency and potential defects per case over random points."""
    rng = np.random.default_rng(seed)
    out = []
    for n in dims:
        for name, support, chart in (cases if cases is not None else oracle_cases(n)):
            validate_support(support, chart)
            pts = sample_points(support, chart, n_samples, rng)
            on = sample_points(support, chart, n_samples, rng, on_support=True)
            kill = max(killing_defect(support, chart, p) for p in pts)
            div = float(max(abs(np.subtract(*killing_divergence(support, chart, p))) for p in pts))
            tang = max(tangency_defect(support, chart, p) for p in on)
            hessV = max(potential_defects(support, chart, p)[0] for p in pts)
            neuV = max(potential_defects(support, chart, p)[1] for p in on)
            row = {"case": name, "n": n, "killing": kill, "divergence": div, "tangency": tang,
                   "hessian_V": hessV, "neumann_V": neuV}
            if chart.model in (Model.POINCARE_BALL, Model.STEREOGRAPHIC_SPHERE):
                row["hessian_V0"] = max(potential_defects(support, chart, p, "V0")[0] for p in pts)
            out.append(row)
    return out
