"""Registry of named configurations with expected values and their provenance.

Each expected value carries a provenance tag: ``reference`` (closed-form
value from the analysis), ``derived`` (independent computation or oracle) or
``trivial`` (follows from the definitions).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import UnknownScenario
from .geometry import (
    SpaceForm,
    SupportSurface,
    ScalarField,
    auxiliary_potential,
    ball_linear_potential,
    laplace_beltrami,
    normal_derivative,
    support_normal,
    umbilical_solution,
)
from .mesh import DomainSpec, appendix_two_horospheres, half_ball, tilted_cap, umbilical_cap

REFERENCE = "reference"
DERIVED = "derived"
TRIVIAL = "trivial"
PROVENANCE = (REFERENCE, DERIVED, TRIVIAL)


@dataclass(frozen=True)
class Expected:
    value: object
    provenance: str
    source: str

    def __post_init__(self):
        if self.provenance not in PROVENANCE:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def to_dict(self) -> dict:
        return {"value": self.value, "provenance": self.provenance, "source": self.source}


@dataclass(frozen=True)
class CurveSpec:
    """Parameters of a polyline built by :mod:`spaceform_lab.hypersurface`."""

    kind: str  # "circle" or "cap"
    center: tuple
    radius: float
    bump: float = 0.0
    tilt_deg: float = 0.0

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "radius": self.radius,
                "bump": self.bump, "tilt_deg": self.tilt_deg}

    @classmethod
    def from_dict(cls, d: dict) -> "CurveSpec":
        return cls(d["kind"], tuple(d["center"]), d["radius"], d["bump"], d["tilt_deg"])


@dataclass(frozen=True)
class Scenario:
    id: str
    description: str
    chart: SpaceForm
    support: SupportSurface
    domain: Optional[DomainSpec]
    curve: Optional[CurveSpec]
    coercive: bool
    overdetermined: bool
    default_h: float
    acceptance_h: float
    expected: dict = field(default_factory=dict)

    @property
    def exact_solution(self) -> Optional[ScalarField]:
        """Closed-form solution wired for scenarios that have one."""
        tag = self.expected.get("exact_solution")
        if tag is None:
            return None
        if tag.value == "appendix":
            return appendix_solution(self.chart, self.support)
        if tag.value == "umbilical":
            return umbilical_solution(self.chart, self.domain.params["center"], self.domain.params["radius"])
        return None

    def build_curve(self, m: int = 400):
        from .hypersurface import cap_curve, circle_curve

        cs = self.curve
        if cs is None:
            raise ValueError(f"scenario {self.id} has no curve")
        if cs.kind == "circle":
            return circle_curve(self.chart, cs.center, cs.radius, m, self.support)
        return cap_curve(self.chart, self.support, cs.center, cs.radius, m, bump=cs.bump, tilt_deg=cs.tilt_deg)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "description": self.description,
            "chart": self.chart.to_dict(),
            "support": self.support.to_dict(),
            "domain": self.domain.to_dict() if self.domain is not None else None,
            "curve": self.curve.to_dict() if self.curve is not None else None,
            "coercive": self.coercive,
            "overdetermined": self.overdetermined,
            "default_h": self.default_h,
            "acceptance_h": self.acceptance_h,
            "expected": {k: v.to_dict() for k, v in self.expected.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(
            d["id"],
            d["description"],
            SpaceForm.from_dict(d["chart"]),
            SupportSurface.from_dict(d["support"]),
            DomainSpec.from_dict(d["domain"]) if d["domain"] is not None else None,
            CurveSpec.from_dict(d["curve"]) if d["curve"] is not None else None,
            bool(d["coercive"]),
            bool(d["overdetermined"]),
            float(d["default_h"]),
            float(d["acceptance_h"]),
            {k: Expected(v["value"], v["provenance"], v["source"]) for k, v in d["expected"].items()},
        )

    @classmethod
    def from_json(cls, s: str) -> "Scenario":
        return cls.from_dict(json.loads(s))


def appendix_solution(chart: Optional[SpaceForm] = None, support: Optional[SupportSurface] = None) -> ScalarField:
    """``u = (V0 - V - 1) / n`` on the two-horosphere lens, ``V = 2 x_n / (1 - |x|^2)``."""
    chart = appendix_two_horospheres().chart if chart is None else chart
    en = np.zeros(chart.n)
    en[-1] = 1.0
    V0 = auxiliary_potential(chart)
    V = ball_linear_potential(en)
    return (V0 + V.scaled(-1.0)).shifted(-1.0).scaled(1.0 / chart.n)


def _registry() -> dict:
    H = SpaceForm.half_space(2)
    S = SupportSurface.horosphere()
    out = {}

    spec = appendix_two_horospheres()
    out["appendix_two_horospheres"] = Scenario(
        "appendix_two_horospheres",
        "Lens between two orthogonal horocycles of the Poincare disk with a closed-form solution",
        spec.chart, spec.support, spec, None, True, True, 0.05, 0.01,
        {
            "c": Expected(0.5, REFERENCE, "u_nu = 1/n on Sigma for u = (V0 - V - 1)/n"),
            "exact_solution": Expected("appendix", REFERENCE, "u = (V0 - V - 1)/n"),
            "lambda1_bound": Expected(-2.0, REFERENCE, "lambda_1 >= -n off geodesic-sphere supports"),
            "mu1_bound": Expected(1.0, REFERENCE, "mu_1 >= 1"),
            "hkr_equality": Expected(True, TRIVIAL, "Sigma is a horocycle meeting T orthogonally"),
        },
    )

    spec = umbilical_cap(H, S, (0.0, 1.0), 0.5)
    out["horocycle_cap_orthogonal"] = Scenario(
        "horocycle_cap_orthogonal",
        "Half disk of radius 1/2 centred on the horocycle x_2 = 1, meeting it orthogonally",
        H, S, spec, CurveSpec("cap", (0.0, 1.0), 0.5), True, True, 0.05, 0.01,
        {
            "c": Expected(0.25, DERIVED, "c = 1/(n H_1) with H_1 = h/r = 2; exact umbilical solution"),
            "exact_solution": Expected("umbilical", DERIVED, "u = 1/(nK) + W with W a potential"),
            "lambda1_bound": Expected(-2.0, REFERENCE, "lambda_1 > -n for horosphere supports"),
            "mu1_bound": Expected(1.0, REFERENCE, "mu_1 > 1 for horosphere supports"),
            "hkr_equality": Expected(True, REFERENCE, "umbilical piece meeting S orthogonally"),
        },
    )

    spec = tilted_cap(H, S, (0.0, 1.0), 2.0, -20.0)
    out["horocycle_cap_tilted"] = Scenario(
        "horocycle_cap_tilted",
        "Disk of radius 2 meeting the horocycle x_2 = 1 at 70 degrees between outward normals",
        H, S, spec, CurveSpec("cap", (0.0, 1.0), 2.0, tilt_deg=-20.0), True, False, 0.08, 0.04,
        {
            "lambda1_bound": Expected(-2.0, REFERENCE, "lambda_1 > -n for horosphere supports"),
            "mu1_bound": Expected(1.0, REFERENCE, "mu_1 > 1 for horosphere supports"),
            "hkr_equality": Expected(False, TRIVIAL, "Sigma is not orthogonal to S"),
            "contact_angle_deg": Expected(70.0, TRIVIAL, "centre raised by r sin 20 deg; interior corner 110 deg"),
        },
    )

    spec = half_ball(0.5, -1, 0.0)
    out["half_ball_geodesic"] = Scenario(
        "half_ball_geodesic",
        "Half of the geodesic disk |x| < 1/2 of the Poincare disk; Sigma is the diameter",
        spec.chart, spec.support, spec, None, False, False, 0.05, 0.02,
        {
            "lambda1_bound": Expected(-2.0, REFERENCE, "lambda_1 = nK on the half ball"),
            "mu1_bound": Expected(1.0, REFERENCE, "mu_1 = 1 on the half ball, eigenfunction V"),
            "bound_attained": Expected(True, REFERENCE, "equality case of both eigenvalue bounds"),
        },
    )

    spec = half_ball(0.5, -1, 0.05)
    out["half_ball_sub"] = Scenario(
        "half_ball_sub",
        "Strict subdomain {|x| < 1/2, x_2 > 0.05} of the geodesic half disk",
        spec.chart, spec.support, spec, None, True, False, 0.05, 0.02,
        {
            "lambda1_bound": Expected(-2.0, REFERENCE, "lambda_1 > nK off the half ball"),
            "mu1_bound": Expected(1.0, REFERENCE, "mu_1 > 1 off the half ball"),
            "bound_attained": Expected(False, REFERENCE, "strict inequality for proper subdomains"),
        },
    )

    out["closed_umbilical_circle"] = Scenario(
        "closed_umbilical_circle",
        "Closed geodesic circle: Euclidean circle centre (0, 2) radius 1 in the half plane",
        H, S, None, CurveSpec("circle", (0.0, 2.0), 1.0), True, False, 0.05, 0.05,
        {
            "H1": Expected(2.0, DERIVED, "h/r rule for circles in the half plane"),
            "hkr_equality": Expected(True, DERIVED, "closed umbilical curve"),
        },
    )

    out["perturbed_cap"] = Scenario(
        "perturbed_cap",
        "Cap r = 0.5 (1 + 0.05 cos 2 phi) about (0, 1); orthogonal endpoints, not umbilical",
        H, S, None, CurveSpec("cap", (0.0, 1.0), 0.5, bump=0.05), True, False, 0.02, 0.02,
        {"hkr_equality": Expected(False, DERIVED, "non-umbilical curve gives a positive gap")},
    )
    return out


REGISTRY = _registry()


def scenario_ids() -> list:
    return list(REGISTRY)


def load_scenario(scenario_id: str) -> Scenario:
    try:
        return REGISTRY[scenario_id]
    except KeyError:
        raise UnknownScenario(f"unknown scenario {scenario_id!r}; known: {', '.join(REGISTRY)}") from None


def coercive_scenarios() -> list:
    return [s for s in REGISTRY.values() if s.domain is not None and s.coercive]


# ---------------------------------------------------------------------------
# Pointwise residuals of the closed-form solution


def _lens_arcs():
    spec = appendix_two_horospheres()
    return spec, spec.arcs()


def _arc_samples(arc, m: int) -> np.ndarray:
    # arc-length uniform on circles is angle uniform; stay off the corners
    t = arc.t0 + (arc.t1 - arc.t0) * (np.arange(m) + 0.5) / m
    return arc.curve.point(t)


def appendix_residuals(n_samples: int = 10_000, seed: int = 0) -> dict:
    """Max pointwise residuals of the closed-form lens solution.

    Interior points are drawn by rejection inside the lens; Sigma and T
    points are arc-length uniform.  All derivatives are analytic.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    spec, arcs = _lens_arcs()
    chart, support = spec.chart, spec.support
    n, K = chart.n, chart.K
    u = appendix_solution(chart, support)
    rng = np.random.default_rng(seed)

    sig = next(a for a in arcs if a.tag == "sigma")
    rob = next(a for a in arcs if a.tag == "robin")
    c1, r1 = np.asarray(sig.curve.center), sig.curve.radius
    c2, r2 = np.asarray(rob.curve.center), rob.curve.radius
    pts = np.zeros((0, 2))
    while len(pts) < n_samples:
        cand = c1 + r1 * (2.0 * rng.random((2 * n_samples, 2)) - 1.0)
        keep = (np.linalg.norm(cand - c1, axis=1) < r1) & (np.linalg.norm(cand - c2, axis=1) < r2)
        pts = np.vstack([pts, cand[keep]])
    pts = pts[:n_samples]
    pde = np.abs(laplace_beltrami(chart, u, pts) + n * K * u(pts) - 1.0)

    xs = _arc_samples(sig, n_samples)
    nu = (xs - c1) / r1
    dirichlet = np.abs(u(xs))
    neumann = np.abs(normal_derivative(chart, u, xs, nu) - 1.0 / n)

    xt = _arc_samples(rob, n_samples)
    N = support_normal(support, chart, xt)
    robin = np.abs(normal_derivative(chart, u, xt, N) - support.robin_kappa * u(xt))
    r2t = np.einsum("md,md->m", xt, xt)
    closed_T = np.abs(u(xt) - (5.0 * r2t - 1.0) / (n * (1.0 - r2t)))
    return {
        "n_samples": int(n_samples),
        "seed": int(seed),
        "pde": float(pde.max()),
        "dirichlet": float(dirichlet.max()),
        "neumann": float(neumann.max()),
        "robin": float(robin.max()),
        "closed_form_on_T": float(closed_T.max()),
    }
