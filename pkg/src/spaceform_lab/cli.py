"""Command-line entry point: ``spaceform-lab <command> [options]``.

Exit codes: 0 when every enabled check passes, 1 when a check fails (or the
problem is not coercive), 2 on usage or I/O errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .errors import IndefiniteBulk, LabError, NonpositiveMeanCurvature, NotCoercive, UnknownScenario
from .fem import assemble, manufactured_error, normal_derivative_stats, solve_mixed_bvp
from .geometry import Model, SpaceForm, SupportSurface, geometry_oracle, oracle_cases, validate_support
from .hypersurface import (
    alexandrov_classify,
    hkr_gap,
    minkowski_residual,
    principal_curvatures,
    read_polyline,
)
from .identities import (
    master_identity_residual,
    p_function,
    pohozaev_residual,
    subharmonicity_check,
    umbilicity_defect,
)
from .mesh import Mesh, build_domain, mesh_quality, polygon_mesh, refine
from .report import heatmap_svg, loglog_svg, write_csv, write_json, write_text
from .scenarios import Scenario, load_scenario
from .spectra import potential_alignment, robin_dirichlet_spectrum, steklov_dirichlet_spectrum

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ENV_OUTPUT = "SPACEFORM_LAB_OUTPUT"
COMMANDS = ("geometry-verify", "solve", "spectrum", "identities", "hkr", "convergence")
FORMATS = ("json", "csv", "svg")
GEOMETRY_TOL = 1e-10
MAX_PRINCIPLE_TOL = 1e-8


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    scenarios: list = field(default_factory=list)
    mesh: Optional[str] = None
    polyline: Optional[str] = None
    h: Optional[float] = None
    refinements: Optional[int] = None
    kappa: Optional[float] = None
    model: Optional[str] = None
    output_dir: str = "spaceform_out"
    formats: list = field(default_factory=lambda: ["json"])
    seed: int = 0
    parallel: bool = False
    graded_corner: bool = False
    samples: int = 1000
    segments: int = 400
    tolerances: dict = field(default_factory=dict)
    support: Optional[dict] = None

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.h is not None and not self.h > 0:
            raise UsageError("--h must be positive")
        if self.refinements is not None and self.refinements < 0:
            raise UsageError("--refinements must be >= 0")
        bad = set(self.formats) - set(FORMATS)
        if bad:
            raise UsageError(f"unknown formats {sorted(bad)}")
        if self.model is not None and self.model not in {m.value for m in Model}:
            raise UsageError(f"unknown model {self.model!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spaceform-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--scenario", action="append", default=[],
                       help="scenario id (repeatable or comma separated)")
        s.add_argument("--mesh", help="mesh JSON file")
        s.add_argument("--polyline", help="polyline JSON file (hkr)")
        s.add_argument("--h", type=float, help="initial mesh size")
        s.add_argument("--refinements", type=int, help="number of uniform refinements")
        s.add_argument("--kappa", type=float, help="override the Robin coefficient")
        s.add_argument("--model", help="restrict or set the model chart")
        s.add_argument("--output-dir", default=None)
        s.add_argument("--format", default="json", help="comma separated subset of json,csv,svg")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--parallel", action="store_true")
        s.add_argument("--graded-corner", action="store_true", help="grade the mesh toward Gamma")
        s.add_argument("--samples", type=int, default=1000, help="points per case (geometry-verify)")
        s.add_argument("--segments", type=int, default=400, help="polyline segments (hkr)")
        s.add_argument("--config", help="JSON file with extra settings (tolerances, support)")
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    scen = [s for item in args.scenario for s in item.split(",") if s]
    cfg = RunConfig(
        command=args.command,
        scenarios=scen,
        mesh=args.mesh,
        polyline=args.polyline,
        h=args.h,
        refinements=args.refinements,
        kappa=args.kappa,
        model=args.model,
        output_dir=args.output_dir or "spaceform_out",
        formats=[f for f in args.format.split(",") if f],
        seed=args.seed,
        parallel=args.parallel,
        graded_corner=args.graded_corner,
        samples=args.samples,
        segments=args.segments,
    )
    if args.config:
        try:
            extra = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        cfg.tolerances.update(extra.get("tolerances", {}))
        cfg.support = extra.get("support", cfg.support)
        cfg.model = extra.get("model", cfg.model)
    env = os.environ.get(ENV_OUTPUT)
    if env:
        cfg.output_dir = env
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# Helpers


def _check(name: str, passed: Optional[bool], **info) -> dict:
    return {"name": name, "pass": None if passed is None else bool(passed), **info}


def _exit_code(checks: list) -> int:
    return EXIT_FAIL if any(c["pass"] is False for c in checks) else EXIT_OK


def _tol(cfg: RunConfig, key: str, default: float) -> float:
    return float(cfg.tolerances.get(key, default))


def _mesh_input(cfg: RunConfig, scenario: Optional[Scenario]):
    """Mesh, chart and support from ``--mesh`` (support from the file or the scenario)."""
    try:
        d = json.loads(Path(cfg.mesh).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read mesh: {exc}") from exc
    mesh = Mesh.from_dict(d)
    if "support" in d:
        support = SupportSurface.from_dict(d["support"])
    elif scenario is not None:
        support = scenario.support
    else:
        raise UsageError("the mesh file carries no support; pass --scenario as well")
    validate_support(support, mesh.chart)
    return mesh, mesh.chart, support


def _levels(cfg: RunConfig, scenario: Optional[Scenario], h: float, refinements: int):
    if cfg.mesh:
        mesh, chart, support = _mesh_input(cfg, scenario)
    else:
        if scenario is None or scenario.domain is None:
            raise UsageError("a scenario with a domain (or --mesh) is required")
        chart, support = scenario.chart, scenario.support
        mesh = build_domain(scenario.domain, h, graded=cfg.graded_corner)
    out = [mesh]
    for _ in range(refinements):
        out.append(refine(out[-1], graded=cfg.graded_corner))
    return out, chart, support


def _solve(mesh, chart, support, kappa):
    system = assemble(mesh, chart, support)
    return system, solve_mixed_bvp(system, kappa=kappa)


def _default_h(cfg: RunConfig, scenario: Optional[Scenario], fallback: float = 0.05) -> float:
    if cfg.h is not None:
        return cfg.h
    return scenario.default_h if scenario is not None else fallback


# ---------------------------------------------------------------------------
# Commands. Each returns a report dict with a "checks" list.


def cmd_geometry_verify(cfg: RunConfig, scenario: Optional[Scenario], out: Path) -> dict:
    tol = _tol(cfg, "geometry", GEOMETRY_TOL)
    if cfg.support is not None:
        try:
            support = SupportSurface.from_dict(cfg.support)
            model = Model(cfg.model) if cfg.model else Model.HALF_SPACE
            K = 1 if model is Model.STEREOGRAPHIC_SPHERE else -1
            chart = SpaceForm(K, 2, model)
            validate_support(support, chart)
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"rejected support: {exc}") from exc
        cases = [("custom", support, chart)]
    else:
        cases = [c for c in oracle_cases(2) if cfg.model is None or c[2].model.value == cfg.model]
    rows = geometry_oracle(cfg.samples, cfg.seed, cases=cases)
    checks = []
    for row in rows:
        for key, val in row.items():
            if key in ("case", "n"):
                continue
            checks.append(_check(f"{row['case']}:{key}", val < tol, value=val, tolerance=tol))
    return {"cases": rows, "checks": checks}


def cmd_solve(cfg: RunConfig, scenario: Optional[Scenario], out: Path) -> dict:
    h = _default_h(cfg, scenario)
    levels, chart, support = _levels(cfg, scenario, h, cfg.refinements or 0)
    exact = scenario.exact_solution if scenario is not None and not cfg.mesh else None
    rows, checks, sol = [], [], None
    for k, mesh in enumerate(levels):
        try:
            system, sol = _solve(mesh, chart, support, cfg.kappa)
        except NotCoercive as exc:
            checks.append(_check("coercive", False, level=k, message=str(exc)))
            return {"levels": rows, "checks": checks}
        c_hat, rel = normal_derivative_stats(sol)
        row = {"level": k, "h_max": mesh.h_max, "triangles": int(len(mesh.triangles)),
               "c_hat": c_hat, "rel_std": rel, "max_u": float(sol.u.max())}
        if exact is not None:
            row["errL2"], row["errH1"] = manufactured_error(sol, exact)
        rows.append(row)
        print(f"level {k}: h_max={mesh.h_max:.4g} c_hat={c_hat:.6g} rel_std={rel:.3g} max(u)={row['max_u']:.3g}")
    # every level factored with positive pivots, so the discrete form is coercive
    worst = max(r["max_u"] for r in rows)
    checks.append(_check("maximum_principle", worst <= MAX_PRINCIPLE_TOL, value=worst, tolerance=MAX_PRINCIPLE_TOL))
    if exact is not None and len(rows) > 1:
        e = [r["errL2"] for r in rows]
        checks.append(_check("errL2_decreasing", all(b < a for a, b in zip(e, e[1:])), values=e))
    if "json" in cfg.formats:
        write_text(out / "solution.json", sol.to_json())
    if "csv" in cfg.formats:
        keys = list(rows[0])
        write_csv(out / "solve_levels.csv", keys, [[r[k] for k in keys] for r in rows])
    if "svg" in cfg.formats:
        write_text(out / "solution.svg", heatmap_svg(levels[-1], sol.u, title="u"))
    return {"levels": rows, "mesh_quality": mesh_quality(levels[-1]), "checks": checks}


def cmd_spectrum(cfg: RunConfig, scenario: Optional[Scenario], out: Path) -> dict:
    h = _default_h(cfg, scenario)
    levels, chart, support = _levels(cfg, scenario, h, cfg.refinements or 0)
    mesh = levels[-1]
    system = assemble(mesh, chart, support)
    rd = robin_dirichlet_spectrum(system, kappa=cfg.kappa, seed=cfg.seed)
    lam, bound = float(rd.eigenvalues[0]), rd.bound_reference
    checks = []
    report = {"h_max": mesh.h_max, "robin_dirichlet": rd.to_dict()}
    try:
        sd = steklov_dirichlet_spectrum(system, kappa=cfg.kappa)
        mu = float(sd.eigenvalues[0])
        report["steklov_dirichlet"] = sd.to_dict()
        report["steklov_dirichlet"]["potential_alignment"] = potential_alignment(system, sd.eigenvectors[:, 0])
    except IndefiniteBulk as exc:
        mu = None
        report["steklov_dirichlet"] = {"error": str(exc)}
    attained = scenario is not None and scenario.expected.get("bound_attained") is not None \
        and scenario.expected["bound_attained"].value is True
    rel = _tol(cfg, "eigen_relative", 2e-2)
    if attained:
        checks.append(_check("lambda1_equality", abs(lam - bound) <= rel * abs(bound), value=lam, bound=bound))
        checks.append(_check("mu1_equality", mu is not None and abs(mu - 1.0) <= rel, value=mu, bound=1.0))
    else:
        checks.append(_check("lambda1_bound", lam > bound, value=lam, bound=bound))
        checks.append(_check("mu1_bound", mu is not None and mu > 1.0, value=mu, bound=1.0))
    print(f"lambda_1={lam:.6g} (bound {bound:g})  mu_1={mu if mu is None else f'{mu:.6g}'} (bound 1)")
    if "svg" in cfg.formats:
        write_text(out / "robin_eigenvector.svg", heatmap_svg(mesh, rd.eigenvectors[:, 0], title="phi_1"))
    return {**report, "checks": checks}


def cmd_identities(cfg: RunConfig, scenario: Optional[Scenario], out: Path) -> dict:
    h = _default_h(cfg, scenario)
    levels, chart, support = _levels(cfg, scenario, h, cfg.refinements or 0)
    mesh = levels[-1]
    h_ref = scenario.acceptance_h if scenario is not None else 0.01
    overdetermined = scenario is not None and scenario.overdetermined
    _, sol = _solve(mesh, chart, support, cfg.kappa)
    c_hat, rel_std = normal_derivative_stats(sol)
    pf = p_function(sol, mesh, chart)
    poho = pohozaev_residual(sol, pf, support, h_ref=h_ref)
    master = master_identity_residual(sol, pf, support, h_ref=h_ref)
    if not overdetermined:
        master = type(master)(master.name, master.value, master.normalizer, None, master.details)
    sub = subharmonicity_check(pf, sol, mesh)
    sub = type(sub)(sub.name, sub.value, sub.normalizer, None, sub.details)
    umb = umbilicity_defect(mesh, c_hat, tolerance=2e-2 if overdetermined else None)
    reports = [poho, master, sub, umb]
    checks = [_check(r.name, r.passed, relative=r.relative, tolerance=r.tolerance) for r in reports]
    notes = []
    if poho.passed is False:
        notes.append(
            f"Pohozaev residual {poho.relative:.3g} exceeds {poho.tolerance:.3g}: the normal derivative on "
            f"Sigma varies (rel_std {rel_std:.3g}), so no constant c satisfies the overdetermined condition."
        )
    for r in reports:
        print(f"{r.name}: relative={r.relative:.3g} pass={r.passed}")
    return {"h_max": mesh.h_max, "c_hat": c_hat, "rel_std": rel_std,
            "reports": [r.to_dict() for r in reports], "notes": notes, "checks": checks}


def cmd_hkr(cfg: RunConfig, scenario: Optional[Scenario], out: Path) -> dict:
    if cfg.polyline:
        try:
            curve = read_polyline(cfg.polyline)
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise UsageError(f"cannot read polyline: {exc}") from exc
        if curve.support is None:
            if scenario is None:
                raise UsageError("the polyline carries no support; pass --scenario as well")
            curve = type(curve)(curve.chart, curve.vertices, curve.closed, scenario.support)
    elif scenario is not None and scenario.curve is not None:
        curve = scenario.build_curve(cfg.segments * 2 ** (cfg.refinements or 0))
    else:
        raise UsageError("hkr needs --polyline or a scenario with a curve")
    h = cfg.h if cfg.h is not None else 0.02
    checks = []
    cd = principal_curvatures(curve)
    mink = minkowski_residual(curve, k=1)
    checks.append(_check("minkowski", mink.passed, relative=mink.relative))
    report = {"segments": int(len(curve.vertices) - (0 if curve.closed else 1)), "minkowski": mink.to_dict(),
              "H1_min": float(cd.H[:, 1].min()), "H1_max": float(cd.H[:, 1].max())}
    try:
        enclosed = polygon_mesh(curve.chart, curve.vertices, h)
        gap = hkr_gap(curve, enclosed, tolerance=None)
        report["hkr"] = gap.to_dict()
        equality = scenario is not None and not cfg.polyline and scenario.expected.get("hkr_equality") is not None \
            and scenario.expected["hkr_equality"].value
        tol = _tol(cfg, "hkr_relative", 1e-2)
        if mink.details.get("not_orthogonal"):
            checks.append(_check("hkr_inequality", None, relative=gap.relative,
                                 note="not a free-boundary curve; the inequality is not asserted"))
        elif equality:
            checks.append(_check("hkr_equality", abs(gap.relative) < tol, relative=gap.relative, tolerance=tol))
        else:
            checks.append(_check("hkr_inequality", gap.relative > -tol, relative=gap.relative, tolerance=tol))
    except NonpositiveMeanCurvature as exc:
        report["hkr"] = {"error": str(exc)}
        checks.append(_check("hkr_precondition", False, message=str(exc)))
    report["alexandrov"] = alexandrov_classify(curve)
    print(f"minkowski relative={mink.relative:.3g}  hkr={report['hkr']}")
    return {**report, "checks": checks}


def cmd_convergence(cfg: RunConfig, scenario: Optional[Scenario], out: Path) -> dict:
    if scenario is None or scenario.exact_solution is None:
        raise UsageError("convergence needs a scenario with a closed-form solution")
    h = cfg.h if cfg.h is not None else 0.1
    nref = cfg.refinements if cfg.refinements is not None else 4
    levels, chart, support = _levels(cfg, scenario, h, nref)
    exact = scenario.exact_solution
    rows = []
    for k, mesh in enumerate(levels):
        _, sol = _solve(mesh, chart, support, cfg.kappa)
        eL2, eH1 = manufactured_error(sol, exact)
        c_hat, rel = normal_derivative_stats(sol)
        rate = math.nan
        if rows:
            rate = math.log(rows[-1]["errL2"] / eL2) / math.log(rows[-1]["h_max"] / mesh.h_max)
        rows.append({"level": k, "h_max": mesh.h_max, "errL2": eL2, "errH1": eH1, "rate": rate, "c_hat": c_hat})
        print(f"level {k}: h_max={mesh.h_max:.4g} errL2={eL2:.3e} errH1={eH1:.3e} rate={rate:.3f}")
    ratios = [a["errL2"] / b["errL2"] for a, b in zip(rows, rows[1:])]
    min_ratio = _tol(cfg, "l2_ratio", 2.5)
    checks = [
        _check("errL2_ratio", all(r >= min_ratio for r in ratios), ratios=ratios, minimum=min_ratio),
        _check("errH1_decreasing", all(b["errH1"] < a["errH1"] for a, b in zip(rows, rows[1:]))),
    ]
    if "c" in scenario.expected:
        c = float(scenario.expected["c"].value)
        ch = rows[-1]["c_hat"]
        checks.append(_check("c_hat", abs(ch - c) <= 0.02 * c, value=ch, expected=c))
    header = ["level", "h_max", "errL2", "errH1", "rate"]
    if "csv" in cfg.formats:
        write_csv(out / "convergence.csv", header, [[r[k] for k in header] for r in rows])
    if "svg" in cfg.formats:
        write_text(out / "convergence.svg", loglog_svg([r["h_max"] for r in rows],
                                                       {"errL2": [r["errL2"] for r in rows],
                                                        "errH1": [r["errH1"] for r in rows]},
                                                       title=f"convergence: {scenario.id}"))
    return {"levels": rows, "ratios": ratios, "checks": checks}


HANDLERS = {
    "geometry-verify": cmd_geometry_verify,
    "solve": cmd_solve,
    "spectrum": cmd_spectrum,
    "identities": cmd_identities,
    "hkr": cmd_hkr,
    "convergence": cmd_convergence,
}


def _label(cfg: RunConfig, scenario_id: Optional[str]) -> str:
    if scenario_id:
        return scenario_id
    for path in (cfg.mesh, cfg.polyline):
        if path:
            return Path(path).stem
    return "default"


def run_one(cfg: RunConfig, scenario_id: Optional[str]) -> int:
    """Run one command on one target and write ``<output>/<label>/<command>.json``."""
    out = Path(cfg.output_dir) / _label(cfg, scenario_id)
    try:
        scenario = load_scenario(scenario_id) if scenario_id else None
        report = HANDLERS[cfg.command](cfg, scenario, out)
    except (UsageError, UnknownScenario, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LabError as exc:
        report = {"checks": [_check(type(exc).__name__, False, message=str(exc))]}
    report["config"] = {**asdict(cfg), "scenario": scenario_id}
    code = _exit_code(report["checks"])
    report["exit_code"] = code
    try:
        if "json" in cfg.formats:
            write_json(out / f"{cfg.command}.json", report)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for c in report["checks"]:
        if c["pass"] is not None:
            print(f"[{'PASS' if c['pass'] else 'FAIL'}] {c['name']}")
    return code


def _default_targets(cfg: RunConfig) -> list:
    if cfg.scenarios:
        return cfg.scenarios
    if cfg.command == "geometry-verify" or cfg.mesh or cfg.polyline:
        return [None]
    defaults = {"hkr": "closed_umbilical_circle"}
    return [defaults.get(cfg.command, "appendix_two_horospheres")]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    targets = _default_targets(cfg)
    if cfg.parallel and len(targets) > 1:
        with ProcessPoolExecutor() as pool:
            codes = list(pool.map(run_one, [cfg] * len(targets), targets))
    else:
        codes = [run_one(cfg, t) for t in targets]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
