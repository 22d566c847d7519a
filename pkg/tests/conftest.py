"""Shared, cached meshes and solutions so expensive fine-mesh solves run once per session."""

from functools import lru_cache

import pytest

from spaceform_lab.fem import assemble, solve_mixed_bvp
from spaceform_lab.mesh import build_domain
from spaceform_lab.scenarios import load_scenario

ACCEPTANCE_LINES = []


@lru_cache(maxsize=None)
def scenario_mesh(scenario_id, h):
    return build_domain(load_scenario(scenario_id).domain, h)


@lru_cache(maxsize=None)
def scenario_solution(scenario_id, h):
    sc = load_scenario(scenario_id)
    system = assemble(scenario_mesh(scenario_id, h), sc.chart, sc.support)
    return system, solve_mixed_bvp(system)


@pytest.fixture
def record():
    """Record and print one pass/fail line for an acceptance criterion, then assert it."""

    def _record(number, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
