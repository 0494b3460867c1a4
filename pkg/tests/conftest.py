import math

import numpy as np
import pytest

from swarmfield.scenario import build_scenario

PAPER_WIND = (-0.2, 0.7)
PAPER_MEAS = {"cov_x": 0.01, "cov_y": 0.01, "cov_theta": 0.01}


def scenario_dict(agents, **kw):
    raw = {"steps": 100, "agents": agents}
    raw.update(kw)
    return raw


def make_scenario(agents, **kw):
    return build_scenario(scenario_dict(agents, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_agents():
    """A head-on pair whose goals are far apart."""
    return [
        {"x0": -10.0, "y0": 0.0, "theta0": 0.0, "goal_x": 10.0, "goal_y": 0.0},
        {"x0": 10.0, "y0": 0.0, "theta0": math.pi, "goal_x": -10.0, "goal_y": 0.0},
    ]


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        ok, detail = results[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
