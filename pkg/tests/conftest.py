import numpy as np
import pytest

from tae.scenario import AgentTrack, Lane, Scenario, SynthConfig, synth_generate


def straight_lane(lane_id, y, length=100.0, spacing=2.5, **kw):
    x = np.arange(0.0, length + 1e-9, spacing)
    return Lane(lane_id, 3.5, np.stack([x, np.full_like(x, y)], axis=1), **kw)


def uniform_track(agent_id, start, velocity, lane, horizon=30, ego=False):
    t = np.arange(20 + horizon)[:, None] * 0.1
    pts = np.asarray(start, float) + t * np.asarray(velocity, float)
    return AgentTrack(agent_id, pts[:20], pts[20:], lane, ego=ego)


def micro_scenario(gap=10.0, horizon=30):
    """Two agents on a two-lane straight road."""
    lanes = [straight_lane("L", 3.5, right="R"), straight_lane("R", 0.0, left="L")]
    agents = [uniform_track("a0", (20.0, 0.0), (8.0, 0.0), "R", horizon, ego=True),
              uniform_track("a1", (20.0 + gap, 3.5), (7.0, 0.3), "L", horizon)]
    return Scenario("micro", lanes, agents)


@pytest.fixture
def micro():
    return micro_scenario()


@pytest.fixture(scope="session")
def small_set():
    return synth_generate(SynthConfig(n=12, seed=3, label_frac=0.5))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
