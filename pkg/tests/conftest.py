import numpy as np
import pytest

from msif import kernels
from msif.data.synth import AgentSpec, GeneratorConfig, generate_scene

BACKENDS = kernels.backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def two_agent_scene():
    cfg = GeneratorConfig(n_frames=20, agents=(
        AgentSpec(40, 40, 1.2, 0.5),
        AgentSpec(110, 70, -0.8, 0.3, 0.04, 12, 9, 0.5),
    ))
    return generate_scene(cfg, 3)


@pytest.fixture(scope="session")
def small_scenes():
    cfg = GeneratorConfig(n_frames=21, n_objects=3, n_scenes=6)
    return [generate_scene(cfg, s) for s in range(6)]


VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(number, name, ok, detail, soft=False):
        status = "PASS" if ok else ("WARN" if soft else "FAIL")
        line = f"criterion {number} [{status}] {name}: {detail}"
        VERDICTS.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(VERDICTS):
            terminalreporter.write_line(line)
