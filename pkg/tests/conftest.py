import pytest
from hypothesis import settings

from recnet.simulate import GenConfig, SimConfig, generate_params, simulate_sde

settings.register_profile("recnet", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("recnet")


def make_instance(n=10, T=50, seed=0, sigma=0.5, p_link=None):
    params = generate_params(GenConfig(n=n, seed=seed, sigma=sigma, p_link=p_link))
    obs = simulate_sde(params, SimConfig(t_end=T, seed=seed + 1000))
    return params, obs


@pytest.fixture
def small_instance():
    return make_instance(n=6, T=40, seed=3, p_link=0.3)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
