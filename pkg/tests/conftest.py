import pytest

from pairqed.models import reference_params


@pytest.fixture
def pair_params():
    return reference_params(2, n_max=4)


@pytest.fixture
def single_params():
    return reference_params(1, n_max=4)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                lines.append((props["criterion"], outcome.upper(), props.get("detail", "")))
    if lines:
        terminalreporter.section("acceptance criteria")
        for key, outcome, detail in sorted(lines, key=lambda l: int(l[0].split(":")[0])):
            terminalreporter.line(f"[{outcome:6}] criterion {key}  {detail}")
