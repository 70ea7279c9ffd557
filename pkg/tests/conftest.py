import pytest

from lipriors.dsl import load_model

CATALOG = ("exponential", "bernoulli", "poisson", "gaussian")


@pytest.fixture(scope="session")
def models():
    names = CATALOG + ("bernoulli_counts", "normal_mean_scale", "lomax")
    return {n: load_model(n) for n in names}


@pytest.fixture(scope="session")
def families(models):
    from lipriors.maxent import induce_prior_family
    return {n: induce_prior_family(models[n]) for n in CATALOG}


# one line per acceptance criterion, printed at the end of the run
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
