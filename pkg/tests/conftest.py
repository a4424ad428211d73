import numpy as np
import pytest
from hypothesis import settings

from toric_clt import BergmanModel, fubini_study, perturbed_potential

settings.register_profile("default", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("default")


@pytest.fixture(scope="session")
def fs1():
    return fubini_study(1)


@pytest.fixture(scope="session")
def fs2():
    return fubini_study(2)


@pytest.fixture(scope="session")
def pfs1():
    return perturbed_potential(fubini_study(1), 0.05)


@pytest.fixture(scope="session")
def pfs2():
    return perturbed_potential(fubini_study(2), 0.05)


@pytest.fixture(scope="session")
def model_fs1(fs1):
    return BergmanModel(fs1)


@pytest.fixture(scope="session")
def model_fs2(fs2):
    return BergmanModel(fs2)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --- acceptance registry: one PASS/FAIL line per criterion at the end of the run ---

_ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = {}


@pytest.fixture(scope="session")
def acceptance(pytestconfig):
    """``record(criterion, title, case, ok, detail)`` collects acceptance outcomes."""
    registry = pytestconfig.stash[_ACCEPTANCE_KEY]

    def record(criterion, title, case, ok, detail=""):
        entry = registry.setdefault(criterion, {"title": title, "cases": []})
        entry["cases"].append((case, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    registry = config.stash.get(_ACCEPTANCE_KEY, {})
    if not registry:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(registry, key=lambda c: int(c[1:])):
        entry = registry[crit]
        cases = entry["cases"]
        ok = all(c[1] for c in cases)
        passed = sum(c[1] for c in cases)
        terminalreporter.write_line(
            f"{crit} {'PASS' if ok else 'FAIL'} {entry['title']} ({passed}/{len(cases)} cases)")
        for case, good, detail in cases:
            if not good:
                terminalreporter.write_line(f"    failed: {case}: {detail}")
