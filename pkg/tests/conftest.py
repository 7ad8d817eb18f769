"""Session-scoped studies shared by the order and acceptance tests."""

import pytest

from mlsapprox.approximation import StudyConfig, run_convergence_study
from mlsapprox.galerkin import GalerkinStudy, galerkin_convergence_study


@pytest.fixture(scope="session")
def radial15_report():
    return run_convergence_study(StudyConfig(lam=1.5, m=2))


@pytest.fixture(scope="session")
def radial3_report():
    return run_convergence_study(StudyConfig(lam=3.0, m=3))


@pytest.fixture(scope="session")
def galerkin_report():
    return galerkin_convergence_study(GalerkinStudy())


ACCEPTANCE = {}


def record_acceptance(label: str, ok: bool, detail: str) -> None:
    line = f"{label}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE[label] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
            terminalreporter.write_line(ACCEPTANCE[key])
