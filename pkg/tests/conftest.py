import asyncio

import pytest

from aoibench.transport import generate_lab_certificates


def run(coro):
    return asyncio.run(coro)


@pytest.fixture(scope="session")
def certs(tmp_path_factory):
    return generate_lab_certificates(tmp_path_factory.mktemp("pki"))


ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    """Remember the outcome of one acceptance criterion and print it."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
