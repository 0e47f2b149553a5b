import os

import pytest
from hypothesis import HealthCheck, settings

os.environ.setdefault("STAMP_WORKERS", "1")

settings.register_profile(
    "stamp", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("stamp")


@pytest.fixture(scope="session")
def billiards():
    from stamp.domains.billiards import Billiards
    return Billiards()


@pytest.fixture(scope="session")
def pusher():
    from stamp.domains.pusher import Pusher
    return Pusher()


@pytest.fixture(scope="session")
def pickplace():
    from stamp.domains.pickplace import PickPlace
    return PickPlace()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
