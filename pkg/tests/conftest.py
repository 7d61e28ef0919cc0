import random

import pytest

from atnet.crypto import Keypair


def keypair(label: str) -> Keypair:
    return Keypair.generate(random.Random(f"key:{label}"))


@pytest.fixture
def key():
    return keypair("default")


@pytest.fixture
def rng():
    return random.Random(1234)


# one line per acceptance criterion, shown after the test summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda l: int(l.split()[1].rstrip("."))):
            terminalreporter.write_line(line)
