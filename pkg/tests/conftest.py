import numpy as np
import pytest
from hypothesis import settings

from cachegain.model import Demand, Network, Request

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

A, B, C = 0, 1, 2


def make_triangle(caps=1, budget=2) -> tuple[Network, Demand]:
    """Nodes a, b, c; one item served at c; request a -> b -> c with rate 1.

    Reverse hop weights are w_ba = 1 and w_cb = 2 (C0 = 3); the direct a-c
    link costs 10 so routing always goes through b.
    """
    net = Network.build(3, [(A, B, 1.0), (B, C, 2.0), (A, C, 10.0)], [{C}], caps, budget)
    return net, Demand((Request(0, (A, B, C)),), np.ones(1))


@pytest.fixture
def triangle():
    return make_triangle()


@pytest.fixture
def half_half():
    """y_a = y_b = 0.5 with the server copy at c."""
    return np.array([[0.5], [0.5], [1.0]])


# --- acceptance report -------------------------------------------------------------

_verdicts: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the terminal summary and echo it."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        _verdicts.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_verdicts, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
