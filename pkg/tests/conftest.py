import numpy as np
import pytest

from dcsplit.constrained import solve_constrained
from dcsplit.costs import delay_cost_table
from dcsplit.model import ModelParams, StateSpace
from dcsplit.solver import uniformize


@pytest.fixture(scope="session")
def reference():
    return ModelParams()


@pytest.fixture(scope="session")
def reference_model(reference):
    space = StateSpace(reference)
    return uniformize(space, delay_cost_table(space))


@pytest.fixture(scope="session")
def reference_report(reference, reference_model):
    return solve_constrained(reference, model=reference_model)


def tiny(n_m=1, n_s=1, queue_cap=0, batch_probs=(1.0,), **kw):
    base = dict(lambda_fg=0.8, lambda_bg=0.6, mu_m=1.0, mu_s=1.7, backhaul_delay=0.3, delta=0.4)
    base.update(kw)
    return ModelParams(n_m=n_m, n_s=n_s, queue_cap=queue_cap, batch_probs=batch_probs, **base)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" [{detail}]" if detail else "")
        VERDICTS[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
