from dataclasses import replace

import numpy as np
import pytest

from cellfree.bundle import build_scenario
from cellfree.config import SystemConfig


def small_config(**kw) -> SystemConfig:
    base = SystemConfig(radius_m=300.0, num_aps=4, num_users=8, antennas_per_ap=8,
                        assoc_count=3, pilot_len=4, mc_trials=50)
    return replace(base, **kw)


@pytest.fixture
def small_cfg():
    return small_config()


@pytest.fixture(scope="module")
def small_scn():
    return build_scenario(small_config(), seed=3)


def random_hermitian(rng, n, scale=1.0):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return scale * 0.5 * (a + a.conj().T)


def random_psd(rng, n, rank=None, scale=1.0):
    rank = n if rank is None else rank
    a = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return scale * (a @ a.conj().T) / rank


def rel_err(a, b):
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
