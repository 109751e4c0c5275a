import numpy as np
import pytest

from mmrec import backend
from mmrec.data import leave_one_out_split, sample_candidates
from mmrec.synth import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_synth():
    spec = SyntheticSpec(num_users=60, num_items=300, view_dims=[6, 5, 4], latent_dim=3,
                         interactions_per_user=6, seed=3)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def small_split(small_synth):
    ds, _, _ = small_synth
    split = leave_one_out_split(ds, 0)
    return split, sample_candidates(split, 1)


@pytest.fixture(params=sorted(backend.available()))
def kernel_module(request):
    return backend.available()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for the terminal summary, then assert."""

    def record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  [{number}] {title}: {detail}"
        request.config.acceptance_lines.append((number, line))
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
