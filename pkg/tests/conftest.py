import numpy as np
import pytest

from drivestyle import kernels

ACCEPTANCE_RESULTS = {}


def record(criterion: str, passed: bool, detail: str = "") -> None:
    ACCEPTANCE_RESULTS[criterion] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda s: int(s.split()[0][1:])):
        passed, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request, monkeypatch):
    """Run a test once per available kernel backend."""
    impl = kernels.available_backends()[request.param]
    for name in ("forward_loglik", "backward_messages", "sample_forward", "crt_counts"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


def random_spd(rng, d=4, scale=1.0):
    a = rng.standard_normal((d, d))
    return scale * (a @ a.T / d + 0.5 * np.eye(d))


def random_hmm(rng, K, d=4):
    from drivestyle.hmm import EmissionParams, TransitionMatrix

    rows = rng.dirichlet(np.ones(K), size=K)
    init = rng.dirichlet(np.ones(K))
    means = rng.normal(0, 2, size=(K, d))
    covs = np.array([random_spd(rng, d) for _ in range(K)])
    return TransitionMatrix(rows, init), EmissionParams(means, covs)
