import numpy as np
import pytest
from hypothesis import settings

from lowprior.data_types import EncodedSequence, TaskLayout

settings.register_profile("ci", max_examples=50, deadline=None)
settings.register_profile("fast", max_examples=10, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def layout3():
    return TaskLayout((("a", 3), ("b", 3), ("c", 3)))


def random_sequence(rng, T=4, d_in=6, layout=None, mask=None, sid="s"):
    layout = layout or TaskLayout((("a", 3), ("b", 3), ("c", 3)))
    x = rng.integers(0, 2, (T, d_in)) * rng.normal(size=(T, d_in))
    gpsr = np.stack([rng.integers(0, m, T) for _, m in layout.tasks], axis=1)
    return EncodedSequence(
        sid, np.arange(1, T + 1, dtype=float), x, rng.integers(0, 2, T), gpsr,
        np.ones(T, bool) if mask is None else np.asarray(mask, bool),
    )


def perturb(net, rng, scale=0.3):
    """Move every block off its init (biases start at zero) so all paths get exercised."""
    for k in net.params:
        net.params[k] = net.params[k] + rng.normal(scale=scale, size=net.params[k].shape)
    return net


SMALL_COHORT = dict(n_obs=6, n_train=120, n_valid=60, n_test=60, target_prior=0.05, seed=1)


@pytest.fixture(scope="session")
def small_cohort():
    from lowprior.data import SyntheticConfig, generate_synthetic_cohort

    return generate_synthetic_cohort(SyntheticConfig(**SMALL_COHORT))


# Acceptance criteria register their outcome here; the summary hook prints one line each.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {desc}")
