import numpy as np
import pytest

from mpcl.data.synth import SyntheticSpec, synth_generate
from mpcl.numcore import make_rng


def central_difference(f, x, eps=1e-4):
    """Numeric gradient of scalar ``f`` w.r.t. every entry of array ``x`` (mutated in place)."""
    g = np.empty_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = f()
        x[idx] = old - eps
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * eps)
    return g


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float((np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)).max())


@pytest.fixture
def rng():
    return make_rng(1234)


TINY_SPEC = dict(classes=3, per_class=8, latent_dim=4, frames=(3, 6), groups=6, sigma_obs=0.3)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """24 samples, 3 modalities of dim 6, written to disk."""
    out = tmp_path_factory.mktemp("tiny")
    spec = SyntheticSpec.with_modalities(3, dim=6, **TINY_SPEC)
    manifest = synth_generate(spec, make_rng(7, "synth"), out)
    return manifest


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion at the end of the run

ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
