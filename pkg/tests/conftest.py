import numpy as np
import pytest

from qdqkd.kernels import _pykernels

try:
    from qdqkd.kernels import _ckernels
except ImportError:  # compiled core not built
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python")]
if _ckernels is not None:
    BACKENDS.append(pytest.param(_ckernels, id="cython"))

# criterion lines gathered by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def pair_streams(rng, duration=2.0, pair_rate=1e3, singles_rate=1e5, jitter=250.0, clock=None):
    """Correlated pairs buried in uncorrelated singles; Alice's side runs on ``clock``.

    Returns (tags_a, tags_b, true_a) where ``true_a`` are the true Alice times of the pairs.
    """
    from qdqkd.detection import TagArray

    span = int(duration * 1e12)
    n_pairs = rng.poisson(pair_rate * duration)
    t_pair = rng.integers(0, span, n_pairs)

    def side(lo_ch, hi_ch, t_common):
        t_single = rng.integers(0, span, rng.poisson(singles_rate * duration))
        t = np.concatenate([t_common + np.rint(rng.normal(0, jitter, len(t_common))).astype(np.int64), t_single])
        t = np.clip(t, 0, None)
        ch = rng.integers(lo_ch, hi_ch, len(t)).astype(np.uint8)
        order = np.argsort(t, kind="stable")
        return t[order], ch[order]

    ta, cha = side(0, 6, t_pair)
    tb, chb = side(6, 10, t_pair)
    if clock is not None:
        ta = np.asarray(clock.localize(ta), dtype=np.int64)
    return TagArray(ta, cha), TagArray(tb, chb), np.sort(t_pair)


def brute_force_match(ta, tb, offsets, half):
    """Quadratic reference matcher: Alice in order, nearest unused Bob tag, earlier Bob on ties."""
    tb = np.asarray(tb, dtype=np.int64)
    free = np.ones(len(tb), dtype=bool)
    pairs = []
    for i in range(len(ta)):
        d = np.abs(int(ta[i]) - int(offsets[i]) - tb)  # every Bob tag, every time
        d = np.where(free & (d <= half), d, np.iinfo(np.int64).max)
        if len(d) and d.min() <= half:
            j = int(np.argmin(d))  # first minimum is the earlier Bob tag
            free[j] = False
            pairs.append((i, j))
    return pairs
