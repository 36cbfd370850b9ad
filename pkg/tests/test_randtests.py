import numpy as np
import pytest

from qdqkd.postproc.randtests import monobit_pvalue, runs_pvalue

# worked examples from the NIST statistical test suite documentation
LONG = ("11001001000011111101101010100010001000010110100011"
        "00001000110100110001001100011001100010100010111000")


def bits(s):
    return np.array([int(c) for c in s], np.uint8)


def test_monobit_reference():
    assert monobit_pvalue(bits("1011010101")) == pytest.approx(0.527089, abs=1e-6)
    assert monobit_pvalue(bits(LONG)) == pytest.approx(0.109599, abs=1e-6)


def test_runs_reference():
    assert runs_pvalue(bits("1001101011")) == pytest.approx(0.147232, abs=1e-6)
    assert runs_pvalue(bits(LONG)) == pytest.approx(0.500798, abs=1e-6)


def test_obvious_failures(rng):
    assert monobit_pvalue(np.ones(1000)) < 1e-10
    assert runs_pvalue(np.tile([0, 1], 500)) < 1e-10
    assert runs_pvalue(np.ones(1000)) == 0.0
    good = rng.integers(0, 2, 10**5)
    assert monobit_pvalue(good) > 0.001 and runs_pvalue(good) > 0.001
    with pytest.raises(ValueError):
        monobit_pvalue([])
