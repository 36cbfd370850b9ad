"""Hot-loop kernels: compiled Cython core with a pure-Python fallback.

The compiled module is used when it imports; set ``QDQKD_PURE_PYTHON=1`` to
force the fallback. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"
if not os.environ.get("QDQKD_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        pass


def _i64(x):
    return np.ascontiguousarray(x, dtype=np.int64)


def deadtime_mask(times, dead_time, impl=None):
    """Boolean mask of clicks surviving a non-paralyzable dead time (times sorted)."""
    impl = impl or _impl
    return impl.deadtime_mask(_i64(times), int(dead_time)).astype(bool)


def diff_histogram(ta, tb, lo, bin_width, nbins, impl=None):
    """Counts of ``ta[i] - tb[j]`` over bins ``[lo + k*bin, lo + (k+1)*bin)``."""
    impl = impl or _impl
    return impl.diff_histogram(_i64(ta), _i64(tb), int(lo), int(bin_width), int(nbins))


def match_sweep(ta, tb, offsets, half, impl=None):
    """Greedy nearest-unused matching of sorted streams; returns index arrays."""
    impl = impl or _impl
    ta = _i64(ta)
    offsets = np.broadcast_to(_i64(offsets), ta.shape)
    return impl.match_sweep(ta, _i64(tb), np.ascontiguousarray(offsets), int(half))


def signed_autocorr(t, ch, span, bin_width, impl=None):
    """Cross-channel delay histogram of one sorted stream over ``[-span, span)``."""
    impl = impl or _impl
    return impl.signed_autocorr(_i64(t), np.ascontiguousarray(ch, dtype=np.uint8), int(span), int(bin_width))


def rsh_bits(chunks, alphas, betas, field_bits, poly, impl=None):
    """Reed-Solomon/Hadamard code bits ``<beta, sum_j x_j alpha^(s-1-j)>`` per (alpha, beta)."""
    impl = impl or _impl
    u64 = lambda x: np.ascontiguousarray(x, dtype=np.uint64)  # noqa: E731
    return impl.rsh_bits(u64(chunks), u64(alphas), u64(betas), int(field_bits), int(poly))
