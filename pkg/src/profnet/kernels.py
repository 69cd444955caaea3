"""Numeric kernels with a numba fast path and a pure-numpy fallback.

The transcendental element-wise routines, the quadrature dot product and the
band-coverage count are the inner loops of training and evaluation.  Each has
two interchangeable implementations; the active set is chosen at import time
from the ``PROFNET_BACKEND`` environment variable (``numba`` or ``numpy``,
default: numba when importable) and can be switched at runtime with
:func:`use_backend`.  Matrix products go through BLAS in both backends.

Both backends produce identical float64 results on the same inputs up to
bit-level rounding of the libm used; tests pin agreement at 1e-15.
"""

from __future__ import annotations

import math
import os

import numpy as np

# exp overflows float64 just above this; larger args are clipped so forward
# passes on finite inputs stay finite
_EXP_MAX = 709.0
_TINY = np.finfo(np.float64).tiny


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------

def _np_tanh_fwd(x):
    return np.tanh(x)


def _np_tanh_bwd(g, y):
    return g * (1.0 - y * y)


def _np_softplus_fwd(x):
    # stable for large |x|; clamped away from zero so the result is strictly
    # positive for every finite input
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    return np.maximum(out, _TINY)


def _np_softplus_bwd(g, x):
    return g / (1.0 + np.exp(-x))


def _np_exp_fwd(x):
    return np.exp(np.minimum(x, _EXP_MAX))


def _np_exp_bwd(g, y):
    return g * y


def _np_log_fwd(x):
    return np.log(x)


def _np_log_bwd(g, x):
    return g / x


def _np_sqrt_fwd(x):
    return np.sqrt(x)


def _np_sqrt_bwd(g, y):
    return g / (2.0 * y)


def _np_square_fwd(x):
    return x * x


def _np_square_bwd(g, x):
    return 2.0 * x * g


def _np_recip_fwd(x):
    return 1.0 / x


def _np_recip_bwd(g, y):
    return -g * y * y


def _np_wdot(w, f, g):
    """Quadrature inner product sum(w * f * g)."""
    return float(np.dot(np.ravel(w * f), np.ravel(g)))


def _np_coverage_count(y, lo, hi):
    """Number of grid points where lo <= y <= hi (closed band)."""
    return int(np.count_nonzero((y >= lo) & (y <= hi)))


# ---------------------------------------------------------------------------
# numba implementations (flat loops over raveled views)
# ---------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    opts = dict(cache=True, fastmath=False)

    @njit(**opts)
    def k_tanh(x, out):
        for i in range(x.size):
            out[i] = math.tanh(x[i])

    @njit(**opts)
    def k_tanh_bwd(g, y, out):
        for i in range(g.size):
            out[i] = g[i] * (1.0 - y[i] * y[i])

    @njit(**opts)
    def k_softplus(x, out):
        for i in range(x.size):
            v = x[i]
            r = math.log1p(math.exp(-abs(v)))
            if v > 0.0:
                r += v
            if r < _TINY:
                r = _TINY
            out[i] = r

    @njit(**opts)
    def k_softplus_bwd(g, x, out):
        for i in range(g.size):
            out[i] = g[i] / (1.0 + math.exp(-x[i]))

    @njit(**opts)
    def k_exp(x, out):
        for i in range(x.size):
            v = x[i]
            if v > _EXP_MAX:
                v = _EXP_MAX
            out[i] = math.exp(v)

    @njit(**opts)
    def k_mul(g, y, out):          # shared by exp_bwd
        for i in range(g.size):
            out[i] = g[i] * y[i]

    @njit(**opts)
    def k_log(x, out):
        for i in range(x.size):
            out[i] = math.log(x[i])

    @njit(**opts)
    def k_div(g, x, out):          # shared by log_bwd
        for i in range(g.size):
            out[i] = g[i] / x[i]

    @njit(**opts)
    def k_sqrt(x, out):
        for i in range(x.size):
            out[i] = math.sqrt(x[i])

    @njit(**opts)
    def k_sqrt_bwd(g, y, out):
        for i in range(g.size):
            out[i] = g[i] / (2.0 * y[i])

    @njit(**opts)
    def k_square(x, out):
        for i in range(x.size):
            out[i] = x[i] * x[i]

    @njit(**opts)
    def k_square_bwd(g, x, out):
        for i in range(g.size):
            out[i] = 2.0 * x[i] * g[i]

    @njit(**opts)
    def k_recip(x, out):
        for i in range(x.size):
            out[i] = 1.0 / x[i]

    @njit(**opts)
    def k_recip_bwd(g, y, out):
        for i in range(g.size):
            out[i] = -g[i] * y[i] * y[i]

    @njit(**opts)
    def k_wdot(w, f, g):
        s = 0.0
        for i in range(w.size):
            s += w[i] * f[i] * g[i]
        return s

    @njit(**opts)
    def k_coverage(y, lo, hi):
        n = 0
        for i in range(y.size):
            if lo[i] <= y[i] <= hi[i]:
                n += 1
        return n

    def unary(kernel):
        def fn(x):
            x = np.ascontiguousarray(x)
            out = np.empty_like(x)
            kernel(x.ravel(), out.ravel())
            return out
        return fn

    def binary(kernel):
        def fn(a, b):
            a = np.ascontiguousarray(a)
            b = np.ascontiguousarray(b)
            out = np.empty_like(a)
            kernel(a.ravel(), b.ravel(), out.ravel())
            return out
        return fn

    def wdot(w, f, g):
        return float(k_wdot(np.ascontiguousarray(w).ravel(),
                            np.ascontiguousarray(f).ravel(),
                            np.ascontiguousarray(g).ravel()))

    def coverage_count(y, lo, hi):
        return int(k_coverage(np.ascontiguousarray(y).ravel(),
                              np.ascontiguousarray(lo).ravel(),
                              np.ascontiguousarray(hi).ravel()))

    return {
        "tanh_fwd": unary(k_tanh),
        "tanh_bwd": binary(k_tanh_bwd),
        "softplus_fwd": unary(k_softplus),
        "softplus_bwd": binary(k_softplus_bwd),
        "exp_fwd": unary(k_exp),
        "exp_bwd": binary(k_mul),
        "log_fwd": unary(k_log),
        "log_bwd": binary(k_div),
        "sqrt_fwd": unary(k_sqrt),
        "sqrt_bwd": binary(k_sqrt_bwd),
        "square_fwd": unary(k_square),
        "square_bwd": binary(k_square_bwd),
        "recip_fwd": unary(k_recip),
        "recip_bwd": binary(k_recip_bwd),
        "wdot": wdot,
        "coverage_count": coverage_count,
    }


_NUMPY_IMPL = {
    "tanh_fwd": _np_tanh_fwd,
    "tanh_bwd": _np_tanh_bwd,
    "softplus_fwd": _np_softplus_fwd,
    "softplus_bwd": _np_softplus_bwd,
    "exp_fwd": _np_exp_fwd,
    "exp_bwd": _np_exp_bwd,
    "log_fwd": _np_log_fwd,
    "log_bwd": _np_log_bwd,
    "sqrt_fwd": _np_sqrt_fwd,
    "sqrt_bwd": _np_sqrt_bwd,
    "square_fwd": _np_square_fwd,
    "square_bwd": _np_square_bwd,
    "recip_fwd": _np_recip_fwd,
    "recip_bwd": _np_recip_bwd,
    "wdot": _np_wdot,
    "coverage_count": _np_coverage_count,
}

_NUMBA_IMPL = None
BACKEND = "numpy"

_NAMES = tuple(_NUMPY_IMPL)


def available_backends():
    names = ["numpy"]
    try:
        import numba  # noqa: F401
        names.append("numba")
    except ImportError:
        pass
    return names


def get_impl(name: str) -> dict:
    """Return the implementation table for a backend without activating it."""
    global _NUMBA_IMPL
    if name == "numpy":
        return _NUMPY_IMPL
    if name == "numba":
        if _NUMBA_IMPL is None:
            _NUMBA_IMPL = _build_numba()
        return _NUMBA_IMPL
    raise ValueError(f"unknown backend {name!r}; expected 'numpy' or 'numba'")


def use_backend(name: str) -> str:
    """Bind the module-level kernel functions to the named backend."""
    global BACKEND
    impl = get_impl(name)
    g = globals()
    for key in _NAMES:
        g[key] = impl[key]
    BACKEND = name
    return BACKEND


def _default_backend() -> str:
    env = os.environ.get("PROFNET_BACKEND", "").strip().lower()
    if env in ("numpy", "numba"):
        return env
    if env not in ("", "auto"):
        raise ValueError(f"PROFNET_BACKEND={env!r}: expected 'numba' or 'numpy'")
    return "numba" if "numba" in available_backends() else "numpy"


use_backend(_default_backend())
