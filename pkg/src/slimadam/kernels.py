"""Elementwise hot loops of the optimizer update, with numba and numpy backends.

The two backends execute the same sequence of IEEE-754 operations per element,
so trajectories are bit-identical regardless of which one is active.  Backend
selection: env var SLIMADAM_BACKEND ("numba" or "numpy"); default is numba
when importable, numpy otherwise.
"""

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False


def _np_ewma(dest, src, beta):
    # dest = beta*dest + (1-beta)*src, in place
    dest *= beta
    dest += (1.0 - beta) * src


def _np_param_update(w, m, denom, lr, bc1, wd):
    # denom = sqrt(v_hat) + eps at full shape; bc1 = 1 - beta1**t
    w -= lr * ((m / bc1) / denom)
    w -= (lr * wd) * w


if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_ewma(dest, src, beta):
        d = dest.reshape(dest.size)
        s = src.reshape(src.size)
        for i in range(d.size):
            d[i] = beta * d[i] + (1.0 - beta) * s[i]

    @njit(cache=True)
    def _nb_param_update(w, m, denom, lr, bc1, wd):
        wf = w.reshape(w.size)
        mf = m.reshape(m.size)
        df = denom.reshape(denom.size)
        for i in range(wf.size):
            wf[i] = wf[i] - lr * ((mf[i] / bc1) / df[i])
            wf[i] = wf[i] - (lr * wd) * wf[i]


_BACKENDS = {"numpy": (_np_ewma, _np_param_update)}
if _HAVE_NUMBA:
    _BACKENDS["numba"] = (_nb_ewma, _nb_param_update)


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _ACTIVE


def set_backend(name):
    """Switch the active kernel backend ("numba" or "numpy")."""
    global _ACTIVE, ewma, param_update
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {available_backends()}")
    _ACTIVE = name
    ewma, param_update = _BACKENDS[name]


_default = os.environ.get("SLIMADAM_BACKEND", "numba" if _HAVE_NUMBA else "numpy")
if _default not in _BACKENDS:
    _default = "numpy"
_ACTIVE = _default
ewma, param_update = _BACKENDS[_ACTIVE]
