"""Backend selection for the hot numeric kernels.

All inner-loop code in :mod:`mottneuron.kernels` is written as plain scalar
Python over numpy arrays and compiled with numba's ``@njit`` by default.
Setting the environment variable ``MOTTNEURON_BACKEND=numpy`` before import
skips compilation and runs the identical source as pure Python/numpy, which
is slow but dependency-light and bit-identical. ``benchmarks/bench_backends.py``
compares the two.
"""

import os

_BACKEND = os.environ.get("MOTTNEURON_BACKEND", "numba").strip().lower()

if _BACKEND not in ("numba", "numpy"):
    raise RuntimeError(
        f"MOTTNEURON_BACKEND must be 'numba' or 'numpy', got {_BACKEND!r}"
    )

USING_NUMBA = _BACKEND == "numba"

if USING_NUMBA:
    from numba import njit as _njit

    def maybe_njit(func):
        return _njit(cache=True, fastmath=False)(func)

else:

    def maybe_njit(func):
        return func


def backend_name():
    return "numba" if USING_NUMBA else "numpy"
