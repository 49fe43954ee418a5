"""Kernel backend selection.

The hot numeric kernels (im2col/col2im, pooling, resampling) exist twice:
a numba-jitted version and a pure-numpy fallback. The environment variable
``LESIONSEG_BACKEND`` picks one:

* ``auto`` (default) - numba when importable, numpy otherwise
* ``numba``          - force numba, fail loudly if unavailable
* ``numpy``          - force the pure-numpy path
"""

import os

ENV_VAR = "LESIONSEG_BACKEND"
_VALID = ("auto", "numba", "numpy")


def requested_backend() -> str:
    value = os.environ.get(ENV_VAR, "auto").strip().lower()
    if value not in _VALID:
        raise ValueError(
            f"{ENV_VAR}={value!r} not understood; expected one of {_VALID}"
        )
    return value


def resolve_backend() -> str:
    """Return 'numba' or 'numpy' according to the env flag and availability."""
    value = requested_backend()
    if value == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
        return "numba"
    except ImportError:
        if value == "numba":
            raise ImportError(
                f"{ENV_VAR}=numba but numba is not importable"
            ) from None
        return "numpy"
