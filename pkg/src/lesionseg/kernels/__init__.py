"""Hot numeric kernels with numba/numpy twin implementations.

``ACTIVE_BACKEND`` records which twin was selected at import time (see
:mod:`lesionseg.backend` for the ``LESIONSEG_BACKEND`` env flag).
"""

from ..backend import resolve_backend

ACTIVE_BACKEND = resolve_backend()

if ACTIVE_BACKEND == "numba":
    from ._numba import (
        affine_bilinear2d,
        bilinear_resize2d,
        col2im2d,
        col2im3d,
        im2col2d,
        im2col3d,
        maxpool2d_bwd,
        maxpool2d_fwd,
        maxpool3d_bwd,
        maxpool3d_fwd,
    )
else:
    from ._numpy import (
        affine_bilinear2d,
        bilinear_resize2d,
        col2im2d,
        col2im3d,
        im2col2d,
        im2col3d,
        maxpool2d_bwd,
        maxpool2d_fwd,
        maxpool3d_bwd,
        maxpool3d_fwd,
    )

__all__ = [
    "ACTIVE_BACKEND",
    "affine_bilinear2d",
    "bilinear_resize2d",
    "col2im2d",
    "col2im3d",
    "im2col2d",
    "im2col3d",
    "maxpool2d_bwd",
    "maxpool2d_fwd",
    "maxpool3d_bwd",
    "maxpool3d_fwd",
]
