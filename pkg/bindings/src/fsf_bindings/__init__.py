"""Flat-array boundary and host-framework bindings for the fsf shape engine."""

import numpy as np

from fsf.raster import GridSpec
from fsf.shapes import (
    CurveSampling,
    FourierCoefficients,
    load_theta,
    save_theta,
    theta_to_vector,
    vector_to_theta,
)

from .abi import (
    ABI_VERSION,
    FSF_V1_INTERNAL,
    FSF_V1_INVALID,
    FSF_V1_OK,
    fsf_v1_rasterize,
    fsf_v1_rasterize_backward,
    message_from,
)

__version__ = "0.1.0"


def rasterize(theta, h: int = 200, w: int = 200, n_s: int = 1000) -> np.ndarray:
    """High-level forward pass; accepts FourierCoefficients or a flat vector.

    Raises on invalid input (errors are translated from the boundary codes).
    """
    if isinstance(theta, FourierCoefficients):
        flat = theta_to_vector(theta)
        k = theta.K
    else:
        flat = np.ascontiguousarray(theta, dtype=np.float64)
        if flat.ndim != 1 or flat.size % 2 or (flat.size // 2) % 2 == 0:
            raise ValueError("flat theta must have length 2*(2K+1)")
        k = (flat.size // 2 - 1) // 2
    out = np.empty(h * w, dtype=np.float64)
    err = bytearray(256)
    code = fsf_v1_rasterize(flat, k, h, w, n_s, out, err)
    if code != FSF_V1_OK:
        raise ValueError(f"rasterize failed ({code}): {message_from(err)}")
    return out.reshape(h, w)
