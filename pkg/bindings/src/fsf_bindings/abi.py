"""C-style array-in/array-out boundary over the core shape engine.

Mirrors a C ABI in Python idiom so host frameworks can wrap the rasterizer
as a custom op: callers allocate every output buffer, functions return an
integer status code and report problems through a caller-provided UTF-8
message buffer, and nothing ever raises across this boundary. Coefficient
layout is [re c_-K, im c_-K, ..., re c_K, im c_K] (FlatCoefficients).

Status codes: 0 = OK, 1 = invalid argument, 2 = internal error. On any
nonzero code the output buffers are left untouched.

These functions call the same core code paths as the `fsf` package, so
results are bit-exact with the core rasterizer.
"""

from __future__ import annotations

import numpy as np

from fsf.raster import GridSpec, rasterize, rasterize_backward
from fsf.shapes import CurveSampling, InvalidInputError, vector_to_theta

FSF_V1_OK = 0
FSF_V1_INVALID = 1
FSF_V1_INTERNAL = 2

ABI_VERSION = "fsf_v1"


def _set_message(err: bytearray | None, text: str) -> None:
    if err is None:
        return
    data = text.encode("utf-8")[: max(0, len(err) - 1)]
    err[: len(data)] = data
    if len(err) > len(data):
        err[len(data)] = 0


def _check_flat(flat_coeffs, k: int):
    flat = np.ascontiguousarray(flat_coeffs, dtype=np.float64)
    if k < 1:
        raise InvalidInputError(f"k must be >= 1, got {k}")
    expected = 2 * (2 * k + 1)
    if flat.ndim != 1 or flat.shape[0] != expected:
        raise InvalidInputError(
            f"flat_coeffs must have length {expected} for k={k}, got {flat.shape}"
        )
    if not np.all(np.isfinite(flat)):
        raise InvalidInputError("flat_coeffs must be finite")
    return flat


def fsf_v1_rasterize(flat_coeffs, k: int, h_s: int, w_s: int, n_s: int,
                     out_mask, err: bytearray | None = None) -> int:
    """Forward rasterization into the caller-allocated out_mask (h_s*w_s,
    float64, row-major). Returns a status code; never raises."""
    try:
        flat = _check_flat(flat_coeffs, k)
        out = np.asarray(out_mask)
        if out.dtype != np.float64 or out.size != h_s * w_s:
            raise InvalidInputError(
                f"out_mask must be float64 with {h_s * w_s} elements, "
                f"got {out.dtype} x {out.size}"
            )
        mask = rasterize(vector_to_theta(flat, k), GridSpec(h_s, w_s),
                         CurveSampling(n_s))
    except InvalidInputError as exc:
        _set_message(err, str(exc))
        return FSF_V1_INVALID
    except Exception as exc:  # noqa: BLE001 - boundary must not unwind
        _set_message(err, f"internal error: {exc}")
        return FSF_V1_INTERNAL
    out.reshape(h_s, w_s)[...] = mask
    _set_message(err, "")
    return FSF_V1_OK


def fsf_v1_rasterize_backward(flat_coeffs, k: int, h_s: int, w_s: int, n_s: int,
                              flat_mask_grad, out_grad,
                              err: bytearray | None = None) -> int:
    """Adjoint: mask-space gradient (h_s*w_s floats) to coefficient gradient
    (2*(2k+1) floats) written into caller-allocated out_grad."""
    try:
        flat = _check_flat(flat_coeffs, k)
        mg = np.ascontiguousarray(flat_mask_grad, dtype=np.float64)
        if mg.size != h_s * w_s:
            raise InvalidInputError(
                f"flat_mask_grad must have {h_s * w_s} elements, got {mg.size}"
            )
        out = np.asarray(out_grad)
        if out.dtype != np.float64 or out.size != 2 * (2 * k + 1):
            raise InvalidInputError(
                f"out_grad must be float64 with {2 * (2 * k + 1)} elements"
            )
        grad = rasterize_backward(vector_to_theta(flat, k), GridSpec(h_s, w_s),
                                  CurveSampling(n_s), mg.reshape(h_s, w_s))
    except InvalidInputError as exc:
        _set_message(err, str(exc))
        return FSF_V1_INVALID
    except Exception as exc:  # noqa: BLE001 - boundary must not unwind
        _set_message(err, f"internal error: {exc}")
        return FSF_V1_INTERNAL
    out[...] = grad
    _set_message(err, "")
    return FSF_V1_OK


def message_from(err: bytearray) -> str:
    """Decode a NUL-terminated UTF-8 message buffer."""
    end = err.find(b"\x00")
    return err[: end if end >= 0 else len(err)].decode("utf-8", "replace")
