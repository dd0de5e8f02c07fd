"""Fused inner loops for the winding-number kernels.

Each kernel processes one fixed pixel block sequentially, so results do not
depend on how blocks are scheduled across threads. The numba versions
release the GIL and avoid the large (pixels x samples) temporaries of the
numpy path; arithmetic is plain IEEE double (no fastmath). Set
FSF_NO_NUMBA=1 to force the numpy fallback.
"""

from __future__ import annotations

import os

import numpy as np

DENOM_FLOOR = 1e-12

try:
    if os.environ.get("FSF_NO_NUMBA", "0") == "1":
        raise ImportError("numba disabled via FSF_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via FSF_NO_NUMBA runs
    HAVE_NUMBA = False


def _winding_block_numpy(xq, yq, cx, cy, cdx, cdy, w2pi):
    dxq = cx[None, :] - xq[:, None]
    dyq = cy[None, :] - yq[:, None]
    num = dxq * cdy[None, :] - dyq * cdx[None, :]
    den = np.maximum(dxq * dxq + dyq * dyq, DENOM_FLOOR)
    return ((num / den) * w2pi[None, :]).sum(axis=1)


def _backward_block_numpy(xq, yq, g, cx, cy, cdx, cdy, w2pi):
    dxq = cx[None, :] - xq[:, None]
    dyq = cy[None, :] - yq[:, None]
    num = dxq * cdy[None, :] - dyq * cdx[None, :]
    d2 = dxq * dxq + dyq * dyq
    inv = 1.0 / np.maximum(d2, DENOM_FLOOR)
    # t1 = dL/d(num); t2 routes the quotient-rule denominator term, cut
    # where the distance floor is active (denominator then constant)
    t1 = (g[:, None] * w2pi[None, :]) * inv
    t2 = t1 * num * inv
    t2 *= d2 > DENOM_FLOOR
    s1 = t1.sum(axis=0)
    ein = lambda a, b: np.einsum("qn,qn->n", a, b, optimize=False)  # noqa: E731
    gx = cdy * s1 - 2.0 * ein(dxq, t2)
    gy = -cdx * s1 - 2.0 * ein(dyq, t2)
    gdx = -ein(dyq, t1)
    gdy = ein(dxq, t1)
    return np.stack([gx, gy, gdx, gdy])


if HAVE_NUMBA:

    @njit(nogil=True, cache=True)
    def _winding_block_numba(xq, yq, cx, cy, cdx, cdy, w2pi):  # pragma: no cover
        n_q = xq.shape[0]
        n_s = cx.shape[0]
        out = np.empty(n_q)
        for q in range(n_q):
            acc = 0.0
            for j in range(n_s):
                dx = cx[j] - xq[q]
                dy = cy[j] - yq[q]
                d2 = dx * dx + dy * dy
                if d2 < DENOM_FLOOR:
                    d2 = DENOM_FLOOR
                acc += (dx * cdy[j] - dy * cdx[j]) / d2 * w2pi[j]
            out[q] = acc
        return out

    @njit(nogil=True, cache=True)
    def _backward_block_numba(xq, yq, g, cx, cy, cdx, cdy, w2pi):  # pragma: no cover
        n_q = xq.shape[0]
        n_s = cx.shape[0]
        out = np.zeros((4, n_s))
        for q in range(n_q):
            gq = g[q]
            for j in range(n_s):
                dx = cx[j] - xq[q]
                dy = cy[j] - yq[q]
                d2 = dx * dx + dy * dy
                den = d2 if d2 > DENOM_FLOOR else DENOM_FLOOR
                inv = 1.0 / den
                t1 = gq * w2pi[j] * inv
                if d2 > DENOM_FLOOR:
                    t2 = t1 * (dx * cdy[j] - dy * cdx[j]) * inv
                else:
                    t2 = 0.0
                out[0, j] += cdy[j] * t1 - 2.0 * dx * t2
                out[1, j] += -cdx[j] * t1 - 2.0 * dy * t2
                out[2, j] += -dy * t1
                out[3, j] += dx * t1
        return out

    winding_block = _winding_block_numba
    backward_block = _backward_block_numba
else:
    winding_block = _winding_block_numpy
    backward_block = _backward_block_numpy
