"""Winding-number rasterization of Fourier contours, with exact adjoint.

The continuous mask value at a pixel center q is Clip(|I_W(q)|, max=1),
where I_W approximates the winding number of the contour around q by a
trapezoid sum of the line integral

    W(q) = (1/2pi) * integral (f-x_q)g' - (g-y_q)f' / ((f-x_q)^2 + (g-y_q)^2) dt.

The squared distance in the denominator is floored at DENOM_FLOOR so pixels
on (or arbitrarily near) the curve stay finite. The backward pass
differentiates the same discrete sum exactly, treating the floored
denominator as constant where the floor is active, passing |.| as sign
(sign(0) = 0) and the clip as a strict |I_W| < 1 gate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import DENOM_FLOOR, backward_block, winding_block
from .parallel import block_ranges, run_blocks
from .shapes import (
    CurvePoints,
    CurveSampling,
    FourierCoefficients,
    InvalidInputError,
    curve_coefficient_gradient,
    eval_curve,
)


@dataclass(frozen=True)
class GridSpec:
    """Pixel grid over the shape-space square [-0.5, 0.5]^2.

    Pixel centers span the extent inclusively: mask[0, 0] sits at
    (-0.5, -0.5) and mask[h-1, w-1] at (0.5, 0.5); rows index y, columns x.
    """

    h: int
    w: int

    def __post_init__(self):
        if self.h < 2 or self.w < 2:
            raise InvalidInputError(f"grid must be at least 2x2, got {self.h}x{self.w}")

    @property
    def x_centers(self) -> np.ndarray:
        return np.linspace(-0.5, 0.5, self.w)

    @property
    def y_centers(self) -> np.ndarray:
        return np.linspace(-0.5, 0.5, self.h)

    @property
    def pixel_pitch(self) -> tuple[float, float]:
        """(x, y) spacing between adjacent pixel centers."""
        return 1.0 / (self.w - 1), 1.0 / (self.h - 1)

    def pixel_centers_flat(self) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = np.meshgrid(self.x_centers, self.y_centers, indexing="xy")
        return xs.ravel(), ys.ravel()


def _block_size(n_samples: int) -> int:
    # keep each (pixels x samples) temporary near 8 MB
    return max(128, 1_048_576 // n_samples)


def winding_field(
    theta: FourierCoefficients,
    grid: GridSpec,
    sampling: CurveSampling,
    threads: int | None = None,
) -> np.ndarray:
    """Raw winding-number image I_W, shape (h, w)."""
    pts = eval_curve(theta, sampling)
    return winding_field_from_curve(pts, grid, sampling, threads)


def winding_field_from_curve(
    pts: CurvePoints,
    grid: GridSpec,
    sampling: CurveSampling,
    threads: int | None = None,
) -> np.ndarray:
    xq, yq = grid.pixel_centers_flat()
    w2pi = sampling.trapezoid_weights / (2.0 * np.pi)
    cx, cy, cdx, cdy = pts.x, pts.y, pts.dx, pts.dy

    def block(s: int, e: int) -> np.ndarray:
        return winding_block(xq[s:e], yq[s:e], cx, cy, cdx, cdy, w2pi)

    parts = run_blocks(block, block_ranges(xq.shape[0], _block_size(pts.n_samples)), threads)
    return np.concatenate(parts).reshape(grid.h, grid.w)


def normalize_mask(field: np.ndarray) -> np.ndarray:
    """M_s = Clip(|I_W|, max=1)."""
    return np.minimum(np.abs(field), 1.0)


def rasterize(
    theta: FourierCoefficients,
    grid: GridSpec,
    sampling: CurveSampling,
    threads: int | None = None,
) -> np.ndarray:
    """Forward pass G: theta -> mask in [0, 1]^(h x w)."""
    return normalize_mask(winding_field(theta, grid, sampling, threads))


def rasterize_backward(
    theta: FourierCoefficients,
    grid: GridSpec,
    sampling: CurveSampling,
    mask_grad: np.ndarray,
    field: np.ndarray | None = None,
    threads: int | None = None,
) -> np.ndarray:
    """Exact adjoint of rasterize.

    Given dL/dM_s, returns dL/dtheta as a flat real vector
    [d/dRe(c_-K), d/dIm(c_-K), ...]. ``field`` may pass a precomputed
    winding field to skip the forward recomputation.
    """
    mask_grad = np.asarray(mask_grad, dtype=np.float64)
    if mask_grad.shape != (grid.h, grid.w):
        raise InvalidInputError(
            f"mask_grad shape {mask_grad.shape} does not match grid {(grid.h, grid.w)}"
        )
    if not np.all(np.isfinite(mask_grad)):
        raise InvalidInputError("mask_grad must be finite")

    pts = eval_curve(theta, sampling)
    if field is None:
        field = winding_field_from_curve(pts, grid, sampling, threads)

    # d mask / d I_W: clip gate (strict) times sign, with sign(0) = 0
    g_iw = (mask_grad * (np.abs(field) < 1.0) * np.sign(field)).ravel()

    xq, yq = grid.pixel_centers_flat()
    w2pi = sampling.trapezoid_weights / (2.0 * np.pi)
    cx, cy, cdx, cdy = pts.x, pts.y, pts.dx, pts.dy

    def block(s: int, e: int) -> np.ndarray:
        return backward_block(xq[s:e], yq[s:e], g_iw[s:e], cx, cy, cdx, cdy, w2pi)

    parts = run_blocks(block, block_ranges(xq.shape[0], _block_size(pts.n_samples)), threads)
    acc = parts[0].copy()
    for p in parts[1:]:
        acc += p
    return curve_coefficient_gradient(theta, sampling, acc[0], acc[1], acc[2], acc[3])


def green_area(theta: FourierCoefficients, sampling: CurveSampling) -> float:
    """Signed enclosed area (1/2) * integral (f g' - g f') dt, trapezoid rule.

    Positive for counter-clockwise traversal; translation invariant.
    """
    pts = eval_curve(theta, sampling)
    w = sampling.trapezoid_weights
    return 0.5 * float(((pts.x * pts.dy - pts.y * pts.dx) * w).sum())


def pip_oracle(polyline: CurvePoints, grid: GridSpec) -> np.ndarray:
    """Even-odd ray-cast point-in-polygon test per pixel center.

    Independent of the winding machinery on purpose: this is the geometry
    oracle the rasterizer is validated against. Casts a ray toward +x and
    counts crossings with the closed polyline through the samples.
    """
    vx = polyline.x
    vy = polyline.y
    if vx[0] != vx[-1] or vy[0] != vy[-1]:
        vx = np.append(vx, vx[0])
        vy = np.append(vy, vy[0])

    px, py = np.meshgrid(grid.x_centers, grid.y_centers, indexing="xy")
    inside = np.zeros(px.shape, dtype=bool)
    for i in range(vx.shape[0] - 1):
        x0, y0, x1, y1 = vx[i], vy[i], vx[i + 1], vy[i + 1]
        if y0 == y1:
            continue  # horizontal edge never crosses the half-open y rule
        crosses = (y0 <= py) != (y1 <= py)
        t = (py - y0) / (y1 - y0)
        inside ^= crosses & (px < x0 + t * (x1 - x0))
    return inside


def distance_band(polyline: CurvePoints, grid: GridSpec, band_pixels: float) -> np.ndarray:
    """Boolean grid of pixels within band_pixels (in pixel units) of the curve.

    Distances are measured to the curve samples, so the sampling must be
    dense relative to the pixel pitch for an accurate band.
    """
    px_pitch, py_pitch = grid.pixel_pitch
    radius = band_pixels * max(px_pitch, py_pitch)
    xs = grid.x_centers
    ys = grid.y_centers
    d2min = np.full((grid.h, grid.w), np.inf)
    # chunk over curve samples to bound the (samples, h, w) temporaries
    cx, cy = polyline.x, polyline.y
    for s in range(0, cx.shape[0], 64):
        bx = cx[s:s + 64]
        by = cy[s:s + 64]
        d2 = (ys[None, :, None] - by[:, None, None]) ** 2 \
            + (xs[None, None, :] - bx[:, None, None]) ** 2
        d2min = np.minimum(d2min, d2.min(axis=0))
    return d2min < radius * radius
