"""Placing the shape mask into a scene and compositing the patch.

The mask's shape-space extent [-0.5, 0.5]^2 is mapped onto a
(rho*w x rho*h)-pixel rectangle centered on the target box, optionally
composed with a rotation/translation/scale augmentation about the patch
center. Compositing follows I_adv = I*(1 - M_applied) + gray*M_applied,
which for gray = 0 is the ideal heat-blocking patch. The adjoint of the
whole chain (transposed bilinear scatter) carries image-space gradients
back to the mask grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .shapes import InvalidInputError


@dataclass(frozen=True)
class TargetBox:
    """Axis-aligned target bounding box, stored in center form (pixels)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise InvalidInputError(f"box must have positive size, got {self.w}x{self.h}")

    @staticmethod
    def from_top_left(x: float, y: float, w: float, h: float) -> "TargetBox":
        return TargetBox(cx=x + w / 2.0, cy=y + h / 2.0, w=w, h=h)

    def corners(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1)."""
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    def intersects_image(self, shape: tuple[int, int]) -> bool:
        x0, y0, x1, y1 = self.corners()
        return x1 > 0 and y1 > 0 and x0 < shape[1] and y0 < shape[0]


@dataclass(frozen=True)
class PlacementParams:
    rho: float = 0.6
    gray: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.5:
            raise InvalidInputError(f"rho must be in (0, 1.5], got {self.rho}")
        if not 0.0 <= self.gray <= 1.0:
            raise InvalidInputError(f"gray must be in [0, 1], got {self.gray}")


@dataclass(frozen=True)
class AugmentationRanges:
    translate_px: float = 10.0
    rotate_deg: float = 5.0
    scale_lo: float = 0.9
    scale_hi: float = 1.1
    gray_jitter: float = 20.0 / 255.0

    def __post_init__(self):
        if min(self.translate_px, self.rotate_deg, self.gray_jitter) < 0:
            raise InvalidInputError("augmentation ranges must be non-negative")
        if not 0 < self.scale_lo <= self.scale_hi:
            raise InvalidInputError("need 0 < scale_lo <= scale_hi")


@dataclass(frozen=True)
class TransformDraw:
    """One concrete augmentation draw; defaults are the identity."""

    dx: float = 0.0
    dy: float = 0.0
    rotate_deg: float = 0.0
    scale: float = 1.0
    gray_jitter: float = 0.0


IDENTITY_DRAW = TransformDraw()


def sample_augmentation(ranges: AugmentationRanges, rng: np.random.Generator) -> TransformDraw:
    """Uniform independent draws; gray jitter is one-sided positive."""
    return TransformDraw(
        dx=rng.uniform(-ranges.translate_px, ranges.translate_px),
        dy=rng.uniform(-ranges.translate_px, ranges.translate_px),
        rotate_deg=rng.uniform(-ranges.rotate_deg, ranges.rotate_deg),
        scale=rng.uniform(ranges.scale_lo, ranges.scale_hi),
        gray_jitter=rng.uniform(0.0, ranges.gray_jitter),
    )


def check_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InvalidInputError(f"{name} must be 2D, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise InvalidInputError(f"{name} must be finite")
    if image.min() < 0.0 or image.max() > 1.0:
        raise InvalidInputError(f"{name} values must lie in [0, 1]")
    return image


def _footprint_window(box: TargetBox, rho: float, image_shape: tuple[int, int],
                      draw: TransformDraw) -> tuple[slice, slice] | None:
    """Image-index window covering the (possibly rotated) patch rectangle."""
    ex = 0.5 * rho * box.w * draw.scale
    ey = 0.5 * rho * box.h * draw.scale
    ang = math.radians(draw.rotate_deg)
    half_x = abs(ex * math.cos(ang)) + abs(ey * math.sin(ang))
    half_y = abs(ex * math.sin(ang)) + abs(ey * math.cos(ang))
    ucx = box.cx + draw.dx
    ucy = box.cy + draw.dy
    r0 = max(0, int(math.floor(ucy - half_y)) - 1)
    r1 = min(image_shape[0], int(math.ceil(ucy + half_y)) + 2)
    c0 = max(0, int(math.floor(ucx - half_x)) - 1)
    c1 = min(image_shape[1], int(math.ceil(ucx + half_x)) + 2)
    if r0 >= r1 or c0 >= c1:
        return None
    return slice(r0, r1), slice(c0, c1)


def _mask_coords(box: TargetBox, rho: float, mask_shape: tuple[int, int],
                 rows: slice, cols: slice, draw: TransformDraw
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Fractional mask indices (rf, cf) for every pixel center in the window."""
    hs, ws = mask_shape
    ang = math.radians(draw.rotate_deg)
    cos_a, sin_a = math.cos(ang), math.sin(ang)
    u = np.arange(cols.start, cols.stop, dtype=np.float64) - (box.cx + draw.dx)
    v = np.arange(rows.start, rows.stop, dtype=np.float64) - (box.cy + draw.dy)
    uu, vv = np.meshgrid(u, v, indexing="xy")
    # rotate back about the patch center, then undo the scaling
    qx = cos_a * uu + sin_a * vv
    qy = -sin_a * uu + cos_a * vv
    x = qx / (rho * box.w * draw.scale)
    y = qy / (rho * box.h * draw.scale)
    cf = (x + 0.5) * (ws - 1)
    rf = (y + 0.5) * (hs - 1)
    return rf, cf


def _neighbor_weights(rf, cf):
    r0 = np.floor(rf).astype(np.int64)
    c0 = np.floor(cf).astype(np.int64)
    fr = rf - r0
    fc = cf - c0
    yield r0, c0, (1.0 - fr) * (1.0 - fc)
    yield r0, c0 + 1, (1.0 - fr) * fc
    yield r0 + 1, c0, fr * (1.0 - fc)
    yield r0 + 1, c0 + 1, fr * fc


def _bilinear_gather(mask: np.ndarray, rf: np.ndarray, cf: np.ndarray) -> np.ndarray:
    hs, ws = mask.shape
    out = np.zeros(rf.shape)
    for rr, cc, wgt in _neighbor_weights(rf, cf):
        valid = (rr >= 0) & (rr < hs) & (cc >= 0) & (cc < ws)
        vals = np.where(valid, mask[np.clip(rr, 0, hs - 1), np.clip(cc, 0, ws - 1)], 0.0)
        out += wgt * vals
    return out


def _bilinear_scatter(grad: np.ndarray, rf: np.ndarray, cf: np.ndarray,
                      mask_shape: tuple[int, int]) -> np.ndarray:
    hs, ws = mask_shape
    out = np.zeros(mask_shape)
    for rr, cc, wgt in _neighbor_weights(rf, cf):
        valid = (rr >= 0) & (rr < hs) & (cc >= 0) & (cc < ws)
        np.add.at(out, (rr[valid], cc[valid]), (wgt * grad)[valid])
    return out


def place_mask(mask: np.ndarray, box: TargetBox, rho: float,
               image_shape: tuple[int, int],
               draw: TransformDraw = IDENTITY_DRAW) -> np.ndarray:
    """Transform T: scale the mask to the box, center it, resample bilinearly.

    Returns a full-image mask; pixels outside the placed footprint are 0.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if not box.intersects_image(image_shape):
        raise InvalidInputError("target box does not intersect the image")
    out = np.zeros(image_shape)
    window = _footprint_window(box, rho, image_shape, draw)
    if window is None:
        return out
    rows, cols = window
    rf, cf = _mask_coords(box, rho, mask.shape, rows, cols, draw)
    out[rows, cols] = _bilinear_gather(mask, rf, cf)
    return np.clip(out, 0.0, 1.0)


def place_mask_multi(mask: np.ndarray, boxes: list[TargetBox], rho: float,
                     image_shape: tuple[int, int],
                     draw: TransformDraw = IDENTITY_DRAW) -> np.ndarray:
    """One shared mask placed at every box; overlaps sum and clamp to [0, 1]."""
    total = np.zeros(image_shape)
    for box in boxes:
        total += place_mask(mask, box, rho, image_shape, draw)
    return np.clip(total, 0.0, 1.0)


def apply_patch(image: np.ndarray, m_applied: np.ndarray, gray: float) -> np.ndarray:
    """I_adv = I * (1 - M_applied) + gray * M_applied, clamped to [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    m_applied = np.asarray(m_applied, dtype=np.float64)
    if image.shape != m_applied.shape:
        raise InvalidInputError(
            f"image {image.shape} and applied mask {m_applied.shape} differ"
        )
    return np.clip(image * (1.0 - m_applied) + gray * m_applied, 0.0, 1.0)


def applied_mask_gradient(image: np.ndarray, m_applied: np.ndarray, gray: float,
                          image_grad: np.ndarray) -> np.ndarray:
    """dL/dM_applied for apply_patch; zero where the output clamp was active."""
    image = np.asarray(image, dtype=np.float64)
    image_grad = np.asarray(image_grad, dtype=np.float64)
    if image_grad.shape != image.shape:
        raise InvalidInputError(
            f"image_grad {image_grad.shape} does not match image {image.shape}"
        )
    if not np.all(np.isfinite(image_grad)):
        raise InvalidInputError("image_grad must be finite")
    pre_clamp = image * (1.0 - m_applied) + gray * m_applied
    inactive = (pre_clamp >= 0.0) & (pre_clamp <= 1.0)
    return (gray - image) * image_grad * inactive


def scatter_to_mask(applied_grad: np.ndarray, box: TargetBox, rho: float,
                    mask_shape: tuple[int, int],
                    draw: TransformDraw = IDENTITY_DRAW) -> np.ndarray:
    """Transposed bilinear scatter of a full-image gradient onto the mask grid."""
    image_shape = applied_grad.shape
    window = _footprint_window(box, rho, image_shape, draw)
    if window is None:
        return np.zeros(mask_shape)
    rows, cols = window
    rf, cf = _mask_coords(box, rho, mask_shape, rows, cols, draw)
    return _bilinear_scatter(applied_grad[rows, cols], rf, cf, mask_shape)


def pipeline_backward(image: np.ndarray, box: TargetBox, rho: float, gray: float,
                      draw: TransformDraw, image_grad: np.ndarray,
                      mask_shape: tuple[int, int],
                      m_applied: np.ndarray | None = None) -> np.ndarray:
    """Exact adjoint of apply_patch(place_mask(...)) for a single box.

    ``m_applied`` may pass the forward placement to evaluate the apply-side
    clamp gate; omitted, the clamp is assumed inactive (it cannot trigger
    for in-range image, mask and gray).
    """
    if m_applied is None:
        m_applied = place_mask(np.zeros(mask_shape), box, rho, image.shape, draw)
        # with a fictitious zero mask the pre-clamp value is just I, in range;
        # the gate below is then a no-op, matching the analytic pipeline
    g_applied = applied_mask_gradient(image, m_applied, gray, image_grad)
    return scatter_to_mask(g_applied, box, rho, mask_shape, draw)


# --- box JSON I/O --------------------------------------------------------------


def boxes_from_json(text: str) -> list[TargetBox]:
    """Parse a JSON array of boxes; center {"cx","cy","w","h"} and top-left
    {"x","y","w","h"} forms are auto-detected by key names."""
    try:
        rows = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"malformed box JSON: {exc}") from exc
    if isinstance(rows, dict):
        rows = [rows]
    boxes = []
    for row in rows:
        try:
            if "cx" in row and "cy" in row:
                boxes.append(TargetBox(float(row["cx"]), float(row["cy"]),
                                       float(row["w"]), float(row["h"])))
            elif "x" in row and "y" in row:
                boxes.append(TargetBox.from_top_left(float(row["x"]), float(row["y"]),
                                                     float(row["w"]), float(row["h"])))
            else:
                raise KeyError("need cx/cy or x/y keys")
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad box entry {row!r}: {exc}") from exc
    if not boxes:
        raise InvalidInputError("box JSON contains no boxes")
    return boxes


def boxes_to_json(boxes: list[TargetBox]) -> str:
    rows = [{"cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h} for b in boxes]
    return json.dumps(rows, indent=2) + "\n"


def load_boxes(path) -> list[TargetBox]:
    with open(path) as f:
        return boxes_from_json(f.read())
