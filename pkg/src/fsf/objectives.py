"""Differentiable detection objectives the attack optimizes against.

A detection objective plays the role of the detector: ``forward`` maps an
image to raw proposals (box + confidence), ``scores_at`` recomputes the
scores of given proposals exactly, and ``backward`` is the exact adjoint
of ``scores_at`` - upstream per-proposal score gradients come back as an
image-space gradient. Proposal locations found by ``forward`` are treated
as constants within one optimization step.

Three desk-scale stand-ins ship here: a box mean-intensity score, a
sliding-window template correlation detector, and a mask-MSE objective
(not a detector; drives shape reconstruction).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.fft import irfftn, next_fast_len, rfftn

from .placement import TargetBox
from .shapes import InvalidInputError

_VAR_FLOOR = 1e-12


@dataclass(frozen=True)
class Proposal:
    """One raw (pre-NMS) detector output."""

    box: TargetBox
    score: float
    meta: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"proposal score must be in [0, 1], got {self.score}")


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


class DetectionObjective:
    """Interface contract; see module docstring."""

    def forward(self, image: np.ndarray) -> list[Proposal]:
        raise NotImplementedError

    def scores_at(self, image: np.ndarray, proposals: list[Proposal]) -> np.ndarray:
        raise NotImplementedError

    def backward(self, image: np.ndarray, proposals: list[Proposal],
                 score_grads: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class MaskObjective:
    """Loss defined directly on the shape mask (no detector, no placement)."""

    def loss(self, mask: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError


def _box_region(box: TargetBox, shape: tuple[int, int]) -> tuple[slice, slice]:
    x0, y0, x1, y1 = box.corners()
    r0 = max(0, int(round(y0)))
    r1 = min(shape[0], max(r0 + 1, int(round(y1))))
    c0 = max(0, int(round(x0)))
    c1 = min(shape[1], max(c0 + 1, int(round(x1))))
    return slice(r0, r1), slice(c0, c1)


class MeanIntensityObjective(DetectionObjective):
    """Score = sigmoid(a * (mean intensity inside the box - b)) per target box.

    Proposals are the target boxes themselves, so the objective is smooth
    in the image everywhere.
    """

    def __init__(self, boxes: list[TargetBox], a: float = 12.0, b: float = 0.35):
        if not boxes:
            raise InvalidInputError("need at least one box")
        self.boxes = list(boxes)
        self.a = a
        self.b = b

    def forward(self, image):
        proposals = []
        for i, box in enumerate(self.boxes):
            rows, cols = _box_region(box, image.shape)
            s = _sigmoid(self.a * (image[rows, cols].mean() - self.b))
            proposals.append(Proposal(box=box, score=float(s), meta=(i,)))
        return proposals

    def scores_at(self, image, proposals):
        out = np.empty(len(proposals))
        for j, p in enumerate(proposals):
            rows, cols = _box_region(p.box, image.shape)
            out[j] = _sigmoid(self.a * (image[rows, cols].mean() - self.b))
        return out

    def backward(self, image, proposals, score_grads):
        grad = np.zeros_like(image, dtype=np.float64)
        scores = self.scores_at(image, proposals)
        for j, p in enumerate(proposals):
            rows, cols = _box_region(p.box, image.shape)
            n = (rows.stop - rows.start) * (cols.stop - cols.start)
            s = scores[j]
            grad[rows, cols] += score_grads[j] * s * (1.0 - s) * self.a / n
        return grad


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize (deterministic, dependency-free)."""
    h, w = img.shape
    rf = np.linspace(0.0, h - 1.0, out_h)
    cf = np.linspace(0.0, w - 1.0, out_w)
    r0 = np.minimum(np.floor(rf).astype(int), h - 2) if h > 1 else np.zeros(out_h, int)
    c0 = np.minimum(np.floor(cf).astype(int), w - 2) if w > 1 else np.zeros(out_w, int)
    fr = (rf - r0)[:, None]
    fc = (cf - c0)[None, :]
    i00 = img[np.ix_(r0, c0)]
    i01 = img[np.ix_(r0, np.minimum(c0 + 1, w - 1))]
    i10 = img[np.ix_(np.minimum(r0 + 1, h - 1), c0)]
    i11 = img[np.ix_(np.minimum(r0 + 1, h - 1), np.minimum(c0 + 1, w - 1))]
    return (i00 * (1 - fr) * (1 - fc) + i01 * (1 - fr) * fc
            + i10 * fr * (1 - fc) + i11 * fr * fc)


def _box_sums(a: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Sum of every (th x tw) window of a (valid positions), via integral image."""
    c = np.cumsum(np.cumsum(a, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    return c[th:, tw:] - c[:-th, tw:] - c[th:, :-tw] + c[:-th, :-tw]


class TemplateCorrelationObjective(DetectionObjective):
    """Multi-scale sliding-window normalized cross-correlation detector.

    Peaks of the NCC map become proposals with score sigmoid(a*NCC + b).
    The FFT correlation only locates peaks; proposal scores and gradients
    use the exact window formula, so backward is the exact adjoint of
    scores_at at the frozen peak locations.
    """

    def __init__(self, template: np.ndarray, scales: tuple[float, ...] = (0.8, 1.0, 1.25),
                 top_k: int = 5, a: float = 8.0, b: float = -4.0):
        template = np.asarray(template, dtype=np.float64)
        if template.ndim != 2 or min(template.shape) < 4:
            raise InvalidInputError("template must be 2D and at least 4x4")
        self.a = a
        self.b = b
        self.top_k = top_k
        self.scales = tuple(scales)
        self._tnorms = []  # centered, unit-norm template per scale
        for s in self.scales:
            th = max(4, int(round(template.shape[0] * s)))
            tw = max(4, int(round(template.shape[1] * s)))
            t = resize_bilinear(template, th, tw)
            t = t - t.mean()
            norm = np.sqrt((t * t).sum())
            if norm < _VAR_FLOOR:
                raise InvalidInputError("template is constant at some scale")
            self._tnorms.append(t / norm)
        self._fft_cache: dict = {}

    def _correlate(self, image: np.ndarray, si: int) -> np.ndarray:
        """Valid-mode cross-correlation with the scaled template via FFT.

        Template spectra are cached per image shape; the peak locations this
        feeds are re-scored exactly, so FFT rounding never enters scores.
        """
        t = self._tnorms[si]
        th, tw = t.shape
        h, w = image.shape
        key = (si, h, w)
        if key not in self._fft_cache:
            fshape = (next_fast_len(h + th - 1), next_fast_len(w + tw - 1))
            self._fft_cache[key] = (fshape, rfftn(t[::-1, ::-1], fshape))
        fshape, tf = self._fft_cache[key]
        full = irfftn(rfftn(image, fshape) * tf, fshape)
        return full[th - 1:h, tw - 1:w]

    def _window_score(self, image, si: int, r: int, c: int) -> tuple[float, float]:
        """(ncc, score) of the window at (r, c) for scale index si, exact."""
        t = self._tnorms[si]
        th, tw = t.shape
        win = image[r:r + th, c:c + tw]
        u = win - win.mean()
        nu = np.sqrt((u * u).sum())
        ncc = float((u * t).sum() / max(nu, _VAR_FLOOR))
        return ncc, float(_sigmoid(self.a * ncc + self.b))

    def forward(self, image):
        proposals = []
        for si, t in enumerate(self._tnorms):
            th, tw = t.shape
            if th > image.shape[0] or tw > image.shape[1]:
                continue
            corr = self._correlate(image, si)
            s1 = _box_sums(image, th, tw)
            s2 = _box_sums(image * image, th, tw)
            var = np.maximum(s2 - s1 * s1 / (th * tw), _VAR_FLOOR)
            ncc = corr / np.sqrt(var)
            # strict 8-neighbour local maxima (map padded with -inf at edges)
            padded = np.pad(ncc, 1, constant_values=-np.inf)
            peak = np.ones_like(ncc, dtype=bool)
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    peak &= ncc > padded[1 + dr:1 + dr + ncc.shape[0],
                                         1 + dc:1 + dc + ncc.shape[1]]
            rr, cc = np.nonzero(peak)
            if rr.size == 0:
                continue
            vals = ncc[rr, cc]
            # deterministic top-k: by score descending, ties by flat index
            order = np.lexsort((rr * ncc.shape[1] + cc, -vals))[:self.top_k]
            for j in order:
                r, c = int(rr[j]), int(cc[j])
                _, score = self._window_score(image, si, r, c)
                box = TargetBox(cx=c + (tw - 1) / 2.0, cy=r + (th - 1) / 2.0,
                                w=float(tw), h=float(th))
                proposals.append(Proposal(box=box, score=score, meta=(si, r, c)))
        return proposals

    def scores_at(self, image, proposals):
        out = np.empty(len(proposals))
        for j, p in enumerate(proposals):
            si, r, c = p.meta
            out[j] = self._window_score(image, si, r, c)[1]
        return out

    def backward(self, image, proposals, score_grads):
        grad = np.zeros_like(image, dtype=np.float64)
        for j, p in enumerate(proposals):
            g = score_grads[j]
            if g == 0.0:
                continue
            si, r, c = p.meta
            t = self._tnorms[si]
            th, tw = t.shape
            win = image[r:r + th, c:c + tw]
            u = win - win.mean()
            nu = max(np.sqrt((u * u).sum()), _VAR_FLOOR)
            ncc = (u * t).sum() / nu
            s = _sigmoid(self.a * ncc + self.b)
            # d ncc / d window; both u and the template are mean-free, so the
            # centering projector drops out
            dncc = t / nu - ncc * u / (nu * nu)
            grad[r:r + th, c:c + tw] += g * s * (1.0 - s) * self.a * dncc
        return grad


class MaskMatchObjective(MaskObjective):
    """Mean squared error between the rasterized mask and a reference mask."""

    def __init__(self, reference: np.ndarray):
        reference = np.asarray(reference, dtype=np.float64)
        if reference.ndim != 2:
            raise InvalidInputError("reference mask must be 2D")
        if reference.max() <= 0.0:
            raise InvalidInputError("reference mask is empty")
        self.reference = reference

    def loss(self, mask):
        if mask.shape != self.reference.shape:
            raise InvalidInputError(
                f"mask {mask.shape} does not match reference {self.reference.shape}"
            )
        diff = mask - self.reference
        n = diff.size
        return float((diff * diff).sum() / n), 2.0 * diff / n
