"""Bundled synthetic thermal scene and warm-pedestrian template.

The template is a vertical Gaussian blob; the toy scene stamps that same
template onto a cooler textured background, which makes the clean
template-correlation response high by construction. Everything is
deterministic given the seed.
"""

from __future__ import annotations

import importlib.resources
import json

import numpy as np
from scipy.ndimage import gaussian_filter

from .imgio import read_pgm
from .placement import TargetBox, boxes_from_json
from .shapes import InvalidInputError

TEMPLATE_SHAPE = (64, 32)  # rows x cols, person-like aspect ratio
SCENE_SHAPE = (320, 320)


def build_template(h: int = TEMPLATE_SHAPE[0], w: int = TEMPLATE_SHAPE[1]) -> np.ndarray:
    """Vertical Gaussian warm blob, peak 1 at the center."""
    rr = (np.arange(h) - (h - 1) / 2.0) / (h / 3.2)
    cc = (np.arange(w) - (w - 1) / 2.0) / (w / 4.0)
    return np.exp(-0.5 * (rr[:, None] ** 2 + cc[None, :] ** 2))


def _data_path(name: str):
    return importlib.resources.files("fsf").joinpath("data", name)


def load_template() -> np.ndarray:
    return read_pgm(_data_path("pedestrian_template.pgm"))


def make_toy_scene(seed: int = 0, n_targets: int = 1,
                   shape: tuple[int, int] = SCENE_SHAPE,
                   base: float = 0.22, noise_amp: float = 0.05,
                   stamp_gain: float = 0.7) -> tuple[np.ndarray, list[TargetBox]]:
    """Synthetic thermal scene with 1-3 warm pedestrians, deterministic per seed."""
    if not 1 <= n_targets <= 3:
        raise InvalidInputError(f"n_targets must be 1..3, got {n_targets}")
    rng = np.random.default_rng(seed)
    template = load_template()
    th, tw = template.shape
    h, w = shape
    if h < 2 * th or w < 2 * tw:
        raise InvalidInputError("scene too small for the template")

    # fine-grained texture: a wide blob template should not correlate with it
    texture = gaussian_filter(rng.standard_normal(shape), sigma=2.5)
    texture /= max(np.abs(texture).max(), 1e-12)
    image = np.clip(base + noise_amp * texture, 0.0, 1.0)

    boxes: list[TargetBox] = []
    occupied: list[tuple[int, int]] = []
    margin = 8
    for _ in range(n_targets):
        for _attempt in range(200):
            r = int(rng.integers(margin, h - th - margin))
            c = int(rng.integers(margin, w - tw - margin))
            if all(abs(r - r2) >= th + 4 or abs(c - c2) >= tw + 4 for r2, c2 in occupied):
                break
        else:
            raise InvalidInputError("could not place non-overlapping targets")
        occupied.append((r, c))
        image[r:r + th, c:c + tw] = np.clip(
            image[r:r + th, c:c + tw] + stamp_gain * template, 0.0, 1.0
        )
        boxes.append(TargetBox(cx=c + (tw - 1) / 2.0, cy=r + (th - 1) / 2.0,
                               w=float(tw), h=float(th)))
    return image, boxes


def load_toy_scene() -> tuple[np.ndarray, list[TargetBox]]:
    """The canonical bundled fixture (seed 0, single pedestrian)."""
    image = read_pgm(_data_path("toy_scene.pgm"))
    boxes = boxes_from_json(_data_path("toy_scene_boxes.json").read_text())
    return image, boxes


def _regenerate_data(out_dir) -> None:
    """Rebuild the bundled data files (developer utility)."""
    from pathlib import Path

    from .imgio import write_pgm
    from .placement import boxes_to_json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "pedestrian_template.pgm", build_template())
    image, boxes = make_toy_scene(seed=0, n_targets=1)
    write_pgm(out / "toy_scene.pgm", image)
    (out / "toy_scene_boxes.json").write_text(boxes_to_json(boxes))


if __name__ == "__main__":
    import sys

    _regenerate_data(sys.argv[1] if len(sys.argv) > 1 else "src/fsf/data")
