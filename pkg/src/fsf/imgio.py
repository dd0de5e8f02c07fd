"""File formats: binary PGM (P5) scenes and masks, raw float dumps, SVG figures."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .shapes import CurvePoints, InvalidInputError


def write_pgm(path, values01: np.ndarray) -> None:
    """8-bit binary PGM; pixel = round(255 * value)."""
    arr = np.asarray(values01, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"PGM data must be 2D, got shape {arr.shape}")
    data = np.rint(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5, maxval <= 255) back to floats in [0, 1]."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise InvalidInputError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval; '#' comments run to end of line
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3 and pos < len(raw):
        ch = raw[pos:pos + 1]
        if ch == b"#":
            pos = raw.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    if len(tokens) < 3 or pos >= len(raw):
        raise InvalidInputError(f"{path}: truncated PGM header")
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: bad PGM header: {exc}") from exc
    if maxval <= 0 or maxval > 255:
        raise InvalidInputError(f"{path}: unsupported PGM maxval {maxval}")
    body = raw[pos:pos + w * h]
    if len(body) != w * h:
        raise InvalidInputError(f"{path}: PGM pixel data truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / maxval


def write_float_raw(path, arr: np.ndarray) -> None:
    """Raw little-endian float64 dump with a JSON sidecar {"h":…, "w":…}."""
    arr = np.asarray(arr, dtype="<f8")
    if arr.ndim != 2:
        raise InvalidInputError(f"raw dump must be 2D, got shape {arr.shape}")
    path = Path(path)
    path.write_bytes(arr.tobytes())
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps({"h": arr.shape[0], "w": arr.shape[1]}) + "\n"
    )


def read_float_raw(path) -> np.ndarray:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    data = np.frombuffer(path.read_bytes(), dtype="<f8")
    return data.reshape(int(meta["h"]), int(meta["w"])).copy()


def curve_svg(points: CurvePoints, stroke: str = "black",
              stroke_width: float = 0.004) -> str:
    """Closed stroke-only SVG path through the curve samples (shape space)."""
    cmds = [f"M {points.x[0]:.6f} {points.y[0]:.6f}"]
    cmds += [f"L {x:.6f} {y:.6f}" for x, y in zip(points.x[1:], points.y[1:])]
    cmds.append("Z")
    return (
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="-0.5 -0.5 1 1">\n'
        f'  <path d="{" ".join(cmds)}" fill="none" stroke="{stroke}" '
        f'stroke-width="{stroke_width}"/>\n'
        "</svg>\n"
    )


def asr_curve_svg(thresholds: list[float], asr: list[float]) -> str:
    """ASR-vs-threshold polyline in a unit box with bare axes."""
    pts = " ".join(f"{t:.6f},{1.0 - a:.6f}" for t, a in zip(thresholds, asr))
    return (
        '<svg xmlns="http://www.w3.org/2000/svg" viewBox="-0.1 -0.1 1.2 1.2">\n'
        '  <line x1="0" y1="1" x2="1" y2="1" stroke="gray" stroke-width="0.005"/>\n'
        '  <line x1="0" y1="0" x2="0" y2="1" stroke="gray" stroke-width="0.005"/>\n'
        f'  <polyline points="{pts}" fill="none" stroke="black" stroke-width="0.008"/>\n'
        "</svg>\n"
    )
