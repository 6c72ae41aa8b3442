"""Vote-map visualisation: which source pixels vote for a given location."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import numpy as np

# jet indices used for the signed range; keeps both ends bright
_LOW, _HIGH = 32, 223
_BACKGROUND_LEVEL = 96


@lru_cache(maxsize=1)
def jet_table() -> np.ndarray:
    doc = json.loads(resources.files("houghvote").joinpath("data/jet256.json").read_text())
    return np.array(doc["entries"], dtype=np.uint8)


def colorize(contrib, background=None) -> np.ndarray:
    """Blend a signed contribution map in jet colours over a grayscale background.

    Opacity grows with ``|contrib|``; zero contributions show the background
    (scaled to at most a dark gray), so all-zero inputs give a uniform dark
    image.  Returns an ``(H, W, 3)`` uint8 array.
    """
    v = np.asarray(contrib, dtype=np.float64)
    H, W = v.shape
    if background is None:
        gray = np.zeros((H, W))
    else:
        bg = np.abs(np.asarray(background, dtype=np.float64))
        m = bg.max()
        gray = bg / m * _BACKGROUND_LEVEL if m > 0 else np.zeros((H, W))
    base = np.repeat(gray[..., None], 3, axis=-1)
    m = np.abs(v).max()
    if m == 0:
        return np.round(base).astype(np.uint8)
    norm = v / m
    idx = np.round(_LOW + (norm + 1) / 2 * (_HIGH - _LOW)).astype(int)
    color = jet_table()[idx].astype(np.float64)
    alpha = np.abs(norm)[..., None]
    return np.round((1 - alpha) * base + alpha * color).astype(np.uint8)


def write_ppm(path, rgb) -> None:
    rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
    H, W, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    W, H = int(tokens[1]), int(tokens[2])
    return np.frombuffer(raw, np.uint8, H * W * 3, pos + 1).reshape(H, W, 3)
