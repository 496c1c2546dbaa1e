"""Procedural aerial-like test scenes.

Real aerial sources are not shipped with the package, so tests, demos and the
acceptance run draw HR images from this generator: a textured ground plane
with roads, lane markings, buildings with shaded roofs, vehicles and tree
canopies.  Everything is a deterministic function of the seed and values stay
in [0, 1] (linear).
"""

import numpy as np
from scipy import ndimage


def _fractal(rng, h, w, octaves=5, persistence=0.55):
    out = np.zeros((h, w))
    amp = 1.0
    for o in range(octaves):
        cell = max(2, int(min(h, w) / 2 ** (o + 1)))
        small = rng.standard_normal((h // cell + 2, w // cell + 2))
        out += amp * ndimage.zoom(small, cell, order=3)[:h, :w]
        amp *= persistence
    out -= out.min()
    return out / max(out.max(), 1e-12)


def aerial_scene(height=512, width=512, seed=0) -> np.ndarray:
    """Return an ``(height, width, 3)`` float64 scene in [0, 1]."""
    if min(height, width) < 16:
        raise ValueError(f"scene must be at least 16x16, got {height}x{width}")
    rng = np.random.default_rng(seed)
    h, w = height, width
    yy, xx = np.mgrid[0:h, 0:w]

    ground_tint = np.array([0.32, 0.36, 0.22]) + rng.uniform(-0.05, 0.05, 3)
    tex = _fractal(rng, h, w)
    img = ground_tint * (0.7 + 0.6 * tex[..., None])
    img += 0.03 * rng.standard_normal((h, w, 1))

    # roads with lane markings
    for _ in range(rng.integers(1, 4)):
        horizontal = rng.random() < 0.5
        pos = rng.integers(0, h if horizontal else w)
        half = rng.integers(5, 12)
        coord = yy if horizontal else xx
        road = np.abs(coord - pos) <= half
        img[road] = np.array([0.28, 0.28, 0.29]) + 0.02 * rng.standard_normal((road.sum(), 1))
        along = xx if horizontal else yy
        dash = (np.abs(coord - pos) <= 0) & ((along // 9) % 2 == 0)
        img[dash] = 0.85

    # buildings: flat roofs with a lit and a shaded half, plus a cast shadow
    for _ in range(rng.integers(15, 35)):
        bh, bw = np.minimum(rng.integers(10, 60, 2), (h // 2, w // 2))
        r0, c0 = rng.integers(0, h - bh), rng.integers(0, w - bw)
        roof = rng.uniform(0.35, 0.95) * np.array([1.0, rng.uniform(0.85, 1.0), rng.uniform(0.75, 1.0)])
        sh = slice(min(r0 + 4, h), min(r0 + bh + 4, h)), slice(min(c0 + 4, w), min(c0 + bw + 4, w))
        img[sh] *= 0.45
        img[r0 : r0 + bh, c0 : c0 + bw] = roof
        if rng.random() < 0.6:
            img[r0 : r0 + bh, c0 + bw // 2 : c0 + bw] = roof * 0.7
        if rng.random() < 0.4:
            # rooftop equipment / panel rows
            for rr in range(r0 + 3, r0 + bh - 3, 4):
                img[rr, c0 + 2 : c0 + bw - 2] = roof * 0.4

    # vehicles
    for _ in range(rng.integers(30, 80)):
        vh, vw = (3, 7) if rng.random() < 0.5 else (7, 3)
        r0, c0 = rng.integers(0, h - vh), rng.integers(0, w - vw)
        img[r0 : r0 + vh, c0 : c0 + vw] = rng.uniform(0.05, 0.95, 3)

    # tree canopies
    for _ in range(rng.integers(20, 60)):
        rad = rng.uniform(3, 9)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        canopy = d2 <= rad * rad
        shade = 0.6 + 0.4 * np.clip(1 - np.sqrt(d2) / rad, 0, 1)
        leaf = np.array([0.12, 0.25, 0.08]) * (0.8 + 0.4 * tex[..., None])
        img[canopy] = (leaf * shade[..., None])[canopy]

    return np.clip(img, 0.0, 1.0)
