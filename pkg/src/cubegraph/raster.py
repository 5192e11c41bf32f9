"""Raster front end: load sketch scans, binarize, denoise, and thin to skeletons."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError


@dataclass(frozen=True)
class RasterConfig:
    """Knobs for binarization and small-component removal.

    window_radius: half-width of the local-mean window used by the adaptive
        threshold, so the window is (2r+1) x (2r+1) pixels.
    offset: a pixel is ink only if it is at least this much darker than the
        local mean.
    min_component_px: 8-connected foreground components smaller than this are
        treated as noise and removed.
    invert: set when the input is light ink on a dark background.
    """

    window_radius: int = 15
    offset: float = 10.0
    min_component_px: int = 20
    invert: bool = False

    def __post_init__(self) -> None:
        if self.window_radius < 1:
            raise ValueError(f"window_radius must be >= 1, got {self.window_radius}")
        if self.min_component_px < 1:
            raise ValueError(f"min_component_px must be >= 1, got {self.min_component_px}")


@dataclass
class RasterImage:
    """Grayscale image held as a row-major (height, width) array in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValueError(f"expected a non-empty 2-D intensity array, got shape {self.pixels.shape}")
        if self.pixels.min() < 0 or self.pixels.max() > 255:
            raise ValueError("intensities must lie in [0, 255]")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass
class BinaryImage:
    """Boolean stroke mask with the same geometry as its source image."""

    mask: np.ndarray

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.ndim != 2 or min(self.mask.shape) < 1:
            raise ValueError(f"expected a non-empty 2-D mask, got shape {self.mask.shape}")

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    def foreground_count(self) -> int:
        return int(self.mask.sum())


def load_image(path: str) -> RasterImage:
    """Read a PNG or PGM file as grayscale.

    Color inputs are reduced by averaging the RGB channels. Raises
    FileNotFoundError for missing paths and ValueError for files Pillow cannot
    decode.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"image file not found: {path}")
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode == "L":
                arr = np.asarray(img, dtype=np.float64)
            elif img.mode in ("I", "I;16"):
                arr = np.asarray(img, dtype=np.float64)
                if arr.size and arr.max() > 255:
                    arr = arr * (255.0 / 65535.0)
            else:
                rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
                arr = rgb.mean(axis=2)
    except UnidentifiedImageError as exc:
        raise ValueError(f"unsupported or corrupt image file: {path}") from exc
    return RasterImage(arr)


def _local_means(pixels: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the (2r+1)^2 window around each pixel, clamped at the borders."""
    h, w = pixels.shape
    integral = np.zeros((h + 1, w + 1), dtype=np.float64)
    integral[1:, 1:] = pixels.cumsum(axis=0).cumsum(axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.maximum(ys - radius, 0)[:, None]
    y1 = np.minimum(ys + radius + 1, h)[:, None]
    x0 = np.maximum(xs - radius, 0)[None, :]
    x1 = np.minimum(xs + radius + 1, w)[None, :]
    sums = integral[y1, x1] - integral[y0, x1] - integral[y1, x0] + integral[y0, x0]
    areas = (y1 - y0) * (x1 - x0)
    return sums / areas


def adaptive_threshold(image: RasterImage, config: RasterConfig) -> BinaryImage:
    """Binarize against the local mean: ink where intensity < mean - offset.

    With config.invert the comparison flips to intensity > mean + offset.
    """
    means = _local_means(image.pixels, config.window_radius)
    if config.invert:
        mask = image.pixels > means + config.offset
    else:
        mask = image.pixels < means - config.offset
    return BinaryImage(mask)


_NEIGHBORS8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def _components(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """8-connected foreground components in raster scan order."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    out = []
    for y, x in np.argwhere(mask):
        if seen[y, x]:
            continue
        comp = []
        stack = [(int(y), int(x))]
        seen[y, x] = True
        while stack:
            cy, cx = stack.pop()
            comp.append((cy, cx))
            for dy, dx in _NEIGHBORS8:
                ny, nx = cy + dy, cx + dx
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    stack.append((ny, nx))
        out.append(comp)
    return out


def denoise(binary: BinaryImage, config: RasterConfig) -> BinaryImage:
    """Drop 8-connected components smaller than config.min_component_px."""
    keep = np.zeros_like(binary.mask)
    for comp in _components(binary.mask):
        if len(comp) >= config.min_component_px:
            ys, xs = zip(*comp)
            keep[ys, xs] = True
    return BinaryImage(keep)


# Ring order used by the thinning predicates: N, NE, E, SE, S, SW, W, NW.
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _ring(m: np.ndarray, y: int, x: int) -> list[bool]:
    return [bool(m[y + dy, x + dx]) for dy, dx in _RING]


def _transitions(ring: list[bool]) -> int:
    t = 0
    for i in range(8):
        if not ring[i] and ring[(i + 1) % 8]:
            t += 1
    return t


def _deletable(ring: list[bool]) -> bool:
    b = sum(ring)
    return 2 <= b <= 6 and _transitions(ring) == 1


def _singly_connected(ring: list[bool]) -> bool:
    """True when the foreground in the 3x3 ring forms one connected piece
    around a deletable center (Yokoi connectivity number one for 8-connected
    foreground). Deleting such a pixel cannot split, merge, or puncture
    anything."""
    # reorder from (N, NE, E, SE, S, SW, W, NW) to E, NE, N, NW, W, SW, S, SE
    x = (ring[2], ring[1], ring[0], ring[7], ring[6], ring[5], ring[4], ring[3])
    total = 0
    for k in (0, 2, 4, 6):
        if not x[k]:
            total += 1 - (not x[(k + 1) % 8]) * (not x[(k + 2) % 8])
    return total == 1


def _prune_simple(m: np.ndarray) -> None:
    """Delete redundant pixels left at diagonal staircases, corners, and
    junction clusters: any pixel with two or more neighbors whose removal
    keeps the neighborhood singly connected. Endpoints (one neighbor) stay,
    so curves never shorten; interior curve pixels score two and are safe."""
    while True:
        changed = False
        for y, x in np.argwhere(m):
            ring = _ring(m, y, x)
            if 2 <= sum(ring) <= 7 and _singly_connected(ring):
                m[y, x] = False
                changed = True
        if not changed:
            break


def _candidates(m: np.ndarray) -> np.ndarray:
    """Cheap vectorized prefilter: foreground pixels whose stale neighbor
    count sits in [2, 6]. Pixels that only become deletable mid-sweep are
    picked up by the next sweep of the fixpoint loop."""
    core = m.astype(np.int8)
    counts = np.zeros(m.shape, dtype=np.int8)
    counts[1:-1, 1:-1] = (
        core[:-2, :-2] + core[:-2, 1:-1] + core[:-2, 2:]
        + core[1:-1, :-2] + core[1:-1, 2:]
        + core[2:, :-2] + core[2:, 1:-1] + core[2:, 2:]
    )
    return m & (counts >= 2) & (counts <= 6)


def skeletonize(binary: BinaryImage) -> BinaryImage:
    """Thin strokes to one-pixel-wide curves.

    Two directional subiterations in the Zhang-Suen style, but deletions are
    applied sequentially with the neighborhood re-read from the evolving
    image. Sequential application keeps every deletion connectivity-safe, so
    components are never split or lost and closed loops survive. A pruning
    pass then strips the redundant pixels the directional criterion leaves on
    diagonal staircases, and a final pass breaks any residual 2x2 blocks
    where a connectivity-safe deletion exists.
    """
    h, w = binary.mask.shape
    m = np.zeros((h + 2, w + 2), dtype=bool)
    m[1:-1, 1:-1] = binary.mask
    while True:
        changed = False
        for phase in (0, 1):
            for y, x in np.argwhere(_candidates(m)):
                ring = _ring(m, y, x)
                if not _deletable(ring):
                    continue
                p2, p4, p6, p8 = ring[0], ring[2], ring[4], ring[6]
                if phase == 0:
                    if (p2 and p4 and p6) or (p4 and p6 and p8):
                        continue
                else:
                    if (p2 and p4 and p8) or (p2 and p6 and p8):
                        continue
                m[y, x] = False
                changed = True
        if not changed:
            break
    _prune_simple(m)
    _break_square_blocks(m)
    return BinaryImage(m[1:-1, 1:-1].copy())


def _break_square_blocks(m: np.ndarray) -> None:
    """Remove one safe pixel from each remaining 2x2 all-foreground block.

    Blocks where no pixel can be deleted without changing connectivity (two
    one-pixel strokes crossing between pixel centers) are left alone:
    topology preservation wins over strict thinness there.
    """
    while True:
        blocks = m[:-1, :-1] & m[1:, :-1] & m[:-1, 1:] & m[1:, 1:]
        removed = False
        for y, x in np.argwhere(blocks):
            if not (m[y, x] and m[y + 1, x] and m[y, x + 1] and m[y + 1, x + 1]):
                continue
            for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
                if _deletable(_ring(m, y + dy, x + dx)):
                    m[y + dy, x + dx] = False
                    removed = True
                    break
        if not removed:
            break
