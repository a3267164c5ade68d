"""Decision-region images from label grids.

Pixels are colored by class; when confidence shading is on, the brightness
factor maps max-softmax confidence from [1/C, 1] linearly onto [0.35, 1]
(the 0.35 floor keeps low-confidence regions visible). Anchors are drawn as
filled dots, mislabeled anchors as an x. Output is a plain (H, W, 3) uint8
buffer; `write_ppm` emits it as binary PPM (P6), the canonical bit-exact
format. Rows run top-to-bottom with beta decreasing, columns left-to-right
with alpha increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError
from .plane import LabelGrid

# Default 10-class palette (CIFAR-10 class order): red frog, green bird,
# orange automobile; the remaining colors are hue-separated so confidence
# shading can never map two classes to the same pixel value.
DEFAULT_COLORS = (
    (70, 130, 255),   # 0 airplane: blue
    (255, 150, 20),   # 1 automobile: orange
    (40, 200, 40),    # 2 bird: green
    (170, 60, 255),   # 3 cat: purple
    (250, 240, 60),   # 4 deer: yellow
    (150, 90, 30),    # 5 dog: brown
    (255, 40, 40),    # 6 frog: red
    (40, 220, 220),   # 7 horse: cyan
    (255, 80, 170),   # 8 ship: magenta
    (140, 140, 140),  # 9 truck: gray
)

CONFIDENCE_FLOOR = 0.35


@dataclass(frozen=True)
class Palette:
    colors: tuple[tuple[int, int, int], ...] = DEFAULT_COLORS
    marker_color: tuple[int, int, int] = (0, 0, 0)
    background: tuple[int, int, int] = (255, 255, 255)

    def __post_init__(self):
        for i, a in enumerate(self.colors):
            for j in range(i + 1, len(self.colors)):
                b = self.colors[j]
                if sum(abs(x - y) for x, y in zip(a, b)) < 30:
                    raise ConfigurationError(
                        f"palette colors {i} and {j} are closer than 30 per channel-sum")

    def color(self, label: int) -> tuple[int, int, int]:
        if not 0 <= label < len(self.colors):
            raise ConfigurationError(f"palette has no color for class {label}")
        return self.colors[label]


@dataclass(frozen=True)
class Marker:
    alpha: float
    beta: float
    mislabeled: bool = False


@dataclass(frozen=True)
class RenderOptions:
    markers: tuple[Marker, ...] = ()
    shade_by_confidence: bool = False
    upscale: int = 1


def _to_pixel(value: float, lo: float, hi: float, n: int) -> int:
    return int(round((value - lo) / (hi - lo) * (n - 1)))


def render(grid: LabelGrid, palette: Palette = Palette(),
           options: RenderOptions = RenderOptions()) -> np.ndarray:
    """Deterministic (H, W, 3) uint8 image of a label grid."""
    na, nb = grid.resolution
    labels = grid.raster()                       # (nb, na), beta rows
    if int(labels.max()) >= len(palette.colors):
        raise ConfigurationError(
            f"palette has {len(palette.colors)} colors but grid contains class {int(labels.max())}")
    lut = np.asarray(palette.colors, dtype=np.float64)
    img = lut[labels]                            # (nb, na, 3)
    if options.shade_by_confidence:
        c = len(palette.colors)
        conf = grid.confidence.reshape(nb, na)
        factor = CONFIDENCE_FLOOR + (1 - CONFIDENCE_FLOOR) * (conf - 1.0 / c) / (1.0 - 1.0 / c)
        factor = np.clip(factor, CONFIDENCE_FLOOR, 1.0)
        img = img * factor[:, :, None]
    img = np.floor(img + 0.5).astype(np.uint8)
    img = img[::-1]                              # beta increases upward

    for m in options.markers:
        px = _to_pixel(m.alpha, grid.alpha_range[0], grid.alpha_range[1], na)
        py = nb - 1 - _to_pixel(m.beta, grid.beta_range[0], grid.beta_range[1], nb)
        if m.mislabeled:
            offsets = [(0, 0)] + [(d * s, d * t) for d in (1, 2) for s in (-1, 1) for t in (-1, 1)]
        else:
            offsets = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
        for dy, dx in offsets:
            y, x = py + dy, px + dx
            if 0 <= y < nb and 0 <= x < na:
                img[y, x] = palette.marker_color

    if options.upscale > 1:
        img = np.repeat(np.repeat(img, options.upscale, axis=0), options.upscale, axis=1)
    return img


def write_ppm(image: np.ndarray, path: str | Path) -> None:
    """Binary PPM: b"P6\\n{width} {height}\\n255\\n" + row-major RGB bytes."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ConfigurationError(f"image buffer must be (H, W, 3), got {image.shape}")
    h, w = image.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + image.tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P6"):
        raise FormatError(f"{path}: not a binary PPM", offset=0)
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header", offset=pos)
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(f) for f in fields)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}", offset=pos)
    payload = raw[pos:]
    if len(payload) != w * h * 3:
        raise FormatError(f"{path}: payload {len(payload)} bytes != {w * h * 3}", offset=pos)
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()
