"""Deterministic traffic-sign-like glyph dataset.

Each class is a glyph drawn in a unit "sign frame" (coordinates in
``[-1, 1]``). A sample places the glyph on a two-tone gradient background
with random translation, scale and rotation, renders it with 3x3
supersampling, applies a random contrast/brightness change (dim,
washed-out captures are the norm in road-sign footage) and adds Gaussian
pixel noise.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError
from .dataset import LabeledDataset

CLASS_NAMES = (
    "stop",
    "speed_30",
    "speed_60",
    "speed_80",
    "left_turn",
    "right_turn",
    "no_entry",
    "warning",
    "square",
    "diamond",
)

SUPERSAMPLE = 3
SHIFT_JITTER = 0.10
SCALE_JITTER = 0.15
ROTATION_JITTER_DEG = 10.0
NOISE_SIGMA = 0.05
GLYPH_RADIUS = 0.78  # fraction of the half-width covered by an unjittered sign
CONTRAST_RANGE = (0.35, 1.0)
BRIGHTNESS_JITTER = 0.15

RED = (0.80, 0.08, 0.10)
WHITE = (0.95, 0.95, 0.95)
BLACK = (0.05, 0.05, 0.05)
BLUE = (0.10, 0.30, 0.80)
YELLOW = (0.95, 0.80, 0.10)

# 3x5 digit bitmaps, rows top to bottom
DIGITS = {
    "0": ("111", "101", "101", "101", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "8": ("111", "101", "111", "101", "111"),
}


def _disk(x, y, r=1.0):
    return x * x + y * y <= r * r


def _ring(x, y, r_in, r_out):
    d = x * x + y * y
    return (d <= r_out * r_out) & (d > r_in * r_in)


def _rect(x, y, x0, x1, y0, y1):
    return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


def _octagon(x, y, r=1.0):
    ax, ay = np.abs(x), np.abs(y)
    return (ax <= r * 0.924) & (ay <= r * 0.924) & (ax + ay <= r * 1.307)


def _triangle(x, y, r=1.0):
    # upward equilateral triangle inscribed in radius r (y grows downwards)
    return (y <= 0.5 * r) & (np.sqrt(3.0) * np.abs(x) <= (y + r))


def _digit(x, y, ch, x0, y0, w, h):
    rows = DIGITS[ch]
    col = np.floor((x - x0) / w * 3).astype(int)
    row = np.floor((y - y0) / h * 5).astype(int)
    inside = (col >= 0) & (col < 3) & (row >= 0) & (row < 5)
    bitmap = np.array([[c == "1" for c in r] for r in rows])
    hit = np.zeros(x.shape, dtype=bool)
    hit[inside] = bitmap[row[inside], col[inside]]
    return hit


def _speed(first):
    def layers(x, y):
        return [
            (_disk(x, y), WHITE),
            (_ring(x, y, 0.76, 1.0), RED),
            (_digit(x, y, first, -0.50, -0.42, 0.40, 0.84), BLACK),
            (_digit(x, y, "0", 0.10, -0.42, 0.40, 0.84), BLACK),
        ]
    return layers


def _arrow(direction):
    def layers(x, y):
        xs = x * direction  # direction=+1 points right
        shaft = _rect(xs, y, -0.55, 0.20, -0.13, 0.13)
        head = (xs >= 0.15) & (xs <= 0.62) & (np.abs(y) <= (0.62 - xs) * 1.1)
        return [(_disk(x, y), BLUE), (shaft | head, WHITE)]
    return layers


def _stop(x, y):
    letters = np.zeros(x.shape, dtype=bool)
    for i in range(4):
        x0 = -0.62 + i * 0.33
        letters |= _rect(x, y, x0, x0 + 0.22, -0.20, 0.20)
    return [(_octagon(x, y), WHITE), (_octagon(x, y, 0.88), RED), (letters, WHITE)]


def _no_entry(x, y):
    return [(_disk(x, y), RED), (_rect(x, y, -0.68, 0.68, -0.17, 0.17), WHITE)]


def _warning(x, y):
    mark = _rect(x, y, -0.07, 0.07, -0.30, 0.10) | _rect(x, y, -0.07, 0.07, 0.20, 0.33)
    return [(_triangle(x, y), RED), (_triangle(x, y, 0.72), WHITE), (mark, BLACK)]


def _square(x, y):
    return [(_rect(x, y, -0.85, 0.85, -0.85, 0.85), BLUE),
            (_rect(x, y, -0.45, 0.45, -0.45, 0.45), WHITE)]


def _diamond(x, y):
    d = np.abs(x) + np.abs(y)
    return [(d <= 1.0, WHITE), (d <= 0.82, YELLOW)]


GLYPHS = {
    "stop": _stop,
    "speed_30": _speed("3"),
    "speed_60": _speed("6"),
    "speed_80": _speed("8"),
    "left_turn": _arrow(-1),
    "right_turn": _arrow(+1),
    "no_entry": _no_entry,
    "warning": _warning,
    "square": _square,
    "diamond": _diamond,
}


def render_glyphs(name, n, image_size, rng):
    """Render ``n`` jittered samples of one glyph class as ``(n, 3, S, S)`` float32."""
    s = image_size * SUPERSAMPLE
    # pixel-centre coordinates in [-1, 1]
    grid = (np.arange(s) + 0.5) / s * 2.0 - 1.0
    gy, gx = np.meshgrid(grid, grid, indexing="ij")
    shift = rng.uniform(-SHIFT_JITTER, SHIFT_JITTER, size=(n, 2)) * 2.0
    scale = GLYPH_RADIUS * rng.uniform(1 - SCALE_JITTER, 1 + SCALE_JITTER, size=n)
    theta = np.deg2rad(rng.uniform(-ROTATION_JITTER_DEG, ROTATION_JITTER_DEG, size=n))
    bg_from = rng.uniform(0.2, 0.8, size=(n, 3))
    bg_to = rng.uniform(0.2, 0.8, size=(n, 3))
    bg_angle = rng.uniform(0.0, 2 * np.pi, size=n)
    contrast = rng.uniform(*CONTRAST_RANGE, size=n)
    brightness = rng.uniform(-BRIGHTNESS_JITTER, BRIGHTNESS_JITTER, size=n)
    noise = rng.normal(0.0, NOISE_SIGMA, size=(n, 3, image_size, image_size))

    dx = gx[None] - shift[:, 0, None, None]
    dy = gy[None] - shift[:, 1, None, None]
    c, sn = np.cos(theta)[:, None, None], np.sin(theta)[:, None, None]
    x = (c * dx + sn * dy) / scale[:, None, None]
    y = (-sn * dx + c * dy) / scale[:, None, None]

    ramp = (np.cos(bg_angle)[:, None, None] * gx + np.sin(bg_angle)[:, None, None] * gy + 1.0) / 2.0
    canvas = (bg_from[:, :, None, None] * (1 - ramp[:, None])
              + bg_to[:, :, None, None] * ramp[:, None])
    for mask, colour in GLYPHS[name](x, y):
        canvas = np.where(mask[:, None], np.asarray(colour)[None, :, None, None], canvas)
    img = canvas.reshape(n, 3, image_size, SUPERSAMPLE, image_size, SUPERSAMPLE).mean(axis=(3, 5))
    img = 0.5 + contrast[:, None, None, None] * (img - 0.5) + brightness[:, None, None, None]
    return np.clip(img + noise, 0.0, 1.0).astype(np.float32)


def generate_synthetic_signs(num_classes=10, per_class=50, image_size=32, seed=0):
    """Return ``(train, test)`` with exactly ``per_class`` images per class before the 80/20 split."""
    if num_classes < 6 or num_classes > len(CLASS_NAMES):
        raise ConfigError(f"num_classes must be in [6, {len(CLASS_NAMES)}], got {num_classes}")
    if per_class < 10:
        raise ConfigError(f"per_class must be >= 10, got {per_class}")
    if image_size < 16:
        raise ConfigError(f"image_size must be >= 16, got {image_size}")
    rng = np.random.default_rng(seed)
    names = list(CLASS_NAMES[:num_classes])
    n_test = per_class // 5
    n_train = per_class - n_test
    train_x, train_y, test_x, test_y = [], [], [], []
    for label, name in enumerate(names):
        imgs = render_glyphs(name, per_class, image_size, rng)
        train_x.append(imgs[:n_train])
        test_x.append(imgs[n_train:])
        train_y.append(np.full(n_train, label, dtype=np.int64))
        test_y.append(np.full(n_test, label, dtype=np.int64))
    train = LabeledDataset(np.concatenate(train_x), np.concatenate(train_y), names, "train")
    test = LabeledDataset(np.concatenate(test_x), np.concatenate(test_y), names, "test")
    return train, test
