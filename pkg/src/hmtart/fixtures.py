"""Deterministic synthetic images used as test fixtures and demo inputs."""

from __future__ import annotations

import numpy as np

from .ingest import RgbImage


def checkerboard(size: int = 512, cell: int = 1) -> RgbImage:
    """Checkerboard alternating 0/255 in every channel."""
    idx = np.arange(size) // cell
    board = ((idx[:, None] + idx[None, :]) % 2 * 255).astype(np.uint8)
    return RgbImage(np.repeat(board[:, :, None], 3, axis=2))


def checkerboard_matrix(size: int = 512, cell: int = 1) -> np.ndarray:
    """The generator's per-channel matrix, as floats."""
    idx = np.arange(size) // cell
    return ((idx[:, None] + idx[None, :]) % 2 * 255).astype(np.float64)


def synthetic_painting(height: int = 512, width: int = 512, seed: int = 0,
                       strokes: int = 400, copy_smoothing: float = 0.0) -> RgbImage:
    """A painterly test image: colour gradients overlaid with elongated strokes.

    ``copy_smoothing`` in [0, 1) blends the strokes toward a box-blurred
    version, imitating a more laboured, less textured replica.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    canvas = np.empty((height, width, 3))
    for ch in range(3):
        a, b, c = rng.uniform(-0.2, 0.2, 3)
        canvas[:, :, ch] = 128 + 60 * np.sin(a * xx / 8 + b * yy / 8 + c * 6)
    for _ in range(strokes):
        cy, cx = rng.uniform(0, height), rng.uniform(0, width)
        length, thick = rng.uniform(8, 60), rng.uniform(1.5, 6)
        theta = rng.uniform(0, np.pi)
        colour = rng.uniform(0, 255, 3)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        mask = np.exp(-(u / length) ** 4 - (v / thick) ** 2)
        alpha = rng.uniform(0.4, 0.9) * mask
        canvas = canvas * (1 - alpha[:, :, None]) + colour * alpha[:, :, None]
    canvas += rng.normal(0, 3.0, canvas.shape)
    if copy_smoothing > 0:
        k = 5
        pad = np.pad(canvas, ((k // 2, k // 2), (k // 2, k // 2), (0, 0)), mode="wrap")
        blur = np.zeros_like(canvas)
        for dy in range(k):
            for dx in range(k):
                blur += pad[dy:dy + height, dx:dx + width]
        blur /= k * k
        canvas = (1 - copy_smoothing) * canvas + copy_smoothing * blur
    return RgbImage(np.clip(np.round(canvas), 0, 255).astype(np.uint8))
