"""Small raster helpers shared by the camera, colorizer and texturer."""

import numpy as np


def bilinear(image, uv):
    """Bilinearly interpolate ``image`` at sub-pixel positions.

    ``uv`` is (..., 2) in pixel units with the origin at the centre of the
    top-left pixel. Positions must lie in ``[0, W-1] x [0, H-1]``; callers
    check bounds. Returns float64 values of shape (..., C).
    """
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w = img.shape[:2]
    uv = np.asarray(uv, dtype=np.float64)
    u = uv[..., 0]
    v = uv[..., 1]
    x0 = np.clip(np.floor(u).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(v).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (u - x0)[..., None]
    fy = (v - y0)[..., None]
    c00 = img[y0, x0].astype(np.float64)
    c01 = img[y0, x1].astype(np.float64)
    c10 = img[y1, x0].astype(np.float64)
    c11 = img[y1, x1].astype(np.float64)
    top = c00 + (c01 - c00) * fx
    bottom = c10 + (c11 - c10) * fx
    return top + (bottom - top) * fy


def in_bounds(uv, width, height):
    uv = np.asarray(uv, dtype=np.float64)
    u = uv[..., 0]
    v = uv[..., 1]
    with np.errstate(invalid="ignore"):
        return (u >= 0.0) & (v >= 0.0) & (u <= width - 1) & (v <= height - 1)


def round_half_up(values):
    """Round to uint8 with halves going up (127.5 -> 128)."""
    return np.clip(np.floor(np.asarray(values) + 0.5), 0, 255).astype(np.uint8)
