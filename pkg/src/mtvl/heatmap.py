"""Bilinear upsampling of patch probability grids and PGM output."""

import numpy as np


def bilinear_resize(grid, out_h, out_w):
    """Half-pixel-centered bilinear resize with edge clamping.

    Each source cell value sits at its cell center; output pixel centers are
    mapped back into source coordinates and interpolated, so a patch grid
    spreads smoothly over the full image (matching the usual image-resize
    convention).
    """
    grid = np.asarray(grid, dtype=np.float64)
    in_h, in_w = grid.shape[:2]

    def axis_coords(n_out, n_in):
        x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0.0, n_in - 1.0)
        lo = np.floor(x).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = x - lo
        return lo, hi, frac

    ylo, yhi, fy = axis_coords(out_h, in_h)
    xlo, xhi, fx = axis_coords(out_w, in_w)
    fy = fy.reshape((out_h, 1) + (1,) * (grid.ndim - 2))
    fx = fx.reshape((1, out_w) + (1,) * (grid.ndim - 2))
    tl = grid[np.ix_(ylo, xlo)]
    tr = grid[np.ix_(ylo, xhi)]
    bl = grid[np.ix_(yhi, xlo)]
    br = grid[np.ix_(yhi, xhi)]
    top = tl * (1 - fx) + tr * fx
    bot = bl * (1 - fx) + br * fx
    return top * (1 - fy) + bot * fy


def write_pgm(path, values):
    """Write a [0,1] float array as a binary PGM (P5, maxval 255)."""
    arr = np.asarray(values, dtype=np.float64)
    pixels = np.rint(255.0 * np.clip(arr, 0.0, 1.0)).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())


def read_pgm(path):
    """Read back a binary P5 PGM written by write_pgm."""
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = map(int, parts[1].split())
    maxval = int(parts[2])
    data = np.frombuffer(parts[3], dtype=np.uint8, count=h * w)
    return data.reshape(h, w), maxval


def emit_heatmap(path, patch_probs, grid_shape, out_h, out_w):
    """Upsample one attribute's patch probabilities to image size and write PGM."""
    probs = np.asarray(patch_probs, dtype=np.float64).reshape(grid_shape)
    if probs.min() < 0 or probs.max() > 1:
        raise ValueError("patch probabilities must lie in [0, 1]")
    up = bilinear_resize(probs, out_h, out_w)
    write_pgm(path, up)
    return up
