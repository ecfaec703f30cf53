"""Cell-state lattice: seeding, alive masking, bounding boxes, ideal composites.

A grid is a float ndarray of shape (height, width, 17), row-major
(y, x, channel).  Channel layout: 0-2 RGB, 3 alpha, 4-15 hidden,
16 identity.  All public operations return new arrays; callers can
treat grids as immutable values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_CHANNELS = 17
RGB = slice(0, 3)
ALPHA = 3
HIDDEN = slice(4, 16)
IDENTITY = 16

# A cell counts as alive when the 3x3 neighbourhood max of alpha
# (zero-padded at the edges) strictly exceeds this.
ALIVE_THRESHOLD = 0.1


@dataclass(frozen=True)
class SeedSpec:
    """A single seed cell: position, placement step, identity value."""

    x: int
    y: int
    time: int = 0
    identity_value: float = 1.0

    def __post_init__(self):
        if self.time < 0:
            raise ValueError(f"seed time must be >= 0, got {self.time}")


def new_grid(width: int, height: int, dtype=np.float32) -> np.ndarray:
    """Return an all-zero grid of shape (height, width, 17)."""
    if width < 3 or height < 3:
        raise ValueError(f"grid dimensions must be >= 3, got {width}x{height}")
    return np.zeros((height, width, N_CHANNELS), dtype=dtype)


def place_seed(grid: np.ndarray, seed: SeedSpec) -> np.ndarray:
    """Return a copy of `grid` with one seeded cell.

    The seed cell gets RGB 0, alpha and all hidden channels 1.0, and the
    identity channel set to the seed's identity value.  No other cell
    changes.
    """
    h, w = grid.shape[:2]
    if not (0 <= seed.x < w and 0 <= seed.y < h):
        raise ValueError(f"seed ({seed.x},{seed.y}) outside {w}x{h} grid")
    out = grid.copy()
    cell = out[seed.y, seed.x]
    cell[:] = 0.0
    cell[ALPHA] = 1.0
    cell[HIDDEN] = 1.0
    cell[IDENTITY] = seed.identity_value
    return out


def max_pool3(plane: np.ndarray) -> np.ndarray:
    """3x3 max of a 2-D plane, zero-padded at the edges."""
    padded = np.zeros((plane.shape[0] + 2, plane.shape[1] + 2), dtype=plane.dtype)
    padded[1:-1, 1:-1] = plane
    # Separable max: horizontal pass then vertical pass.
    horiz = np.maximum(np.maximum(padded[:, :-2], padded[:, 1:-1]), padded[:, 2:])
    return np.maximum(np.maximum(horiz[:-2], horiz[1:-1]), horiz[2:])


def alive_mask(grid: np.ndarray) -> np.ndarray:
    """Boolean (height, width) mask of living cells."""
    return max_pool3(grid[..., ALPHA]) > ALIVE_THRESHOLD


def bounding_box(mask: np.ndarray):
    """Tight inclusive (x_min, y_min, x_max, y_max) over true bits, or None."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def paste_rgba(canvas: np.ndarray, image: np.ndarray, center_x: int, center_y: int) -> bool:
    """Add `image` (h, w, 4) into `canvas` centred on (center_x, center_y).

    Off-grid parts are clipped.  Returns False when the placement falls
    entirely outside the canvas.
    """
    ih, iw = image.shape[:2]
    gh, gw = canvas.shape[:2]
    x0 = center_x - iw // 2
    y0 = center_y - ih // 2
    gx0, gy0 = max(x0, 0), max(y0, 0)
    gx1, gy1 = min(x0 + iw, gw), min(y0 + ih, gh)
    if gx0 >= gx1 or gy0 >= gy1:
        return False
    canvas[gy0:gy1, gx0:gx1] += image[gy0 - y0 : gy1 - y0, gx0 - x0 : gx1 - x0]
    return True


def composite_ideal(
    target: np.ndarray,
    center_a: tuple[int, int],
    center_b: tuple[int, int],
    grid_size: tuple[int, int],
) -> np.ndarray:
    """Expected final RGBA scene for two organisms grown at two positions.

    The target image is pasted centred on each position and the copies are
    summed, saturating at 1.0 where they overlap.  Either placement may be
    partially clipped by the grid edge, but not entirely outside it.
    """
    w, h = grid_size
    canvas = np.zeros((h, w, 4), dtype=target.dtype)
    for cx, cy in (center_a, center_b):
        if not paste_rgba(canvas, target, cx, cy):
            raise ValueError(f"placement at ({cx},{cy}) entirely outside {w}x{h} grid")
    np.clip(canvas, 0.0, 1.0, out=canvas)
    return canvas


def pad_target(target: np.ndarray, grid_size: tuple[int, int], center: tuple[int, int]) -> np.ndarray:
    """Single copy of the target pasted centred on `center`, clamped to [0, 1]."""
    w, h = grid_size
    canvas = np.zeros((h, w, 4), dtype=target.dtype)
    if not paste_rgba(canvas, target, center[0], center[1]):
        raise ValueError(f"placement at {center} entirely outside {w}x{h} grid")
    np.clip(canvas, 0.0, 1.0, out=canvas)
    return canvas
