"""Per-cell update rule: fixed perception kernels, dense network, stochastic firing.

One step: every cell perceives its 3x3 neighbourhood through three fixed
kernels (identity, Sobel x, Sobel y) applied per channel, a shared
51 -> 128 -> 17 dense network turns the 51 perception features into a state
delta, each cell applies its delta with probability `fire_rate`, and cells
that are not alive both before and after the step are zeroed.  Alive means
the 3x3 max of alpha strictly exceeds 0.1.

The rollout engine keeps states in 1-cell zero-padded buffers and evaluates
the network only at fired cells inside the dilated alive mask, tracked by a
moving bounding window.  This is exact, not an approximation: deltas at
other cells either are never applied (not fired) or are wiped by the alive
masking, so skipping them cannot change the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import ALIVE_THRESHOLD, ALPHA, N_CHANNELS

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
SOBEL_Y = SOBEL_X.T.copy()
IDENTITY_KERNEL = np.zeros((3, 3))
IDENTITY_KERNEL[1, 1] = 1.0

PERCEPTION_MULTIPLIER = 3
INPUT_DIM = N_CHANNELS * PERCEPTION_MULTIPLIER  # 51
HIDDEN_WIDTH = 128

VARIANTS = ("A", "B", "C")


@dataclass
class ModelWeights:
    """Trainable parameters of the per-cell network plus run metadata.

    `variant` tags which identity-loss flavour the weights were (or will be)
    trained with: A no identity loss, B constant 1.0 target, C seed-value
    target.  The perception kernels are fixed constants, never part of this.
    """

    w1: np.ndarray  # (51, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, 17)
    b2: np.ndarray  # (17,)
    variant: str = "A"
    fire_rate: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.fire_rate <= 1.0:
            raise ValueError(f"fire_rate must be in (0, 1], got {self.fire_rate}")

    @property
    def dtype(self):
        return self.w1.dtype

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[1]

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(
            self.w1.astype(dtype), self.b1.astype(dtype),
            self.w2.astype(dtype), self.b2.astype(dtype),
            self.variant, self.fire_rate,
        )

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
            self.variant, self.fire_rate,
        )


def init_weights(variant: str, rng: np.random.Generator, fire_rate: float = 0.5,
                 hidden_width: int = HIDDEN_WIDTH, dtype=np.float32) -> ModelWeights:
    """Fresh weights: Glorot-uniform first layer, all-zero output layer.

    Zero w2/b2 makes the initial rule a no-op, so freshly seeded organisms
    persist unchanged until training moves the output layer.
    """
    limit = np.sqrt(6.0 / (INPUT_DIM + hidden_width))
    w1 = rng.uniform(-limit, limit, size=(INPUT_DIM, hidden_width)).astype(dtype)
    return ModelWeights(
        w1=w1,
        b1=np.zeros(hidden_width, dtype=dtype),
        w2=np.zeros((hidden_width, N_CHANNELS), dtype=dtype),
        b2=np.zeros(N_CHANNELS, dtype=dtype),
        variant=variant,
        fire_rate=fire_rate,
    )


def step_rng(seed) -> np.random.Generator:
    """Deterministic per-step random stream; same seed, same draws."""
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# perception


def _sobel_pair(halo: np.ndarray):
    """Sobel x/y responses for the window enclosed by a 1-cell halo.

    `halo` has shape (..., bh+2, bw+2, C); returns two (..., bh, bw, C)
    arrays.  Plain cross-correlation with the kernel constants above.
    """
    tl = halo[..., :-2, :-2, :]
    tc = halo[..., :-2, 1:-1, :]
    tr = halo[..., :-2, 2:, :]
    ml = halo[..., 1:-1, :-2, :]
    mr = halo[..., 1:-1, 2:, :]
    bl = halo[..., 2:, :-2, :]
    bc = halo[..., 2:, 1:-1, :]
    br = halo[..., 2:, 2:, :]
    gx = ((tr - tl) + 2.0 * (mr - ml) + (br - bl)) * 0.125
    gy = ((bl - tl) + 2.0 * (bc - tc) + (br - tr)) * 0.125
    return gx, gy


def _window_max3(halo: np.ndarray) -> np.ndarray:
    """3x3 sliding max over the window enclosed by a 1-cell halo."""
    h = np.maximum(np.maximum(halo[..., :-2], halo[..., 1:-1]), halo[..., 2:])
    return np.maximum(np.maximum(h[..., :-2, :], h[..., 1:-1, :]), h[..., 2:, :])


def perceive(grid: np.ndarray) -> np.ndarray:
    """Full-grid perception field (H, W, 51): [state, sobel_x, sobel_y] per channel."""
    h, w, c = grid.shape
    halo = np.zeros((h + 2, w + 2, c), dtype=grid.dtype)
    halo[1:-1, 1:-1] = grid
    gx, gy = _sobel_pair(halo)
    return np.concatenate([grid, gx, gy], axis=-1)


def cell_delta(perception: np.ndarray, weights: ModelWeights) -> np.ndarray:
    """State delta for perception vectors of shape (..., 51)."""
    hidden = np.maximum(perception @ weights.w1 + weights.b1, 0.0)
    return hidden @ weights.w2 + weights.b2


# ---------------------------------------------------------------------------
# batched padded-state rollout engine
#
# States carried as (B, H+2, W+2, C) with a zero border that is never
# written.  Boxes / windows are half-open (y0, y1, x0, x1) in padded
# coordinates; the interior is [1, H+1) x [1, W+1).


@dataclass
class StepCache:
    """Everything the backward pass needs to replay one forward step."""

    state: np.ndarray        # (B, Hp, Wp, C) padded state before the step
    window: tuple | None     # processing window, padded coords
    rows: tuple              # (bb, ry, rx) window-local indices of fired active cells
    perception: np.ndarray   # (n, 51)
    hidden: np.ndarray       # (n, hidden)
    life: np.ndarray         # (B, bh, bw) bool; survival mask over the window


_EMPTY = np.empty(0, dtype=np.intp)


def _empty_cache(state):
    return StepCache(state, None, (_EMPTY, _EMPTY, _EMPTY),
                     np.empty((0, INPUT_DIM), state.dtype),
                     np.empty((0, 0), state.dtype),
                     np.empty((0, 0), bool))


def pad_state(grid: np.ndarray) -> np.ndarray:
    """Lift (..., H, W, C) to a zero-padded (..., H+2, W+2, C) buffer."""
    shape = list(grid.shape)
    shape[-3] += 2
    shape[-2] += 2
    out = np.zeros(shape, dtype=grid.dtype)
    out[..., 1:-1, 1:-1, :] = grid
    return out


def support_box(padded: np.ndarray):
    """Tight padded-coord box over cells with any nonzero channel, or None."""
    flat = padded.reshape(-1, *padded.shape[-3:]) if padded.ndim == 4 else padded[None]
    occupied = flat.any(axis=(0, 3))
    ys = np.flatnonzero(occupied.any(axis=1))
    if ys.size == 0:
        return None
    xs = np.flatnonzero(occupied.any(axis=0))
    return (int(ys[0]), int(ys[-1]) + 1, int(xs[0]), int(xs[-1]) + 1)


def expand_box(box, point_yx):
    """Grow `box` (or None) to include a single padded-coord cell."""
    y, x = point_yx
    if box is None:
        return (y, y + 1, x, x + 1)
    y0, y1, x0, x1 = box
    return (min(y0, y), max(y1, y + 1), min(x0, x), max(x1, x + 1))


def _processing_window(box, hp, wp):
    """Support box padded by 2 cells, clipped to the interior."""
    y0, y1, x0, x1 = box
    return (max(y0 - 2, 1), min(y1 + 2, hp - 1),
            max(x0 - 2, 1), min(x1 + 2, wp - 1))


def forward_step(src: np.ndarray, weights: ModelWeights, fire: np.ndarray,
                 box, dst: np.ndarray | None = None, record: bool = False):
    """One batched update step.

    src:  (B, Hp, Wp, C) padded state; every nonzero cell lies inside `box`.
    fire: (B, H, W) bool, this step's per-cell fire decisions.
    box:  tight support box in padded coords, or None when everything is dead.

    Returns (dst, next_box, cache).  `cache` is None unless `record`.
    """
    b, hp, wp, c = src.shape
    if dst is None:
        dst = src.copy()
    else:
        np.copyto(dst, src)
    if box is None:
        return dst, None, (_empty_cache(src) if record else None)

    wy0, wy1, wx0, wx1 = _processing_window(box, hp, wp)
    halo = src[:, wy0 - 1:wy1 + 1, wx0 - 1:wx1 + 1, :]
    pre = _window_max3(halo[..., ALPHA]) > ALIVE_THRESHOLD  # (B, bh, bw)

    bh, bw = pre.shape[1:]
    grown = np.zeros((b, bh + 2, bw + 2), dtype=bool)
    grown[:, 1:-1, 1:-1] = pre
    active = _window_max3(grown)  # pre dilated by one cell

    fired = active & fire[:, wy0 - 1:wy1 - 1, wx0 - 1:wx1 - 1]
    bb, ry, rx = np.nonzero(fired)
    n = bb.size
    if n:
        gx, gy = _sobel_pair(halo)
        perception = np.empty((n, INPUT_DIM), dtype=src.dtype)
        perception[:, :c] = src[bb, ry + wy0, rx + wx0, :]
        perception[:, c:2 * c] = gx[bb, ry, rx, :]
        perception[:, 2 * c:] = gy[bb, ry, rx, :]
        hidden = np.maximum(perception @ weights.w1 + weights.b1, 0.0)
        delta = hidden @ weights.w2
        delta += weights.b2
        dst[bb, ry + wy0, rx + wx0, :] += delta
    else:
        perception = np.empty((0, INPUT_DIM), dtype=src.dtype)
        hidden = np.empty((0, weights.hidden_width), dtype=src.dtype)

    post = _window_max3(dst[:, wy0 - 1:wy1 + 1, wx0 - 1:wx1 + 1, ALPHA]) > ALIVE_THRESHOLD
    life = pre & post
    dst[:, wy0:wy1, wx0:wx1, :] *= life[..., None]

    span = life.any(axis=0)
    ys = np.flatnonzero(span.any(axis=1))
    if ys.size == 0:
        next_box = None
    else:
        xs = np.flatnonzero(span.any(axis=0))
        next_box = (int(ys[0]) + wy0, int(ys[-1]) + 1 + wy0,
                    int(xs[0]) + wx0, int(xs[-1]) + 1 + wx0)

    cache = None
    if record:
        cache = StepCache(src, (wy0, wy1, wx0, wx1), (bb, ry, rx),
                          perception, hidden, life)
    return dst, next_box, cache


def update_step(grid: np.ndarray, weights: ModelWeights, rng: np.random.Generator) -> np.ndarray:
    """Public single-grid step; draws one uniform per cell, row-major."""
    h, w = grid.shape[:2]
    fire = rng.random((h, w)) < weights.fire_rate
    padded = pad_state(grid[None])
    out, _, _ = forward_step(padded, weights, fire[None], support_box(padded))
    return out[0, 1:-1, 1:-1, :].copy()


# ---------------------------------------------------------------------------
# growth


@dataclass
class GrowResult:
    final: np.ndarray
    snapshots: dict = field(default_factory=dict)


def grow(weights: ModelWeights, grid_size: tuple[int, int], seeds, steps: int,
         rng: np.random.Generator, snapshot_steps=(), observer=None) -> GrowResult:
    """Grow organisms from scheduled seeds for a fixed number of steps.

    Starts from an empty grid.  At each timestep t the seeds with time == t
    are placed, then one update step runs.  `observer(t, grid_view)` is
    called after every step with a read-only view (valid during the call);
    `snapshot_steps` requests copies of the state after that many steps
    (0 = the freshly seeded grid).  Fire draws come one-per-cell-per-step
    from `rng`, so equal seeds give bit-identical trajectories.
    """
    w, h = grid_size
    if steps < 0:
        raise ValueError("steps must be >= 0")
    seeds = list(seeds)
    for s in seeds:
        if not (0 <= s.x < w and 0 <= s.y < h):
            raise ValueError(f"seed ({s.x},{s.y}) outside {w}x{h} grid")
        if s.time > steps:
            raise ValueError(f"seed time {s.time} exceeds rollout length {steps}")

    state = np.zeros((1, h + 2, w + 2, N_CHANNELS), dtype=weights.dtype)
    buffer = np.empty_like(state)
    box = None
    snapshot_steps = set(snapshot_steps)
    snapshots = {}

    def place(t):
        nonlocal box
        for s in seeds:
            if s.time == t:
                cell = np.zeros(N_CHANNELS, dtype=state.dtype)
                cell[ALPHA] = 1.0
                cell[4:16] = 1.0
                cell[16] = s.identity_value
                state[0, s.y + 1, s.x + 1, :] = cell
                box = expand_box(box, (s.y + 1, s.x + 1))

    place(0)
    if 0 in snapshot_steps:
        snapshots[0] = state[0, 1:-1, 1:-1, :].copy()
    for t in range(steps):
        if t > 0:
            place(t)
        fire = rng.random((1, h, w)) < weights.fire_rate
        buffer, box, _ = forward_step(state, weights, fire, box, dst=buffer)
        state, buffer = buffer, state
        done = t + 1
        if observer is not None:
            observer(done, state[0, 1:-1, 1:-1, :])
        if done in snapshot_steps:
            snapshots[done] = state[0, 1:-1, 1:-1, :].copy()
    if steps > 0:
        place(steps)  # boundary placements with no following step
        if steps in snapshot_steps:
            snapshots[steps] = state[0, 1:-1, 1:-1, :].copy()

    return GrowResult(final=state[0, 1:-1, 1:-1, :].copy(), snapshots=snapshots)
