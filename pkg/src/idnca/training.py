"""Pool-based trainer: variant losses, BPTT gradients, Adam, sample pool.

Three loss variants share one RGBA reconstruction term and differ only in
the identity term: variant A has none, variant B pins the identity channel
of every target-body cell to 1.0, variant C pins it to the value that was
planted in the sample's seed cell.

Gradients are exact backpropagation through every update step of a rollout,
computed by replaying the recorded forward caches in reverse.  The realized
fire decisions are constants (gradient flows only through fired cells) and
the alive masks are thresholded booleans, so zeroed cells pass no gradient.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .grid import ALIVE_THRESHOLD, ALPHA, IDENTITY, N_CHANNELS
from .model import (HIDDEN_WIDTH, ModelWeights, forward_step, init_weights,
                    pad_state, support_box)

TRAIN_IDENTITY_VALUES = (0.0, 0.5, 1.0)

# Transpose of the forward cross-correlation: ds[c+d] += K[d] * dg[c] for
# every kernel offset d.  The corner taps of sobel_x/sobel_y combine into
# sum/difference planes, which halves the temporaries in the hot loop.


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


# ---------------------------------------------------------------------------
# losses


def identity_target_mask(target: np.ndarray) -> np.ndarray:
    """Cells whose identity is constrained: where target alpha > 0.1."""
    return target[..., 3] > ALIVE_THRESHOLD


def loss_batch(states: np.ndarray, target: np.ndarray, variant: str,
               seed_ids: np.ndarray, identity_weight: float = 1.0) -> np.ndarray:
    """Per-sample loss for a (B, H, W, C) batch against a padded target."""
    if states.shape[1:3] != target.shape[:2]:
        raise ValueError(f"grid {states.shape[1:3]} vs target {target.shape[:2]}")
    diff = states[..., :4] - target
    out = (diff * diff).mean(axis=(1, 2, 3))
    if variant != "A":
        mask = identity_target_mask(target)
        idvals = states[..., IDENTITY][:, mask]  # (B, n_mask)
        want = 1.0 if variant == "B" else np.asarray(seed_ids)[:, None]
        idiff = idvals - want
        out = out + identity_weight * (idiff * idiff).mean(axis=1)
    return out


def loss(final: np.ndarray, target: np.ndarray, variant: str,
         seed_identity: float = 1.0, identity_weight: float = 1.0) -> float:
    """Loss of one grown grid against the padded target image."""
    return float(loss_batch(final[None], target, variant,
                            np.array([seed_identity]), identity_weight)[0])


def loss_gradient(states, target, variant, seed_ids, identity_weight=1.0, scale=1.0):
    """Per-sample losses and the gradient of scale * sum(losses) w.r.t. states."""
    if states.shape[1:3] != target.shape[:2]:
        raise ValueError(f"grid {states.shape[1:3]} vs target {target.shape[:2]}")
    losses = loss_batch(states, target, variant, seed_ids, identity_weight)
    grad = np.zeros_like(states)
    n_rgba = target.shape[0] * target.shape[1] * 4
    grad[..., :4] = (states[..., :4] - target) * (2.0 * scale / n_rgba)
    if variant != "A":
        mask = identity_target_mask(target)
        idvals = states[..., IDENTITY][:, mask]
        want = 1.0 if variant == "B" else np.asarray(seed_ids)[:, None]
        gid = grad[..., IDENTITY]
        gid[:, mask] = (idvals - want) * (2.0 * scale * identity_weight / mask.sum())
    return losses, grad


# ---------------------------------------------------------------------------
# backpropagation through time


def bptt_backward(weights: ModelWeights, caches, grad_final_padded: np.ndarray) -> dict:
    """Walk recorded forward steps in reverse, accumulating parameter grads.

    `grad_final_padded` is dL/d(final padded state); it is consumed in place.
    Accumulation happens in float64 regardless of the rollout dtype.
    """
    w1, w2 = weights.w1, weights.w2
    c = N_CHANNELS
    grads = {
        "w1": np.zeros(w1.shape, np.float64),
        "b1": np.zeros(weights.b1.shape, np.float64),
        "w2": np.zeros(w2.shape, np.float64),
        "b2": np.zeros(weights.b2.shape, np.float64),
    }
    g = grad_final_padded
    for cache in reversed(caches):
        if cache.window is None:
            continue  # everything dead: the step was an identity map
        wy0, wy1, wx0, wx1 = cache.window
        g[:, wy0:wy1, wx0:wx1, :] *= cache.life[..., None]
        bb, ry, rx = cache.rows
        if bb.size == 0:
            continue
        d_delta = g[bb, ry + wy0, rx + wx0, :]  # (n, 17), grad w.r.t. fired deltas
        grads["w2"] += cache.hidden.T @ d_delta
        grads["b2"] += d_delta.sum(axis=0)
        d_hidden = d_delta @ w2.T
        d_hidden *= cache.hidden > 0
        grads["w1"] += cache.perception.T @ d_hidden
        grads["b1"] += d_hidden.sum(axis=0)
        d_percep = d_hidden @ w1.T  # (n, 51)
        # state slots feed the cells themselves ...
        g[bb, ry + wy0, rx + wx0, :] += d_percep[:, :c]
        # ... and the sobel slots spread into the 1-cell neighbourhood.
        bh, bw = wy1 - wy0, wx1 - wx0
        dgx = np.zeros((g.shape[0], bh, bw, c), dtype=g.dtype)
        dgy = np.zeros_like(dgx)
        dgx[bb, ry, rx] = d_percep[:, c:2 * c]
        dgy[bb, ry, rx] = d_percep[:, 2 * c:]
        corner_sum = (dgx + dgy) * 0.125
        corner_diff = (dgx - dgy) * 0.125
        dgx *= 0.25
        dgy *= 0.25
        halo = g[:, wy0 - 1:wy1 + 1, wx0 - 1:wx1 + 1, :]

        def spread(dy, dx, plane, negate=False):
            dst = halo[:, 1 + dy:1 + dy + bh, 1 + dx:1 + dx + bw, :]
            if negate:
                dst -= plane
            else:
                dst += plane

        spread(-1, -1, corner_sum, negate=True)
        spread(1, 1, corner_sum)
        spread(-1, 1, corner_diff)
        spread(1, -1, corner_diff, negate=True)
        spread(0, -1, dgx, negate=True)
        spread(0, 1, dgx)
        spread(-1, 0, dgy, negate=True)
        spread(1, 0, dgy)
        # Writes touching the pad ring are gradients w.r.t. cells that do not
        # exist; earlier windows only read the interior, so they are inert.
    return grads


def rollout_recorded(weights, state_padded, fire_masks):
    """Run `len(fire_masks)` recorded steps; returns (final_padded, caches)."""
    caches = []
    state = state_padded
    box = support_box(state)
    for fire in fire_masks:
        state, box, cache = forward_step(state, weights, fire, box, record=True)
        caches.append(cache)
    return state, caches


def bptt_gradients(weights: ModelWeights, start: np.ndarray, steps: int,
                   target: np.ndarray, variant: str, seed_identity: float,
                   rng: np.random.Generator, identity_weight: float = 1.0,
                   loss_scale: float = 1.0) -> dict:
    """Exact loss gradient through a `steps`-long rollout of one grid."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    h, w = start.shape[:2]
    padded = pad_state(start[None].astype(weights.dtype, copy=False))
    fire = rng.random((steps, 1, h, w)) < weights.fire_rate
    final, caches = rollout_recorded(weights, padded, fire)
    _, grad = loss_gradient(final[:, 1:-1, 1:-1, :], target, variant,
                            np.array([seed_identity]), identity_weight, scale=loss_scale)
    grad_padded = pad_state(grad)
    return bptt_backward(weights, caches, grad_padded)


def normalize_gradients(grads: dict) -> dict:
    """Scale each tensor to unit L2 norm; all-zero tensors pass through."""
    out = {}
    for key, g in grads.items():
        norm = np.linalg.norm(g)
        out[key] = g / norm if norm > 0 else g
    return out


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """Adam moments plus the step-decay learning-rate schedule."""

    m: dict
    v: dict
    step: int = 0
    learning_rate: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_step: int = 2000
    decay_factor: float = 0.5

    def current_lr(self) -> float:
        # Full rate for the first `decay_step` updates, decayed afterwards.
        if self.step < self.decay_step:
            return self.learning_rate
        return self.learning_rate * self.decay_factor


def adam_init(weights: ModelWeights, learning_rate: float = 2e-3,
              decay_step: int = 2000, decay_factor: float = 0.5) -> AdamState:
    shapes = {"w1": weights.w1, "b1": weights.b1, "w2": weights.w2, "b2": weights.b2}
    return AdamState(
        m={k: np.zeros(a.shape, np.float64) for k, a in shapes.items()},
        v={k: np.zeros(a.shape, np.float64) for k, a in shapes.items()},
        learning_rate=learning_rate, decay_step=decay_step, decay_factor=decay_factor,
    )


def adam_step(opt: AdamState, weights: ModelWeights, grads: dict) -> ModelWeights:
    """Standard bias-corrected Adam update, in place on the weight arrays."""
    lr = opt.current_lr()
    opt.step += 1
    t = opt.step
    params = {"w1": weights.w1, "b1": weights.b1, "w2": weights.w2, "b2": weights.b2}
    for key, p in params.items():
        g = grads[key]
        opt.m[key] = opt.beta1 * opt.m[key] + (1.0 - opt.beta1) * g
        opt.v[key] = opt.beta2 * opt.v[key] + (1.0 - opt.beta2) * (g * g)
        m_hat = opt.m[key] / (1.0 - opt.beta1 ** t)
        v_hat = opt.v[key] / (1.0 - opt.beta2 ** t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + opt.eps)).astype(p.dtype)
    return weights


# ---------------------------------------------------------------------------
# sample pool


@dataclass
class SamplePool:
    """Reservoir of partially grown states, stored padded for the engine."""

    states: np.ndarray           # (capacity, H+2, W+2, C)
    seed_identities: np.ndarray  # (capacity,)

    @property
    def capacity(self) -> int:
        return self.states.shape[0]


def make_seed_state(width: int, height: int, identity: float, dtype=np.float32) -> np.ndarray:
    """Padded single-seed grid with the seed at the grid centre."""
    state = np.zeros((height + 2, width + 2, N_CHANNELS), dtype=dtype)
    cell = state[height // 2 + 1, width // 2 + 1]
    cell[ALPHA] = 1.0
    cell[4:16] = 1.0
    cell[IDENTITY] = identity
    return state


def init_pool(capacity: int, width: int, height: int, variant: str,
              rng: np.random.Generator, dtype=np.float32) -> SamplePool:
    if variant == "C":
        ids = rng.choice(TRAIN_IDENTITY_VALUES, size=capacity)
    else:
        ids = np.ones(capacity)
    states = np.empty((capacity, height + 2, width + 2, N_CHANNELS), dtype=dtype)
    for i in range(capacity):
        states[i] = make_seed_state(width, height, ids[i], dtype)
    return SamplePool(states=states, seed_identities=ids.astype(np.float64))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    iterations: int = 8000
    batch_size: int = 12
    pool_size: int = 1024
    grid_width: int = 48
    grid_height: int = 48
    fire_rate: float = 0.5
    hidden_width: int = HIDDEN_WIDTH
    learning_rate: float = 2e-3
    lr_decay_step: int = 2000
    lr_decay_factor: float = 0.5
    rollout_min: int = 64
    rollout_max: int = 96
    identity_weight: float = 1.0
    seed: int = 0
    log_every: int = 100

    @classmethod
    def from_items(cls, items) -> "TrainConfig":
        """Build from (key, value-string) pairs, e.g. parsed key=value lines."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in items:
            if key not in types:
                raise ValueError(f"unknown training option {key!r}")
            caster = float if types[key] == "float" else int
            kwargs[key] = caster(value)
        return cls(**kwargs)

    def replace(self, **kwargs) -> "TrainConfig":
        return dataclasses.replace(self, **kwargs)


def parse_config_file(path) -> list:
    """key=value lines; blank lines and #-comments ignored."""
    items = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {line!r}")
            key, _, value = line.partition("=")
            items.append((key.strip(), value.strip()))
    return items


def train_iteration(pool: SamplePool, weights: ModelWeights, opt: AdamState,
                    config: TrainConfig, target: np.ndarray,
                    rng: np.random.Generator) -> tuple:
    """One optimizer update; mutates pool, weights and opt.

    Draw order from `rng` is fixed: batch indices, replacement identity
    (variant C only), rollout length, then one uniform per cell per step.
    """
    b = config.batch_size
    h, w = config.grid_height, config.grid_width
    idx = rng.choice(pool.capacity, size=b, replace=False)
    batch = pool.states[idx]  # fancy index: a copy
    seed_ids = pool.seed_identities[idx].copy()

    rank = loss_batch(batch[:, 1:-1, 1:-1, :], target, weights.variant,
                      seed_ids, config.identity_weight)
    worst = int(np.argmax(rank))
    if weights.variant == "C":
        new_id = float(rng.choice(TRAIN_IDENTITY_VALUES))
    else:
        new_id = 1.0
    batch[worst] = make_seed_state(w, h, new_id, batch.dtype)
    seed_ids[worst] = new_id

    steps = int(rng.integers(config.rollout_min, config.rollout_max + 1))
    fire = rng.random((steps, b, h, w)) < weights.fire_rate
    final, caches = rollout_recorded(weights, batch, fire)

    losses, grad = loss_gradient(final[:, 1:-1, 1:-1, :], target, weights.variant,
                                 seed_ids, config.identity_weight, scale=1.0 / b)
    grads = normalize_gradients(bptt_backward(weights, caches, pad_state(grad)))
    adam_step(opt, weights, grads)

    pool.states[idx] = final
    pool.seed_identities[idx] = seed_ids
    return pool, weights, float(losses.mean())


def train(variant: str, config: TrainConfig, target: np.ndarray,
          progress=None) -> tuple:
    """Train one variant from scratch; returns (weights, per-iteration losses).

    Aborts with TrainingDiverged if the batch loss stops being finite.
    """
    rng = np.random.default_rng(config.seed)
    weights = init_weights(variant, rng, fire_rate=config.fire_rate,
                           hidden_width=config.hidden_width)
    opt = adam_init(weights, learning_rate=config.learning_rate,
                    decay_step=config.lr_decay_step,
                    decay_factor=config.lr_decay_factor)
    pool = init_pool(config.pool_size, config.grid_width, config.grid_height,
                     variant, rng, dtype=weights.dtype)
    losses = []
    for i in range(config.iterations):
        _, _, batch_loss = train_iteration(pool, weights, opt, config, target, rng)
        if not np.isfinite(batch_loss):
            raise TrainingDiverged(
                f"variant {variant}: loss {batch_loss} at iteration {i + 1}")
        losses.append(batch_loss)
        if progress is not None and (i + 1) % config.log_every == 0:
            progress(i + 1, batch_loss)
    return weights, losses


def schedule_lr(config: TrainConfig, iteration: int) -> float:
    """Learning rate in effect for a given 1-based training iteration."""
    if iteration <= config.lr_decay_step:
        return config.learning_rate
    return config.learning_rate * config.lr_decay_factor
