"""Checkpoints, target images, PNG frame export, run manifests.

Checkpoint layout (all little-endian): magic "NCAW", format version u32,
channel count u32, hidden width u32, perception multiplier u32, variant
tag byte, fire rate f32, then w1 / b1 / w2 / b2 as row-major f32, then a
u32 length-prefixed UTF-8 metadata string.  Loading is strict: every
declared dimension must agree with the payload length.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .grid import N_CHANNELS
from .model import PERCEPTION_MULTIPLIER, ModelWeights

CHECKPOINT_MAGIC = b"NCAW"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIcf")


class CheckpointError(Exception):
    """Base class for unreadable checkpoint files."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    """Payload length disagrees with the declared dimensions."""


class IncompatibleCheckpointError(CheckpointError):
    """Well-formed file describing a model this engine cannot host."""


def save_checkpoint(weights: ModelWeights, path, metadata: str = "") -> None:
    hidden = weights.hidden_width
    meta = metadata.encode("utf-8")
    parts = [
        _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, N_CHANNELS, hidden,
                     PERCEPTION_MULTIPLIER, weights.variant.encode("ascii"),
                     float(weights.fire_rate)),
        np.ascontiguousarray(weights.w1, dtype="<f4").tobytes(),
        np.ascontiguousarray(weights.b1, dtype="<f4").tobytes(),
        np.ascontiguousarray(weights.w2, dtype="<f4").tobytes(),
        np.ascontiguousarray(weights.b2, dtype="<f4").tobytes(),
        struct.pack("<I", len(meta)),
        meta,
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path, with_metadata: bool = False):
    """Read a checkpoint; returns ModelWeights (plus metadata if asked)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (magic {data[:4]!r})")
    if len(data) < _HEADER.size:
        raise TruncatedCheckpointError(f"{path}: header cut short")
    magic, version, channels, hidden, mult, variant_b, fire_rate = _HEADER.unpack(
        data[:_HEADER.size])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{path}: format version {version}, expected {CHECKPOINT_VERSION}")
    if channels != N_CHANNELS or mult != PERCEPTION_MULTIPLIER:
        raise IncompatibleCheckpointError(
            f"{path}: {channels} channels x{mult} perception, "
            f"engine expects {N_CHANNELS} x{PERCEPTION_MULTIPLIER}")
    variant = variant_b.decode("ascii", errors="replace")
    if variant not in ("A", "B", "C"):
        raise IncompatibleCheckpointError(f"{path}: unknown variant {variant!r}")

    input_dim = channels * mult
    counts = (input_dim * hidden, hidden, hidden * channels, channels)
    body = _HEADER.size + 4 * sum(counts)
    if len(data) < body + 4:
        raise TruncatedCheckpointError(
            f"{path}: {len(data)} bytes, dimensions require at least {body + 4}")
    (meta_len,) = struct.unpack_from("<I", data, body)
    if len(data) != body + 4 + meta_len:
        raise TruncatedCheckpointError(
            f"{path}: {len(data)} bytes, expected {body + 4 + meta_len}")

    offset = _HEADER.size
    arrays = []
    for count in counts:
        arrays.append(np.frombuffer(data, dtype="<f4", count=count,
                                    offset=offset).astype(np.float32))
        offset += 4 * count
    weights = ModelWeights(
        w1=arrays[0].reshape(input_dim, hidden),
        b1=arrays[1],
        w2=arrays[2].reshape(hidden, channels),
        b2=arrays[3],
        variant=variant,
        fire_rate=float(fire_rate),
    )
    if with_metadata:
        return weights, data[body + 4:].decode("utf-8")
    return weights


# ---------------------------------------------------------------------------
# target images


class TargetImageError(ValueError):
    pass


def load_target(path, desired_width: int | None = None) -> np.ndarray:
    """Load an 8-bit RGBA PNG as a float (h, w, 4) array in [0, 1].

    RGB is premultiplied by alpha on load; optional nearest-neighbour
    resample to `desired_width`, preserving aspect ratio.
    """
    img = Image.open(path)
    if img.mode != "RGBA":
        raise TargetImageError(f"{path}: mode {img.mode}, need 8-bit RGBA")
    if desired_width is not None and desired_width != img.width:
        height = max(1, round(img.height * desired_width / img.width))
        img = img.resize((desired_width, height), Image.NEAREST)
    arr = np.asarray(img, dtype=np.float32) / 255.0
    arr[..., :3] *= arr[..., 3:4]
    return arr


def target_from_rgba8(rgba: np.ndarray) -> np.ndarray:
    """Same scaling/premultiply convention as `load_target`, from memory."""
    arr = rgba.astype(np.float32) / 255.0
    arr[..., :3] *= arr[..., 3:4]
    return arr


# ---------------------------------------------------------------------------
# rendering


def grid_to_rgba8(grid: np.ndarray) -> np.ndarray:
    """Quantize the RGBA channels of a state (or an RGBA image) for display.

    Values are clamped to [0, 1], un-premultiplied where alpha > 0, and
    scaled to 8-bit.
    """
    rgba = grid[..., :4] if grid.shape[-1] == N_CHANNELS else grid
    rgba = np.clip(rgba, 0.0, 1.0).astype(np.float32)
    alpha = rgba[..., 3:4]
    out = rgba.copy()
    np.divide(out[..., :3], alpha, out=out[..., :3], where=alpha > 0)
    np.clip(out, 0.0, 1.0, out=out)
    return np.rint(out * 255.0).astype(np.uint8)


def save_grid_png(grid: np.ndarray, path) -> None:
    Image.fromarray(grid_to_rgba8(grid), "RGBA").save(path, "PNG")


def save_state(grid: np.ndarray, path) -> None:
    np.save(path, grid)


def load_state(path) -> np.ndarray:
    return np.load(path)


# ---------------------------------------------------------------------------
# built-in target: a flat-colour gecko silhouette


def _capsule(draw, x0, y0, x1, y1, radius, fill):
    draw.line([x0, y0, x1, y1], fill=fill, width=2 * radius)
    for x, y in ((x0, y0), (x1, y1)):
        draw.ellipse([x - radius, y - radius, x + radius, y + radius], fill=fill)


def make_gecko_rgba8(width: int = 20) -> np.ndarray:
    """Procedurally drawn gecko-ish lizard, head up-left, curled tail down-right.

    Drawn at high resolution and downsampled, so the silhouette keeps soft
    alpha edges.  Deterministic; the asymmetric shape matters more than the
    artwork.
    """
    big_w, big_h = 320, 416
    img = Image.new("RGBA", (big_w, big_h), (0, 0, 0, 0))
    d = ImageDraw.Draw(img)
    body_col = (90, 174, 72, 255)
    dark_col = (52, 112, 40, 255)

    # body: fat diagonal ellipse (drawn as stacked circles along the spine)
    spine = [(120, 120), (132, 150), (146, 182), (158, 214), (168, 246)]
    radii = [44, 52, 56, 52, 44]
    for (cx, cy), r in zip(spine, radii):
        d.ellipse([cx - r, cy - r, cx + r, cy + r], fill=body_col)
    # head up-left with two eyes
    d.ellipse([62, 34, 158, 130], fill=body_col)
    d.ellipse([78, 54, 102, 78], fill=dark_col)
    d.ellipse([120, 48, 144, 72], fill=dark_col)
    # four splayed legs
    _capsule(d, 98, 142, 34, 104, 15, body_col)
    _capsule(d, 158, 128, 224, 86, 15, body_col)
    _capsule(d, 124, 238, 58, 272, 15, body_col)
    _capsule(d, 184, 230, 248, 266, 15, body_col)
    # tail: tapering arc curling to the right
    import math
    cx, cy = 216, 296
    for i in range(40):
        t = i / 39.0
        ang = math.pi * (0.95 - 1.55 * t)
        rad = 52 - 30 * t
        px = cx + rad * math.cos(ang)
        py = cy + rad * math.sin(ang)
        r = round(16 - 12 * t)
        d.ellipse([px - r, py - r, px + r, py + r], fill=body_col)

    img = img.crop(img.getbbox())  # tight to the silhouette
    height = max(1, round(img.height * width / img.width))
    img = img.resize((width, height), Image.LANCZOS)
    return np.asarray(img, dtype=np.uint8)


def write_gecko_png(path, width: int = 20) -> None:
    Image.fromarray(make_gecko_rgba8(width), "RGBA").save(path, "PNG")


def builtin_gecko(width: int = 20) -> np.ndarray:
    """The built-in target in loader convention ([0,1], premultiplied)."""
    return target_from_rgba8(make_gecko_rgba8(width))


# ---------------------------------------------------------------------------
# run manifest


@dataclass
class RunManifest:
    """Everything one experiment invocation needs, validated up front."""

    master_seed: int
    grid_width: int
    grid_height: int
    target_path: str | None
    anchor_x: int
    anchor_y: int
    results_path: str
    traces_path: str | None = None
    frames_dir: str | None = None

    def validate(self) -> None:
        if self.target_path is not None and not os.path.exists(self.target_path):
            raise FileNotFoundError(f"target image not found: {self.target_path}")
        for out in (self.results_path, self.traces_path):
            if out:
                parent = os.path.dirname(os.path.abspath(out))
                if not os.path.isdir(parent):
                    raise FileNotFoundError(f"output directory missing: {parent}")
        if self.frames_dir:
            os.makedirs(self.frames_dir, exist_ok=True)
