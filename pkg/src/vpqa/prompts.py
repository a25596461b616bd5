"""Pixel-space visual prompts: geometry, parameterization, and image composition.

A prompt is a flat vector of unconstrained trainable parameters attached to a
fixed pixel region of the model input. Materialization squashes parameters
through tanh into a delta in (-1, 1); composition adds the delta to an image in
[0, 1] and clamps the result back to [0, 1].

Four geometries are supported: a border ring ("padding"), a square patch
anchored at the center or the top-left corner, and a full-image overlay.
Padding is parameterized as four strips (top/bottom full width, left/right
spanning all rows below the top strip), so its parameter count is
3*2S*(W+H-S); the two bottom corners carry two parameters each, and the delta
there is tanh of their sum.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InputError, ShapeError

CHANNELS = 3


class PromptKind(str, enum.Enum):
    PADDING = "padding"
    PATCH_CENTER = "patch_center"
    PATCH_TOP_LEFT = "patch_top_left"
    FULL_OVERLAY = "full_overlay"


@dataclass(frozen=True)
class PromptShape:
    """Geometry of a visual prompt for a `channels x height x width` input."""

    kind: PromptKind
    height: int
    width: int
    size: int | None = None  # border/patch size in pixels; None for full overlay
    channels: int = CHANNELS

    def __post_init__(self):
        kind = PromptKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ShapeError(f"non-positive dimensions: {self.channels}x{self.height}x{self.width}")
        if self.channels != CHANNELS:
            raise ShapeError(f"channel count is fixed at {CHANNELS}, got {self.channels}")
        if kind is PromptKind.FULL_OVERLAY:
            if self.size is not None:
                raise ShapeError("full overlay takes no size parameter")
            return
        if self.size is None or self.size < 1:
            raise ShapeError(f"{kind.value} requires a positive size, got {self.size}")
        if kind is PromptKind.PADDING and 2 * self.size >= min(self.height, self.width):
            raise ShapeError(
                f"padding size {self.size} too large for {self.height}x{self.width}"
                " (need 2S < min(H, W))"
            )
        if kind is not PromptKind.PADDING and self.size > min(self.height, self.width):
            raise ShapeError(
                f"patch size {self.size} exceeds min({self.height}, {self.width})"
            )

    def describe(self) -> str:
        geom = self.kind.value if self.size is None else f"{self.kind.value},S={self.size}"
        return f"{geom},{self.height}x{self.width}"


def strips(shape: PromptShape) -> tuple[tuple[int, int, int, int], ...]:
    """Active-region rectangles as (row0, col0, height, width), in layout order."""
    h, w, s = shape.height, shape.width, shape.size
    if shape.kind is PromptKind.FULL_OVERLAY:
        return ((0, 0, h, w),)
    if shape.kind is PromptKind.PADDING:
        return (
            (0, 0, s, w),          # top
            (h - s, 0, s, w),      # bottom
            (s, 0, h - s, s),      # left, rows [S, H)
            (s, w - s, h - s, s),  # right, rows [S, H)
        )
    if shape.kind is PromptKind.PATCH_CENTER:
        return (((h - s) // 2, (w - s) // 2, s, s),)
    return ((0, 0, s, s),)  # top-left patch


def param_count(shape: PromptShape) -> int:
    """Number of trainable parameters for a geometry.

    Padding: 3*2S*(W+H-S). Patch: 3*S^2. Full overlay: 3*H*W.
    """
    h, w, s = shape.height, shape.width, shape.size
    if shape.kind is PromptKind.FULL_OVERLAY:
        return shape.channels * h * w
    if shape.kind is PromptKind.PADDING:
        return shape.channels * 2 * s * (w + h - s)
    return shape.channels * s * s


@lru_cache(maxsize=64)
def _slot_coords(shape: PromptShape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-slot (channel, row, col) arrays, channel-major then strip order, row-major in a strip."""
    rows, cols = [], []
    for r0, c0, sh, sw in strips(shape):
        rr, cc = np.meshgrid(np.arange(r0, r0 + sh), np.arange(c0, c0 + sw), indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
    row1 = np.concatenate(rows)
    col1 = np.concatenate(cols)
    per_channel = row1.size
    ch = np.repeat(np.arange(shape.channels), per_channel)
    row = np.tile(row1, shape.channels)
    col = np.tile(col1, shape.channels)
    for arr in (ch, row, col):
        arr.setflags(write=False)
    return ch, row, col


def slot_coordinates(shape: PromptShape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic layout: flat parameter index -> (channel, row, col)."""
    return _slot_coords(shape)


def slot_index(shape: PromptShape, channel: int, strip: int, row: int, col: int) -> int:
    """Inverse layout at slot granularity: (channel, strip, row-in-strip, col-in-strip) -> flat index."""
    rects = strips(shape)
    if not (0 <= strip < len(rects)):
        raise ShapeError(f"strip index {strip} out of range")
    _, _, sh, sw = rects[strip]
    if not (0 <= row < sh and 0 <= col < sw):
        raise ShapeError(f"slot ({row}, {col}) outside strip {strip}")
    per_channel = sum(h * w for _, _, h, w in rects)
    offset = sum(h * w for _, _, h, w in rects[:strip])
    return channel * per_channel + offset + row * sw + col


@dataclass
class VisualPrompt:
    """Trainable prompt parameters plus their geometry.

    `raw_params` holds the pre-tanh values; the training loop is the single
    writer, everything else treats instances as read-only.
    """

    shape: PromptShape
    raw_params: np.ndarray = field(repr=False)

    def __post_init__(self):
        raw = np.asarray(self.raw_params, dtype=np.float64).reshape(-1)
        expected = param_count(self.shape)
        if raw.size != expected:
            raise ShapeError(
                f"raw_params length {raw.size} != param_count {expected} for {self.shape.describe()}"
            )
        if not np.all(np.isfinite(raw)):
            raise InputError("raw_params must be finite")
        self.raw_params = raw

    @property
    def num_params(self) -> int:
        return self.raw_params.size

    def copy(self) -> "VisualPrompt":
        return VisualPrompt(self.shape, self.raw_params.copy())

    def describe(self) -> str:
        return self.shape.describe()


@dataclass(frozen=True)
class PromptedImage:
    """Composed model input in [0,1] plus provenance (source image id, prompt id)."""

    pixels: np.ndarray
    provenance: tuple[str, str] = ("", "")


def create_prompt(
    shape: PromptShape,
    init: str = "zeros",
    eps: float = 1e-3,
    rng: np.random.Generator | None = None,
) -> VisualPrompt:
    """Create a prompt with `zeros` (composition is the identity) or `uniform_small` init."""
    n = param_count(shape)
    if init == "zeros":
        raw = np.zeros(n)
    elif init == "uniform_small":
        if eps <= 0:
            raise InputError(f"uniform_small needs eps > 0, got {eps}")
        rng = rng if rng is not None else np.random.default_rng()
        raw = rng.uniform(-eps, eps, size=n)
    else:
        raise InputError(f"unknown init policy {init!r}")
    return VisualPrompt(shape, raw)


def _raw_canvas(prompt: VisualPrompt) -> np.ndarray:
    shape = prompt.shape
    canvas = np.zeros((shape.channels, shape.height, shape.width))
    ch, row, col = slot_coordinates(shape)
    np.add.at(canvas, (ch, row, col), prompt.raw_params)
    return canvas


def materialize(prompt: VisualPrompt) -> np.ndarray:
    """Pixel delta: tanh of the accumulated raw parameters, exactly 0 off the active region."""
    return np.tanh(_raw_canvas(prompt))


def backprop_to_params(
    prompt: VisualPrompt, delta: np.ndarray, grad_wrt_delta: np.ndarray
) -> np.ndarray:
    """Chain a gradient w.r.t. the materialized delta back to the flat raw parameters.

    `delta` must be the array returned by `materialize` for the current raw_params.
    """
    ch, row, col = slot_coordinates(prompt.shape)
    g = grad_wrt_delta * (1.0 - delta * delta)
    return g[ch, row, col]


def _check_image(image: np.ndarray, shape: PromptShape) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    expected = (shape.channels, shape.height, shape.width)
    if image.shape != expected:
        raise ShapeError(f"image shape {image.shape} != prompt shape {expected}")
    if not np.all(np.isfinite(image)):
        raise InputError("image contains non-finite values")
    if image.min() < 0.0 or image.max() > 1.0:
        raise InputError(
            f"image values outside [0, 1] (min {image.min():.4g}, max {image.max():.4g});"
            " normalization belongs after prompt composition"
        )
    return image


def compose(prompt: VisualPrompt, image: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Compose prompt and image.

    Returns (pixels, interior_mask, delta): the clamped composition, the clamp
    subgradient mask (1 where 0 < image+delta < 1, else 0), and the delta.
    """
    image = _check_image(image, prompt.shape)
    delta = materialize(prompt)
    raw_sum = image + delta
    pixels = np.clip(raw_sum, 0.0, 1.0)
    interior = ((raw_sum > 0.0) & (raw_sum < 1.0)).astype(np.float64)
    return pixels, interior, delta


def apply_prompt(
    prompt: VisualPrompt, image: np.ndarray, image_id: str = ""
) -> PromptedImage:
    """x' = clamp(x + materialize(prompt), 0, 1). Rejects images not already in [0, 1]."""
    pixels, _, _ = compose(prompt, image)
    return PromptedImage(pixels=pixels, provenance=(image_id, prompt.describe()))


def render_delta(prompt: VisualPrompt) -> np.ndarray:
    """Visualization of the learned delta: 0.5 + 0.5*delta, mid-gray off the active region."""
    return 0.5 + 0.5 * materialize(prompt)
