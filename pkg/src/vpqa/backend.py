"""Frozen scorer contract, preprocessing, and the deterministic toy scorer.

A frozen scorer maps a composed image in [0,1] (plus a fixed textual prompt)
to a final-position logit vector, and, for training, exposes the gradient of
the quality score with respect to the image. Nothing in this module ever
mutates scorer state.

`score_image` owns the normalization step: pixels -> (pixels - mean) / std per
channel, applied AFTER prompt composition, with the 1/std Jacobian folded into
the returned gradient.

Real MLLM backends (7B-scale models) are out of process and attach through the
wire codec at the bottom of this module; only the toy scorer runs in-process.
The contract assumes raw pre-temperature logits at the first generated answer
position.
"""

from __future__ import annotations

import abc
import hashlib
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BackendError, ConfigError, IngestionError, InputError, ShapeError
from .prompts import PromptedImage
from .scoring import (
    DEFAULT_NEGATIVE_LABELS,
    DEFAULT_POSITIVE_LABELS,
    LogitVector,
    TokenSets,
    quality_score_gradient,
)

DEFAULT_TEXTUAL_PROMPT = "Rate the technical quality of the image."

# Vocabulary of the toy scorer: quality words only.
TOY_VOCAB = {"good": 0, "fine": 1, "poor": 2, "bad": 3}


@dataclass(frozen=True)
class BackendConfig:
    """Everything needed to drive a frozen scorer, minus the weights themselves."""

    name: str
    input_h: int
    input_w: int
    vocab_size: int
    token_sets: TokenSets
    textual_prompt: str = DEFAULT_TEXTUAL_PROMPT
    norm_mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    norm_std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.input_h < 1 or self.input_w < 1:
            raise ConfigError(f"invalid input dims {self.input_h}x{self.input_w}")
        if len(self.norm_mean) != 3 or len(self.norm_std) != 3:
            raise ConfigError("norm_mean/norm_std must have 3 components")
        if any(s <= 0 for s in self.norm_std):
            raise ConfigError(f"norm_std components must be positive, got {self.norm_std}")
        self.token_sets.validate_against(self.vocab_size)
        object.__setattr__(self, "norm_mean", tuple(float(v) for v in self.norm_mean))
        object.__setattr__(self, "norm_std", tuple(float(v) for v in self.norm_std))


@dataclass(frozen=True)
class ScorerOutput:
    """Final-position logits and, when requested, d(quality score)/d(input pixels)."""

    logits: LogitVector
    grad_wrt_image: np.ndarray | None = None


class FrozenScorer(abc.ABC):
    """A scorer whose own parameters never change.

    Implementations receive the image AFTER `score_image` applied the
    config's normalization; adapters that normalize internally declare
    identity normalization in their config.
    """

    config: BackendConfig

    @abc.abstractmethod
    def final_logits(self, normalized: np.ndarray, textual_prompt: str) -> np.ndarray:
        """Length-V logits at the answer position."""

    @abc.abstractmethod
    def vjp_image(
        self, normalized: np.ndarray, logit_cotangent: np.ndarray, textual_prompt: str
    ) -> np.ndarray:
        """Pull a logit-space cotangent back to the normalized image."""

    @abc.abstractmethod
    def state_hash(self) -> str:
        """Digest of all scorer state; must be identical before and after any use."""


class ToyScorer(FrozenScorer):
    """Fixed affine map over four hand-differentiable image statistics.

    Features: overall mean, mean of the central (H/2 x W/2) crop, mean absolute
    horizontal first difference, mean absolute vertical first difference. The
    difference features respond to sharpening, so learned prompts have a real
    optimization landscape. All constants are frozen at import time.
    """

    A = np.array(
        [
            [4.0, 0.0, 8.0, 8.0],
            [2.0, 2.0, 6.0, 6.0],
            [-4.0, 0.0, -8.0, -8.0],
            [-2.0, -2.0, -6.0, -6.0],
        ]
    )
    B = np.zeros(4)
    A.setflags(write=False)
    B.setflags(write=False)

    def __init__(self, config: BackendConfig):
        if config.vocab_size != len(TOY_VOCAB):
            raise ConfigError(
                f"toy backend vocabulary size is {len(TOY_VOCAB)}, got {config.vocab_size}"
            )
        self.config = config

    def _crop(self, z: np.ndarray) -> tuple[slice, slice]:
        h, w = z.shape[1], z.shape[2]
        ch, cw = h // 2, w // 2
        r0, c0 = (h - ch) // 2, (w - cw) // 2
        return slice(r0, r0 + ch), slice(c0, c0 + cw)

    def features(self, z: np.ndarray) -> np.ndarray:
        rs, cs = self._crop(z)
        return np.array(
            [
                z.mean(),
                z[:, rs, cs].mean(),
                np.abs(np.diff(z, axis=2)).mean(),
                np.abs(np.diff(z, axis=1)).mean(),
            ]
        )

    def final_logits(self, normalized: np.ndarray, textual_prompt: str) -> np.ndarray:
        return self.A @ self.features(normalized) + self.B

    def vjp_image(
        self, normalized: np.ndarray, logit_cotangent: np.ndarray, textual_prompt: str
    ) -> np.ndarray:
        z = normalized
        w = self.A.T @ np.asarray(logit_cotangent, dtype=np.float64)
        grad = np.full(z.shape, w[0] / z.size)
        rs, cs = self._crop(z)
        grad[:, rs, cs] += w[1] / z[:, rs, cs].size
        dh = np.diff(z, axis=2)
        sh = np.sign(dh) * (w[2] / dh.size)
        grad[:, :, 1:] += sh
        grad[:, :, :-1] -= sh
        dv = np.diff(z, axis=1)
        sv = np.sign(dv) * (w[3] / dv.size)
        grad[:, 1:, :] += sv
        grad[:, :-1, :] -= sv
        return grad

    def state_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.A.tobytes())
        digest.update(self.B.tobytes())
        digest.update(repr(self.config).encode())
        return digest.hexdigest()

    @staticmethod
    def tokenize(label: str) -> list[int]:
        if label not in TOY_VOCAB:
            raise ConfigError(
                f"label {label!r} is not in the toy vocabulary {sorted(TOY_VOCAB)}"
            )
        return [TOY_VOCAB[label]]


def resolve_token_ids(labels, tokenize) -> tuple[int, ...]:
    """Map label strings to IDs; a multi-token label uses its first sub-token, with a warning."""
    ids = []
    for label in labels:
        sub = tokenize(label)
        if not sub:
            raise ConfigError(f"label {label!r} tokenizes to nothing")
        if len(sub) > 1:
            warnings.warn(
                f"label {label!r} tokenizes to {len(sub)} IDs; using the first ({sub[0]})",
                stacklevel=2,
            )
        ids.append(int(sub[0]))
    return tuple(ids)


def toy_config(
    input_h: int = 32,
    input_w: int = 32,
    positive_labels=DEFAULT_POSITIVE_LABELS,
    negative_labels=DEFAULT_NEGATIVE_LABELS,
    textual_prompt: str = DEFAULT_TEXTUAL_PROMPT,
    norm_mean=(0.0, 0.0, 0.0),
    norm_std=(1.0, 1.0, 1.0),
) -> BackendConfig:
    token_sets = TokenSets(
        positive=resolve_token_ids(positive_labels, ToyScorer.tokenize),
        negative=resolve_token_ids(negative_labels, ToyScorer.tokenize),
        labels=tuple(positive_labels) + tuple(negative_labels),
    )
    return BackendConfig(
        name="toy",
        input_h=input_h,
        input_w=input_w,
        vocab_size=len(TOY_VOCAB),
        token_sets=token_sets,
        textual_prompt=textual_prompt,
        norm_mean=tuple(norm_mean),
        norm_std=tuple(norm_std),
    )


def make_backend(config: BackendConfig) -> FrozenScorer:
    if config.name == "toy":
        return ToyScorer(config)
    raise BackendError(
        f"no in-process backend named {config.name!r}; real MLLM backends attach"
        " out of process via the adapter wire contract (see encode_score_request)"
    )


def tokenizer_for(name: str):
    if name == "toy":
        return ToyScorer.tokenize
    raise BackendError(f"no tokenizer available for backend {name!r}")


def _normalize(pixels: np.ndarray, cfg: BackendConfig) -> np.ndarray:
    mean = np.asarray(cfg.norm_mean)[:, None, None]
    std = np.asarray(cfg.norm_std)[:, None, None]
    return (pixels - mean) / std


def score_image(
    prompted: PromptedImage | np.ndarray, backend: FrozenScorer, want_grad: bool = False
) -> ScorerOutput:
    """Normalize, run the frozen scorer, and optionally chain the score gradient.

    The returned gradient is d(quality score)/d(composed pixels); it already
    includes the 1/std normalization Jacobian, so callers chain it straight
    through clamp and tanh to the prompt parameters.
    """
    cfg = backend.config
    pixels = prompted.pixels if isinstance(prompted, PromptedImage) else np.asarray(prompted)
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape != (3, cfg.input_h, cfg.input_w):
        raise ShapeError(
            f"image shape {pixels.shape} does not match backend input 3x{cfg.input_h}x{cfg.input_w}"
        )
    if pixels.min() < 0.0 or pixels.max() > 1.0:
        raise InputError("composed pixels must lie in [0, 1]")
    z = _normalize(pixels, cfg)
    values = np.asarray(backend.final_logits(z, cfg.textual_prompt), dtype=np.float64)
    if values.shape != (cfg.vocab_size,):
        raise BackendError(
            f"backend returned {values.shape} logits, expected ({cfg.vocab_size},)"
        )
    logits = LogitVector(values=values, position=0)
    grad = None
    if want_grad:
        cotangent = quality_score_gradient(logits, cfg.token_sets)
        grad = backend.vjp_image(z, cotangent, cfg.textual_prompt)
        grad = grad / np.asarray(cfg.norm_std)[:, None, None]
    return ScorerOutput(logits=logits, grad_wrt_image=grad)


# ---------------------------------------------------------------------------
# Image ingestion and preprocessing
# ---------------------------------------------------------------------------


def load_image(path: str) -> np.ndarray:
    """Decode an image file to channel-first float64 RGB in [0, 1].

    `.npy` files hold arrays directly, either (3,H,W) in [0,1] or (H,W,3)
    uint8/float; anything else goes through PIL.
    """
    if str(path).endswith(".npy"):
        try:
            arr = np.load(path)
        except Exception as exc:
            raise IngestionError(f"cannot load array image {path}: {exc}") from exc
        return _coerce_chw(arr, source=path)
    try:
        from PIL import Image

        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"))
    except IngestionError:
        raise
    except Exception as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc
    return _coerce_chw(rgb, source=path)


def _coerce_chw(arr: np.ndarray, source: str = "<array>") -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim != 3:
        raise IngestionError(f"{source}: expected a 3-d RGB array, got shape {arr.shape}")
    if arr.shape[0] == 3 and arr.shape[2] != 3:
        chw = arr.astype(np.float64)
    elif arr.shape[2] == 3:
        chw = arr.transpose(2, 0, 1).astype(np.float64)
    elif arr.shape[0] == 3:
        chw = arr.astype(np.float64)
    else:
        raise IngestionError(f"{source}: no RGB axis in shape {arr.shape}")
    if np.issubdtype(arr.dtype, np.integer):
        chw = chw / 255.0
    if not np.all(np.isfinite(chw)):
        raise IngestionError(f"{source}: non-finite pixel values")
    if chw.min() < 0.0 or chw.max() > 1.0:
        raise IngestionError(
            f"{source}: float pixels must lie in [0, 1] (min {chw.min():.4g}, max {chw.max():.4g})"
        )
    return chw


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centers (corner-aligned-false) and edge clamping."""
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    ry = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    rx = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.floor(ry).astype(np.intp)
    x0 = np.floor(rx).astype(np.intp)
    ty = ry - y0
    tx = rx - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    ty = ty[None, :, None]
    tx = tx[None, None, :]
    top = image[:, y0c, :][:, :, x0c] * (1 - tx) + image[:, y0c, :][:, :, x1c] * tx
    bot = image[:, y1c, :][:, :, x0c] * (1 - tx) + image[:, y1c, :][:, :, x1c] * tx
    return top * (1 - ty) + bot * ty


def preprocess(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the shorter side to max(out_h, out_w), then center-crop to out_h x out_w.

    Accepts anything `_coerce_chw` understands and returns (3, out_h, out_w)
    float64 in [0, 1]. The crop drops floor(extra/2) pixels on the leading side.
    """
    chw = _coerce_chw(image)
    _, h, w = chw.shape
    target_short = max(out_h, out_w)
    if min(h, w) != target_short:
        scale = target_short / min(h, w)
        new_h = target_short if h <= w else int(round(h * scale))
        new_w = target_short if w < h else int(round(w * scale))
        chw = resize_bilinear(chw, new_h, new_w)
        chw = np.clip(chw, 0.0, 1.0)
        _, h, w = chw.shape
    if h < out_h or w < out_w:
        raise ShapeError(f"image {h}x{w} smaller than crop {out_h}x{out_w} after resize")
    r0 = (h - out_h) // 2
    c0 = (w - out_w) // 2
    return chw[:, r0:r0 + out_h, c0:c0 + out_w]


# ---------------------------------------------------------------------------
# Adapter wire contract (normative byte layout, transport-agnostic)
# ---------------------------------------------------------------------------
#
# Request:  u32 C, u32 H, u32 W (LE) | C*H*W float32 LE image in [0,1]
#           | u32 prompt byte length | UTF-8 prompt | u8 want_grad
# Response: u32 V | V float64 LE logits | u8 has_grad
#           | [u32 C, u32 H, u32 W | C*H*W float64 LE gradient]


def encode_score_request(image: np.ndarray, textual_prompt: str, want_grad: bool) -> bytes:
    image = np.ascontiguousarray(image, dtype="<f4")
    if image.ndim != 3:
        raise InputError(f"request image must be C x H x W, got shape {image.shape}")
    c, h, w = image.shape
    prompt_bytes = textual_prompt.encode("utf-8")
    return (
        struct.pack("<III", c, h, w)
        + image.tobytes()
        + struct.pack("<I", len(prompt_bytes))
        + prompt_bytes
        + struct.pack("<B", 1 if want_grad else 0)
    )


def decode_score_request(blob: bytes) -> tuple[np.ndarray, str, bool]:
    try:
        c, h, w = struct.unpack_from("<III", blob, 0)
        offset = 12
        n = c * h * w
        image = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).reshape(c, h, w)
        offset += 4 * n
        (plen,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        prompt = blob[offset:offset + plen].decode("utf-8")
        offset += plen
        (flag,) = struct.unpack_from("<B", blob, offset)
        offset += 1
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise InputError(f"malformed score request: {exc}") from exc
    if offset != len(blob):
        raise InputError(f"score request has {len(blob) - offset} trailing bytes")
    return image.astype(np.float64), prompt, bool(flag)


def encode_score_response(logits: np.ndarray, grad: np.ndarray | None) -> bytes:
    logits = np.ascontiguousarray(logits, dtype="<f8").reshape(-1)
    out = struct.pack("<I", logits.size) + logits.tobytes()
    if grad is None:
        return out + struct.pack("<B", 0)
    grad = np.ascontiguousarray(grad, dtype="<f8")
    if grad.ndim != 3:
        raise InputError(f"response gradient must be C x H x W, got shape {grad.shape}")
    c, h, w = grad.shape
    return out + struct.pack("<B", 1) + struct.pack("<III", c, h, w) + grad.tobytes()


def decode_score_response(blob: bytes) -> tuple[np.ndarray, np.ndarray | None]:
    try:
        (v,) = struct.unpack_from("<I", blob, 0)
        offset = 4
        logits = np.frombuffer(blob, dtype="<f8", count=v, offset=offset).copy()
        offset += 8 * v
        (flag,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        grad = None
        if flag:
            c, h, w = struct.unpack_from("<III", blob, offset)
            offset += 12
            n = c * h * w
            grad = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(c, h, w).copy()
            offset += 8 * n
    except (struct.error, ValueError) as exc:
        raise InputError(f"malformed score response: {exc}") from exc
    if offset != len(blob):
        raise InputError(f"score response has {len(blob) - offset} trailing bytes")
    return logits, grad
