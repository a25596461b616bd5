"""Prompt checkpoint files.

Layout (all little-endian):

    bytes 0..3   magic "VPQ1"
    byte  4      geometry code: 1 padding, 2 patch_center, 3 patch_top_left, 4 full_overlay
    bytes 5..8   S (u32; 0 for full overlay)
    bytes 9..12  H (u32)
    bytes 13..16 W (u32)
    bytes 17..20 C (u32)
    bytes 21..28 parameter count (u64)
    then         raw parameters as float32, in layout order

Readers reject a count that disagrees with the geometry. Writes are atomic
(temp file + rename), so a crashed save never leaves a truncated checkpoint.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import CheckpointError
from .prompts import PromptKind, PromptShape, VisualPrompt, param_count

MAGIC = b"VPQ1"
_HEADER = struct.Struct("<4sBIIIIQ")

_KIND_CODES = {
    PromptKind.PADDING: 1,
    PromptKind.PATCH_CENTER: 2,
    PromptKind.PATCH_TOP_LEFT: 3,
    PromptKind.FULL_OVERLAY: 4,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def prompt_to_bytes(prompt: VisualPrompt) -> bytes:
    shape = prompt.shape
    header = _HEADER.pack(
        MAGIC,
        _KIND_CODES[shape.kind],
        shape.size or 0,
        shape.height,
        shape.width,
        shape.channels,
        prompt.num_params,
    )
    return header + prompt.raw_params.astype("<f4").tobytes()


def prompt_from_bytes(blob: bytes, source: str = "<bytes>") -> VisualPrompt:
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{source}: truncated header ({len(blob)} bytes)")
    magic, code, s, h, w, c, count = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad checkpoint header (magic {magic!r})")
    kind = _CODE_KINDS.get(code)
    if kind is None:
        raise CheckpointError(f"{source}: unknown geometry code {code}")
    try:
        shape = PromptShape(
            kind=kind,
            height=h,
            width=w,
            size=None if kind is PromptKind.FULL_OVERLAY else s,
            channels=c,
        )
    except Exception as exc:
        raise CheckpointError(f"{source}: invalid geometry in header: {exc}") from exc
    expected = param_count(shape)
    if count != expected:
        raise CheckpointError(
            f"{source}: parameter count {count} does not match geometry"
            f" {shape.describe()} (expected {expected})"
        )
    payload = blob[_HEADER.size:]
    if len(payload) != 4 * count:
        raise CheckpointError(
            f"{source}: payload is {len(payload)} bytes, expected {4 * count}"
        )
    raw = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if not np.all(np.isfinite(raw)):
        raise CheckpointError(f"{source}: non-finite parameters")
    return VisualPrompt(shape, raw)


def save_prompt(prompt: VisualPrompt, path: str) -> None:
    blob = prompt_to_bytes(prompt)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".vpq.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_prompt(path: str) -> VisualPrompt:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return prompt_from_bytes(blob, source=path)


def describe_checkpoint(path: str) -> dict:
    """Header fields plus parameter statistics, for `vpqa inspect`."""
    prompt = load_prompt(path)
    raw = prompt.raw_params
    delta_max = float(np.tanh(np.abs(raw).max())) if raw.size else 0.0
    return {
        "path": path,
        "kind": prompt.shape.kind.value,
        "size": prompt.shape.size,
        "height": prompt.shape.height,
        "width": prompt.shape.width,
        "channels": prompt.shape.channels,
        "param_count": prompt.num_params,
        "raw_min": float(raw.min()),
        "raw_max": float(raw.max()),
        "raw_mean": float(raw.mean()),
        "raw_std": float(raw.std()),
        "delta_abs_max": delta_max,
    }
