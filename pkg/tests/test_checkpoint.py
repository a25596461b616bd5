import struct

import numpy as np
import pytest

from vpqa.checkpoint import (
    describe_checkpoint,
    load_prompt,
    prompt_from_bytes,
    prompt_to_bytes,
    save_prompt,
)
from vpqa.errors import CheckpointError
from vpqa.prompts import PromptKind, PromptShape, create_prompt


def make_prompt(seed=0):
    return create_prompt(
        PromptShape(PromptKind.PADDING, 32, 32, 4),
        "uniform_small",
        eps=0.7,
        rng=np.random.default_rng(seed),
    )


def test_round_trip_bytes_identical(tmp_path):
    prompt = make_prompt()
    path1 = tmp_path / "a.vpq"
    path2 = tmp_path / "b.vpq"
    save_prompt(prompt, str(path1))
    loaded = load_prompt(str(path1))
    save_prompt(loaded, str(path2))
    assert path1.read_bytes() == path2.read_bytes()
    assert loaded.shape == prompt.shape


def test_header_layout():
    prompt = make_prompt()
    blob = prompt_to_bytes(prompt)
    magic, code, s, h, w, c, count = struct.unpack_from("<4sBIIIIQ", blob)
    assert magic == b"VPQ1"
    assert (code, s, h, w, c) == (1, 4, 32, 32, 3)
    assert count == prompt.num_params
    assert len(blob) == struct.calcsize("<4sBIIIIQ") + 4 * count


def test_params_stored_float32_in_layout_order():
    prompt = make_prompt()
    blob = prompt_to_bytes(prompt)
    payload = np.frombuffer(blob[struct.calcsize("<4sBIIIIQ"):], dtype="<f4")
    np.testing.assert_array_equal(payload, prompt.raw_params.astype("<f4"))


def test_overlay_stores_zero_size():
    prompt = create_prompt(PromptShape(PromptKind.FULL_OVERLAY, 8, 8), "zeros")
    blob = prompt_to_bytes(prompt)
    _, code, s, *_ = struct.unpack_from("<4sBIIIIQ", blob)
    assert (code, s) == (4, 0)
    restored = prompt_from_bytes(blob)
    assert restored.shape.size is None


def test_bad_magic_rejected():
    blob = bytearray(prompt_to_bytes(make_prompt()))
    blob[:4] = b"JUNK"
    with pytest.raises(CheckpointError, match="bad checkpoint header"):
        prompt_from_bytes(bytes(blob))


def test_mismatched_param_count_rejected():
    prompt = make_prompt()
    blob = bytearray(prompt_to_bytes(prompt))
    struct.pack_into("<Q", blob, 21, prompt.num_params - 1)
    with pytest.raises(CheckpointError, match="parameter count"):
        prompt_from_bytes(bytes(blob))


def test_truncated_payload_rejected():
    blob = prompt_to_bytes(make_prompt())
    with pytest.raises(CheckpointError, match="payload"):
        prompt_from_bytes(blob[:-8])


def test_unknown_kind_code_rejected():
    blob = bytearray(prompt_to_bytes(make_prompt()))
    blob[4] = 9
    with pytest.raises(CheckpointError, match="geometry code"):
        prompt_from_bytes(bytes(blob))


def test_invalid_geometry_rejected():
    blob = bytearray(prompt_to_bytes(make_prompt()))
    struct.pack_into("<I", blob, 5, 16)  # padding S=16 at 32x32 violates 2S < 32
    with pytest.raises(CheckpointError, match="invalid geometry"):
        prompt_from_bytes(bytes(blob))


def test_missing_file():
    with pytest.raises(CheckpointError, match="cannot read"):
        load_prompt("/nonexistent/prompt.vpq")


def test_describe(tmp_path):
    prompt = make_prompt()
    path = tmp_path / "p.vpq"
    save_prompt(prompt, str(path))
    info = describe_checkpoint(str(path))
    assert info["kind"] == "padding"
    assert info["param_count"] == prompt.num_params
    assert info["raw_max"] <= 0.7
