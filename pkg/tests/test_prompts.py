import numpy as np
import pytest

from vpqa.errors import InputError, ShapeError
from vpqa.prompts import (
    PromptKind,
    PromptShape,
    apply_prompt,
    backprop_to_params,
    compose,
    create_prompt,
    materialize,
    param_count,
    render_delta,
    slot_coordinates,
    slot_index,
    strips,
)

from oracles import brute_force_cells, central_difference, random_valid_shape


def shape_448(kind, size=None):
    return PromptShape(kind, 448, 448, size)


class TestParamCount:
    def test_published_counts(self):
        assert param_count(shape_448(PromptKind.FULL_OVERLAY)) == 602_112
        assert param_count(shape_448(PromptKind.PADDING, 30)) == 155_880
        assert param_count(shape_448(PromptKind.PATCH_TOP_LEFT, 30)) == 2_700
        assert param_count(shape_448(PromptKind.PATCH_CENTER, 10)) == 300

    def test_padding_10px(self):
        # 3 * 2 * 10 * (448 + 448 - 10), evaluated by hand
        assert param_count(shape_448(PromptKind.PADDING, 10)) == 53_160

    def test_matches_brute_force_cell_count(self):
        rng = np.random.default_rng(42)
        for _ in range(40):
            kind, h, w, s = random_valid_shape(rng)
            count, _ = brute_force_cells(kind, h, w, s)
            assert param_count(PromptShape(PromptKind(kind), h, w, s)) == 3 * count


class TestShapeValidation:
    def test_padding_border_too_wide(self):
        with pytest.raises(ShapeError):
            PromptShape(PromptKind.PADDING, 32, 32, 16)  # needs 2S < 32

    def test_patch_larger_than_image(self):
        with pytest.raises(ShapeError):
            PromptShape(PromptKind.PATCH_CENTER, 32, 32, 33)

    def test_overlay_rejects_size(self):
        with pytest.raises(ShapeError):
            PromptShape(PromptKind.FULL_OVERLAY, 32, 32, 4)

    def test_nonpositive_dims(self):
        with pytest.raises(ShapeError):
            PromptShape(PromptKind.FULL_OVERLAY, 0, 32)
        with pytest.raises(ShapeError):
            PromptShape(PromptKind.PADDING, 32, 32, 0)

    def test_channels_fixed(self):
        with pytest.raises(ShapeError):
            PromptShape(PromptKind.FULL_OVERLAY, 32, 32, channels=1)


class TestLayout:
    def test_coordinates_cover_active_region(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            kind, h, w, s = random_valid_shape(rng)
            shape = PromptShape(PromptKind(kind), h, w, s)
            ch, row, col = slot_coordinates(shape)
            assert ch.size == param_count(shape)
            _, union = brute_force_cells(kind, h, w, s)
            covered = set(zip(row[ch == 0].tolist(), col[ch == 0].tolist()))
            assert covered == union

    def test_slot_round_trip(self):
        shape = PromptShape(PromptKind.PADDING, 16, 12, 3)
        ch, row, col = slot_coordinates(shape)
        flat = 0
        for c in range(3):
            for si, (r0, c0, sh, sw) in enumerate(strips(shape)):
                for r in range(sh):
                    for cc in range(sw):
                        assert slot_index(shape, c, si, r, cc) == flat
                        assert (ch[flat], row[flat], col[flat]) == (c, r0 + r, c0 + cc)
                        flat += 1
        assert flat == param_count(shape)

    def test_padding_overlap_is_bottom_corners(self):
        shape = PromptShape(PromptKind.PADDING, 20, 14, 3)
        ch, row, col = slot_coordinates(shape)
        cover = np.zeros((3, 20, 14))
        np.add.at(cover, (ch, row, col), 1.0)
        assert cover.max() == 2
        twice = np.argwhere(cover[0] == 2)
        # exactly the two S x S bottom corners
        assert len(twice) == 2 * 3 * 3
        assert all(r >= 20 - 3 and (c < 3 or c >= 14 - 3) for r, c in twice)

    def test_channel_major_order(self):
        shape = PromptShape(PromptKind.PATCH_TOP_LEFT, 8, 8, 2)
        ch, row, col = slot_coordinates(shape)
        assert list(ch) == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]
        assert list(row[:4]) == [0, 0, 1, 1]
        assert list(col[:4]) == [0, 1, 0, 1]


class TestCreatePrompt:
    def test_zeros_padding_30(self):
        prompt = create_prompt(shape_448(PromptKind.PADDING, 30), "zeros")
        assert prompt.num_params == 155_880
        assert not prompt.raw_params.any()

    def test_uniform_small_bounds(self):
        rng = np.random.default_rng(3)
        prompt = create_prompt(
            shape_448(PromptKind.PATCH_CENTER, 10), "uniform_small", eps=1e-3, rng=rng
        )
        assert prompt.num_params == 300
        assert np.abs(prompt.raw_params).max() <= 1e-3

    def test_unknown_policy(self):
        with pytest.raises(InputError):
            create_prompt(shape_448(PromptKind.FULL_OVERLAY), "gaussian")

    def test_wrong_param_length_rejected(self):
        from vpqa.prompts import VisualPrompt

        with pytest.raises(ShapeError):
            VisualPrompt(shape_448(PromptKind.PATCH_CENTER, 10), np.zeros(299))

    def test_non_finite_params_rejected(self):
        from vpqa.prompts import VisualPrompt

        raw = np.zeros(300)
        raw[5] = np.nan
        with pytest.raises(InputError):
            VisualPrompt(shape_448(PromptKind.PATCH_CENTER, 10), raw)


class TestMaterialize:
    def test_zeros_gives_zero_delta(self):
        prompt = create_prompt(PromptShape(PromptKind.FULL_OVERLAY, 448, 448), "zeros")
        assert not materialize(prompt).any()

    def test_large_param_saturates(self):
        shape = PromptShape(PromptKind.PATCH_TOP_LEFT, 8, 8, 1)
        prompt = create_prompt(shape, "zeros")
        prompt.raw_params[0] = 10.0
        delta = materialize(prompt)
        assert delta[0, 0, 0] == pytest.approx(0.9999999958776927, abs=1e-15)
        assert abs(delta).max() < 1.0

    def test_inactive_region_exactly_zero(self):
        shape = PromptShape(PromptKind.PADDING, 16, 16, 2)
        prompt = create_prompt(shape, "uniform_small", eps=0.5, rng=np.random.default_rng(0))
        delta = materialize(prompt)
        assert (delta[:, 2:14, 2:14] == 0.0).all()
        assert (delta[:, :2, :] != 0.0).all()

    def test_deterministic(self):
        prompt = create_prompt(
            PromptShape(PromptKind.PADDING, 24, 24, 4),
            "uniform_small",
            eps=0.3,
            rng=np.random.default_rng(5),
        )
        d1 = materialize(prompt)
        d2 = materialize(prompt)
        assert (d1 == d2).all()

    def test_range_open_interval(self):
        rng = np.random.default_rng(11)
        shape = PromptShape(PromptKind.FULL_OVERLAY, 8, 8)
        prompt = create_prompt(shape, "zeros")
        prompt.raw_params[:] = rng.normal(scale=50.0, size=prompt.num_params)
        delta = materialize(prompt)
        assert delta.min() > -1.0 and delta.max() < 1.0


class TestApply:
    def test_zero_prompt_is_identity(self):
        rng = np.random.default_rng(9)
        image = rng.uniform(0, 1, size=(3, 16, 16))
        prompt = create_prompt(PromptShape(PromptKind.FULL_OVERLAY, 16, 16), "zeros")
        out = apply_prompt(prompt, image, image_id="x")
        assert (out.pixels == image).all()
        assert out.provenance[0] == "x"

    def test_clamp_upper(self):
        shape = PromptShape(PromptKind.PATCH_TOP_LEFT, 4, 4, 1)
        prompt = create_prompt(shape, "zeros")
        prompt.raw_params[:] = np.arctanh(0.5)
        image = np.full((3, 4, 4), 0.9)
        out = apply_prompt(prompt, image)
        assert out.pixels[0, 0, 0] == 1.0
        assert out.pixels[0, 1, 1] == pytest.approx(0.9)

    def test_overlay_shift_value(self):
        shape = PromptShape(PromptKind.FULL_OVERLAY, 8, 8)
        prompt = create_prompt(shape, "zeros")
        prompt.raw_params[:] = 0.1
        image = np.full((3, 8, 8), 0.5)
        out = apply_prompt(prompt, image)
        np.testing.assert_allclose(out.pixels, 0.5996679946249558, rtol=0, atol=1e-15)

    def test_dimension_mismatch(self):
        prompt = create_prompt(PromptShape(PromptKind.FULL_OVERLAY, 8, 8), "zeros")
        with pytest.raises(ShapeError):
            apply_prompt(prompt, np.zeros((3, 9, 8)))

    def test_out_of_range_image_rejected(self):
        prompt = create_prompt(PromptShape(PromptKind.FULL_OVERLAY, 4, 4), "zeros")
        with pytest.raises(InputError):
            apply_prompt(prompt, np.full((3, 4, 4), 1.5))
        with pytest.raises(InputError):
            apply_prompt(prompt, np.full((3, 4, 4), -0.1))

    def test_output_always_in_unit_interval(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            kind, h, w, s = random_valid_shape(rng)
            if h > 48 or w > 48:
                continue
            shape = PromptShape(PromptKind(kind), h, w, s)
            prompt = create_prompt(shape, "zeros")
            prompt.raw_params[:] = rng.normal(scale=2.0, size=prompt.num_params)
            image = rng.uniform(0, 1, size=(3, h, w))
            out = apply_prompt(prompt, image)
            assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0


class TestBackprop:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(13)
        shape = PromptShape(PromptKind.PADDING, 10, 10, 2)
        prompt = create_prompt(shape, "uniform_small", eps=0.4, rng=rng)
        weights = rng.normal(size=(3, 10, 10))

        def objective(raw):
            from vpqa.prompts import VisualPrompt

            return float((materialize(VisualPrompt(shape, raw)) * weights).sum())

        delta = materialize(prompt)
        analytic = backprop_to_params(prompt, delta, weights)
        numeric = central_difference(objective, prompt.raw_params.copy(), step=1e-6)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-9)


class TestCompose:
    def test_interior_mask(self):
        shape = PromptShape(PromptKind.FULL_OVERLAY, 4, 4)
        prompt = create_prompt(shape, "zeros")
        prompt.raw_params[:] = np.arctanh(0.5)
        image = np.full((3, 4, 4), 0.9)
        image[0, 0, 0] = 0.2
        pixels, interior, delta = compose(prompt, image)
        assert interior[0, 0, 0] == 1.0  # 0.7, in the open interval
        assert interior[1, 0, 0] == 0.0  # 1.4, clamped
        assert pixels[1, 0, 0] == 1.0
        np.testing.assert_allclose(delta, 0.5)


class TestRender:
    def test_zero_prompt_renders_mid_gray(self):
        prompt = create_prompt(PromptShape(PromptKind.PADDING, 16, 16, 3), "zeros")
        assert (render_delta(prompt) == 0.5).all()

    def test_padding_ring_visible(self):
        prompt = create_prompt(
            PromptShape(PromptKind.PADDING, 16, 16, 3),
            "uniform_small",
            eps=1.0,
            rng=np.random.default_rng(2),
        )
        img = render_delta(prompt)
        assert (img[:, 3:13, 3:13] == 0.5).all()
        assert (img[:, 0, :] != 0.5).all()
