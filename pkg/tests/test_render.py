"""PNG rendering tests."""

import numpy as np
import pytest

from ptygrad.fields import ComplexField
from ptygrad.render import MODES, field_to_rgb, render_field


@pytest.fixture
def field():
    rng = np.random.default_rng(3)
    data = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
    return ComplexField(data, 1.0)


@pytest.mark.parametrize("mode", MODES)
def test_rgb_in_unit_range(field, mode):
    rgb = field_to_rgb(field, mode)
    assert rgb.shape == (8, 8, 3)
    assert rgb.min() >= 0.0 and rgb.max() <= 1.0


def test_amplitude_is_grayscale(field):
    rgb = field_to_rgb(field, "amplitude")
    np.testing.assert_array_equal(rgb[..., 0], rgb[..., 1])
    np.testing.assert_array_equal(rgb[..., 0], rgb[..., 2])
    flat = np.abs(field.data)
    assert rgb[..., 0].flat[np.argmax(flat)] == 1.0
    assert rgb[..., 0].flat[np.argmin(flat)] == 0.0


def test_constant_amplitude_renders_black(field):
    f = ComplexField(np.full((4, 4), 2.0 + 0j), 1.0)
    np.testing.assert_array_equal(field_to_rgb(f, "amplitude"), 0.0)


def test_wheel_value_tracks_modulus(field):
    rgb = field_to_rgb(field, "complex_wheel")
    value = rgb.max(axis=-1)
    amp = np.abs(field.data)
    np.testing.assert_allclose(value, amp / amp.max(), atol=1e-12)


def test_unknown_mode_raises(field):
    with pytest.raises(ValueError):
        field_to_rgb(field, "bogus")


@pytest.mark.parametrize("mode", MODES)
def test_render_writes_png(field, mode, tmp_path):
    path = tmp_path / f"{mode}.png"
    render_field(field, mode, path)
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
