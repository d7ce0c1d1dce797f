from __future__ import annotations

import numpy as np
import pytest

from slotssm.decoders import SpatialBroadcastDecoder, TransformerDecoder, broadcast_stages, losses
from slotssm.errors import ConfigError, ShapeError
from slotssm.gradcheck import GRADCHECK_TOL, gradcheck_suite
from slotssm.tensor import Tensor, no_grad
from slotssm.tokenizers import CNNTokenizer, LongSequenceTokenizer, PatchTokenizer, image_patches


def test_transformer_decoder_shapes(rng):
    decoder = TransformerDecoder(8, 16, 4, 7, rng, heads=2, layers=1)
    with no_grad():
        logits, attention = decoder(Tensor(rng.normal(size=(2, 3, 8))))
    assert logits.shape == (2, 16, 16, 7)
    assert attention.shape == (2, 16, 3)
    np.testing.assert_allclose(attention.sum(axis=-1), 1.0, atol=1e-5)


def test_unpatchify_inverts_image_patches(rng):
    decoder = TransformerDecoder(8, 8, 2, 3, rng, heads=2, layers=1)
    image = rng.normal(size=(2, 8, 8, 3))
    patches = image_patches(Tensor(image), 2)
    np.testing.assert_allclose(decoder.unpatchify(patches).data, image.astype(np.float32))


def test_slot_assignment_expands_patch_winners(rng):
    decoder = TransformerDecoder(8, 4, 2, 1, rng, heads=2, layers=1)
    attention = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    expected = np.tile([0, 0, 1, 1], (4, 1))
    np.testing.assert_array_equal(decoder.slot_assignment(attention), expected)


def test_transformer_decoder_rejects_indivisible_patch(rng):
    with pytest.raises(ConfigError):
        TransformerDecoder(8, 10, 4, 1, rng)
    decoder = TransformerDecoder(8, 8, 4, 1, rng, heads=2, layers=1)
    with pytest.raises(ShapeError):
        decoder(Tensor(np.zeros((2, 6))))


def test_broadcast_stages():
    assert broadcast_stages(16) == 1
    assert broadcast_stages(64) == 3
    for bad in (8, 12, 48):
        with pytest.raises(ConfigError):
            broadcast_stages(bad)


def test_spatial_broadcast_composites_over_slots(rng, float64):
    decoder = SpatialBroadcastDecoder(4, 32, rng, hidden=4)
    with no_grad():
        out = decoder(Tensor(rng.normal(size=(2, 3, 4))))
    assert out.rgb.shape == (2, 3, 32, 32, 3)
    assert out.composite.shape == (2, 32, 32, 3)
    assert out.assignment.shape == (2, 32, 32)
    np.testing.assert_allclose(out.weights.data.sum(axis=-4), 1.0, atol=1e-12)
    np.testing.assert_allclose(out.composite.data, (out.weights.data * out.rgb.data).sum(axis=-4), atol=1e-12)
    np.testing.assert_array_equal(out.assignment, out.weights.data.argmax(axis=-4)[..., 0])


def test_spatial_broadcast_is_slot_order_invariant(rng, float64):
    decoder = SpatialBroadcastDecoder(4, 16, rng, hidden=4)
    slots = rng.normal(size=(3, 4))
    with no_grad():
        a = decoder(Tensor(slots))
        b = decoder(Tensor(slots[::-1]))
    np.testing.assert_allclose(a.composite.data, b.composite.data, atol=1e-12)
    np.testing.assert_allclose(a.rgb.data[::-1], b.rgb.data, atol=1e-12)


def test_loss_dispatch(float64):
    assert losses("mse", Tensor(np.zeros(3)), np.zeros(3)).item() == 0.0
    with pytest.raises(ConfigError):
        losses("l1", Tensor(np.zeros(3)), np.zeros(3))


def test_image_patches_are_row_major():
    image = np.arange(16, dtype=float).reshape(4, 4, 1)
    patches = image_patches(Tensor(image), 2).data
    np.testing.assert_array_equal(patches[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(patches[1], [2, 3, 6, 7])
    np.testing.assert_array_equal(patches[2], [8, 9, 12, 13])


def test_tokenizer_shapes(rng):
    with no_grad():
        assert PatchTokenizer(16, 4, 8, rng)(Tensor(rng.uniform(size=(2, 3, 16, 16, 3)))).shape == (2, 3, 16, 8)
        assert CNNTokenizer(16, 8, rng, layers=2)(Tensor(rng.uniform(size=(2, 3, 16, 16, 3)))).shape == (2, 3, 64, 8)
        assert LongSequenceTokenizer(8, 4, 3, 8, rng)(Tensor(rng.uniform(size=(2, 12, 8, 8, 3)))).shape == (2, 12, 4, 8)


def test_long_sequence_tokens_stream_with_offset(rng, float64):
    tokenizer = LongSequenceTokenizer(4, 2, 3, 8, rng)
    patches = Tensor(rng.uniform(size=(10, 4, 4, 3)))
    with no_grad():
        full = tokenizer(patches).data
        tail = tokenizer(patches[6:], offset=6).data
    np.testing.assert_allclose(tail, full[6:], atol=1e-12)


@pytest.mark.parametrize("name", ["decoder.transformer", "decoder.spatial_broadcast"])
def test_decoders_pass_gradcheck(name):
    assert gradcheck_suite([name], max_coords=4)[name] < GRADCHECK_TOL
