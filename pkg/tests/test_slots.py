from __future__ import annotations

import numpy as np
import pytest

from slotssm.baselines import GRUCell, SlotRNN, SlotTransformer, block_causal_mask
from slotssm.errors import ConfigError, SequenceTooLongError
from slotssm.gradcheck import GRADCHECK_TOL, gradcheck_suite
from slotssm.models import build_stack, is_recurrent
from slotssm.nn import make_rng
from slotssm.slots import LayerStackConfig, OCSlotStack, SlotMixer, SlotSSM, SlotStack, inverted_attention
from slotssm.tensor import Tensor, no_grad


def stack_config(variant: str = "slotssm", slots=(2, 2), **kw) -> LayerStackConfig:
    values = dict(layers=len(slots), slots=list(slots), slot_dim=8, token_dim=8, heads=2, variant=variant, encoder_layers=1, state_size=2, conv_width=2, max_steps=16)
    values.update(kw)
    return LayerStackConfig(**values)


def tokens(rng, steps=5, count=3, batch=2):
    return rng.normal(size=(batch, steps, count, 8))


def test_config_validation():
    with pytest.raises(ConfigError):
        stack_config("single_state", slots=(2,)).validate()
    with pytest.raises(ConfigError):
        stack_config(slots=(2, 2), layers=3).validate()
    with pytest.raises(ConfigError):
        stack_config(slot_dim=7).validate()
    with pytest.raises(ConfigError):
        stack_config("oc_slotssm", slots=(2, 3)).validate()
    with pytest.raises(ConfigError):
        stack_config("lstm").validate()


def test_encoder_placement():
    cfg = stack_config(slots=(4, 4, 2))
    assert [cfg.encoder_at(i) for i in range(3)] == [True, False, True]
    cfg.placement = "every_layer"
    assert [cfg.encoder_at(i) for i in range(3)] == [True, True, True]


def test_slot_ssm_keeps_slots_separate(rng, float64):
    ssm = SlotSSM(8, rng, state_size=2, conv_width=2)
    x = rng.normal(size=(2, 5, 3, 8))
    changed = x.copy()
    changed[:, :, 1] += rng.normal(size=(2, 5, 8))
    with no_grad():
        a, _ = ssm(Tensor(x))
        b, _ = ssm(Tensor(changed))
    np.testing.assert_array_equal(a.data[:, :, 0], b.data[:, :, 0])
    np.testing.assert_array_equal(a.data[:, :, 2], b.data[:, :, 2])
    assert not np.allclose(a.data[:, :, 1], b.data[:, :, 1])


@pytest.mark.parametrize("variant", ["slotssm", "oc_slotssm"])
def test_stack_ssm_outputs_keep_slots_separate(float64, variant):
    for seed in range(50):
        rng = make_rng(seed)
        stack = build_stack(stack_config(variant, slots=(3, 3)), rng)
        x = Tensor(tokens(rng, steps=4))
        with no_grad():
            stack(x)
        clean = [y.data.copy() for y in stack.last_ssm_outputs]

        index, j = int(rng.integers(len(stack.layers))), int(rng.integers(3))
        ssm = stack.layers[index].ssm
        noise = rng.normal(size=(2, 4, 8))

        def nudged(slots, states=None, run=ssm.forward):
            data = slots.data.copy()
            data[..., j, :] += noise
            return run(Tensor(data, dtype=slots.dtype), states)

        ssm.forward = nudged
        with no_grad():
            stack(x)
        del ssm.forward
        y = stack.last_ssm_outputs[index].data
        others = [k for k in range(3) if k != j]
        np.testing.assert_array_equal(y[..., others, :], clean[index][..., others, :])
        assert not np.allclose(y[..., j, :], clean[index][..., j, :])


def test_slot_ssm_and_mixer_are_permutation_equivariant(rng, float64):
    ssm = SlotSSM(8, rng, state_size=2, conv_width=2)
    mixer = SlotMixer(8, 2, rng)
    x = rng.normal(size=(4, 3, 8))
    perm = np.array([2, 0, 1])
    with no_grad():
        out = mixer(ssm(Tensor(x))[0]).data
        permuted = mixer(ssm(Tensor(x[:, perm]))[0]).data
    np.testing.assert_allclose(permuted, out[:, perm], atol=1e-12)


def test_slot_encoder_ignores_token_order(rng, float64):
    stack = SlotStack(stack_config(), rng)
    x = tokens(rng)
    with no_grad():
        a, _ = stack(Tensor(x))
        b, _ = stack(Tensor(x[:, :, ::-1]))
    np.testing.assert_allclose(a.data, b.data, atol=1e-10)


@pytest.mark.parametrize("variant", ["slotssm", "single_state_split", "oc_slotssm", "slot_transformer", "slot_rnn"])
def test_stacks_are_causal_in_time(rng, float64, variant):
    stack = build_stack(stack_config(variant), rng)
    x = tokens(rng, steps=6)
    changed = x.copy()
    changed[:, 3:] += 1.0
    with no_grad():
        a, _ = stack(Tensor(x))
        b, _ = stack(Tensor(changed))
    assert a.shape == (2, 6, 2, 8)
    np.testing.assert_array_equal(a.data[:, :3], b.data[:, :3])
    assert not np.allclose(a.data[:, 3:], b.data[:, 3:])


@pytest.mark.parametrize("variant", ["slotssm", "single_state_split", "oc_slotssm", "slot_rnn"])
def test_recurrent_stacks_continue_from_state(rng, float64, variant):
    stack = build_stack(stack_config(variant), rng)
    assert is_recurrent(stack)
    x = Tensor(tokens(rng, steps=7))
    with no_grad():
        full, _ = stack(x)
        first, state = stack(x[:, :3])
        second, state = stack(x[:, 3:], state)
    np.testing.assert_allclose(np.concatenate([first.data, second.data], axis=1), full.data, atol=1e-10)
    assert state.t == 7


def test_recurrent_stack_steps_one_frame_at_a_time(rng, float64):
    stack = build_stack(stack_config(), rng)
    x = Tensor(tokens(rng, steps=4))
    with no_grad():
        full, _ = stack(x)
        state = stack.init_state((2,))
        outs = []
        for t in range(4):
            out, state = stack(x[:, t : t + 1], state)
            outs.append(out.data)
    np.testing.assert_allclose(np.concatenate(outs, axis=1), full.data, atol=1e-10)


def test_split_state_with_one_slot_equals_slotssm(float64):
    x = Tensor(tokens(make_rng(9)))
    with no_grad():
        split, _ = SlotStack(stack_config("single_state_split", slots=(1,)), make_rng(3))(x)
        plain, _ = SlotStack(stack_config("slotssm", slots=(1,)), make_rng(3))(x)
        single, _ = SlotStack(stack_config("single_state", slots=(1,)), make_rng(3))(x)
    np.testing.assert_allclose(split.data, plain.data, atol=1e-12)
    np.testing.assert_allclose(single.data, plain.data, atol=1e-12)


def test_layer_slot_counts_can_change(rng):
    stack = SlotStack(stack_config(slots=(3, 2)), rng)
    with no_grad():
        out, state = stack(Tensor(tokens(rng)))
    assert out.shape == (2, 5, 2, 8)
    assert [len(layer) for layer in state.layers] == [3, 2]


def test_inverted_attention_rows_are_normalised(rng, float64):
    out, weights = inverted_attention(rng.normal(size=(3, 4)), rng.normal(size=(6, 4)), rng.normal(size=(6, 5)))
    assert out.shape == (3, 5)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-6)


def test_inverted_attention_lets_queries_compete_for_keys(float64):
    queries = np.array([[4.0, 0.0], [0.0, 4.0]])
    keys = np.array([[4.0, 0.0], [4.0, 0.0], [0.0, 4.0]])
    values = np.eye(3)
    _, weights = inverted_attention(queries, keys, values)
    assert weights.data[0, :2].sum() > 0.99
    assert weights.data[1, 2] > 0.99


def test_oc_stack_calls_hook_once_per_layer(rng):
    stack = OCSlotStack(stack_config("oc_slotssm", slots=(2, 2)), rng)
    seen = []
    stack.kv_hook = lambda index, kv: seen.append((index, kv.shape))
    with no_grad():
        stack(Tensor(tokens(rng)))
    assert seen == [(0, (2, 5, 3, 8)), (1, (2, 5, 3, 8))]
    assert len(stack.last_attention) == 2
    assert stack.last_attention[0].shape == (2, 5, 2, 3)


def test_block_causal_mask():
    mask = block_causal_mask(3, 2)
    assert mask.shape == (6, 6)
    assert not mask[1, 0] and not mask[0, 1]
    assert mask[0, 2] and mask[1, 5]
    assert not mask[5].any()


def test_slot_transformer_refuses_long_sequences(rng):
    stack = SlotTransformer(stack_config("slot_transformer", max_tokens=8), rng)
    stack.check_length(4)
    with pytest.raises(SequenceTooLongError):
        stack(Tensor(tokens(rng, steps=5)))
    assert not is_recurrent(stack)


def test_gru_cell_matches_gate_equations(rng, float64):
    cell = GRUCell(3, 2, rng)
    x, h = rng.normal(size=(3,)), rng.normal(size=(2,))
    with no_grad():
        got = cell(Tensor(x), Tensor(h)).data
    gi = x @ cell.input_proj.weight.data + cell.input_proj.bias.data
    gh = h @ cell.hidden_proj.weight.data + cell.hidden_proj.bias.data
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    r = sig(gi[0:2] + gh[0:2])
    z = sig(gi[2:4] + gh[2:4])
    n = np.tanh(gi[4:6] + r * gh[4:6])
    np.testing.assert_allclose(got, (1 - z) * h + z * n, atol=1e-12)


def test_slot_rnn_state_is_the_gru_output(rng):
    stack = SlotRNN(stack_config("slot_rnn"), rng)
    with no_grad():
        _, state = stack(Tensor(tokens(rng, steps=3)))
    np.testing.assert_array_equal(state.hidden[-1].data, stack.last_gru_outputs[-1].data[:, -1])


@pytest.mark.parametrize("name", ["stack.slotssm", "stack.single_state_split", "stack.oc_slotssm", "stack.slot_transformer", "stack.slot_rnn"])
def test_stacks_pass_gradcheck(name):
    assert gradcheck_suite([name], max_coords=3)[name] < GRADCHECK_TOL
