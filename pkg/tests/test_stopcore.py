import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import (count_naive, inter_frame_variation_naive, temporal_dynamics_naive,
                     top_n_naive)
from stopvid import numcore as nc
from stopvid.encoders import FrozenClipModel, ModelConfig, baseline_video_encode
from stopvid.numcore import ConfigError, ContractError, Tensor
from stopvid.stopcore import (StopHyper, StopParams, apply_spatial_prompts, discriminative_scores,
                              frame_deltas, generate_spatial_prompts, generate_temporal_prompts,
                              inter_frame_variation, param_shapes, prompt_counts, select_regions,
                              stop_encode_batch, stop_video_encode, temporal_dynamics)


def small_instance(seed, nf=3, g=2, d=4):
    r = np.random.default_rng(seed)
    tokens = r.standard_normal((nf, g * g, d))
    w = r.standard_normal((d, d, 3, 3, 3)) * 0.3
    b = r.standard_normal(d) * 0.1
    return r, tokens, w, b


# ---------------------------------------------------------------- hyperparameters and params

def test_hyper_defaults_and_validation():
    h = StopHyper()
    assert (h.alpha, h.beta, h.eta, h.N_s, h.tau, h.max_prompts) == (0.4, 4.0, 12, 6, 0.07, 12)
    for bad in (dict(alpha=1.5), dict(beta=-1), dict(eta=0), dict(eta=2.5), dict(N_s=0), dict(tau=0)):
        with pytest.raises(ConfigError):
            StopHyper(**bad)


def test_head_bank_shapes():
    shapes = param_shapes(8, 5)
    for n in range(1, 6):
        assert shapes[f"prompter_t.head{n}.w"] == (8, 8 * n)
    assert shapes["prompter_s.w1"] == (24, 8)


def test_params_are_the_only_trainable_tensors(tiny_model):
    p = StopParams.init(8, 3, seed=0)
    assert all(t.grad_enabled for t in p.tensors.values())
    assert not any(t.grad_enabled for t in tiny_model.weights.values())


# ---------------------------------------------------------------- temporal dynamics

def test_dynamics_zero_conv():
    _, tokens, w, b = small_instance(0)
    M = temporal_dynamics(Tensor(tokens), Tensor(np.zeros_like(w)), Tensor(np.zeros_like(b)))
    assert np.array_equal(M.data, np.zeros((3, 4)))


def test_dynamics_hand_value():
    # 1x1x1 kernel copying channels: h~ = [3, 4] at one position
    tokens = np.zeros((1, 1, 2))
    tokens[0, 0] = [3.0, 4.0]
    w = np.zeros((2, 2, 1, 1, 1))
    w[0, 0] = w[1, 1] = 1.0
    M = temporal_dynamics(Tensor(tokens), Tensor(w), Tensor(np.zeros(2)))
    assert M.data[0, 0] == 12.5


def test_dynamics_matches_oracle_two_frames():
    _, tokens, w, b = small_instance(1, nf=2)
    got = temporal_dynamics(Tensor(tokens), Tensor(w), Tensor(b)).data
    assert np.max(np.abs(got - temporal_dynamics_naive(tokens, w, b))) < 1e-12


def test_dynamics_nonnegative(rng):
    M = temporal_dynamics(Tensor(rng.standard_normal((3, 9, 4))), Tensor(rng.standard_normal((4, 4, 3, 3, 3))),
                          Tensor(rng.standard_normal(4)))
    assert np.all(M.data >= 0)


# ---------------------------------------------------------------- discriminative scores

def test_scores_examples(rng):
    A, M = rng.random((2, 5)), rng.random((2, 5))
    assert np.array_equal(discriminative_scores(Tensor(A), Tensor(M), 1.0).data, A)
    assert discriminative_scores(Tensor([1.0]), Tensor([0.0]), 0.4).data[0] == 0.4
    np.testing.assert_allclose(discriminative_scores(Tensor(A), Tensor(A), 0.5).data, A, atol=1e-16)


# ---------------------------------------------------------------- region selection

def test_select_examples():
    assert select_regions(np.array([5.0, 1, 4, 2]), 2).tolist() == [1, 0, 1, 0]
    assert select_regions(np.zeros(49), 6).tolist() == [1] * 6 + [0] * 43
    with pytest.raises(ConfigError):
        select_regions(np.zeros(4), 5)


scores_strategy = hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 12)),
                             elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=1000, deadline=None)
@given(scores_strategy, st.data())
def test_select_property(scores, data):
    n_s = data.draw(st.integers(1, scores.shape[-1]))
    r = select_regions(scores, n_s)
    assert np.all(r.sum(-1) == n_s)
    for row, mrow in zip(scores, r):
        assert mrow.tolist() == top_n_naive(row.tolist(), n_s)


# integer-valued scores and shifts are exact in float64, so no rounding can reorder them
int_scores = hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 12)),
                        elements=st.integers(-50, 50).map(float))


@settings(max_examples=1000, deadline=None)
@given(int_scores, st.integers(-10**6, 10**6), st.data())
def test_select_shift_invariance(scores, c, data):
    n_s = data.draw(st.integers(1, scores.shape[-1]))
    assert np.array_equal(select_regions(scores, n_s), select_regions(scores + c, n_s))


# ---------------------------------------------------------------- spatial prompts

def test_zero_prompter_gives_zero_prompts(rng):
    p = StopParams.zeros(4, 2)
    out = generate_spatial_prompts(Tensor(rng.standard_normal((3, 4, 4))), p)
    assert np.array_equal(out.data, np.zeros((3, 4, 4)))


def test_single_frame_replicates_neighbours(rng):
    p = StopParams.init(4, 2, seed=1)
    h = rng.standard_normal((1, 4, 4))
    x = np.concatenate([h, h, h], axis=-1)
    hid = nc.gelu(Tensor(x @ p["prompter_s.w1"].data + p["prompter_s.b1"].data)).data
    expected = hid @ p["prompter_s.w2"].data + p["prompter_s.b2"].data
    np.testing.assert_allclose(generate_spatial_prompts(Tensor(h), p).data, expected, atol=1e-14)


def test_spatial_prompt_shape(rng):
    p = StopParams.init(8, 2, seed=1)
    assert generate_spatial_prompts(Tensor(rng.standard_normal((5, 9, 8))), p).shape == (5, 9, 8)


def test_apply_prompts_examples(rng):
    h = rng.standard_normal((3, 4, 2))
    p = rng.standard_normal((3, 4, 2))
    assert np.array_equal(apply_spatial_prompts(Tensor(h), Tensor(p), np.zeros((3, 4))).data, h)
    assert np.array_equal(apply_spatial_prompts(Tensor(h), Tensor(-h), np.ones((3, 4))).data, np.zeros_like(h))
    r = select_regions(rng.random((3, 4)), 2)
    out = apply_spatial_prompts(Tensor(h), Tensor(p), r).data
    changed = np.any(out != h, axis=-1)
    assert changed.sum() == 6
    assert np.array_equal(out[r == 0], h[r == 0])  # bitwise untouched


# ---------------------------------------------------------------- deltas

def test_deltas_examples(rng):
    same = np.tile(rng.standard_normal((1, 4, 2)), (3, 1, 1))
    assert np.array_equal(frame_deltas(Tensor(same)).data, np.zeros((2, 4, 2)))
    h = rng.standard_normal((2, 4, 2))
    h[1] = h[0] + 0.5
    np.testing.assert_allclose(frame_deltas(Tensor(h)).data[0], 0.5, atol=1e-15)
    h = rng.standard_normal((5, 4, 2))
    np.testing.assert_allclose(frame_deltas(Tensor(h)).data.sum(0), h[-1] - h[0], atol=1e-14)
    with pytest.raises(ContractError):
        frame_deltas(Tensor(np.zeros((1, 4, 2))))


# ---------------------------------------------------------------- inter-frame variation

def test_variation_zero_input():
    _, _, w, _ = small_instance(2)
    W = inter_frame_variation(Tensor(np.zeros((2, 4, 4))), Tensor(w), Tensor(np.zeros(4)), np.ones((3, 4)), 4.0)
    assert np.array_equal(W.data, np.zeros(2))


def test_variation_beta_zero_is_plain_mean(rng):
    _, tokens, w, b = small_instance(3)
    d = frame_deltas(Tensor(tokens))
    mask = select_regions(rng.random((3, 4)), 2)
    W0 = inter_frame_variation(d, Tensor(w), Tensor(b), mask, 0.0).data
    h = nc.conv3d(Tensor(d.data.reshape(2, 2, 2, 4)), Tensor(w), Tensor(b), channels_last=True).data
    np.testing.assert_allclose(W0, (h ** 2).reshape(2, -1).mean(-1), atol=1e-15)


def test_variation_hand_case():
    # 3 frames, 4 patches, d_v = 2
    r, tokens, w, b = small_instance(4, nf=3, g=2, d=2)
    deltas = tokens[1:] - tokens[:-1]
    mask = select_regions(r.random((3, 4)), 2)
    got = inter_frame_variation(Tensor(deltas), Tensor(w), Tensor(b), mask, 4.0).data
    assert np.max(np.abs(got - inter_frame_variation_naive(deltas, w, b, mask, 4.0))) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_variation_matches_oracle(seed):
    r, tokens, w, b = small_instance(10 + seed)
    deltas = tokens[1:] - tokens[:-1]
    mask = select_regions(r.random((3, 4)), 1 + seed % 4)
    got = inter_frame_variation(Tensor(deltas), Tensor(w), Tensor(b), mask, 4.0).data
    assert np.all(got >= 0)
    assert np.max(np.abs(got - inter_frame_variation_naive(deltas, w, b, mask, 4.0))) < 1e-12


# ---------------------------------------------------------------- prompt counts

def test_count_examples():
    assert prompt_counts([0.0], 12).tolist() == [0]
    assert prompt_counts([0.25], 12).tolist() == [3]
    assert prompt_counts([5.0], 12).tolist() == [12]
    with pytest.raises(ConfigError):
        prompt_counts([0.1], 0)


@settings(max_examples=1000, deadline=None)
@given(hnp.arrays(np.float64, st.integers(1, 9), elements=st.floats(0, 50, allow_nan=False)),
       st.integers(1, 16), st.data())
def test_count_property(w, eta, data):
    cap = data.draw(st.integers(1, eta))
    bump = data.draw(hnp.arrays(np.float64, w.shape, elements=st.floats(0, 5, allow_nan=False)))
    c = prompt_counts(w, eta, cap)
    assert np.all((0 <= c) & (c <= cap))
    assert np.all(prompt_counts(w + bump, eta, cap) >= c)  # monotone
    assert c.tolist() == [count_naive(x, eta, cap) for x in w]


# ---------------------------------------------------------------- temporal prompts

def test_temporal_prompt_examples(rng):
    p = StopParams.init(4, 3, seed=2)
    d = Tensor(rng.standard_normal((3, 4, 4)))
    assert generate_temporal_prompts(d, [0, 0, 0], p) == [None, None, None]
    out = generate_temporal_prompts(d, [2, 0, 3], p)
    assert out[0].shape == (2, 4) and out[1] is None and out[2].shape == (3, 4)
    twin = Tensor(np.stack([d.data[0], d.data[0]]))
    a, b = generate_temporal_prompts(twin, [2, 2], p)
    assert np.array_equal(a.data, b.data)
    with pytest.raises(ContractError):
        generate_temporal_prompts(d, [4, 0, 0], p)


def test_only_selected_head_receives_gradient(rng):
    p = StopParams.init(4, 3, seed=2)
    d = Tensor(rng.standard_normal((2, 4, 4)))
    out = generate_temporal_prompts(d, [2, 0], p)
    grads = p.collect_grads(nc.backward(nc.sum(nc.square(out[0]))))
    assert np.any(grads["prompter_t.head2.w"].data != 0)
    assert not np.any(grads["prompter_t.head1.w"].data) and not np.any(grads["prompter_t.head3.w"].data)
    assert np.any(grads["prompter_t.w1"].data != 0)


# ---------------------------------------------------------------- full pipeline

def test_zero_params_match_baseline(tiny_model, rng):
    cfg = tiny_model.config
    hyper = StopHyper(N_s=2, eta=3)
    p = StopParams.zeros(cfg.d_v, 3)
    for _ in range(3):
        v = rng.uniform(0, 1, (cfg.N_F, 3, cfg.H, cfg.W))
        got, diag = stop_video_encode(v, tiny_model, p, hyper)
        assert diag.counts.tolist() == [0, 0]
        assert np.max(np.abs(got.data - baseline_video_encode(v, tiny_model).data)) < 1e-12


def test_sequence_length_accounts_for_prompts(tiny_model, rng):
    cfg = tiny_model.config
    hyper = StopHyper(N_s=2, eta=3)
    p = StopParams.init(cfg.d_v, 3, seed=4, conv_std=1.0)
    vids = rng.uniform(0, 1, (2, cfg.N_F, 3, cfg.H, cfg.W))
    _, diag = stop_encode_batch(vids, tiny_model, p, hyper)
    assert diag.seq_len == [cfg.N_F + int(c.sum()) for c in diag.counts]
    assert np.all(diag.r.sum(-1) == 2)


def test_ablation_switches(tiny_model, rng):
    cfg = tiny_model.config
    hyper = StopHyper(N_s=2, eta=3)
    p = StopParams.init(cfg.d_v, 3, seed=4, conv_std=1.0)
    v = rng.uniform(0, 1, (cfg.N_F, 3, cfg.H, cfg.W))
    _, d_off = stop_video_encode(v, tiny_model, p, hyper, inter_on=False)
    assert d_off.counts.tolist() == [0, 0] and d_off.seq_len == [cfg.N_F]
    v_intra, _ = stop_video_encode(v, tiny_model, p, hyper, intra_on=True, inter_on=False)
    v_none, _ = stop_video_encode(v, tiny_model, p, hyper, intra_on=False, inter_on=False)
    np.testing.assert_allclose(v_none.data, baseline_video_encode(v, tiny_model).data, atol=1e-12)
    assert np.max(np.abs(v_intra.data - v_none.data)) > 0


def test_batch_matches_single_and_repeats_bitwise(tiny_model, rng):
    cfg = tiny_model.config
    hyper = StopHyper(N_s=2, eta=3)
    p = StopParams.init(cfg.d_v, 3, seed=5, conv_std=1.0)
    vids = rng.uniform(0, 1, (3, cfg.N_F, 3, cfg.H, cfg.W))
    V, _ = stop_encode_batch(vids, tiny_model, p, hyper)
    V2, _ = stop_encode_batch(vids, tiny_model, p, hyper)
    assert np.array_equal(V.data, V2.data)
    single, _ = stop_video_encode(vids[2], tiny_model, p, hyper)
    np.testing.assert_allclose(single.data, V.data[2], atol=1e-13)


def test_hyper_must_match_head_bank(tiny_model, rng):
    cfg = tiny_model.config
    with pytest.raises(ConfigError):
        stop_encode_batch(np.zeros((1, cfg.N_F, 3, cfg.H, cfg.W)), tiny_model,
                          StopParams.zeros(cfg.d_v, 2), StopHyper(N_s=2, eta=3))


def test_full_gradient_with_frozen_decisions(tiny_model, rng):
    cfg = tiny_model.config
    hyper = StopHyper(N_s=2, eta=3)
    p = StopParams.init(cfg.d_v, 3, seed=6, conv_std=1.0, out_std=0.3)
    vids = rng.uniform(0, 1, (2, cfg.N_F, 3, cfg.H, cfg.W))
    with nc.no_grad():
        _, diag = stop_encode_batch(vids, tiny_model, p, hyper)
    target = Tensor(rng.standard_normal((2, cfg.d)))

    def loss():
        V, _ = stop_encode_batch(vids, tiny_model, p, hyper, masks=diag.r, counts=diag.counts)
        return nc.sum(nc.mul(V, target))

    grads = p.collect_grads(nc.backward(loss()))
    for name in ("prompter_s.w1", "prompter_s.b2", "prompter_t.w2",
                 f"prompter_t.head{int(diag.counts.max())}.w"):
        fd = nc.finite_diff_grad(loss, p[name], 1e-6)
        assert nc.relative_error(grads[name].data, fd.data) < 1e-5, name
