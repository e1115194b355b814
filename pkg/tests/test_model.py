import math

import numpy as np
import pytest

from somoformer import tensor as tn
from somoformer.dct import get_basis
from somoformer.evaluation import zero_velocity
from somoformer.model import (
    ModelConfig, SoMoFormer, assign_grid_cells, decode_prediction, embed_tokens, encoder_forward, forward,
    init_params, preset, token_meta, tokenize,
)
from somoformer.scene import TrajectoryWindow, fit_slots, pad_future, remove_translation
from conftest import random_window


def randomized_model(cfg, seed=0):
    model = SoMoFormer(cfg, seed=seed)
    rng = np.random.default_rng(seed + 100)
    model.params["head.weight"].data[...] = rng.normal(scale=0.3, size=model.params["head.weight"].shape)
    model.params["head.bias"].data[...] = rng.normal(scale=0.1, size=model.params["head.bias"].shape)
    return model


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(d_token=10, e_grid=1, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(n_layers=2, layer_weights=(1.0,))
    with pytest.raises(KeyError):
        preset("huge")
    cfg = preset("tiny")
    assert cfg.d_model == 32 and cfg.layer_weights == (0.2, 1.0)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({"bogus": 1})


def test_presets_match_reference_dimensions():
    p = preset("full")
    assert (p.n_layers, p.n_heads, p.d_model, p.e_grid) == (6, 8, 1024, 128)
    s = preset("somof")
    assert (s.t, s.T) == (16, 14)


def test_token_count_and_meta():
    w = TrajectoryWindow(np.zeros((2, 13, 3, 15)), None, [True, True])
    assert tokenize(w, T=45).shape == (78, 60)
    meta = token_meta(2, 13)
    q = ((1 * 13) + 4) * 3 + 2
    assert (meta["slot"][q], meta["joint"][q], meta["axis"][q]) == (1, 4, 2)


def test_static_person_tokens():
    t, T = 5, 7
    pos = np.random.default_rng(0).normal(size=(1, 3, 3, 1))
    w = TrajectoryWindow(np.repeat(pos, t, axis=-1), None, [True])
    tok = tokenize(w, T=T)
    expected = np.zeros_like(tok)
    expected[:, 0] = pos.reshape(-1) * math.sqrt(t + T)
    assert np.abs(tok - expected).max() < 1e-12


def test_tokenize_length_mismatch():
    w = TrajectoryWindow(np.zeros((1, 2, 3, 4)), None, [True])
    with pytest.raises(ValueError):
        tokenize(w, get_basis(9), T=4)


def test_tokenize_dct_keep(rng):
    w = random_window(rng)
    tok = tokenize(w, dct_keep=3)
    np.testing.assert_array_equal(tok[:, 3:], 0.0)


def _window_with_roots(roots, n_joints=2, t=3):
    h = np.zeros((len(roots), n_joints, 3, t))
    for i, (x, z) in enumerate(roots):
        h[i, :, 0, :] = x
        h[i, :, 2, :] = z
    return TrajectoryWindow(h, None, np.ones(len(roots), dtype=bool))


def test_grid_single_person_center():
    assert assign_grid_cells(_window_with_roots([(3.0, -2.0)]), 0, 5).tolist() == [12]


def test_grid_opposite_corners():
    assert assign_grid_cells(_window_with_roots([(0.0, 0.0), (4.0, 4.0)]), 0, 5).tolist() == [0, 24]


def scalar_cell(v, lo, hi, G, margin):
    center, half = (lo + hi) / 2, (hi - lo) / 2 * (1 + margin)
    i = math.floor((v - (center - half)) / (2 * half) * G)
    return min(max(i, 0), G - 1)


def test_grid_boundary_goes_to_higher_cell():
    # bounding square [-1, 1], no margin: x = -0.6 sits on the line between cells 0 and 1
    cells = assign_grid_cells(_window_with_roots([(-1.0, -1.0), (1.0, 1.0), (-0.6, 0.2)]), 0, 5, margin=0.0)
    assert cells[2] == 1 * 5 + 3
    assert scalar_cell(-0.6, -1.0, 1.0, 5, 0.0) == 1


def test_grid_matches_scalar_reference():
    rng = np.random.default_rng(4)
    for _ in range(50):
        roots = rng.uniform(-3, 3, size=(3, 2))
        w = _window_with_roots(roots)
        lo, hi = roots.min(axis=0), roots.max(axis=0)
        side = (hi - lo).max()
        lo_sq = (lo + hi) / 2 - side / 2
        expect = [scalar_cell(x, lo_sq[0], lo_sq[0] + side, 5, 0.05) * 5
                  + scalar_cell(z, lo_sq[1], lo_sq[1] + side, 5, 0.05) for x, z in roots]
        assert assign_grid_cells(w, 0, 5).tolist() == expect


def test_grid_ignores_masked_slots():
    w = _window_with_roots([(0.0, 0.0), (100.0, 100.0)])
    w = w.with_arrays(w.history, None, mask=[True, False])
    assert assign_grid_cells(w, 0, 5).tolist() == [12, 0]


def test_embed_zero():
    cfg = preset("tiny")
    params = init_params(cfg)
    for k in ("joint_embed", "identity_embed", "grid_embed", "input_proj.bias"):
        params[k] = tn.Tensor(np.zeros_like(params[k].data))
    x = embed_tokens(np.zeros((1, cfg.n_queries, cfg.length)), token_meta(2, 3), np.zeros((1, 2), int), params, cfg)
    assert x.shape == (1, cfg.n_queries, cfg.d_model) and not x.data.any()


def test_embed_composition():
    cfg = preset("tiny")
    params = init_params(cfg, seed=3)
    rng = np.random.default_rng(0)
    tokens = rng.normal(size=(1, cfg.n_queries, cfg.length))
    cells = np.array([[7, 19]])
    x = embed_tokens(tokens, token_meta(2, 3), cells, params, cfg).data[0]
    q = ((1 * 3) + 2) * 3 + 1
    ref = (tokens[0, q] @ params["input_proj.weight"].data + params["input_proj.bias"].data
           + params["joint_embed"].data[2 * 3 + 1] + params["identity_embed"].data[1])
    np.testing.assert_allclose(x[q, :cfg.d_token], ref, atol=1e-12)
    np.testing.assert_array_equal(x[q, cfg.d_token:], params["grid_embed"].data[19])


def test_embed_index_error():
    cfg = preset("tiny")
    with pytest.raises(IndexError):
        embed_tokens(np.zeros((1, cfg.n_queries, cfg.length)), token_meta(2, 3), np.array([[0, 25]]),
                     init_params(cfg), cfg)


def test_zero_head_gives_zero_residuals(rng):
    model = SoMoFormer(preset("tiny"), seed=1)
    prep = model.prepare([random_window(rng)])
    residuals, attention = model.run(prep)
    assert len(residuals) == 2 and all(not r.data.any() for r in residuals)
    assert attention[0].shape == (1, 2, 18, 18)


def test_all_masked_rejected():
    cfg = preset("tiny")
    params = init_params(cfg)
    with pytest.raises(ValueError):
        encoder_forward(tn.Tensor(np.zeros((1, 18, 32))), np.zeros((1, 18), bool), params, cfg)


def test_masked_keys_get_no_attention(rng):
    model = SoMoFormer(preset("tiny"), seed=1)
    res = model.forward(random_window(rng, 2, n_real=1))
    for layer in res.attention[0].weights:
        np.testing.assert_array_equal(layer[:, :, 9:], 0.0)


def test_decode_zero_residual_is_hold(rng):
    w = random_window(rng, 2, 3)
    local, off = remove_translation(w, 0)
    tok = tokenize(local)
    pred = decode_prediction(tok, np.zeros_like(tok), w.t, off)
    assert np.abs(pred - zero_velocity(w)).max() < 1e-9


def test_decode_perfect_residual(rng):
    w = random_window(rng, 2, 3)
    local, off = remove_translation(w, 0)
    tok = tokenize(local)
    gt = get_basis(w.t + w.T).forward(local.full()).reshape(tok.shape)
    pred = decode_prediction(tok, gt - tok, w.t, off)
    assert np.abs(pred - w.future).max() < 1e-9


def test_batch_matches_single(rng):
    model = randomized_model(preset("tiny"))
    ws = [random_window(rng) for _ in range(3)]
    batch = model.forward_batch(ws).prediction
    for b, w in enumerate(ws):
        assert np.abs(model.forward(w).prediction - batch[b]).max() < 1e-12
    assert np.abs(model.predict(ws, batch_size=2) - batch).max() < 1e-12
    assert np.abs(forward(ws[0], model.params, model.config).prediction - batch[0]).max() < 1e-12


def test_model_rejects_wrong_window(rng):
    model = SoMoFormer(preset("tiny"))
    with pytest.raises(ValueError, match="t="):
        model.prepare([random_window(rng, t=5)])
    with pytest.raises(ValueError, match="J="):
        model.prepare([random_window(rng, n_joints=4)])


def test_per_layer_shapes(rng):
    res = SoMoFormer(preset("tiny")).forward(random_window(rng))
    assert res.per_layer.shape == (2, 2, 3, 3, 4) and res.prediction.shape == (2, 3, 3, 4)


def test_mask_isolation_with_random_head(rng):
    cfg3 = preset("tiny", n_slots=3)
    m2 = randomized_model(preset("tiny"))
    params3 = dict(m2.params)
    extra = np.random.default_rng(5).normal(scale=0.1, size=(1, cfg3.d_token))
    params3["identity_embed"] = tn.Tensor(np.concatenate([m2.params["identity_embed"].data, extra]))
    m3 = SoMoFormer(cfg3, params3)
    for _ in range(10):
        w = random_window(rng)
        assert np.abs(m3.forward(w).prediction[:2] - m2.forward(w).prediction).max() < 1e-9


def test_translation_equivariance(rng):
    model = randomized_model(preset("tiny"))
    w = random_window(rng)
    v = np.array([2.5, -0.7, 4.0])[None, None, :, None]
    moved = w.with_arrays(w.history + v, w.future + v)
    assert np.array_equal(assign_grid_cells(w, 0, 5), assign_grid_cells(moved, 0, 5))
    d = model.forward(moved).prediction - model.forward(w).prediction
    assert np.abs(d - v).max() < 1e-9


def test_dropout_only_in_training(rng):
    model = SoMoFormer(preset("tiny", dropout=0.5))
    w = random_window(rng)
    a, b = model.forward(w).prediction, model.forward(w).prediction
    np.testing.assert_array_equal(a, b)


def test_parameter_count():
    cfg = preset("tiny")
    n, dt, dm, ff = 8, 24, 32, 32
    per_layer = 4 * dm + 4 * dm * dm + 3 * dm + dm * ff + ff + ff * dm + dm
    expected = n * dt + dt + 9 * dt + 2 * dt + 25 * 8 + 2 * per_layer + 2 * dm + dm * n + n
    assert SoMoFormer(cfg).n_parameters() == expected


def test_padding_helper_consistency(rng):
    w = fit_slots(random_window(rng, 1, 3), 2)
    tok = tokenize(w).reshape(2, 3, 3, -1)
    np.testing.assert_array_equal(tok[1], 0.0)
    np.testing.assert_allclose(get_basis(8).inverse(tok[0]), pad_future(w.history[0], 4), atol=1e-12)


def test_key_bias_would_be_inert(rng):
    # a key bias adds a per-query constant to the scores, so attention is unchanged
    model = randomized_model(preset("tiny"), seed=4)
    w = random_window(rng)
    ref = model.forward(w).prediction
    params = dict(model.params)
    for i in range(2):
        params[f"layers.{i}.attn.bk"] = tn.Tensor(np.random.default_rng(i).normal(size=32))
    moved = SoMoFormer(preset("tiny"), params).forward(w).prediction
    assert np.abs(moved - ref).max() < 1e-12
