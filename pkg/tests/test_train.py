import numpy as np
import pytest
from scipy import ndimage

from helpers import MICRO, random_params
from triplanetok import diffcore as dc
from triplanetok.config import TrainConfig, preset
from triplanetok.data import SpriteSceneSpec, gen_sprites, sprite_corpus
from triplanetok.io import load_checkpoint, save_checkpoint
from triplanetok.model import init_params
from triplanetok.sampling import DecoderGrid
from triplanetok.train import (
    ContractError, DivergenceError, TrainState, deterministic_mode, fit, frames_from_patches, full_frame_step,
    loss_l2, perceptual_proxy_loss, sobel_edges, train_step_finetune, train_step_main,
)


def _clips(cfg, n=3, seed=0):
    clips, _ = sprite_corpus(n, cfg.frames, cfg.height, cfg.width, (1.0, 2.0), seed=seed, min_size=2, max_size=4)
    return clips


# losses


def test_l2_examples(rng):
    a = rng.random((2, 5, 4))
    assert loss_l2(a, a).item() == 0.0
    assert loss_l2(a + 0.1, a).item() == pytest.approx(0.01, abs=1e-12)
    b = rng.random(a.shape)
    assert loss_l2(a, b).item() == pytest.approx(loss_l2(b, a).item(), abs=1e-15)
    with pytest.raises(ValueError):
        loss_l2(a, a[:1])


def test_perceptual_proxy_examples(rng):
    f = rng.random((2, 6, 7, 3))
    assert perceptual_proxy_loss(f, f).item() == 0.0
    assert perceptual_proxy_loss(f + 0.2, f).item() == pytest.approx(0.0, abs=1e-20)


def test_perceptual_proxy_matches_direct_convolution():
    img = np.zeros((1, 8, 8, 3))
    img[:, :, 4:] = 1.0
    shifted = np.roll(img, 1, axis=2)
    got = perceptual_proxy_loss(shifted, img).item()

    def edges(v):
        g = v[0].mean(-1)
        return np.stack([ndimage.sobel(g, axis=1, mode="nearest"), ndimage.sobel(g, axis=0, mode="nearest")])

    want = np.mean((edges(shifted) - edges(img)) ** 2)
    assert got == pytest.approx(want, abs=1e-12)
    assert got > 0


def test_sobel_edges_shape_and_errors():
    e = sobel_edges(np.zeros((3, 4, 5, 3)))
    assert e.shape == (2, 3, 4, 5)
    with pytest.raises(ContractError):
        sobel_edges(np.zeros((4, 5, 3)))
    with pytest.raises(ContractError):
        perceptual_proxy_loss(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 5, 3)))


def test_frames_from_patches_layout_and_partial_error():
    grid = DecoderGrid.of(MICRO)
    video = np.arange(np.prod((4, 8, 8, 3)), dtype=float).reshape(4, 8, 8, 3)
    from triplanetok.model import patchify
    patches, _ = patchify(video[None], MICRO.dec_patch)
    per = grid.gh * grid.gw
    frames = frames_from_patches(dc.Tensor(patches[:, per:2 * per]), 1, grid, MICRO)
    assert np.array_equal(frames.data, video[2:4])
    with pytest.raises(ContractError):
        frames_from_patches(dc.Tensor(patches[:, :per - 1]), 1, grid, MICRO)


# steps


def test_all_coordinates_equals_full_reconstruction_step():
    params = random_params(MICRO, 2)
    batch = np.stack(_clips(MICRO, 2))
    grid = DecoderGrid.of(MICRO)
    t = TrainConfig(batch_size=2, num_coords=grid.M)
    a = train_step_main(batch, params, TrainState.fresh(t), t, MICRO, update=False)
    b = full_frame_step(batch, params, TrainState.fresh(t), MICRO)
    assert a.loss == pytest.approx(b.loss, abs=1e-6)


def test_finetune_without_perceptual_equals_frame_main_step():
    params = random_params(MICRO, 3)
    batch = np.stack(_clips(MICRO, 2))
    main = TrainConfig(batch_size=2, sampler="frame", n_frames=1)
    ft = TrainConfig(batch_size=2, phase="finetune", n_frames=1, perceptual_weight=0.0)
    a = train_step_main(batch, params, TrainState.fresh(main), main, MICRO, update=False)
    b = train_step_finetune(batch, params, TrainState.fresh(ft), ft, MICRO, update=False)
    assert a.loss == pytest.approx(b.loss, abs=1e-6)
    assert b.perceptual > 0


def test_phase_contract():
    params = init_params(MICRO, 0)
    clip = _clips(MICRO, 1)[0]
    with pytest.raises(ContractError):
        train_step_main(clip, params, TrainState(), TrainConfig(phase="finetune"), MICRO)
    with pytest.raises(ContractError):
        train_step_finetune(clip, params, TrainState(), TrainConfig(), MICRO)


def test_gradient_reaches_every_plane_and_encoder_group():
    params = random_params(MICRO, 4)
    t = TrainConfig(batch_size=2, num_coords=3)
    train_step_main(np.stack(_clips(MICRO, 2)), params, TrainState.fresh(t), t, MICRO, update=False)
    for name in ("cs.out.xy.w", "cs.out.yt.w", "cs.out.xt.w", "cs.z0.xy", "cs.z0.yt", "cs.z0.xt",
                 "enc.patch.w", "enc.pos", "enc.blocks.0.attn.q.w", "cs.in.w"):
        assert np.linalg.norm(params[name].grad) > 0, name


def test_non_finite_loss_is_fatal_with_step():
    params = init_params(MICRO, 0)
    params["dec.out.b"].data[:] = np.nan
    state = TrainState.fresh(TrainConfig())
    state.step = 5
    with pytest.raises(DivergenceError) as exc:
        train_step_main(_clips(MICRO, 1)[0], params, state, TrainConfig(batch_size=1, num_coords=4), MICRO)
    assert exc.value.step == 5


def test_loss_halves_on_repeated_clip():
    cfg = preset("tiny")
    clip = gen_sprites(SpriteSceneSpec(seed=1), cfg.frames, cfg.height, cfg.width)
    params = init_params(cfg, 0)
    t = TrainConfig(batch_size=1, num_coords=64, lr=1e-3)
    state = TrainState.fresh(t)
    losses = [fit([clip], params, state, t, cfg, steps=1)[0].loss for _ in range(200)]
    head, tail = np.mean(losses[:5]), np.mean(losses[-10:])
    assert losses[-1] < losses[0] / 2
    assert tail < head / 2


def _run(params, state, t, corpus, steps):
    with deterministic_mode():
        return [r.loss for r in fit(corpus, params, state, t, MICRO, steps=steps)]


def test_same_seed_bit_identical_losses():
    corpus = _clips(MICRO, 4)
    t = TrainConfig(batch_size=2, num_coords=5, lr=1e-3, seed=9)
    a = _run(init_params(MICRO, 1), TrainState.fresh(t), t, corpus, 6)
    b = _run(init_params(MICRO, 1), TrainState.fresh(t), t, corpus, 6)
    assert a == b
    t2 = TrainConfig(batch_size=2, num_coords=5, lr=1e-3, seed=10)
    assert a != _run(init_params(MICRO, 1), TrainState.fresh(t2), t2, corpus, 6)


def test_resume_reproduces_loss_sequence(tmp_path):
    corpus = _clips(MICRO, 4)
    t = TrainConfig(batch_size=2, num_coords=5, lr=1e-3, seed=3)
    ref = _run(init_params(MICRO, 1), TrainState.fresh(t), t, corpus, 8)

    params, state = init_params(MICRO, 1), TrainState.fresh(t)
    first = _run(params, state, t, corpus, 4)
    path = tmp_path / "r.ctck"
    save_checkpoint(path, params, MICRO, t, state)
    ck = load_checkpoint(path)
    second = _run(ck.params, ck.train_state(), ck.train, corpus, 4)
    assert first + second == ref


def test_step_record_fields():
    params = init_params(MICRO, 0)
    t = TrainConfig(batch_size=1, num_coords=4)
    r = train_step_main(_clips(MICRO, 1)[0], params, TrainState.fresh(t), t, MICRO)
    rec = r.record()
    assert set(rec) == {"step", "phase", "l2", "perceptual", "peak_elems", "ms"}
    assert rec["step"] == 1 and rec["phase"] == "main" and rec["peak_elems"] > 0
