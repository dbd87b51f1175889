import numpy as np
import pytest

from hvpl.detector import (FrozenDecoderWeights, SyntheticWorld, cross_attention_scores, encode_features,
                           synth_video, transformer_decode)
from hvpl.errors import ShapeError, UsageError

from conftest import tiny_config


@pytest.fixture
def setup():
    cfg = tiny_config(scales=2)
    world = SyntheticWorld.create(4, cfg.d, 0)
    return cfg, world


def test_same_seed_same_video(setup):
    cfg, world = setup
    (a, fa), (b, fb) = (synth_video([0, 1, 2], [1, 2], 7, cfg, world) for _ in range(2))
    assert np.array_equal(a.label_map, b.label_map) and a.class_ids == b.class_ids
    assert np.array_equal(fa.out, fb.out)


def test_feature_pyramid_shapes(setup):
    cfg, world = setup
    v, f = synth_video([0, 1], [1, 2], 3, cfg, world)
    assert f.scales[0].shape == (cfg.n_frames, cfg.height // 2, cfg.width // 2, cfg.d)
    assert f.scales[1].shape == (cfg.n_frames, cfg.height // 4, cfg.width // 4, cfg.d)
    assert f.out.shape == (cfg.n_frames, cfg.height * cfg.width, cfg.d)
    for inst in v.instances:
        assert inst.masks.any()


def test_forced_classes(setup):
    cfg, world = setup
    v, _ = synth_video([0, 1, 2], [1, 2], 3, cfg, world, classes=[2, 0])
    assert v.class_ids == [2, 0]
    with pytest.raises(UsageError):
        synth_video([0, 1], [1, 2], 3, cfg, world, classes=[3])


def test_weights_are_frozen():
    w = FrozenDecoderWeights.create(16, 2, 2, 0)
    with pytest.raises(ValueError):
        w.layers[0]["w_q"][0, 0] = 1.0


def test_attention_rows_are_distributions(setup, rng):
    cfg, world = setup
    _, f = synth_video([0], [1, 1], 1, cfg, world)
    w = FrozenDecoderWeights.create(cfg.d, cfg.n_heads, 1, 0)
    att = cross_attention_scores(rng.normal(size=(3, cfg.d)), f.first[0], w, 0, 1)
    assert att.shape == (3, f.first.shape[1])
    assert np.allclose(att.sum(axis=1), 1.0)
    with pytest.raises(ShapeError):
        cross_attention_scores(rng.normal(size=(3, 5)), f.first[0], w, 0, 0)


def test_prompt_rows_do_not_interact(setup, rng):
    cfg, world = setup
    _, f = synth_video([0, 1], [1, 2], 1, cfg, world)
    w = FrozenDecoderWeights.create(cfg.d, cfg.n_heads, 2, 0)
    p = rng.normal(size=(5, cfg.d))
    full = transformer_decode(p, f, w).value
    part = transformer_decode(p[2:4], f, w).value
    assert full.shape == (cfg.n_frames, 5, cfg.d)
    assert np.array_equal(full[:, 2:4], part)


def test_cached_encoding_is_identical(setup, rng):
    cfg, world = setup
    _, f = synth_video([0, 1], [1, 2], 1, cfg, world)
    w = FrozenDecoderWeights.create(cfg.d, cfg.n_heads, 2, 0)
    p = rng.normal(size=(3, cfg.d))
    assert np.array_equal(transformer_decode(p, f, w).value, transformer_decode(p, f, w, encode_features(f, w)).value)
