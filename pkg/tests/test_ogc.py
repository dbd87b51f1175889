import json

import numpy as np
import pytest

from hvpl import ogc
from hvpl.detector import FrozenDecoderWeights, SyntheticWorld, synth_video
from hvpl.errors import ConfigError, CoverageError, FormatError, UsageError
from hvpl.optim import Adam
from hvpl.oracles import rank_deficient

from conftest import tiny_config


@pytest.fixture
def space(rng):
    return ogc.make_space(rank_deficient(rng, 48, 64, 16), 0.7, 1)


def test_split_sizes(space):
    assert space.v1.shape == (64, 44) and space.v0.shape == (64, 20)
    assert space.rank == 16


@pytest.mark.parametrize("xi, d, k", [(0.7, 64, 44), (0.29, 100, 29), (0.0, 8, 0), (1.0, 8, 8), (0.5, 7, 3)])
def test_split_index(xi, d, k):
    assert ogc.split_index(xi, d) == k


def test_projection_annihilates_feature_rows(space, rng):
    dp = rng.normal(size=(8, 64))
    star = ogc.project_gradient(dp, space)
    assert np.linalg.norm(star @ space.o.T) <= 1e-8 * np.linalg.norm(dp) * np.linalg.norm(space.o)
    assert np.linalg.norm(star @ space.v1) <= 1e-10
    assert np.linalg.norm(ogc.project_gradient(star, space) - star) <= 1e-12 * np.linalg.norm(star)


def test_xi_boundaries(rng):
    o = rank_deficient(rng, 20, 16, 4)
    dp = rng.normal(size=(3, 16))
    assert np.array_equal(ogc.project_gradient(dp, ogc.make_space(o, 0.0, 1)), dp)
    assert np.array_equal(ogc.project_gradient(dp, ogc.make_space(o, 1.0, 1)), np.zeros_like(dp))
    with pytest.raises(ConfigError):
        ogc.svd_split(o, 1.5)


def test_subspace_update_stays_in_free_directions(space, rng):
    p = rng.normal(size=(8, 64))
    opt = Adam(1e-2)
    for _ in range(5):
        star = ogc.project_gradient(rng.normal(size=(8, 64)), space)
        new = ogc.apply_projected_update(p, star, opt, 2, basis=space.v0)
        assert np.linalg.norm((new - p) @ space.v1) <= 1e-12
        p = new


def test_direct_adam_update_leaks(space, rng):
    p = rng.normal(size=(8, 64))
    star = ogc.project_gradient(rng.normal(size=(8, 64)), space)
    new = ogc.apply_projected_update(p, star, Adam(1e-2), 2)
    assert np.linalg.norm((new - p) @ space.v1) > 1e-6


def test_projection_only_from_second_task(rng):
    with pytest.raises(UsageError):
        ogc.apply_projected_update(np.zeros((2, 2)), np.zeros((2, 2)), Adam(1e-3), 1)


def _videos(cfg, labels, n):
    world = SyntheticWorld.create(max(labels) + 1, cfg.d, 0)
    return [synth_video(labels, cfg.instances, i, cfg, world) for i in range(n)]


def test_sampling_covers_every_class():
    cfg = tiny_config()
    vids = [v for v, _ in _videos(cfg, [0, 1, 2], 12)]
    for seed in range(10):
        idx = ogc.sample_videos(vids, [0, 1, 2], 4, np.random.default_rng(seed))
        assert len(set(idx)) == 4
        assert {c for i in idx for c in vids[i].class_ids} >= {0, 1, 2}
    with pytest.raises(CoverageError):
        ogc.sample_videos(vids, [0, 1, 2], 2, np.random.default_rng(0))
    with pytest.raises(CoverageError):
        ogc.sample_videos(vids, [0, 1, 7], 4, np.random.default_rng(0))


def test_feature_space_shape():
    cfg = tiny_config()
    pairs = _videos(cfg, [0, 1], 6)
    w = FrozenDecoderWeights.create(cfg.d, cfg.n_heads, cfg.l_d, 0)
    p = np.random.default_rng(0).normal(size=(cfg.lpf, cfg.d))
    o = ogc.build_feature_space(pairs, [0, 1], p, w, 3, seed=0, task=1)
    assert o.shape == (3 * cfg.lpf, cfg.d)


def test_persistence_roundtrip_and_delete_rule(tmp_path, space, rng):
    p1 = ogc.persist_space(space, tmp_path)
    back = ogc.load_space(p1)
    for name in ("o", "v1", "v0", "s"):
        assert np.array_equal(getattr(back, name), getattr(space, name))
    meta = json.loads(p1.with_suffix(".json").read_text())
    assert meta == {"t": 1, "xi": 0.7, "B": 0, "seed": 0, "dtype": "f8"}
    second = ogc.make_space(rank_deficient(rng, 10, 64, 4), 0.7, 2)
    ogc.persist_space(second, tmp_path)
    assert [p.name for p in ogc.stored_spaces(tmp_path)] == ["ortho_space_t2.hvpl"]
    assert not p1.with_suffix(".json").exists()


def test_load_space_rejects_wrong_record_count(tmp_path):
    from hvpl import matio

    matio.save(tmp_path / "ortho_space_t1.hvpl", np.zeros((2, 2)))
    with pytest.raises(FormatError):
        ogc.load_space(tmp_path / "ortho_space_t1.hvpl")


from hypothesis import given, settings, strategies as st


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_projected_norm_shrinks_as_xi_grows(seed, xa, xb):
    rng = np.random.default_rng(seed)
    o = rank_deficient(rng, 24, 16, 6)
    dp = rng.normal(size=(4, 16))
    lo, hi = sorted((xa, xb))
    n_lo = np.linalg.norm(ogc.project_gradient(dp, ogc.make_space(o, lo, 1)))
    n_hi = np.linalg.norm(ogc.project_gradient(dp, ogc.make_space(o, hi, 1)))
    assert n_hi <= n_lo + 1e-12
