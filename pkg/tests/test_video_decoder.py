import numpy as np
import pytest

from hvpl import video_decoder as V
from hvpl.errors import ShapeError, StateError


@pytest.fixture
def weights(rng):
    return V.init_decoder_weights(rng, 8, 4, 2, 2)


def test_layer_counts(weights):
    assert V.count_layers(weights, "gss") == 2 and V.count_layers(weights, "msa") == 2


def test_decode_shapes_and_toggles(weights, rng):
    z = rng.normal(size=(3, 4, 8))
    p_vid = rng.normal(size=(5, 8))
    assert V.decode_video(z, p_vid, weights, 2, 2).value.shape == (5, 8)
    assert V.decode_video(z, p_vid, weights, 2, 2, use_msa=False).value.shape == (4, 8)
    assert V.decode_video(z, p_vid, weights, 2, 2, use_gss=False).value.shape == (5, 8)
    with pytest.raises(ShapeError):
        V.decode_video(z[0], p_vid, weights, 2, 2)


def test_msa_without_gss_frame_mean(weights, rng):
    z = rng.normal(size=(3, 4, 8))
    out = V.decode_video(z, None, weights, 2, 2, use_gss=False, use_msa=False).value
    assert np.allclose(out, z.mean(axis=0))


def test_mask_logits_are_inner_products(rng):
    heads = V.init_heads(rng, 8, 3)
    f_vid = rng.normal(size=(5, 8))
    f_out = rng.normal(size=(2, 6, 8))
    m = V.predict_masks(f_vid, heads, f_out).value
    e = V.mask_embedding(f_vid, heads).value
    assert m.shape == (5, 12)
    assert np.allclose(m, e @ f_out.reshape(12, 8).T)
    assert np.array_equal(V.binarize(np.array([-1.0, 0.0, 2.0])), [False, False, True])


def test_classifier_has_no_object_column(rng):
    heads = V.init_heads(rng, 8, 3)
    p = V.classify(rng.normal(size=(4, 8)), heads).value
    assert p.shape == (4, 4) and np.allclose(p.sum(axis=1), 1.0)


def test_concat_routes_rows_to_tasks(rng):
    prompts = {1: {"p_frm": rng.normal(size=(3, 8)), "p_vid": rng.normal(size=(2, 8))},
               2: {"p_frm": rng.normal(size=(4, 8)), "p_vid": rng.normal(size=(5, 8))}}
    heads = {1: V.init_heads(rng, 8, 2), 2: V.init_heads(rng, 8, 1)}
    labels = {1: [0, 1], 2: [2]}
    pf, pv, routes = V.concat_for_inference(prompts, heads, labels, 2)
    assert pf.shape == (7, 8) and pv.shape == (7, 8)
    assert [(r.rows, r.frame_rows) for r in routes] == [(slice(0, 2), slice(0, 3)), (slice(2, 7), slice(3, 7))]
    assert np.array_equal(pv[routes[1].rows], prompts[2]["p_vid"])
    _, _, routes = V.concat_for_inference(prompts, heads, labels, 2, video_prompt=False)
    assert routes[1].rows == slice(3, 7)
    with pytest.raises(StateError):
        V.concat_for_inference(prompts, heads, labels, 3)


def test_route_predictions_use_own_heads(rng):
    heads = {1: V.init_heads(rng, 8, 2), 2: V.init_heads(rng, 8, 1)}
    routes = [V.Route(1, slice(0, 2), slice(0, 2), [0, 1]), V.Route(2, slice(2, 3), slice(2, 3), [2])]
    f_vid = rng.normal(size=(3, 8))
    f_out = rng.normal(size=(2, 4, 8))
    pred = V.route_predictions(f_vid, heads, routes, f_out, (2, 2, 2))
    assert list(pred.task) == [1, 1, 2]
    assert pred.class_id[2] == 2 and set(pred.class_id[:2]) <= {0, 1}
    assert pred.mask_logits.shape == (3, 2, 2, 2)
    assert np.allclose(pred.probs[2], V.classify(f_vid[2:3], heads[2]).value[0])
