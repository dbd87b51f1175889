import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hvpl import tensor as T
from hvpl.errors import ShapeError


finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=finite))
def test_svd_reconstructs_and_is_orthonormal(a):
    u, s, v = T.svd(a)
    scale = max(1.0, np.linalg.norm(a))
    assert np.linalg.norm(u * s @ v.T - a) <= 1e-10 * scale
    assert np.all(np.diff(s) <= 1e-12 * scale)
    assert np.all(s >= 0)
    k = len(s)
    assert np.allclose(v.T @ v, np.eye(k), atol=1e-10)
    assert np.allclose(np.sort(s)[::-1], np.linalg.svd(a, compute_uv=False)[:k], atol=1e-9 * scale)


def test_svd_full_v_is_square_orthogonal(rng):
    a = rng.normal(size=(5, 12))
    _, s, v = T.svd(a, full_v=True)
    assert v.shape == (12, 12)
    assert np.allclose(v.T @ v, np.eye(12), atol=1e-12)
    # the completed directions are the null space
    assert np.linalg.norm(a @ v[:, len(s):]) < 1e-10


def test_svd_rank_deficient_columns_span_row_space(rng):
    a = rng.normal(size=(48, 16)) @ rng.normal(size=(16, 64))
    _, s, v = T.svd(a, full_v=True)
    assert np.sum(s > 1e-8 * s[0]) == 16
    assert np.linalg.norm(a @ v[:, 16:]) <= 1e-10 * np.linalg.norm(a)


def test_svd_of_zero_matrix():
    u, s, v = T.svd(np.zeros((3, 4)), full_v=True)
    assert np.all(s == 0)
    assert np.allclose(v.T @ v, np.eye(4))


def test_pca_reduce_keeps_leading_variance(rng):
    rows = rng.normal(size=(30, 3)) @ rng.normal(size=(3, 8))
    reduced, basis = T.pca_reduce(rows, 3)
    assert reduced.shape == (30, 3) and basis.shape == (8, 3)
    centred = rows - rows.mean(axis=0)
    assert np.allclose(reduced @ basis.T, centred, atol=1e-9)


def test_pca_reduce_rejects_bad_k(rng):
    with pytest.raises(ShapeError):
        T.pca_reduce(rng.normal(size=(5, 4)), 5)


def test_softmax_and_log_softmax_agree(rng):
    m = rng.normal(size=(4, 6)) * 50
    assert np.allclose(T.softmax_rows(m).sum(axis=1), 1.0)
    assert np.allclose(np.log(T.softmax_rows(m) + 1e-300), T.log_softmax_rows(m), atol=1e-9)


def test_sigmoid_is_stable_at_extremes():
    out = T.sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(out))
    assert out[1] == 0.5 and out[2] == 1.0 and out[0] == 0.0


def test_dwconv_matches_direct_sum(rng):
    x = rng.normal(size=(7, 3))
    k = rng.normal(size=(4, 3))
    out = T.dwconv1d(x, k)
    pad = (4 - 1) // 2
    ref = np.zeros_like(x)
    for i in range(7):
        for j in range(4):
            src = i + j - pad
            if 0 <= src < 7:
                ref[i] += k[j] * x[src]
    assert np.allclose(out, ref)


def test_layer_norm_rows_have_zero_mean_unit_variance(rng):
    y = T.layer_norm(rng.normal(3.0, 2.0, size=(5, 32)))
    assert np.allclose(y.mean(axis=1), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=1), 1.0, atol=1e-3)


def test_orthonormal_complement(rng):
    q, _ = np.linalg.qr(rng.normal(size=(10, 4)))
    c = T.orthonormal_complement(q)
    full = np.hstack([q, c])
    assert full.shape == (10, 10)
    assert np.allclose(full.T @ full, np.eye(10), atol=1e-12)


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        T.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
