import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fido_lab.numerics import Rng, matmul, rms_norm, seeded_init, softmax_rows


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_scalar():
    assert matmul(np.array([[2.0]]), np.array([[3.0]])).tolist() == [[6.0]]


def test_matmul_identity():
    m = Rng(3).uniform(-1, 1, (3, 4))
    assert np.array_equal(matmul(np.eye(3), m), m)


def test_matmul_matches_triple_loop():
    rng = Rng(7)
    a, b = rng.uniform(-1, 1, (4, 5)), rng.uniform(-1, 1, (5, 2))
    assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) <= 1e-12


def test_matmul_mismatch_names_both_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(np.zeros((2, 3)), np.zeros((4, 5)))


small = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31))
def test_matmul_associative(m, n, p, q, seed):
    rng = Rng(seed)
    a, b, c = rng.uniform(-1, 1, (m, n)), rng.uniform(-1, 1, (n, p)), rng.uniform(-1, 1, (p, q))
    assert np.allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9, rtol=0)


def test_softmax_symmetric_row():
    assert softmax_rows(np.array([[0.0, 0.0]])).tolist() == [[0.5, 0.5]]


def test_softmax_no_overflow():
    out = softmax_rows(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(1.0) and out[0, 1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_direct_oracle():
    x = np.array([1.0, 2.0, 3.0])
    direct = np.exp(x) / np.exp(x).sum()
    assert np.max(np.abs(softmax_rows(x[None, :])[0] - direct)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 12)), elements=st.floats(-1e6, 1e6)))
def test_softmax_rows_sum_to_one(m):
    assert np.all(np.abs(softmax_rows(m).sum(axis=-1) - 1.0) <= 1e-12)


def test_softmax_pure():
    m = Rng(1).uniform(-5, 5, (3, 7))
    before = m.copy()
    assert np.array_equal(softmax_rows(m), softmax_rows(m))
    assert np.array_equal(m, before)


def test_rms_norm_ones():
    assert np.allclose(rms_norm(np.ones((1, 5)), np.ones(5)), 1.0, atol=1e-6)


def test_rms_norm_zero_row():
    assert rms_norm(np.zeros((2, 3)), np.ones(3)).tolist() == [[0.0] * 3] * 2


def test_rms_norm_hand_oracle():
    out = rms_norm(np.array([[3.0, 4.0]]), np.ones(2))
    expected = np.array([3.0, 4.0]) / np.sqrt(12.5 + 1e-6)
    assert np.max(np.abs(out[0] - expected)) <= 1e-9


def test_rms_norm_length_mismatch():
    with pytest.raises(ValueError):
        rms_norm(np.ones((2, 3)), np.ones(4))


def test_seeded_init_deterministic():
    assert np.array_equal(seeded_init(Rng(5), 4, 6, 0.1), seeded_init(Rng(5), 4, 6, 0.1))


def test_seeded_init_range():
    m = seeded_init(Rng(0), 50, 50, 0.02)
    assert m.min() >= -0.02 and m.max() <= 0.02


def test_seeded_init_seeds_differ():
    assert not np.array_equal(seeded_init(Rng(1), 4, 4, 1.0), seeded_init(Rng(2), 4, 4, 1.0))


def test_seeded_init_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        seeded_init(Rng(0), 2, 2, 0.0)
