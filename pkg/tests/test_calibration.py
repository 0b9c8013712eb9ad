import numpy as np
import pytest

from dashq.baselines import quantize_rtn
from dashq.calibration import (
    ActivationBatch,
    DiagImportance,
    HessianEstimate,
    Layer,
    LayerStack,
    accumulate_diag,
    accumulate_full,
    forward,
    propagate,
)
from dashq.errors import ValidationError
from dashq.types import QuantSpec


def test_diag_example():
    d = accumulate_diag(DiagImportance.zeros(2), np.array([[1, 2], [3, 4]]))
    assert d.h.tolist() == [5, 25] and d.sample_count == 2


def test_diag_zero_batch():
    acc = DiagImportance(np.array([1.0, 2.0]), 3)
    out = accumulate_diag(acc, ActivationBatch(np.zeros((2, 5))))
    assert out.h.tolist() == [1, 2] and out.sample_count == 8


def test_full_example():
    H = accumulate_full(HessianEstimate.zeros(2), np.array([[1.0], [2.0]]))
    assert H.H.tolist() == [[1, 2], [2, 4]]
    np.testing.assert_array_equal(H.D + H.O, H.H)


def test_diag_and_full_consistent(rng):
    X = rng.normal(size=(7, 40)).astype(np.float32)
    d = accumulate_diag(DiagImportance.zeros(7), X)
    H = accumulate_full(HessianEstimate.zeros(7), X)
    np.testing.assert_allclose(np.diag(H.H), d.h, rtol=1e-14)


def test_additivity_and_order(rng):
    batches = [rng.normal(size=(6, int(n))) for n in rng.integers(1, 30, 8)]
    concat = np.concatenate(batches, axis=1)
    d_all = accumulate_diag(DiagImportance.zeros(6), concat)
    H_all = accumulate_full(HessianEstimate.zeros(6), concat)
    for order in (range(8), rng.permutation(8)):
        d, H = DiagImportance.zeros(6), HessianEstimate.zeros(6)
        for i in order:
            d = accumulate_diag(d, batches[i])
            H = accumulate_full(H, batches[i])
        np.testing.assert_allclose(d.h, d_all.h, rtol=1e-10)
        np.testing.assert_allclose(H.H, H_all.H, rtol=1e-10, atol=1e-10 * np.abs(H_all.H).max())
        assert d.sample_count == H.sample_count == concat.shape[1]


def test_merge_is_addition(rng):
    a, b = rng.normal(size=(4, 10)), rng.normal(size=(4, 5))
    m = accumulate_diag(DiagImportance.zeros(4), a) + accumulate_diag(DiagImportance.zeros(4), b)
    np.testing.assert_allclose(m.h, accumulate_diag(DiagImportance.zeros(4), np.hstack([a, b])).h)


def test_psd(rng):
    for _ in range(10):
        X = rng.normal(size=(12, int(rng.integers(1, 30))))
        H = accumulate_full(HessianEstimate.zeros(12), X).H
        np.testing.assert_allclose(H, H.T, rtol=1e-6)
        assert np.linalg.eigvalsh(H).min() >= -1e-8 * np.trace(H)


def test_dimension_mismatch():
    with pytest.raises(ValidationError):
        accumulate_diag(DiagImportance.zeros(3), np.zeros((2, 4)))
    with pytest.raises(ValidationError):
        accumulate_full(HessianEstimate.zeros(3), np.zeros((2, 4)))


def _stack(rng, dims=(4, 5, 3)):
    layers = [Layer(rng.normal(size=(b, a)).astype(np.float32), "relu") for a, b in zip(dims, dims[1:])]
    return LayerStack(tuple(layers))


def test_propagate_empty_prefix(rng):
    X0 = rng.normal(size=(4, 6))
    np.testing.assert_array_equal(propagate(_stack(rng), [], X0).X, X0)


def test_propagate_exact_on_grid(rng):
    d_in = 6
    codes = rng.integers(0, 256, (3, d_in))
    codes[:, 0], codes[:, 1] = 0, 255
    W = (0.01 * codes - 1.0).astype(np.float32)
    stack = LayerStack((Layer(W, "none"), Layer(np.ones((2, 3), np.float32))))
    q = quantize_rtn(W, QuantSpec(bits=8, group_size=d_in))
    X0 = rng.normal(size=(d_in, 9))
    out = propagate(stack, [q], X0).X
    np.testing.assert_allclose(out, W.astype(np.float64) @ X0, rtol=1e-6, atol=1e-6)


def test_propagate_relu_saturation():
    W = -np.ones((2, 3), np.float32)
    stack = LayerStack((Layer(W, "relu"), Layer(np.ones((1, 2), np.float32))))
    q = quantize_rtn(W, QuantSpec(bits=2, group_size=3))
    out = propagate(stack, [q], np.ones((3, 4))).X
    assert np.all(out == 0)


def test_propagate_validation(rng):
    stack = _stack(rng)
    q = quantize_rtn(stack.layers[0].W, QuantSpec(bits=2, group_size=4))
    q2 = quantize_rtn(stack.layers[1].W, QuantSpec(bits=2, group_size=4))
    with pytest.raises(ValidationError):
        propagate(stack, [q, q2], np.zeros((4, 1)))
    with pytest.raises(ValidationError):
        propagate(stack, [q2], np.zeros((4, 1)))
    with pytest.raises(ValidationError):
        LayerStack((Layer(np.zeros((3, 2))), Layer(np.zeros((2, 2)))))


def test_forward_matches_manual(rng):
    stack = _stack(rng)
    X = rng.normal(size=(4, 3))
    W0, W1 = (np.asarray(l.W, np.float64) for l in stack.layers)
    np.testing.assert_allclose(forward(stack, X), np.maximum(W1 @ np.maximum(W0 @ X, 0), 0))
