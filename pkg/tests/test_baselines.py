import numpy as np
import pytest

from dashq.baselines import GptqConfig, damped_hessian, quantize_gptq, quantize_rtn, rtn_params
from dashq.errors import NumericalError, ValidationError
from dashq.solver import quantize_layer_dashq, refine_codes
from dashq.types import QuantSpec, dequantize_layer, dequantize_layer_f64


def test_rtn_grid_aligned():
    q = quantize_rtn(np.array([[0, 1, 2, 3]], np.float32), QuantSpec(bits=2, group_size=4))
    assert q.scales[0, 0] == 1 and q.zeros[0, 0] == 0
    assert q.codes().tolist() == [[0, 1, 2, 3]]
    assert dequantize_layer(q).tolist() == [[0, 1, 2, 3]]


def test_rtn_three_points():
    W = np.array([[-1.0, 0.0, 1.0]])
    spec = QuantSpec(bits=2, group_size=3)
    s, z = rtn_params(W, spec)
    assert s[0, 0] == pytest.approx(2 / 3) and z[0, 0] == 1.0
    # in f64 the middle weight sits exactly on a rounding tie and goes up
    assert refine_codes(W[0], s[0, 0], z[0, 0], 2).tolist() == [0, 2, 3]
    np.testing.assert_allclose(s[0, 0] * np.array([0, 2, 3]) - z[0, 0], [-1, 1 / 3, 1])
    # the stored layer reconstructs the extremes and hits the tie within rounding
    w_hat = dequantize_layer_f64(quantize_rtn(W, spec))[0]
    np.testing.assert_allclose(w_hat[[0, 2]], [-1, 1], atol=1e-7)
    assert abs(abs(w_hat[1]) - 1 / 3) < 1e-6


def test_rtn_equals_dashq_without_iterations():
    rng = np.random.default_rng(0)
    W = rng.normal(size=(6, 20)).astype(np.float32)
    spec = QuantSpec(bits=3, group_size=8, iters=0)
    a = quantize_rtn(W, spec)
    b, _ = quantize_layer_dashq(W, rng.uniform(size=20), spec)
    assert a.packed_codes == b.packed_codes
    np.testing.assert_array_equal(a.scales, b.scales)
    np.testing.assert_array_equal(a.zeros, b.zeros)


def test_rtn_is_idempotent():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(5, 32)).astype(np.float32)
    spec = QuantSpec(bits=2, group_size=8)
    a = quantize_rtn(W, spec)
    b = quantize_rtn(dequantize_layer(a), spec)
    assert a.packed_codes == b.packed_codes


def test_rtn_constant_group():
    q = quantize_rtn(np.full((1, 4), 0.25, np.float32), QuantSpec(bits=2, group_size=4))
    assert q.codes().tolist() == [[0, 0, 0, 0]]
    assert dequantize_layer(q).tolist() == [[0.25] * 4]


def _cfg(bits=2, g=4, damp=0.0, block=128):
    return GptqConfig(block_size=block, damp_ratio=damp, spec=QuantSpec(bits=bits, group_size=g))


def test_gptq_identity_hessian_is_rtn():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(7, 24)).astype(np.float32)
    cfg = _cfg(bits=3, g=8, damp=0.01, block=5)
    a = quantize_gptq(W, np.eye(24), cfg)
    b = quantize_rtn(W, cfg.spec)
    assert a.packed_codes == b.packed_codes
    assert a.scales.tobytes() == b.scales.tobytes()


def test_gptq_diagonal_hessian_is_rtn():
    rng = np.random.default_rng(3)
    W = rng.normal(size=(4, 12)).astype(np.float32)
    cfg = _cfg(bits=2, g=4, damp=0.01, block=3)
    a = quantize_gptq(W, np.diag(rng.uniform(0.1, 5, 12)), cfg)
    assert a.packed_codes == quantize_rtn(W, cfg.spec).packed_codes


def test_gptq_two_coupled_columns():
    # H couples columns 0 and 1 only; column 0 lands on a tie (0.5 -> 1), error -0.5
    W = np.array([[0.5, 0.0, 3.0]])
    H = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
    states = {}
    quantize_gptq(W, H, _cfg(bits=2, g=3), callback=lambda j, Wk, _: states.setdefault(j, Wk.copy()))
    e = 0.5 - 1.0
    # conditional minimizer of d^T H d with d_0 = e fixed: d_1 = -e/2, so w_1 shifts by +e/2
    assert states[0][0, 1] == pytest.approx(0.0 + e / 2)
    assert states[0][0, 2] == 3.0


def test_gptq_grid_aligned_has_no_compensation():
    rng = np.random.default_rng(4)
    codes = rng.integers(0, 4, (3, 8))
    codes[:, 0], codes[:, 1] = 0, 3
    W = (0.5 * codes - 1.0).astype(np.float32)
    X = rng.normal(size=(8, 50))
    q = quantize_gptq(W, X @ X.T, _cfg(bits=2, g=8, damp=0.01))
    np.testing.assert_array_equal(q.codes(), codes)
    np.testing.assert_allclose(dequantize_layer(q), W)


@pytest.mark.parametrize("block", [1, 2, 3, 128])
def test_gptq_conditional_minimizer(block):
    rng = np.random.default_rng(block)
    for _ in range(20):
        d = int(rng.integers(3, 7))
        X = rng.normal(size=(d, 3 * d)) + rng.normal(size=(d, 1))
        H = X @ X.T
        W = rng.normal(size=(2, d))
        cfg = _cfg(bits=2, g=int(rng.integers(1, d + 1)), damp=0.01, block=block)
        Hd = damped_hessian(H, 0.01)
        seen = []

        def check(j, Wk, W_hat):
            # only columns up to the end of the current block are guaranteed current
            if (j + 1) % block and j != d - 1:
                return
            P, R = np.arange(j + 1), np.arange(j + 1, d)
            delta_p = W[:, P] - W_hat[:, P]
            expect = W[:, R] + np.linalg.solve(Hd[np.ix_(R, R)], Hd[np.ix_(R, P)] @ delta_p.T).T
            np.testing.assert_allclose(Wk[:, R], expect, rtol=0, atol=1e-8)
            seen.append(j)

        quantize_gptq(W, H, cfg, callback=check)
        assert seen


def test_gptq_singular_hessian():
    with pytest.raises(NumericalError, match="damp"):
        quantize_gptq(np.ones((1, 2)), np.array([[1.0, 1.0], [1.0, 1.0]]), _cfg(g=2, damp=0.0))


def test_gptq_dead_channel():
    X = np.zeros((4, 10))
    X[:3] = np.random.default_rng(0).normal(size=(3, 10))
    q = quantize_gptq(np.random.default_rng(1).normal(size=(2, 4)), X @ X.T, _cfg(g=4, damp=0.0))
    assert q.codes().shape == (2, 4)


def test_gptq_validation():
    with pytest.raises(ValidationError):
        quantize_gptq(np.ones((1, 3)), np.eye(2), _cfg())
    with pytest.raises(ValidationError):
        GptqConfig(block_size=0)
