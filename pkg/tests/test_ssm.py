"""Kernel family: ZOH closed forms, scan/convolution duality, causality,
stability, and the analytic reverse scan against finite differences."""

import numpy as np
import pytest

from ssmamba.autodiff import ShapeError, Tensor, grad_check, tsum
from ssmamba.ssm import (
    ZOH_LIMIT_THRESHOLD,
    conv_apply,
    discretize_zoh,
    init_mamba_block,
    mamba_block_forward,
    recurrent_scan,
    recurrent_scan_vjp,
    selective_params,
    selective_scan,
    ssm_conv_kernel,
)


class TestDiscretizeZoh:
    def test_scalar_closed_form(self):
        # (e^{-ln2} - 1) / (-1) = 0.5
        a_bar, b_bar = discretize_zoh(-1.0, 1.0, np.log(2.0))
        assert a_bar == pytest.approx(0.5, abs=1e-15)
        assert b_bar == pytest.approx(0.5, abs=1e-15)

    def test_delta_to_zero_limit(self):
        a_bar, b_bar = discretize_zoh(-1.0, 1.0, 1e-12)
        assert a_bar == pytest.approx(1.0, abs=1e-9)
        assert b_bar == pytest.approx(0.0, abs=1e-9)

    def test_a_to_zero_series_limit(self):
        _, b_bar = discretize_zoh(1e-12, 2.0, 0.3)
        assert b_bar == pytest.approx(0.6, abs=1e-12)

    def test_nonpositive_delta_rejected(self):
        with pytest.raises(ValueError):
            discretize_zoh(-1.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            discretize_zoh(-1.0, 1.0, -0.1)

    def test_limit_branch_is_continuous(self):
        # exact expm1 quotient at a = 1e-7 vs the implemented limit branch
        a, b, delta = 1e-7, 1.0, 0.1
        assert abs(delta * a) < ZOH_LIMIT_THRESHOLD  # the call takes the limit path
        _, b_bar = discretize_zoh(a, b, delta)
        exact = np.expm1(delta * a) / a * b
        assert abs(b_bar - exact) < 1e-9

    def test_broadcasts_over_states(self):
        a = np.array([-1.0, -2.0])
        a_bar, b_bar = discretize_zoh(a, np.ones(2), 0.5)
        assert np.allclose(a_bar, np.exp(0.5 * a))
        assert np.allclose(b_bar, np.expm1(0.5 * a) / a)


class TestConvKernel:
    def test_geometric_series(self):
        k = ssm_conv_kernel(np.array([0.5]), np.array([1.0]), np.array([1.0]), 4)
        assert np.allclose(k, [1.0, 0.5, 0.25, 0.125], atol=1e-15)

    def test_zero_a_bar_is_impulse(self):
        b, c = np.array([2.0, 1.0]), np.array([0.5, 3.0])
        k = ssm_conv_kernel(np.zeros(2), b, c, 5)
        assert k[0] == pytest.approx(c @ b)
        assert np.allclose(k[1:], 0.0)

    def test_zero_c_is_zero(self):
        k = ssm_conv_kernel(np.full(3, 0.9), np.ones(3), np.zeros(3), 6)
        assert np.allclose(k, 0.0)

    def test_length_contract(self):
        with pytest.raises(ValueError):
            ssm_conv_kernel(np.ones(2), np.ones(2), np.ones(2), 0)


class TestRecurrentScan:
    def test_memoryless_when_a_bar_zero(self):
        rng = np.random.default_rng(0)
        length, n = 7, 3
        b_bar = rng.standard_normal((length, n))
        c = rng.standard_normal((length, n))
        x = rng.standard_normal(length)
        y = recurrent_scan(np.zeros((length, n)), b_bar, c, x)
        expected = np.array([(c[t] @ b_bar[t]) * x[t] for t in range(length)])
        assert np.allclose(y, expected, atol=1e-14)

    def test_single_step(self):
        b_bar = np.array([[1.5, -0.5]])
        c = np.array([[2.0, 1.0]])
        y = recurrent_scan(np.full((1, 2), 0.3), b_bar, c, np.array([2.0]))
        assert y[0] == pytest.approx((c[0] @ b_bar[0]) * 2.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            recurrent_scan(np.ones((3, 2)), np.ones((4, 2)), np.ones((3, 2)), np.ones(3))

    def test_d_skip_feedthrough(self):
        rng = np.random.default_rng(1)
        length, n = 5, 2
        args = (np.full((length, n), 0.5), rng.standard_normal((length, n)),
                rng.standard_normal((length, n)), rng.standard_normal(length))
        plain = recurrent_scan(*args)
        skipped = recurrent_scan(*args, d_skip=2.0)
        assert np.allclose(skipped, plain + 2.0 * args[3], atol=1e-14)

    def test_duality_time_invariant(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            n = int(rng.integers(1, 17))
            length = int(rng.integers(1, 129))
            a = -np.exp(rng.uniform(-2, 1, n))
            a_bar, b_bar = discretize_zoh(a, rng.standard_normal(n), float(rng.uniform(0.01, 1)))
            c = rng.standard_normal(n)
            x = rng.standard_normal(length)
            y_scan = recurrent_scan(np.tile(a_bar, (length, 1)), np.tile(b_bar, (length, 1)),
                                    np.tile(c, (length, 1)), x)
            y_conv = conv_apply(ssm_conv_kernel(a_bar, b_bar, c, length), x)
            assert np.abs(y_scan - y_conv).max() < 1e-10

    def test_stability_and_state_decay(self):
        rng = np.random.default_rng(4)
        d, n, length = 4, 8, 40
        a_log = rng.uniform(-1.0, 2.0, (d, n))
        delta = rng.uniform(0.01, 1.0, (length, d, 1))
        a_bar = np.exp(delta * -np.exp(a_log)[None])
        assert np.all(np.abs(a_bar) < 1.0)
        # impulse then silence: state norm must decay monotonically
        x = np.zeros((length, d))
        x[0] = 1.0
        b_bar = np.ones((length, d, n)) * 0.1
        _, h = recurrent_scan(a_bar, b_bar, np.ones((length, n)), x, return_state=True)
        norms = np.linalg.norm(h.reshape(length, -1), axis=1)
        assert np.all(np.diff(norms[1:]) <= 1e-12)

    def test_causality_perturbation(self):
        rng = np.random.default_rng(5)
        length, d, n = 12, 3, 4
        a_bar = rng.uniform(0.1, 0.9, (length, d, n))
        b_bar = rng.standard_normal((length, d, n))
        c = rng.standard_normal((length, n))
        x = rng.standard_normal((length, d))
        y = recurrent_scan(a_bar, b_bar, c, x)
        t = 6
        x2 = x.copy()
        x2[t] += 1.0
        y2 = recurrent_scan(a_bar, b_bar, c, x2)
        assert np.array_equal(y[:t], y2[:t])
        assert not np.allclose(y[t:], y2[t:])

    def test_reverse_scan_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        length, d, n = 5, 2, 3
        a_bar = rng.uniform(0.1, 0.9, (length, d, n))
        b_bar = rng.standard_normal((length, d, n))
        c = rng.standard_normal((length, n))
        x = rng.standard_normal((length, d))
        gy = rng.standard_normal((length, d))
        _, h = recurrent_scan(a_bar, b_bar, c, x, return_state=True)
        grads = recurrent_scan_vjp(gy, a_bar, b_bar, c, x, h)
        step = 1e-6
        for arr, grad in zip((a_bar, b_bar, c, x), grads):
            flat = arr.reshape(-1)
            gflat = grad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = float((recurrent_scan(a_bar, b_bar, c, x) * gy).sum())
                flat[i] = orig - step
                dn = float((recurrent_scan(a_bar, b_bar, c, x) * gy).sum())
                flat[i] = orig
                num = (up - dn) / (2 * step)
                assert abs(num - gflat[i]) < 1e-5 * max(1.0, abs(num))


class TestSelectiveParams:
    def _params(self, rng, d_inner=4, n_state=3):
        return init_mamba_block(rng, d=4, d_inner=d_inner, n_state=n_state,
                                k_conv=3, dtype=np.float64).ssm

    def test_zero_input_zero_bias(self):
        ssm = self._params(np.random.default_rng(0))
        ssm.b_delta.data[...] = 0.0
        xs = Tensor(np.zeros((6, 4)))
        delta, b, c = selective_params(xs, ssm)
        assert np.allclose(delta.data, np.log(2.0), atol=1e-12)
        assert np.allclose(b.data, 0.0) and np.allclose(c.data, 0.0)
        y = selective_scan(xs, delta, b, c, ssm.a_log)
        assert np.allclose(y.data, 0.0)

    def test_delta_strictly_positive(self):
        rng = np.random.default_rng(1)
        ssm = self._params(rng)
        xs = Tensor(rng.standard_normal((10_000, 4)) * 3.0)
        delta, _, _ = selective_params(xs, ssm)
        assert np.all(delta.data > 0.0)

    def test_per_timestep_locality(self):
        rng = np.random.default_rng(2)
        ssm = self._params(rng)
        x = rng.standard_normal((4, 4))
        d1, b1, c1 = (t.data for t in selective_params(Tensor(x), ssm))
        x2 = x.copy()
        x2[2] += 1.0
        d2, b2, c2 = (t.data for t in selective_params(Tensor(x2), ssm))
        for before, after in ((d1, d2), (b1, b2), (c1, c2)):
            assert np.array_equal(before[:2], after[:2])
            assert not np.allclose(before[2], after[2])


class TestMambaBlock:
    def test_shape_preserved(self):
        rng = np.random.default_rng(0)
        blk = init_mamba_block(rng, d=64, d_inner=128, n_state=16, k_conv=4)
        for n in (1, 81, 100):
            tokens = Tensor(rng.standard_normal((n, 64)).astype(np.float32))
            assert mamba_block_forward(tokens, blk).shape == (n, 64)

    def test_zeroed_out_projection_is_identity(self):
        rng = np.random.default_rng(1)
        blk = init_mamba_block(rng, d=8, d_inner=16, n_state=4, k_conv=4, dtype=np.float64)
        blk.w_out.data[...] = 0.0
        tokens = Tensor(rng.standard_normal((9, 8)))
        assert np.array_equal(mamba_block_forward(tokens, blk).data, tokens.data)

    def test_causality_through_block(self):
        rng = np.random.default_rng(2)
        blk = init_mamba_block(rng, d=8, d_inner=16, n_state=4, k_conv=4, dtype=np.float64)
        tokens = rng.standard_normal((10, 8))
        base = mamba_block_forward(Tensor(tokens), blk).data
        t = 5
        bumped = tokens.copy()
        bumped[t] += 0.5
        out = mamba_block_forward(Tensor(bumped), blk).data
        assert np.array_equal(base[:t], out[:t])
        assert not np.allclose(base[t], out[t])

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        blk = init_mamba_block(rng, d=4, d_inner=8, n_state=3, k_conv=3, dtype=np.float64)
        tokens = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        leaves = dict(blk.named("blk"))
        leaves["tokens"] = tokens
        report = grad_check(lambda: tsum(mamba_block_forward(tokens, blk)), leaves, tol=1e-5)
        assert report.passed, str(report)

    def test_empty_sequence_rejected(self):
        rng = np.random.default_rng(4)
        blk = init_mamba_block(rng, d=4, d_inner=8, n_state=3, k_conv=3)
        with pytest.raises(ShapeError):
            mamba_block_forward(Tensor(np.zeros((0, 4), dtype=np.float32)), blk)
