"""Runnable invariant suite behind `ssmamba selfcheck`.

Each check re-derives its expectation independently (closed forms, brute
tallies, finite differences, the convolutional dual) so a silent numerical
regression in any kernel turns into a nonzero exit code.
"""

from __future__ import annotations

import math
import os
import tempfile

import numpy as np

from .autodiff import Tensor, backward, grad_check, matmul, mul, sigmoid, softplus, tsum
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import confusion_matrix, load_hsic, make_synthetic, metrics, overfit_spec, save_hsic
from .model import cross_entropy, init_model, model_forward, named_params
from .ssm import conv_apply, discretize_zoh, recurrent_scan, recurrent_scan_vjp, ssm_conv_kernel
from .tokens import sinusoidal_table_1d, sinusoidal_table_2d
from .training import lr_at

__all__ = ["run_selfcheck"]


def _check_matmul_oracle():
    rng = np.random.default_rng(11)
    for _ in range(5):
        m, k, n = rng.integers(1, 9, 3)
        a = rng.standard_normal((m, k))
        b = rng.standard_normal((k, n))
        ref = np.zeros((m, n))
        for i in range(m):
            for j in range(n):
                for l in range(k):
                    ref[i, j] += a[i, l] * b[l, j]
        got = matmul(Tensor(a), Tensor(b)).data
        if np.abs(got - ref).max() >= 1e-12:
            return False, "matmul disagrees with triple loop"
    return True, "matmul == triple-loop oracle to 1e-12"


def _check_elementwise():
    ok = abs(sigmoid(Tensor([[0.0]])).item() - 0.5) < 1e-15
    ok &= abs(softplus(Tensor([[0.0]])).item() - math.log(2.0)) < 1e-15
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    y = Tensor(np.array([[3.0, 4.0]]))
    backward(tsum(mul(x, y)))
    ok &= np.array_equal(x.grad, y.data)
    return ok, "sigmoid(0)=0.5, softplus(0)=ln 2, product rule"


def _check_accumulation():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]), requires_grad=True)
    loss = tsum(mul(x, x))
    backward(loss)
    once = x.grad.copy()
    loss2 = tsum(mul(x, x))
    backward(loss2)
    ok = np.allclose(x.grad, 2 * once) and np.allclose(once, 2 * x.data)
    return ok, "backward twice accumulates to 2x"


def _check_gradcheck():
    rng = np.random.default_rng(3)
    w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    v = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    rep = grad_check(lambda: tsum(sigmoid(matmul(v, w))), {"w": w, "v": v}, tol=1e-5)
    return rep.passed, f"composite FD check, worst {max(rep.max_rel_err.values()):.1e}"


def _check_zoh():
    a_bar, b_bar = discretize_zoh(-1.0, 1.0, math.log(2.0))
    ok = abs(a_bar - 0.5) < 1e-15 and abs(b_bar - 0.5) < 1e-15
    a_bar, b_bar = discretize_zoh(1e-12, 2.0, 0.3)
    ok &= abs(b_bar - 0.6) < 1e-12
    return ok, "ZOH closed form and a->0 limit"


def _check_duality():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 17))
        length = int(rng.integers(1, 129))
        a = -np.exp(rng.uniform(-2.0, 1.0, n))
        b = rng.standard_normal(n)
        c = rng.standard_normal(n)
        delta = float(rng.uniform(0.01, 1.0))
        a_bar, b_bar = discretize_zoh(a, b, delta)
        x = rng.standard_normal(length)
        y_scan = recurrent_scan(np.tile(a_bar, (length, 1)), np.tile(b_bar, (length, 1)),
                                np.tile(c, (length, 1)), x)
        y_conv = conv_apply(ssm_conv_kernel(a_bar, b_bar, c, length), x)
        worst = max(worst, float(np.abs(y_scan - y_conv).max()))
    return worst < 1e-10, f"scan == convolution over 100 seeds, worst {worst:.1e}"


def _check_scan_backward():
    rng = np.random.default_rng(5)
    length, d, n = 6, 3, 4
    a_bar = rng.uniform(0.1, 0.9, (length, d, n))
    b_bar = rng.standard_normal((length, d, n))
    c = rng.standard_normal((length, n))
    x = rng.standard_normal((length, d))
    gy = rng.standard_normal((length, d))
    _, h = recurrent_scan(a_bar, b_bar, c, x, return_state=True)
    ga, gb, gc, gx = recurrent_scan_vjp(gy, a_bar, b_bar, c, x, h)

    def loss(ab, bb, cc, xx):
        return float((recurrent_scan(ab, bb, cc, xx) * gy).sum())

    hstep = 1e-6
    for arr, grad in ((a_bar, ga), (b_bar, gb), (c, gc), (x, gx)):
        flat = arr.reshape(-1)
        for i in range(0, flat.size, max(1, flat.size // 10)):
            orig = flat[i]
            flat[i] = orig + hstep
            up = loss(a_bar, b_bar, c, x)
            flat[i] = orig - hstep
            dn = loss(a_bar, b_bar, c, x)
            flat[i] = orig
            num = (up - dn) / (2 * hstep)
            if abs(num - grad.reshape(-1)[i]) > 1e-5 * max(1.0, abs(num)):
                return False, "reverse scan disagrees with finite differences"
    return True, "analytic reverse scan matches finite differences"


def _check_kernel_cases():
    k = ssm_conv_kernel(np.array([0.5]), np.array([1.0]), np.array([1.0]), 4)
    ok = np.allclose(k, [1.0, 0.5, 0.25, 0.125], atol=1e-15)
    ok &= np.allclose(ssm_conv_kernel(np.zeros(3), np.ones(3), np.ones(3), 4)[1:], 0.0)
    return ok, "geometric and degenerate kernels"


def _check_tokenizer_shapes():
    cfg = RunConfig()
    rng = np.random.default_rng(0)
    params = init_model(cfg, bands=200, n_classes=16, rng=rng)
    sample = np.random.default_rng(1).uniform(0, 1, (27, 27, 200)).astype(np.float32)
    logits, trace = model_forward(sample, params, trace=True)
    spa, spe = trace.spatial[0].shape, trace.spectral[0].shape
    ok = spa == (81, 64) and spe == (100, 64) and logits.shape == (1, 16)
    return ok, f"paper-config shapes {spa}, {spe}, logits {logits.shape}"


def _check_positional():
    t1 = sinusoidal_table_1d(100, 64)
    t2 = sinusoidal_table_2d(9, 9, 64)
    ok = np.abs(t1).max() <= 1.0 + 1e-12 and np.abs(t2).max() <= 1.0 + 1e-12
    ok &= len({tuple(np.round(row, 12)) for row in t2}) == 81
    return ok, "positional tables bounded and injective on the 9x9 grid"


def _check_unit_gate_identity():
    cfg = RunConfig(window=9, p_spa=3, p_spe=2, d=8, d_prime=4, l_blocks=2,
                    n_state=4, seed=13)
    rng = np.random.default_rng(21)
    with_gate = init_model(cfg, bands=8, n_classes=3, rng=np.random.default_rng(2))
    without = init_model(cfg.replaced({"enhancement": "false"}), bands=8, n_classes=3,
                         rng=np.random.default_rng(2))
    for (_, a), (_, b) in zip(
        [kv for kv in named_params(without)],
        [kv for kv in named_params(with_gate) if ".enhance." not in kv[0]],
    ):
        b.data[...] = a.data
    sample = rng.uniform(0, 1, (9, 9, 8)).astype(np.float32)
    unit, _ = model_forward(sample, with_gate, unit_gate=True)
    plain, _ = model_forward(sample, without)
    ok = np.array_equal(unit.data, plain.data)
    return ok, "gates forced to 1 == enhancement removed, exactly"


def _check_cross_entropy():
    logits = Tensor(np.zeros((1, 16)))
    ok = abs(cross_entropy(logits, 3).item() - math.log(16.0)) < 1e-12
    direct = math.log(math.exp(1) + math.exp(2) + math.exp(3)) - 3.0
    got = cross_entropy(Tensor(np.array([[1.0, 2.0, 3.0]])), 2).item()
    ok &= abs(got - direct) < 1e-12 and abs(got - 0.40761) < 1e-5
    return ok, "uniform and hand-derived losses"


def _check_metrics():
    r = metrics(np.array([[3, 1], [1, 3]]))
    ok = abs(r.oa - 0.75) < 1e-15 and abs(r.kappa - 0.5) < 1e-15
    rng = np.random.default_rng(8)
    for _ in range(20):
        k = int(rng.integers(2, 5))
        true = rng.integers(1, k + 1, 30)
        pred = rng.integers(1, k + 1, 30)
        if len(np.unique(true)) < k:
            continue
        cm = confusion_matrix(true, pred, k)
        tally = np.zeros((k, k), dtype=int)
        for t, p in zip(true, pred):
            tally[t - 1, p - 1] += 1
        ok &= np.array_equal(cm, tally)
        got = metrics(cm)
        oa = np.trace(tally) / tally.sum()
        ok &= abs(got.oa - oa) < 1e-12 and got.kappa <= got.oa + 1e-12
    return ok, "kappa hand case and brute-force tallies"


def _check_roundtrips():
    spec = overfit_spec()
    cube = make_synthetic(spec)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "scene.hsic")
        save_hsic(cube, path)
        again = load_hsic(path)
        ok = np.array_equal(again.data, cube.data) and np.array_equal(again.labels, cube.labels)
        ok &= again.class_names == cube.class_names
        ck = os.path.join(tmp, "weights.ssck")
        entries = {"a": np.arange(6, dtype=np.float32).reshape(2, 3),
                   "b": np.array([1.5], dtype=np.float64)}
        save_checkpoint(entries, ck)
        back = load_checkpoint(ck)
        ok &= np.array_equal(back["a"], entries["a"]) and np.array_equal(back["b"], entries["b"])
    return ok, "HSIC and checkpoint round trips are exact"


def _check_lr():
    cfg = RunConfig()
    values = (lr_at(0, cfg), lr_at(80, cfg), lr_at(160, cfg), lr_at(179, cfg))
    ok = values == (5e-4, 2.5e-4, 1.25e-4, 1.25e-4)
    ok &= all(lr_at(e, cfg) == lr_at(e + 1, cfg) for e in range(0, 78))
    return ok, "halving schedule breakpoints at multiples of 80"


CHECKS = [
    ("matmul-oracle", _check_matmul_oracle),
    ("elementwise", _check_elementwise),
    ("grad-accumulation", _check_accumulation),
    ("finite-difference", _check_gradcheck),
    ("zoh", _check_zoh),
    ("scan-conv-duality", _check_duality),
    ("scan-backward", _check_scan_backward),
    ("conv-kernel", _check_kernel_cases),
    ("tokenizer-shapes", _check_tokenizer_shapes),
    ("positional", _check_positional),
    ("unit-gate-identity", _check_unit_gate_identity),
    ("cross-entropy", _check_cross_entropy),
    ("metrics", _check_metrics),
    ("round-trips", _check_roundtrips),
    ("lr-schedule", _check_lr),
]


def run_selfcheck(out=print):
    failures = 0
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        out(f"[{'ok' if ok else 'FAIL'}] {name}: {detail}")
        failures += 0 if ok else 1
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return failures == 0
