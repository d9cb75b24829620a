"""Forward-scan scaling micro-benchmark.

Times the selective-scan forward (no autodiff) against sequence length and
fits a log-log growth exponent; a naive single-head attention forward is
included as the quadratic reference.  Timing CSVs are explicitly exempt
from the byte-determinism contract.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .ssm import recurrent_scan

__all__ = ["BenchResult", "run_benchmark", "bench_csv", "fit_exponent",
           "scan_forward_time", "attention_forward_time"]

DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096)


def _steady_rate(fn, min_duration):
    """Seconds per call, averaged over at least min_duration of wall time.

    Short bursts run faster than sustained work on quota-throttled CPUs;
    averaging every length over the same fixed duration keeps all points in
    one regime, which is what makes the fitted exponent meaningful.
    """
    fn()  # warm
    iters = 0
    t0 = time.perf_counter()
    while True:
        fn()
        iters += 1
        elapsed = time.perf_counter() - t0
        if elapsed >= min_duration:
            return elapsed / iters


def scan_forward_time(length, d=16, n_state=16, seed=0, min_duration=0.3):
    rng = np.random.default_rng(seed)
    delta = rng.uniform(0.01, 0.1, (length, d, 1)).astype(np.float32)
    a = -np.exp(rng.uniform(-1, 1, (1, d, n_state))).astype(np.float32)
    a_bar = np.exp(delta * a)
    b_bar = (delta * rng.standard_normal((length, 1, n_state))).astype(np.float32)
    c = rng.standard_normal((length, n_state)).astype(np.float32)
    x = rng.standard_normal((length, d)).astype(np.float32)
    return _steady_rate(lambda: recurrent_scan(a_bar, b_bar, c, x), min_duration)


def attention_forward_time(length, d=64, seed=0, min_duration=0.3):
    """Naive softmax(Q K^T / sqrt(d)) V with an explicit L x L score matrix."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((length, d)).astype(np.float32)
    k = rng.standard_normal((length, d)).astype(np.float32)
    v = rng.standard_normal((length, d)).astype(np.float32)

    def run():
        scores = (q @ k.T) / np.sqrt(d)
        scores -= scores.max(axis=1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=1, keepdims=True)
        return scores @ v

    return _steady_rate(run, min_duration)


def fit_exponent(lengths, seconds):
    """Slope of log(time) against log(L)."""
    return float(np.polyfit(np.log(np.asarray(lengths, dtype=np.float64)),
                            np.log(np.asarray(seconds, dtype=np.float64)), 1)[0])


@dataclass
class BenchResult:
    lengths: tuple
    scan_seconds: list
    attention_seconds: list

    @property
    def scan_exponent(self):
        return fit_exponent(self.lengths, self.scan_seconds)

    @property
    def attention_exponent(self):
        return fit_exponent(self.lengths, self.attention_seconds)


def run_benchmark(lengths=DEFAULT_LENGTHS, min_duration=0.3):
    scan = [scan_forward_time(L, min_duration=min_duration) for L in lengths]
    attn = [attention_forward_time(L, min_duration=min_duration) for L in lengths]
    return BenchResult(lengths=tuple(lengths), scan_seconds=scan, attention_seconds=attn)


def bench_csv(result):
    lines = ["kernel,length,seconds"]
    for L, s in zip(result.lengths, result.scan_seconds):
        lines.append(f"scan,{L},{s:.6e}")
    for L, s in zip(result.lengths, result.attention_seconds):
        lines.append(f"attention,{L},{s:.6e}")
    lines.append(f"# scan exponent {result.scan_exponent:.3f}, "
                 f"attention exponent {result.attention_exponent:.3f}")
    return "\n".join(lines) + "\n"
