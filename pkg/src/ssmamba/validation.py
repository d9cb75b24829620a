"""Input validation helpers for the estimator API."""

from __future__ import annotations

import numpy as np

__all__ = ["check_window_stack", "check_labels"]


def check_window_stack(X, window=None, bands=None):
    """Validate a stack of HSI windows shaped (n, H, W, B); returns float32."""
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"expected a 4-D (n, H, W, B) window stack, got shape {X.shape}")
    n, h, w, b = X.shape
    if n == 0:
        raise ValueError("empty window stack")
    if h != w:
        raise ValueError(f"windows must be square, got {h}x{w}")
    if window is not None and h != window:
        raise ValueError(f"window size {h} does not match the configured {window}")
    if bands is not None and b != bands:
        raise ValueError(f"{b} bands do not match the fitted {bands}")
    if not np.all(np.isfinite(X)):
        raise ValueError("window stack contains NaN or Inf")
    return np.ascontiguousarray(X, dtype=np.float32)


def check_labels(y, n_samples):
    """Validate integer class labels aligned with the window stack."""
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"labels must be 1-D with {n_samples} entries, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(np.asarray(y, dtype=np.float64))
        if not np.array_equal(rounded, np.asarray(y, dtype=np.float64)):
            raise ValueError("labels must be integers")
        y = rounded.astype(np.int64)
    return y.astype(np.int64)
