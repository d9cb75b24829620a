"""scikit-learn style estimator wrapping the classifier.

`SSMambaClassifier` consumes pre-extracted square windows (n, H, W, B) and
integer labels, so it drops into pipelines, cross-validation and cloning
like any other estimator.  Scene-level workflows (splits by pixel id,
mirror-padded extraction, repeated runs) live in `training`; this class is
the stack-of-samples view of the same model.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .config import RunConfig
from .model import init_model, model_forward, named_params
from .training import Adam, TrainState, fit_loop
from .validation import check_labels, check_window_stack

__all__ = ["SSMambaClassifier"]


class SSMambaClassifier(BaseEstimator, ClassifierMixin):
    """Dual-branch selective state-space classifier for HSI windows.

    Parameters mirror RunConfig; geometry must divide evenly (window by
    p_spa, bands by p_spe) and the patch grid side must be odd when the
    feature-enhancement gate is active.
    """

    def __init__(self, window=27, p_spa=3, p_spe=2, d=64, d_prime=32, l_blocks=2,
                 s_center=3, n_state=16, expand=2, k_conv=4, lr0=5e-4,
                 lr_halve_every=80, epochs=180, batch_size=256, seed=0,
                 branch_mode="spectral_spatial", enhancement=True,
                 normalize="minmax-band"):
        self.window = window
        self.p_spa = p_spa
        self.p_spe = p_spe
        self.d = d
        self.d_prime = d_prime
        self.l_blocks = l_blocks
        self.s_center = s_center
        self.n_state = n_state
        self.expand = expand
        self.k_conv = k_conv
        self.lr0 = lr0
        self.lr_halve_every = lr_halve_every
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.branch_mode = branch_mode
        self.enhancement = enhancement
        self.normalize = normalize

    def _config(self):
        return RunConfig(
            window=self.window, p_spa=self.p_spa, p_spe=self.p_spe, d=self.d,
            d_prime=self.d_prime, l_blocks=self.l_blocks, s_center=self.s_center,
            n_state=self.n_state, expand=self.expand, k_conv=self.k_conv,
            lr0=self.lr0, lr_halve_every=self.lr_halve_every, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, branch_mode=self.branch_mode,
            enhancement=self.enhancement, normalize=self.normalize,
        )

    def _scale(self, X):
        if self.normalize == "none":
            return X
        return np.clip((X - self.scale_min_) / self.scale_span_, 0.0, 1.0)

    def fit(self, X, y):
        X = check_window_stack(X, window=self.window)
        y = check_labels(y, X.shape[0])
        cfg = self._config()
        self.classes_, y0 = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("need at least two classes to fit")
        bands = X.shape[3]
        if self.normalize == "minmax-band":
            flat = X.reshape(-1, bands)
            self.scale_min_ = flat.min(axis=0)
            span = flat.max(axis=0) - self.scale_min_
            span[span == 0] = 1.0
            self.scale_span_ = span
        elif self.normalize != "none":
            raise ValueError(f"unknown normalize mode {self.normalize!r}")
        Xn = self._scale(X)

        init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        params = init_model(cfg, bands, self.classes_.size, rng=init_rng)
        state = TrainState(params=params,
                           optimizer=Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps))
        fit_loop(lambda i: Xn[i], y0, cfg, state)
        self.model_ = params
        self.bands_in_ = bands
        self.history_ = state.history
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ValueError("this SSMambaClassifier instance is not fitted yet")

    def decision_function(self, X):
        self._check_fitted()
        X = check_window_stack(X, window=self.window, bands=self.bands_in_)
        Xn = self._scale(X)
        logits = np.empty((X.shape[0], self.classes_.size), dtype=np.float64)
        for i in range(X.shape[0]):
            out, _ = model_forward(Xn[i], self.model_)
            logits[i] = out.data[0]
        return logits

    def predict_proba(self, X):
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        ez = np.exp(z)
        return ez / ez.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self.decision_function(X)
        return self.classes_[np.argmax(logits, axis=1)]

    @property
    def n_parameters_(self):
        self._check_fitted()
        return sum(int(np.prod(t.shape)) for _, t in named_params(self.model_))
