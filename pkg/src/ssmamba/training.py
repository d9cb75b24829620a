"""Optimization loop: per-class splits, Adam, the halving LR schedule,
seeded deterministic epochs and the repeated-run evaluation protocol.

Determinism contract: given the same RunConfig and seed, two runs produce
bit-identical loss traces and parameters.  Randomness is drawn from three
independent streams (split, init, shuffle) derived from the run seed, and
the shuffle stream's state is serialized so a resumed run replays the
exact schedule of the uninterrupted one.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import add, backward, mul
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import HsiCube, confusion_matrix, extract_window, metrics
from .model import cross_entropy, init_model, model_forward, named_params

__all__ = [
    "lr_at",
    "fit_loop",
    "split_dataset",
    "normalize_cube",
    "Adam",
    "TrainState",
    "TrainingDiverged",
    "EpochRecord",
    "train",
    "evaluate",
    "predict_pixels",
    "predict_scene",
    "repeated_eval",
    "RepeatedEvalResult",
    "history_to_csv",
    "save_train_state",
    "load_train_state",
    "load_model_params",
]


class TrainingDiverged(RuntimeError):
    def __init__(self, step, epoch, batch, max_grad):
        self.step, self.epoch, self.batch, self.max_grad = step, epoch, batch, max_grad
        super().__init__(
            f"non-finite loss at step {step} (epoch {epoch}, batch {batch}); "
            f"max |grad| of previous step {max_grad:.3e}"
        )


def lr_at(epoch, cfg):
    """Initial rate halved every cfg.lr_halve_every epochs (piecewise constant)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr0 * 0.5 ** (epoch // cfg.lr_halve_every)


def split_dataset(cube, counts, seed):
    """Uniform per-class draw without replacement; the rest becomes the test set.

    counts maps 1-based class id to its training count.  Both id arrays are
    returned sorted; ids are flat pixel indices (row * w + col).
    """
    rng = np.random.default_rng(seed)
    train, test = [], []
    for cls in range(1, cube.n_classes + 1):
        ids = cube.labeled_indices(cls)
        n = counts[cls]
        if n > ids.size:
            raise ValueError(
                f"class {cls} has {ids.size} labeled pixels, cannot draw {n}"
            )
        perm = rng.permutation(ids.size)
        train.append(ids[perm[:n]])
        test.append(ids[perm[n:]])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def normalize_cube(cube, mode="minmax-band"):
    """Per-band min-max scaling of the full scene to [0, 1]."""
    if mode == "none":
        return cube
    if mode != "minmax-band":
        raise ValueError(f"unknown normalization {mode!r}")
    flat = cube.data.reshape(-1, cube.b)
    lo = flat.min(axis=0)
    span = flat.max(axis=0) - lo
    span[span == 0] = 1.0
    data = (cube.data - lo) / span
    return HsiCube(data=data.astype(np.float32), labels=cube.labels,
                   class_names=list(cube.class_names), wavelengths=cube.wavelengths)


class Adam:
    """Adam with optional state round-tripping; weight decay is zero."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, named, lr):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, tensor in named:
            g = tensor.grad
            if g is None:
                g = np.zeros_like(tensor.data)
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(tensor.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(tensor.data)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensor.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    oa: float | None = None
    aa: float | None = None
    kappa: float | None = None


def history_to_csv(records):
    lines = ["epoch,lr,loss,oa,aa,kappa"]
    for r in records:
        tail = ",".join("" if v is None else repr(float(v)) for v in (r.oa, r.aa, r.kappa))
        lines.append(f"{r.epoch},{float(r.lr)!r},{float(r.loss)!r},{tail}")
    return "\n".join(lines) + "\n"


@dataclass
class TrainState:
    params: object            # ModelParams
    optimizer: Adam
    epoch: int = 0
    step: int = 0
    shuffle_state: dict | None = None
    epoch_losses: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    history: list = field(default_factory=list)   # EpochRecord per epoch


def _forward_loss(sample, label0, params):
    logits, _ = model_forward(sample, params)
    return cross_entropy(logits, label0)


def _max_abs_grad(params):
    worst = 0.0
    for _, tensor in named_params(params):
        if tensor.grad is not None and tensor.grad.size:
            worst = max(worst, float(np.abs(tensor.grad).max()))
    return worst


def fit_loop(get_sample, labels0, cfg, state, eval_fn=None):
    """Run cfg.epochs - state.epoch epochs of mini-batch Adam in place."""
    n = len(labels0)
    shuffle = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    if state.shuffle_state is not None:
        shuffle.bit_generator.state = state.shuffle_state
    named = list(named_params(state.params))
    for epoch in range(state.epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = shuffle.permutation(n)
        epoch_loss = 0.0
        for b0 in range(0, n, cfg.batch_size):
            batch = order[b0 : b0 + cfg.batch_size]
            losses = []
            for i in batch:
                losses.append(_forward_loss(get_sample(int(i)), int(labels0[int(i)]), state.params))
            total = losses[0]
            for extra in losses[1:]:
                total = add(total, extra)
            batch_loss = mul(total, 1.0 / len(batch))
            loss_value = batch_loss.item()
            if not np.isfinite(loss_value):
                raise TrainingDiverged(state.step, epoch, b0 // cfg.batch_size,
                                       _max_abs_grad(state.params))
            for _, tensor in named:
                tensor.zero_grad()
            backward(batch_loss)
            state.optimizer.step(named, lr)
            state.step += 1
            state.step_losses.append(loss_value)
            epoch_loss += loss_value * len(batch)
        mean_loss = epoch_loss / n
        state.epoch_losses.append(mean_loss)
        record = EpochRecord(epoch=epoch, lr=lr, loss=mean_loss)
        last = epoch == cfg.epochs - 1
        if eval_fn is not None and (last or (cfg.eval_every and (epoch + 1) % cfg.eval_every == 0)):
            result = eval_fn(state.params)
            record.oa, record.aa, record.kappa = result.oa, result.aa, result.kappa
        state.history.append(record)
        state.epoch = epoch + 1
        state.shuffle_state = shuffle.bit_generator.state
    return state


def _pixel_window(cube, pixel_id, window):
    return extract_window(cube, pixel_id // cube.w, pixel_id % cube.w, window)


def predict_pixels(params, cube, ids, window):
    """1-based class predictions for the given flat pixel ids."""
    out = np.empty(len(ids), dtype=np.int32)
    for j, pid in enumerate(ids):
        logits, _ = model_forward(_pixel_window(cube, int(pid), window), params)
        out[j] = int(np.argmax(logits.data)) + 1
    return out


def predict_scene(params, cube, cfg):
    """Full-scene class map (every pixel, labeled or not)."""
    prepared = normalize_cube(cube, cfg.normalize)
    ids = np.arange(cube.h * cube.w)
    return predict_pixels(params, prepared, ids, cfg.window).reshape(cube.h, cube.w)


def evaluate(params, cube, cfg, ids):
    """Metrics over the labeled pixels in ids (expects a normalized cube)."""
    truth = cube.labels.reshape(-1)[ids]
    preds = predict_pixels(params, cube, ids, cfg.window)
    return metrics(confusion_matrix(truth, preds, cube.n_classes))


def train(cube, cfg, out_dir=None):
    """The full protocol: split, per-epoch mini-batches, LR halving.

    Returns (TrainState, (train_ids, test_ids)).  When out_dir is given the
    final parameter checkpoint and the loss/metric history CSV are written
    there.
    """
    prepared = normalize_cube(cube, cfg.normalize)
    counts = cfg.class_counts(cube.n_classes)
    train_ids, test_ids = split_dataset(cube, counts, cfg.seed)
    labels0 = cube.labels.reshape(-1)[train_ids] - 1
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    params = init_model(cfg, cube.b, cube.n_classes, rng=init_rng)
    state = TrainState(params=params, optimizer=Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps))

    eval_fn = None
    if test_ids.size:
        eval_fn = lambda p: evaluate(p, prepared, cfg, test_ids)
    get_sample = lambda i: _pixel_window(prepared, int(train_ids[i]), cfg.window)
    fit_loop(get_sample, labels0, cfg, state, eval_fn=eval_fn)

    if out_dir is not None:
        _write_run_outputs(state, out_dir)
    return state, (train_ids, test_ids)


def _write_run_outputs(state, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint({f"param.{n}": t.data for n, t in named_params(state.params)},
                    os.path.join(out_dir, "checkpoint.ssck"))
    with open(os.path.join(out_dir, "history.csv"), "w", encoding="utf-8") as fh:
        fh.write(history_to_csv(state.history))


def train_accuracy(state, cube, cfg, train_ids):
    prepared = normalize_cube(cube, cfg.normalize)
    truth = cube.labels.reshape(-1)[train_ids]
    preds = predict_pixels(state.params, prepared, train_ids, cfg.window)
    return float((preds == truth).mean())


@dataclass
class RepeatedEvalResult:
    oa: np.ndarray
    aa: np.ndarray
    kappa: np.ndarray

    def _stats(self, values):
        mean = float(values.mean())
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        return mean, std

    @property
    def oa_mean_std(self):
        return self._stats(self.oa)

    @property
    def aa_mean_std(self):
        return self._stats(self.aa)

    @property
    def kappa_mean_std(self):
        return self._stats(self.kappa)

    def summary(self):
        oa, oa_s = self.oa_mean_std
        aa, aa_s = self.aa_mean_std
        k, k_s = self.kappa_mean_std
        return (f"OA (%) {100 * oa:.2f} +/- {100 * oa_s:.2f}\n"
                f"AA (%) {100 * aa:.2f} +/- {100 * aa_s:.2f}\n"
                f"Kx100  {100 * k:.2f} +/- {100 * k_s:.2f}")


def repeated_eval(cube, cfg, repeats=10):
    """Re-split and retrain with seeds seed..seed+repeats-1; mean +/- sample std."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    oa, aa, kappa = [], [], []
    for r in range(repeats):
        run_cfg = cfg.replaced({"seed": cfg.seed + r})
        state, (_, test_ids) = train(cube, run_cfg)
        if not test_ids.size:
            raise ValueError("repeated evaluation needs held-out pixels")
        record = state.history[-1]  # final epoch always carries test metrics
        oa.append(record.oa)
        aa.append(record.aa)
        kappa.append(record.kappa)
    return RepeatedEvalResult(oa=np.array(oa), aa=np.array(aa), kappa=np.array(kappa))


def load_model_params(path, cfg, bands, n_classes):
    """Rebuild a model from a parameter checkpoint written by train()."""
    entries = load_checkpoint(path)
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    params = init_model(cfg, bands, n_classes, rng=init_rng)
    for name, tensor in named_params(params):
        key = f"param.{name}"
        if key not in entries:
            raise ValueError(f"checkpoint is missing {key}; config mismatch?")
        if entries[key].shape != tensor.shape:
            raise ValueError(f"{key} has shape {entries[key].shape}, expected {tensor.shape}")
        tensor.data[...] = entries[key]
    return params


# -- train-state serialization ---------------------------------------------------


def save_train_state(state, cfg, bands, n_classes, path):
    """Whole training snapshot: parameters, moments, schedule position, RNG."""
    entries = {f"param.{n}": t.data for n, t in named_params(state.params)}
    for name, arr in state.optimizer.m.items():
        entries[f"adam.m.{name}"] = arr
    for name, arr in state.optimizer.v.items():
        entries[f"adam.v.{name}"] = arr
    meta = {
        "config": cfg.to_text(),
        "bands": bands,
        "n_classes": n_classes,
        "epoch": state.epoch,
        "step": state.step,
        "adam_t": state.optimizer.t,
        "shuffle_state": state.shuffle_state,
        "epoch_losses": state.epoch_losses,
        "step_losses": state.step_losses,
        "history": [[r.epoch, r.lr, r.loss, r.oa, r.aa, r.kappa] for r in state.history],
    }
    entries["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    save_checkpoint(entries, path)


def load_train_state(path):
    """Returns (TrainState, RunConfig, bands, n_classes)."""
    entries = load_checkpoint(path)
    meta = json.loads(entries.pop("meta").tobytes().decode("utf-8"))
    cfg = RunConfig.from_text(meta["config"])
    init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    params = init_model(cfg, meta["bands"], meta["n_classes"], rng=init_rng)
    for name, tensor in named_params(params):
        tensor.data[...] = entries[f"param.{name}"]
    opt = Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    opt.t = meta["adam_t"]
    for key, arr in entries.items():
        if key.startswith("adam.m."):
            opt.m[key[len("adam.m."):]] = arr.astype(np.float32)
        elif key.startswith("adam.v."):
            opt.v[key[len("adam.v."):]] = arr.astype(np.float32)
    state = TrainState(
        params=params, optimizer=opt, epoch=meta["epoch"], step=meta["step"],
        shuffle_state=meta["shuffle_state"],
        epoch_losses=list(meta["epoch_losses"]), step_losses=list(meta["step_losses"]),
        history=[EpochRecord(*row) for row in meta["history"]],
    )
    return state, cfg, meta["bands"], meta["n_classes"]


def resume_train(cube, path, out_dir=None):
    """Continue a serialized run to cfg.epochs; reproduces the straight trace."""
    state, cfg, bands, n_classes = load_train_state(path)
    if bands != cube.b or n_classes != cube.n_classes:
        raise ValueError("cube geometry does not match the saved run")
    prepared = normalize_cube(cube, cfg.normalize)
    counts = cfg.class_counts(cube.n_classes)
    train_ids, test_ids = split_dataset(cube, counts, cfg.seed)
    labels0 = cube.labels.reshape(-1)[train_ids] - 1
    eval_fn = None
    if test_ids.size:
        eval_fn = lambda p: evaluate(p, prepared, cfg, test_ids)
    get_sample = lambda i: _pixel_window(prepared, int(train_ids[i]), cfg.window)
    fit_loop(get_sample, labels0, cfg, state, eval_fn=eval_fn)
    if out_dir is not None:
        _write_run_outputs(state, out_dir)
    return state, (train_ids, test_ids)
