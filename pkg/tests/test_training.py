"""Training protocol: schedule, splits, optimizer behavior, determinism,
resume, and the repeated-run aggregation."""

import numpy as np
import pytest

from ssmamba.autodiff import Tensor
from ssmamba.config import RunConfig
from ssmamba.data import HsiCube, make_synthetic, overfit_config, overfit_spec
from ssmamba.training import (
    Adam,
    history_to_csv,
    load_train_state,
    lr_at,
    normalize_cube,
    repeated_eval,
    resume_train,
    save_train_state,
    split_dataset,
    train,
    train_accuracy,
)


class TestLrSchedule:
    def test_protocol_values(self):
        cfg = RunConfig()
        assert lr_at(0, cfg) == 5e-4
        assert lr_at(80, cfg) == 2.5e-4
        assert lr_at(160, cfg) == 1.25e-4
        assert lr_at(179, cfg) == 1.25e-4

    def test_piecewise_constant_with_breakpoints_at_80(self):
        cfg = RunConfig()
        values = [lr_at(e, cfg) for e in range(240)]
        changes = [e for e in range(1, 240) if values[e] != values[e - 1]]
        assert changes == [80, 160]
        assert all(values[e] >= values[e + 1] for e in range(239))

    def test_negative_epoch_rejected(self):
        with pytest.raises(ValueError):
            lr_at(-1, RunConfig())


def table_like_cube(class_sizes, h=145, w=145, b=4, seed=0):
    """A label map with exactly the given per-class pixel counts."""
    rng = np.random.default_rng(seed)
    labels = np.zeros(h * w, dtype=np.int32)
    order = rng.permutation(h * w)
    at = 0
    for cls, size in enumerate(class_sizes, start=1):
        labels[order[at : at + size]] = cls
        at += size
    data = rng.uniform(0, 1, (h, w, b)).astype(np.float32)
    return HsiCube(data=data, labels=labels.reshape(h, w),
                   class_names=[f"c{i}" for i in range(1, len(class_sizes) + 1)])


# per-class labeled totals of the 16-class benchmark scene: 10249 pixels
REFERENCE_CLASS_SIZES = [46, 1428, 830, 237, 483, 730, 28, 478, 20, 972,
                         2455, 593, 205, 1265, 386, 93]


class TestSplitDataset:
    def test_reference_counts_and_totals(self):
        cube = table_like_cube(REFERENCE_CLASS_SIZES)
        assert sum(REFERENCE_CLASS_SIZES) == 10249
        counts = {c: 20 for c in range(1, 17)}
        counts[9] = 15  # the 20-pixel class keeps 5 for testing
        train_ids, test_ids = split_dataset(cube, counts, seed=0)
        assert train_ids.size == 315
        assert test_ids.size == 9934

    def test_disjoint_and_exhaustive_per_class(self):
        cube = table_like_cube([40, 60, 25], h=20, w=20)
        counts = {1: 10, 2: 5, 3: 25}
        train_ids, test_ids = split_dataset(cube, counts, seed=3)
        assert not set(train_ids) & set(test_ids)
        flat = cube.labels.reshape(-1)
        for cls in (1, 2, 3):
            labeled = set(np.flatnonzero(flat == cls))
            got = {i for i in train_ids if flat[i] == cls} | {
                i for i in test_ids if flat[i] == cls}
            assert got == labeled

    def test_all_pixels_drawn_empties_test_set(self):
        cube = table_like_cube([12, 9], h=8, w=8)
        train_ids, test_ids = split_dataset(cube, {1: 12, 2: 9}, seed=1)
        assert train_ids.size == 21 and test_ids.size == 0

    def test_deterministic_given_seed(self):
        cube = table_like_cube([40, 60, 25], h=20, w=20)
        a = split_dataset(cube, {1: 5, 2: 5, 3: 5}, seed=7)
        b = split_dataset(cube, {1: 5, 2: 5, 3: 5}, seed=7)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        c = split_dataset(cube, {1: 5, 2: 5, 3: 5}, seed=8)
        assert not np.array_equal(a[0], c[0])

    def test_insufficient_pixels_rejected(self):
        cube = table_like_cube([10, 10], h=6, w=6)
        with pytest.raises(ValueError):
            split_dataset(cube, {1: 11, 2: 5}, seed=0)


class TestAdam:
    def test_zero_gradient_step_is_identity(self):
        opt = Adam()
        t = Tensor(np.array([[1.0, -2.0]], dtype=np.float32), requires_grad=True)
        before = t.data.copy()
        opt.step([("t", t)], lr=1e-3)
        assert np.array_equal(t.data, before)

    def test_descends_a_quadratic(self):
        opt = Adam()
        t = Tensor(np.array([[4.0]], dtype=np.float32), requires_grad=True)
        for _ in range(200):
            t.grad = 2.0 * t.data
            opt.step([("t", t)], lr=0.05)
        assert abs(t.item()) < 0.2


class TestNormalization:
    def test_per_band_min_max(self):
        cube = table_like_cube([10, 10], h=6, w=6, b=3, seed=2)
        normed = normalize_cube(cube)
        flat = normed.data.reshape(-1, 3)
        assert np.allclose(flat.min(axis=0), 0.0, atol=1e-7)
        assert np.allclose(flat.max(axis=0), 1.0, atol=1e-7)

    def test_constant_band_stays_finite(self):
        data = np.zeros((3, 3, 2), dtype=np.float32)
        data[..., 1] = 5.0
        cube = HsiCube(data=data, labels=np.ones((3, 3), dtype=np.int32), class_names=["x"])
        normed = normalize_cube(cube)
        assert np.all(np.isfinite(normed.data))


def quick_config(**overrides):
    base = dict(window=9, p_spa=3, p_spe=2, d=8, d_prime=4, l_blocks=1,
                s_center=3, n_state=4, expand=2, k_conv=4,
                lr0=5e-3, lr_halve_every=80, epochs=4, batch_size=256,
                seed=0, train_per_class=6)
    base.update(overrides)
    return RunConfig(**base)


class TestTrainLoop:
    def test_zero_epoch_run_returns_initialization(self):
        from ssmamba.model import init_model, named_params

        cube = make_synthetic(overfit_spec())
        cfg = quick_config(epochs=0)
        state, _ = train(cube, cfg)
        init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        fresh = init_model(cfg, cube.b, cube.n_classes, rng=init_rng)
        for (_, got), (_, expected) in zip(named_params(state.params), named_params(fresh)):
            assert np.array_equal(got.data, expected.data)
        assert state.step == 0 and state.epoch_losses == []

    def test_one_epoch_moves_parameters(self):
        from ssmamba.model import init_model, named_params

        cube = make_synthetic(overfit_spec())
        cfg = quick_config(epochs=1)
        state, _ = train(cube, cfg)
        init_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
        fresh = init_model(cfg, cube.b, cube.n_classes, rng=init_rng)
        moved = [not np.array_equal(a.data, b.data)
                 for (_, a), (_, b) in zip(named_params(state.params), named_params(fresh))]
        assert any(moved)

    def test_fixed_seed_bit_identical_trace(self):
        cube = make_synthetic(overfit_spec())
        cfg = quick_config()
        s1, _ = train(cube, cfg)
        s2, _ = train(cube, cfg)
        assert s1.step_losses == s2.step_losses
        assert s1.epoch_losses == s2.epoch_losses

    def test_history_csv_schema(self):
        cube = make_synthetic(overfit_spec())
        cfg = quick_config(epochs=2)
        state, _ = train(cube, cfg)
        csv = history_to_csv(state.history)
        lines = csv.strip().split("\n")
        assert lines[0] == "epoch,lr,loss,oa,aa,kappa"
        assert len(lines) == 3
        assert lines[1].startswith("0,0.005,")

    def test_resume_reproduces_straight_trace(self, tmp_path):
        from ssmamba.model import named_params

        cube = make_synthetic(overfit_spec())
        straight, _ = train(cube, quick_config(epochs=6))
        half_cfg = quick_config(epochs=3)
        half, _ = train(cube, half_cfg)
        snap = tmp_path / "state.ssck"
        save_train_state(half, half_cfg.replaced({"epochs": 6}), cube.b, cube.n_classes, snap)
        resumed, _ = resume_train(cube, snap)
        assert resumed.epoch_losses == straight.epoch_losses
        final = {n: t.data.copy() for n, t in named_params(straight.params)}
        for name, tensor in named_params(resumed.params):
            assert np.array_equal(tensor.data, final[name]), name

    def test_train_state_round_trip(self, tmp_path):
        from ssmamba.model import named_params

        cube = make_synthetic(overfit_spec())
        cfg = quick_config(epochs=2)
        state, _ = train(cube, cfg)
        path = tmp_path / "state.ssck"
        save_train_state(state, cfg, cube.b, cube.n_classes, path)
        loaded, cfg2, bands, k = load_train_state(path)
        assert bands == cube.b and k == cube.n_classes
        assert cfg2.to_text() == cfg.to_text()
        assert loaded.epoch == state.epoch and loaded.step == state.step
        assert loaded.epoch_losses == state.epoch_losses
        for (n1, t1), (n2, t2) in zip(named_params(state.params), named_params(loaded.params)):
            assert n1 == n2 and np.array_equal(t1.data, t2.data)


@pytest.mark.slow
class TestOverfitOracle:
    def test_memorizes_separable_toy_set(self):
        cube = make_synthetic(overfit_spec())
        cfg = overfit_config()
        state, (train_ids, _) = train(cube, cfg)
        assert train_accuracy(state, cube, cfg, train_ids) >= 0.99

    def test_first_ten_steps_decrease(self):
        cube = make_synthetic(overfit_spec())
        cfg = overfit_config().replaced({"epochs": 12})
        state, _ = train(cube, cfg)
        losses = state.step_losses[:10]
        violations = sum(1 for i in range(1, len(losses)) if losses[i] >= losses[i - 1])
        assert violations <= 2


class TestDivergenceAbort:
    def test_nan_loss_aborts_with_diagnostics(self):
        from ssmamba.training import TrainingDiverged

        cube = make_synthetic(overfit_spec())
        cfg = quick_config(lr0=1e12, epochs=5)
        with np.errstate(all="ignore"):
            with pytest.raises(TrainingDiverged) as exc_info:
                train(cube, cfg)
        exc = exc_info.value
        assert exc.step >= 1 and exc.max_grad > 0
        assert "non-finite loss" in str(exc)


class TestRepeatedEval:
    def test_single_repeat_zero_std(self):
        cube = make_synthetic(overfit_spec())
        cfg = quick_config(epochs=2)
        result = repeated_eval(cube, cfg, repeats=1)
        assert result.oa_mean_std[1] == 0.0

    def test_aggregation_matches_manual(self):
        cube = make_synthetic(overfit_spec())
        cfg = quick_config(epochs=2)
        result = repeated_eval(cube, cfg, repeats=3)
        assert result.oa.size == 3
        mean, std = result.oa_mean_std
        assert mean == pytest.approx(float(result.oa.mean()), abs=1e-15)
        assert std == pytest.approx(float(result.oa.std(ddof=1)), abs=1e-15)

    def test_runs_differ_by_seed(self):
        cube = make_synthetic(overfit_spec())
        cfg = quick_config(epochs=2)
        result = repeated_eval(cube, cfg, repeats=2)
        # different splits/initializations: identical metrics would be a
        # seed-plumbing bug (losses certainly differ; OA may tie on tiny sets)
        s1, _ = train(cube, cfg)
        s2, _ = train(cube, cfg.replaced({"seed": cfg.seed + 1}))
        assert s1.epoch_losses != s2.epoch_losses

    def test_invalid_repeats(self):
        cube = make_synthetic(overfit_spec())
        with pytest.raises(ValueError):
            repeated_eval(cube, quick_config(), repeats=0)
