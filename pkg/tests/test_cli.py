"""Command-line surface: artifacts, exit codes, rerun byte-identity, and
the ablation table layout."""

import os

import numpy as np
import pytest

from conftest import fast_args
from ssmamba.bench import bench_csv, fit_exponent, run_benchmark
from ssmamba.cli import main


def run_train(scene, out_dir, *extra):
    return main(["train", "--data", scene, "--out", str(out_dir), *fast_args(*extra)])


class TestTrain:
    def test_emits_four_artifacts(self, small_scene_path, tmp_path):
        out = tmp_path / "run"
        assert run_train(small_scene_path, out) == 0
        names = sorted(os.listdir(out))
        assert names == ["checkpoint.ssck", "config.txt", "history.csv", "metrics.txt"]

    def test_missing_dataset_exit_2(self, tmp_path):
        code = main(["train", "--data", str(tmp_path / "nope.hsic"),
                     "--out", str(tmp_path / "o"), *fast_args()])
        assert code == 2

    def test_rerun_byte_identical(self, small_scene_path, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_train(small_scene_path, a) == 0
        assert run_train(small_scene_path, b) == 0
        for name in ("history.csv", "checkpoint.ssck", "config.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_unknown_config_key_rejected(self, small_scene_path, tmp_path):
        code = main(["train", "--data", small_scene_path, "--out", str(tmp_path / "o"),
                     "--set", "not_a_key=3"])
        assert code == 1

    def test_resolved_config_is_loadable(self, small_scene_path, tmp_path):
        from ssmamba.config import RunConfig

        out = tmp_path / "run"
        run_train(small_scene_path, out)
        cfg = RunConfig.load(out / "config.txt")
        assert cfg.epochs == 2 and cfg.d == 8


class TestEvalMapFeatures:
    @pytest.fixture()
    def finished_run(self, small_scene_path, tmp_path):
        out = tmp_path / "run"
        assert run_train(small_scene_path, out) == 0
        return out

    def test_eval(self, finished_run, small_scene_path, capsys):
        assert main(["eval", "--data", small_scene_path, "--run", str(finished_run)]) == 0
        text = capsys.readouterr().out
        assert "OA (%)" in text and "K x 100" in text

    def test_map_renders_scene(self, finished_run, small_scene_path, tmp_path):
        out = tmp_path / "maps"
        assert main(["map", "--data", small_scene_path, "--run", str(finished_run),
                     "--out", str(out)]) == 0
        blob = (out / "map.ppm").read_bytes()
        assert blob.startswith(b"P6\n18 18\n255\n")
        assert len(blob) == len(b"P6\n18 18\n255\n") + 18 * 18 * 3
        assert (out / "truth.ppm").exists()

    def test_features_dump(self, finished_run, small_scene_path, tmp_path):
        out = tmp_path / "feats"
        assert main(["features", "--data", small_scene_path, "--run", str(finished_run),
                     "--pixel", "9,9", "--out", str(out)]) == 0
        manifest = (out / "manifest.txt").read_text().strip().split("\n")
        rows = [ln for ln in manifest if not ln.startswith("#")]
        assert len(rows) == 2  # one block, two branches
        for ln in rows:
            name, r, c, dtype, order = ln.split()
            blob = np.fromfile(out / name, dtype="<f4")
            assert blob.size == int(r) * int(c)
            assert dtype == "float32-le" and order == "row-major"

    def test_eval_missing_run_dir(self, small_scene_path, tmp_path):
        assert main(["eval", "--data", small_scene_path,
                     "--run", str(tmp_path / "missing")]) == 2


class TestAblate:
    def test_table_structure(self, small_scene_path, tmp_path, capsys):
        out = tmp_path / "ablate"
        assert main(["ablate", "--data", small_scene_path, "--out", str(out),
                     *fast_args()]) == 0
        table = (out / "ablate.txt").read_text()
        lines = table.strip().split("\n")
        assert len(lines) == 1 + 9  # header + 3 branch sections x 3 metric rows
        assert "w/" in lines[0] and "w/o" in lines[0]
        for title in ("Spectral Only", "Spatial Only", "Spectral-Spatial"):
            assert any(ln.startswith(title) for ln in lines[1:])
        metric_labels = [ln.split()[0] for ln in lines[1:]]
        csv = (out / "ablate.csv").read_text().strip().split("\n")
        assert csv[0] == "branch_mode,enhancement,oa,aa,kappa"
        assert len(csv) == 1 + 6  # 3 branch modes x {on, off}


class TestParamsAndChecks:
    def test_params_reference_arithmetic(self, capsys):
        assert main(["params", "--bands", "200", "--classes", "16"]) == 0
        text = capsys.readouterr().out
        assert "head" in text and "1040" in text
        counts = {ln.split()[0]: int(ln.split()[1]) for ln in text.strip().split("\n")}
        assert counts["head"] == 1040
        assert counts["total"] == sum(v for k, v in counts.items() if k != "total")

    def test_params_respects_overrides(self, capsys):
        assert main(["params", "--bands", "8", "--classes", "3",
                     "--set", "d=8", "--set", "p_spa=2", "--set", "window=6",
                     "--set", "d_prime=4", "--set", "n_state=4", "--set", "l_blocks=1"]) == 0
        counts = {ln.split()[0]: int(ln.split()[1])
                  for ln in capsys.readouterr().out.strip().split("\n")}
        assert counts["head"] == 8 * 3 + 3

    def test_bench_small_lengths_fit(self):
        result = run_benchmark(lengths=(64, 128, 256), min_duration=0.05)
        text = bench_csv(result)
        assert text.startswith("kernel,length,seconds")
        assert "scan,64," in text and "attention,256," in text
        # smoke: the exponent fit runs; tight bounds are the acceptance suite's job
        assert np.isfinite(result.scan_exponent)
        assert fit_exponent([1, 2, 4], [1.0, 2.0, 4.0]) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.slow
    def test_scan_doubling_stays_near_linear(self):
        # min over two measurement rounds rides out scheduler spikes
        from ssmamba.bench import scan_forward_time

        lengths = (256, 512, 1024, 2048, 4096)
        times = [min(scan_forward_time(L), scan_forward_time(L)) for L in lengths]
        doubling = [times[i + 1] / times[i] for i in range(len(times) - 1)]
        assert max(doubling) <= 2.6, doubling


@pytest.mark.slow
class TestSelfcheckCommand:
    def test_selfcheck_passes(self, capsys):
        assert main(["selfcheck"]) == 0
        assert "15/15 checks passed" in capsys.readouterr().out
