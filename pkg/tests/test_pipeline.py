import numpy as np
import pytest

from patchbank.errors import InputError
from patchbank.experiment import SyntheticSpec
from patchbank.featureio import entry_mask, load_dataset, read_manifest
from patchbank.inference import AnomalyResult
from patchbank.pipeline import (
    RunConfig,
    read_scores_file,
    run_once,
    save_pixel_maps,
    write_scores_file,
    write_synthetic_benchmark,
)


class TestRunConfig:
    def test_defaults_follow_reference_settings(self):
        cfg = RunConfig()
        assert (cfg.method, cfg.tau, cfg.sampling_ratio, cfg.lof_k) == ("lof", 0.15, 0.10, 6)
        cfg.validate()

    @pytest.mark.parametrize(
        "kw",
        [
            {"method": "zen"},
            {"tau": 1.0},
            {"tau": -0.1},
            {"sampling_ratio": 0.0},
            {"sampler": "sorted"},
            {"threads": 0},
            {"lof_k": 0},
            {"epsilon": 0.0},
        ],
    )
    def test_bad_values_rejected(self, kw):
        with pytest.raises(InputError):
            RunConfig(**kw).validate()

    def test_fingerprint_is_stable_and_sensitive(self):
        a = RunConfig(seed=1).fingerprint_hex()
        b = RunConfig(seed=1).fingerprint_hex()
        c = RunConfig(seed=2).fingerprint_hex()
        assert a == b != c and len(a) == 64


class TestScoresFile:
    def test_round_trip(self, tmp_path):
        results = [
            AnomalyResult("img_a", 0.125, np.zeros((2, 2))),
            AnomalyResult("img_b", 3.5, np.zeros((2, 2))),
        ]
        path = tmp_path / "scores.txt"
        write_scores_file(results, path, "cafe01")
        scores, fingerprint = read_scores_file(path)
        assert scores == {"img_a": 0.125, "img_b": 3.5}
        assert fingerprint == "cafe01"

    def test_full_float_precision_survives(self, tmp_path):
        value = 0.1234567890123456789
        path = tmp_path / "scores.txt"
        write_scores_file([AnomalyResult("x", value, np.zeros((1, 1)))], path, "f")
        scores, _ = read_scores_file(path)
        assert scores["x"] == value

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "scores.txt"
        path.write_text("image_id=a\n")
        with pytest.raises(InputError, match="malformed"):
            read_scores_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError, match="missing scores"):
            read_scores_file(tmp_path / "none.txt")


class TestSaveMaps:
    def results(self):
        rng = np.random.default_rng(0)
        return [
            AnomalyResult("a", 1.0, np.zeros((2, 2)), rng.random((8, 8))),
            AnomalyResult("b", 2.0, np.zeros((2, 2)), rng.random((8, 8))),
        ]

    def test_spf1_maps_round_trip_exact_f32(self, tmp_path):
        from patchbank.featureio import read_feature_file

        results = self.results()
        index = save_pixel_maps(results, tmp_path / "maps", "deadbeef")
        assert index.read_text().startswith("# config_fingerprint=deadbeef")
        back = read_feature_file(tmp_path / "maps" / "a.spf")
        assert np.array_equal(back.data[:, :, 0], results[0].pixel_map.astype(np.float32))

    def test_png16_maps_are_written(self, tmp_path):
        from PIL import Image

        save_pixel_maps(self.results(), tmp_path / "maps", "f", fmt="png16")
        img = Image.open(tmp_path / "maps" / "a.png")
        assert img.size == (8, 8)

    def test_unrendered_map_rejected(self, tmp_path):
        bare = [AnomalyResult("a", 1.0, np.zeros((2, 2)), None)]
        with pytest.raises(InputError, match="no pixel map"):
            save_pixel_maps(bare, tmp_path / "maps", "f")


class TestSyntheticBenchmarkFiles:
    def test_layout_masks_and_labels(self, tmp_path):
        spec = SyntheticSpec(
            n_images=10, height=4, width=4, channels=6,
            outlier_fraction=0.0, outlier_shift=5.0, cluster_std=0.1, seed=3,
        )
        train_path, test_path = write_synthetic_benchmark(
            tmp_path, spec, n_train=10, n_test_normal=5, n_test_anomalous=4, mask_scale=4
        )
        train = read_manifest(train_path)
        test = read_manifest(test_path)
        assert len(train) == 10 and len(test) == 9
        assert all(e.label == "normal" for e in train.entries)
        anomalous = [e for e in test.entries if e.label == "anomalous"]
        assert len(anomalous) == 4
        for entry in anomalous:
            mask = entry_mask(entry, test_path)
            assert mask.shape == (16, 16)
            assert mask.any()
        ds = load_dataset(train, train_path)
        assert ds.shape == (10, 6, 4, 4)

    def test_run_once_reports_both_levels(self, tmp_path):
        from patchbank.featureio import rebase_manifest

        spec = SyntheticSpec(
            n_images=12, height=4, width=4, channels=6,
            outlier_fraction=0.0, outlier_shift=5.0, cluster_std=0.1, seed=4,
        )
        train_path, test_path = write_synthetic_benchmark(
            tmp_path, spec, n_train=12, n_test_normal=6, n_test_anomalous=5, mask_scale=4
        )
        train = rebase_manifest(read_manifest(train_path), train_path)
        test = rebase_manifest(read_manifest(test_path), test_path)
        report, fingerprint = run_once(
            train, test, RunConfig(method="lof", lof_k=4, projection_dim=None, sigma=2.0)
        )
        assert report.image_auroc == 1.0
        assert report.pixel_auroc is not None and report.pixel_auroc > 0.9
        assert len(fingerprint) == 64
