import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from patchbank.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def benchmark(tmp_path, capsys):
    out_dir = tmp_path / "bench"
    code, out, _ = run_cli(
        capsys,
        "gen-synthetic",
        "--out-dir", str(out_dir),
        "--n-train", "14",
        "--n-test-normal", "8",
        "--n-test-anomalous", "6",
        "--height", "4",
        "--width", "4",
        "--channels", "8",
        "--mask-scale", "4",
        "--seed", "7",
    )
    assert code == 0
    return {
        "train": str(out_dir / "train.manifest"),
        "test": str(out_dir / "test.manifest"),
        "dir": out_dir,
    }


def train_args(benchmark, bank_path, *extra):
    return [
        "train",
        "--manifest", benchmark["train"],
        "--out", str(bank_path),
        "--lof-k", "4",
        "--projection-dim", "0",
        *extra,
    ]


class TestEndToEnd:
    def test_full_pipeline(self, benchmark, tmp_path, capsys):
        bank = tmp_path / "bank.spb"
        code, out, _ = run_cli(capsys, *train_args(benchmark, bank))
        assert code == 0
        assert out.startswith("config: ")
        echo = json.loads(out.splitlines()[0][len("config: "):])
        assert echo["command"] == "train"
        assert echo["config"]["seed"] == 0
        assert "retained=" in out and "removed=" in out
        assert bank.exists()

        scores = tmp_path / "scores.txt"
        code, out, _ = run_cli(
            capsys,
            "infer",
            "--bank", str(bank),
            "--manifest", benchmark["test"],
            "--out-scores", str(scores),
        )
        assert code == 0
        assert scores.exists()
        body = scores.read_text()
        assert body.startswith("# config_fingerprint=")
        assert body.count("image_id=") == 14

        code, out, _ = run_cli(
            capsys,
            "eval",
            "--scores", str(scores),
            "--manifest", benchmark["test"],
        )
        assert code == 0
        assert "image_auroc: 1.000000" in out

    def test_training_manifest_scores_zero_against_its_full_bank(
        self, benchmark, tmp_path, capsys
    ):
        bank = tmp_path / "bank.spb"
        code, _, _ = run_cli(
            capsys,
            *train_args(benchmark, bank, "--tau", "0", "--ratio", "1", "--method", "none"),
        )
        assert code == 0
        scores = tmp_path / "scores.txt"
        code, _, _ = run_cli(
            capsys,
            "infer",
            "--bank", str(bank),
            "--manifest", benchmark["train"],
            "--out-scores", str(scores),
        )
        assert code == 0
        values = [
            float(line.split("score=")[1])
            for line in scores.read_text().splitlines()
            if line.startswith("image_id=")
        ]
        assert values and all(v == 0.0 for v in values)

    def test_sweep_prints_trend_table(self, benchmark, tmp_path, capsys):
        code, out, _ = run_cli(
            capsys,
            "sweep",
            "--train", benchmark["train"],
            "--test", benchmark["test"],
            "--ratios", "0,0.2",
            "--settings", "overlap",
            "--methods", "lof,none",
            "--repeats", "1",
            "--out-dir", str(tmp_path / "sweep"),
            "--lof-k", "4",
            "--projection-dim", "0",
        )
        assert code == 0
        assert "[overlap/image_auroc]" in out
        assert (tmp_path / "sweep" / "sweep_table.txt").exists()

    def test_audit_scores_export(self, benchmark, tmp_path, capsys):
        from patchbank.discriminators import DiscriminatorConfig, score_all
        from patchbank.featureio import load_dataset, read_manifest, read_score_file

        audit = tmp_path / "scores.sps"
        code, _, _ = run_cli(
            capsys,
            *train_args(benchmark, tmp_path / "bank.spb", "--audit-scores", str(audit)),
        )
        assert code == 0
        exported = read_score_file(audit)
        dataset = load_dataset(read_manifest(benchmark["train"]), benchmark["train"])
        expected = score_all(dataset, DiscriminatorConfig("lof", 4)).scores
        assert exported.shape == expected.shape
        assert np.allclose(exported, expected, atol=1e-6)

    def test_maps_written_with_index(self, benchmark, tmp_path, capsys):
        bank = tmp_path / "bank.spb"
        run_cli(capsys, *train_args(benchmark, bank))
        code, _, _ = run_cli(
            capsys,
            "infer",
            "--bank", str(bank),
            "--manifest", benchmark["test"],
            "--out-scores", str(tmp_path / "s.txt"),
            "--maps-dir", str(tmp_path / "maps"),
        )
        assert code == 0
        index = (tmp_path / "maps" / "maps.index").read_text()
        assert index.startswith("# config_fingerprint=")
        assert len(list((tmp_path / "maps").glob("*.spf"))) == 14


class TestGoldenBank:
    # frozen from the first verified build on this machine; the bank payload
    # hash covers float64 scoring, so it is stable per machine/BLAS, while
    # the config fingerprint is platform-independent
    GOLDEN_CONFIG_FINGERPRINT = "06f69acdd917ef5701f51d59a47480ac4b03d4bef1d78d562cdf8bb4c3114a58"
    GOLDEN_BANK_SHA256 = "deefaabbaf219bddea98a3d8774fc9c5b2d8ebf59e87c0746c5b9c3989f6bb19"

    def test_default_flags_reproduce_golden_fingerprint(self, benchmark, tmp_path, capsys):
        bank = tmp_path / "bank.spb"
        code, out, _ = run_cli(
            capsys,
            "train",
            "--manifest", benchmark["train"],
            "--out", str(bank),
        )
        assert code == 0
        blob = bank.read_bytes()
        assert blob[-32:].hex() == self.GOLDEN_CONFIG_FINGERPRINT
        assert f"fingerprint: {self.GOLDEN_CONFIG_FINGERPRINT}" in out
        assert hashlib.sha256(blob).hexdigest() == self.GOLDEN_BANK_SHA256

    def test_infer_matches_independent_oracle(self, benchmark, tmp_path, capsys):
        # fixture bank + fixture test set: engine scores equal a direct
        # weighted min-distance/max computation to 1e-6
        bank_path = tmp_path / "bank.spb"
        scores_path = tmp_path / "scores.txt"
        run_cli(capsys, *train_args(benchmark, bank_path))
        code, _, _ = run_cli(
            capsys,
            "infer",
            "--bank", str(bank_path),
            "--manifest", benchmark["test"],
            "--out-scores", str(scores_path),
        )
        assert code == 0

        from patchbank.coreset import load_bank
        from patchbank.featureio import load_dataset, read_manifest

        bank = load_bank(bank_path)
        entries = bank.entries.astype(np.float64)
        manifest = read_manifest(benchmark["test"])
        dataset = load_dataset(manifest, benchmark["test"])
        got = {
            line.split()[0].split("=")[1]: float(line.split("score=")[1])
            for line in scores_path.read_text().splitlines()
            if line.startswith("image_id=")
        }
        for i, image_id in enumerate(dataset.image_ids):
            expected = max(
                (bank.soft_weights * np.sqrt(((entries - p) ** 2).sum(axis=1)))[
                    np.argmin(np.sqrt(((entries - p) ** 2).sum(axis=1)))
                ]
                for p in dataset.array[i].reshape(-1, 8).astype(np.float64)
            )
            assert abs(got[image_id] - expected) <= 1e-6


class TestExitCodes:
    def test_missing_manifest_exits_2_and_names_path(self, tmp_path, capsys):
        missing = tmp_path / "ghost.manifest"
        code, _, err = run_cli(
            capsys,
            "train",
            "--manifest", str(missing),
            "--out", str(tmp_path / "b.spb"),
        )
        assert code == 2
        assert "ghost.manifest" in err

    def test_corrupt_bank_exits_3(self, benchmark, tmp_path, capsys):
        bad = tmp_path / "bad.spb"
        bad.write_bytes(b"XXXXX" + b"\x00" * 64)
        code, _, err = run_cli(
            capsys,
            "infer",
            "--bank", str(bad),
            "--manifest", benchmark["test"],
            "--out-scores", str(tmp_path / "s.txt"),
        )
        assert code == 3
        assert "bad magic" in err

    def test_overdrawn_injection_exits_4(self, benchmark, tmp_path, capsys):
        code, _, err = run_cli(
            capsys,
            "inject",
            "--train", benchmark["train"],
            "--test", benchmark["test"],
            "--noise-ratio", "0.5",
            "--out-dir", str(tmp_path / "inj"),
        )
        assert code == 4
        assert "cannot inject" in err


class TestDeterminism:
    def run_pair(self, benchmark, root, capsys, seed="3"):
        bank = root / "bank.spb"
        scores = root / "scores.txt"
        code, _, _ = run_cli(capsys, *train_args(benchmark, bank, "--seed", seed))
        assert code == 0
        code, _, _ = run_cli(
            capsys,
            "infer",
            "--bank", str(bank),
            "--manifest", benchmark["test"],
            "--out-scores", str(scores),
            "--maps-dir", str(root / "maps"),
        )
        assert code == 0
        map_bytes = b"".join(
            p.read_bytes() for p in sorted((root / "maps").glob("*.spf"))
        )
        return bank.read_bytes(), scores.read_bytes(), map_bytes

    def test_rerun_is_byte_identical(self, benchmark, tmp_path, capsys):
        first = self.run_pair(benchmark, tmp_path / "a", capsys)
        second = self.run_pair(benchmark, tmp_path / "b", capsys)
        assert first == second

    def test_seed_changes_bank(self, benchmark, tmp_path, capsys):
        a = self.run_pair(benchmark, tmp_path / "a", capsys, seed="3")
        b = self.run_pair(benchmark, tmp_path / "b", capsys, seed="4")
        assert a[0] != b[0]  # fingerprint differs with seed
