import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchbank.errors import InputError
from patchbank.evaluation import EvalReport, auroc, category_table, format_table, pixel_auroc, trend_table


def oracle_auroc(scores, labels):
    """Exhaustive pairwise comparison, ties worth one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos = scores[labels]
    neg = scores[~labels]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0

    def test_inverted_labels(self):
        assert auroc([1, 2, 3, 4], [1, 1, 0, 0]) == 0.0

    def test_partial_overlap(self):
        assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_single_class_rejected(self):
        with pytest.raises(InputError, match="degenerate labels"):
            auroc([1.0, 2.0], [1, 1])

    def test_matches_pairwise_oracle_with_ties(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(4, 30))
            # integer-valued scores force plenty of ties
            scores = rng.integers(0, 5, size=n).astype(float)
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert abs(auroc(scores, labels) - oracle_auroc(scores, labels)) <= 1e-9

    @settings(max_examples=100, deadline=None)
    @given(
        scores=st.lists(st.floats(-100, 100, allow_nan=False), min_size=4, max_size=40),
        flip=st.integers(0, 1_000_000),
    )
    def test_monotone_transform_invariance(self, scores, flip):
        # quantize so the transform stays injective in float arithmetic
        scores = np.round(np.asarray(scores), 3)
        rng = np.random.default_rng(flip)
        labels = rng.integers(0, 2, size=len(scores))
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = auroc(scores, labels)
        transformed = auroc(np.exp(scores / 50.0) + 3.0, labels)
        assert abs(base - transformed) <= 1e-9

    def test_complement_property_for_tie_free_scores(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(4, 50))
            scores = rng.permutation(n).astype(float)  # distinct
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            assert abs(auroc(scores, labels) + auroc(scores, 1 - labels) - 1.0) <= 1e-12


class TestPixelAuroc:
    def test_map_equal_to_mask_is_perfect(self):
        mask = np.zeros((8, 8), dtype=bool)
        mask[2:5, 3:6] = True
        assert pixel_auroc([mask.astype(float)], [mask]) == 1.0

    def test_constant_maps_give_half(self):
        masks = [np.zeros((4, 4), dtype=bool), np.ones((4, 4), dtype=bool)]
        maps = [np.full((4, 4), 0.7), np.full((4, 4), 0.7)]
        assert pixel_auroc(maps, masks) == 0.5

    def test_matches_oracle_on_random_maps(self):
        rng = np.random.default_rng(13)
        maps = [rng.random((8, 8)) for _ in range(3)]
        masks = [rng.random((8, 8)) > 0.7 for _ in range(3)]
        masks[0][0, 0] = True  # both classes guaranteed
        masks[1][0, 0] = False
        expected = oracle_auroc(
            np.concatenate([m.ravel() for m in maps]),
            np.concatenate([g.ravel() for g in masks]),
        )
        assert abs(pixel_auroc(maps, masks) - expected) <= 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(InputError, match="shape"):
            pixel_auroc([np.zeros((2, 2))], [np.zeros((3, 3), dtype=bool)])

    def test_degenerate_all_negative(self):
        with pytest.raises(InputError, match="degenerate"):
            pixel_auroc([np.random.rand(4, 4)], [np.zeros((4, 4), dtype=bool)])


class TestReports:
    def test_report_text_round_trips_values(self):
        report = EvalReport(0.9876, 0.954, {"widget": (0.9876, 0.954)}, 0.1, "overlap")
        text = report.to_text(fingerprint="abc123")
        assert "# config_fingerprint=abc123" in text
        assert "image_auroc=0.9876" in text
        assert "setting=overlap" in text
        assert "category=widget" in text

    def test_format_table_alignment(self):
        table = format_table(["name", "value"], [["a", "1.0"], ["longer", "2.0"]])
        lines = table.splitlines()
        assert lines[0].startswith("name")
        assert all(len(line) <= len(max(lines, key=len)) for line in lines)

    def test_category_table_has_average_and_gap(self):
        values = {
            "bottle": {"lof": 0.99, "none": 0.70},
            "cable": {"lof": 0.97, "none": 0.75},
        }
        table = category_table(values, ["lof", "none"], reference={"lof": 0.99, "none": 0.98})
        assert "Average" in table and "Gap" in table
        avg_line = [l for l in table.splitlines() if l.startswith("Average")][0]
        assert "0.9800" in avg_line  # mean of lof column
        gap_line = [l for l in table.splitlines() if l.startswith("Gap")][0]
        assert "-0.0100" in gap_line and "-0.2550" in gap_line

    def test_trend_table_rows_follow_ratios(self):
        cells = {(0.0, "lof"): 0.99, (0.1, "lof"): 0.98}
        table = trend_table(cells, [0.0, 0.1], ["lof", "none"])
        lines = table.splitlines()
        assert lines[2].startswith("0 ")
        assert "n/a" in lines[3]
