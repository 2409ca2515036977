"""Metric tests: each metric is checked against an independent oracle."""

import math

import numpy as np
import pytest

from tokenforge import evalkit
from tokenforge.errors import (
    DegenerateLabels,
    DimensionMismatch,
    EmptyCorpus,
    UndefinedAP,
    ZeroNorm,
)


def cosine_oracle(features, query):
    """Per-cell scalar-math cosine, no vectorized shortcuts."""
    h, w, d = features.shape
    out = np.zeros((h, w))
    qn = math.sqrt(sum(float(q) ** 2 for q in query))
    for i in range(h):
        for j in range(w):
            cn = math.sqrt(sum(float(c) ** 2 for c in features[i, j]))
            if cn == 0.0:
                continue
            dot = sum(float(c) * float(q) for c, q in zip(features[i, j], query))
            out[i, j] = dot / (cn * qn)
    return out


class TestSimilarityMap:
    def test_identical_cells_score_one(self):
        e = np.array([1.0, 2.0, -1.0])
        grid = np.tile(e, (3, 5, 1))
        m = evalkit.similarity_map(grid, e)
        np.testing.assert_allclose(m.scores, 1.0, atol=1e-12)

    def test_opposite_cell_scores_minus_one(self):
        e = np.array([0.5, -1.5])
        grid = np.tile(e, (2, 2, 1))
        grid[1, 1] = -e
        m = evalkit.similarity_map(grid, e)
        assert m.scores[1, 1] == pytest.approx(-1.0, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(42)
        grid = rng.normal(size=(4, 4, 8))
        q = rng.normal(size=8)
        m = evalkit.similarity_map(grid, q)
        np.testing.assert_allclose(m.scores, cosine_oracle(grid, q), atol=1e-12)

    def test_zero_norm_cell_scores_zero(self):
        grid = np.ones((2, 2, 3))
        grid[0, 1] = 0.0
        m = evalkit.similarity_map(grid, np.ones(3))
        assert m.scores[0, 1] == 0.0

    def test_invariant_to_positive_query_scale(self):
        rng = np.random.default_rng(1)
        grid = rng.normal(size=(3, 3, 4))
        q = rng.normal(size=4)
        a = evalkit.similarity_map(grid, q).scores
        b = evalkit.similarity_map(grid, 7.25 * q).scores
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_zero_query_raises(self):
        with pytest.raises(ZeroNorm):
            evalkit.similarity_map(np.ones((2, 2, 3)), np.zeros(3))

    def test_dim_mismatch_raises(self):
        with pytest.raises(DimensionMismatch):
            evalkit.similarity_map(np.ones((2, 2, 3)), np.ones(4))


class TestZeroShotForeground:
    def test_space_like_cells_become_zero(self):
        e = np.array([1.0, 0.0])
        grid = np.zeros((2, 2, 2))
        grid[0, 0] = e
        grid[0, 1] = [0.0, 1.0]
        grid[1, 0] = [-1.0, 0.0]
        grid[1, 1] = [0.5, 0.5]
        fg = evalkit.zero_shot_foreground(grid, e).scores
        assert fg[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_extreme_pair_maps_to_unit_interval_ends(self):
        grid = np.zeros((1, 2, 2))
        grid[0, 0] = [1.0, 0.0]
        grid[0, 1] = [-1.0, 0.0]
        fg = evalkit.zero_shot_foreground(grid, np.array([1.0, 0.0])).scores
        np.testing.assert_allclose(fg, [[0.0, 1.0]], atol=1e-12)

    def test_equals_scalar_pipeline(self):
        rng = np.random.default_rng(2)
        grid = rng.normal(size=(5, 6, 4))
        e = rng.normal(size=4)
        s = cosine_oracle(grid, e)
        expected = 1.0 - (s - s.min()) / (s.max() - s.min())
        got = evalkit.zero_shot_foreground(grid, e).scores
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_constant_map_becomes_half(self):
        grid = np.tile(np.array([2.0, 1.0]), (3, 3, 1))
        fg = evalkit.zero_shot_foreground(grid, np.array([2.0, 1.0])).scores
        np.testing.assert_allclose(fg, 0.5)

    def test_output_bounded(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            grid = rng.normal(size=(4, 4, 3))
            fg = evalkit.zero_shot_foreground(grid, rng.normal(size=3)).scores
            assert fg.min() >= 0.0 and fg.max() <= 1.0


class TestMaskOverlap:
    def test_identical_masks(self):
        m = np.random.default_rng(4).random(size=(6, 6)) < 0.5
        assert evalkit.fg_iou(m, m) == 1.0
        assert evalkit.fg_fscore(m, m) == 1.0

    def test_disjoint_masks(self):
        a = np.zeros((2, 4), dtype=bool)
        b = np.zeros((2, 4), dtype=bool)
        a[0, 0] = True
        b[1, 3] = True
        assert evalkit.fg_iou(a, b) == 0.0

    def test_counted_example(self):
        a = np.zeros(8, dtype=bool)
        b = np.zeros(8, dtype=bool)
        a[:4] = True
        b[2:6] = True  # |a|=4, |b|=4, overlap=2
        assert evalkit.fg_iou(a, b) == pytest.approx(1 / 3)
        assert evalkit.fg_fscore(a, b) == pytest.approx(0.5)

    def test_both_empty_is_perfect(self):
        z = np.zeros((3, 3), dtype=bool)
        assert evalkit.fg_iou(z, z) == 1.0
        assert evalkit.fg_fscore(z, z) == 1.0

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            a = rng.random(size=(5, 5)) < 0.4
            b = rng.random(size=(5, 5)) < 0.4
            assert evalkit.fg_iou(a, b) == evalkit.fg_iou(b, a)

    def test_matches_direct_counting(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            a = rng.random(size=(4, 7)) < 0.5
            b = rng.random(size=(4, 7)) < 0.5
            inter = sum(
                1 for i in range(4) for j in range(7) if a[i, j] and b[i, j]
            )
            union = sum(
                1 for i in range(4) for j in range(7) if a[i, j] or b[i, j]
            )
            expected = 1.0 if union == 0 else inter / union
            assert evalkit.fg_iou(a, b) == pytest.approx(expected)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionMismatch):
            evalkit.fg_iou(np.zeros((2, 2), dtype=bool), np.zeros((2, 3), dtype=bool))

    def test_threshold_sweep_reports_per_threshold_iou(self):
        gt = np.zeros((4, 4), dtype=bool)
        gt[:2] = True
        scores = np.where(gt, 0.9, 0.1)
        sweep = evalkit.threshold_sweep(scores, gt, thresholds=[0.05, 0.5, 0.95])
        assert sweep[0] == (0.05, 0.5)   # everything predicted foreground
        assert sweep[1] == (0.5, 1.0)
        assert sweep[2] == (0.95, 0.0)


def ap_by_counting(scores, rel):
    """Rank-by-counting AP: no sorting, straight from the definition."""
    n = len(scores)

    def rank(j):
        ahead = sum(
            1
            for k in range(n)
            if scores[k] > scores[j] or (scores[k] == scores[j] and k < j)
        )
        return ahead + 1

    rel_idx = [j for j in range(n) if rel[j]]
    precisions = []
    for j in rel_idx:
        rj = rank(j)
        inside = sum(1 for k in rel_idx if rank(k) <= rj)
        precisions.append(inside / rj)
    return sum(precisions) / len(precisions)


class TestRetrieval:
    def test_perfect_ranking_is_one(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        rel = np.array([True, True, False, False])
        assert evalkit.average_precision(scores, rel) == 1.0

    def test_relevant_at_rank_two(self):
        assert evalkit.average_precision(
            np.array([0.9, 0.1]), np.array([False, True])
        ) == pytest.approx(0.5)

    def test_no_relevant_raises(self):
        with pytest.raises(UndefinedAP):
            evalkit.average_precision(np.array([1.0, 0.5]), np.array([False, False]))

    def test_tie_break_prefers_lower_index(self):
        scores = np.array([1.0, 1.0, 0.5])
        assert evalkit.average_precision(
            scores, np.array([False, True, False])
        ) == pytest.approx(0.5)
        assert evalkit.average_precision(
            scores, np.array([True, False, False])
        ) == pytest.approx(1.0)

    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(2, 10))
            scores = np.round(rng.random(size=n), 1)  # coarse grid forces ties
            rel = rng.random(size=n) < 0.5
            if not rel.any():
                rel[int(rng.integers(0, n))] = True
            got = evalkit.average_precision(scores, rel)
            assert got == pytest.approx(ap_by_counting(scores, rel))

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(8)
        transforms = [np.exp, lambda x: x**3, lambda x: np.arctan(x) * 3 + x]
        for _ in range(20):
            scores = rng.normal(size=8)
            rel = rng.random(size=8) < 0.4
            if not rel.any():
                rel[0] = True
            base = evalkit.average_precision(scores, rel)
            for f in transforms:
                assert evalkit.average_precision(f(scores), rel) == pytest.approx(base)

    def unit(self, x, y):
        v = np.array([x, y], dtype=np.float64)
        return v / np.linalg.norm(v)

    def test_gallery_scoring_uses_max_cell(self):
        q = np.array([1.0, 0.0])
        strong = np.zeros((2, 2, 2))
        strong[1, 1] = q  # one perfect cell among zeros
        weak = np.tile(self.unit(0.6, 0.8), (2, 2, 1))
        scores = evalkit.score_gallery([q], [strong, weak])
        np.testing.assert_allclose(scores, [[1.0, 0.6]], atol=1e-12)

    def test_report_matches_spec_example(self):
        q = np.array([1.0, 0.0])
        high = np.tile(q, (1, 1, 1))
        low = np.tile(self.unit(0.5, 0.9), (1, 1, 1))
        report = evalkit.retrieval_map([q], [high, low], [[False, True]])
        assert report.metric == "mean_average_precision"
        assert report.value == pytest.approx(0.5)
        assert report.items[0]["average_precision"] == pytest.approx(0.5)

    def test_probe_affine_head_applies_before_ranking(self):
        q = np.array([1.0, 0.0])
        gallery = [np.tile(self.unit(1, t), (1, 1, 1)) for t in (0.1, 0.9, 2.0)]
        rel = [[True, False, False]]
        raw = evalkit.retrieval_map([q], gallery, rel)
        probed = evalkit.retrieval_map(
            [q], gallery, rel, probe=evalkit.LinearProbe(np.array([3.0]), -1.0)
        )
        assert probed.value == pytest.approx(raw.value)

    def test_probe_must_be_scalar(self):
        with pytest.raises(DimensionMismatch):
            evalkit.score_gallery(
                [np.ones(2)],
                [np.ones((1, 1, 2))],
                probe=evalkit.LinearProbe(np.ones(2), 0.0),
            )

    def test_relevance_shape_checked(self):
        with pytest.raises(DimensionMismatch):
            evalkit.retrieval_map([np.ones(2)], [np.ones((1, 1, 2))], [[True, False]])


def dp_table_oracle(a, b):
    """Full-matrix Levenshtein, the textbook recurrence."""
    m, n = len(a), len(b)
    d = np.zeros((m + 1, n + 1), dtype=int)
    d[:, 0] = np.arange(m + 1)
    d[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d[i, j] = min(
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
                d[i - 1, j - 1] + (a[i - 1] != b[j - 1]),
            )
    return int(d[m, n])


def random_string(rng, max_len=12, alphabet="abcd"):
    n = int(rng.integers(0, max_len + 1))
    return "".join(alphabet[int(k)] for k in rng.integers(0, len(alphabet), size=n))


class TestEditDistance:
    def test_equal_strings(self):
        assert evalkit.edit_distance("same", "same") == (0, 0.0)

    def test_kitten_sitting(self):
        raw, norm = evalkit.edit_distance("kitten", "sitting")
        assert raw == 3
        assert norm == pytest.approx(3 / 7)

    def test_empty_versus_text(self):
        assert evalkit.edit_distance("", "ab") == (2, 1.0)
        assert evalkit.edit_distance("ab", "") == (2, 1.0)

    def test_both_empty(self):
        assert evalkit.edit_distance("", "") == (0, 0.0)

    def test_matches_dp_table(self):
        rng = np.random.default_rng(9)
        for _ in range(300):
            a, b = random_string(rng), random_string(rng)
            raw, norm = evalkit.edit_distance(a, b)
            assert raw == dp_table_oracle(a, b)
            if a or b:
                assert norm == pytest.approx(raw / max(len(a), len(b)))

    def test_triangle_inequality(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            a, b, c = (random_string(rng) for _ in range(3))
            ab = evalkit.edit_distance(a, b)[0]
            bc = evalkit.edit_distance(b, c)[0]
            ac = evalkit.edit_distance(a, c)[0]
            assert ac <= ab + bc

    def test_symmetric(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a, b = random_string(rng), random_string(rng)
            assert evalkit.edit_distance(a, b)[0] == evalkit.edit_distance(b, a)[0]


class TestLinearProbe:
    def separable_set(self, rng, n=40):
        x0 = rng.normal(loc=(-2.0, 0.0), scale=0.3, size=(n, 2))
        x1 = rng.normal(loc=(2.0, 0.0), scale=0.3, size=(n, 2))
        x = np.vstack([x0, x1])
        y = np.array([0] * n + [1] * n)
        return x, y

    def test_separable_reaches_full_accuracy(self):
        x, y = self.separable_set(np.random.default_rng(12))
        probe = evalkit.linear_probe_train(x, y, epochs=300, lr=0.5, seed=0)
        assert np.mean(probe.predict(x) == (y == 1)) == 1.0

    def test_single_class_raises(self):
        with pytest.raises(DegenerateLabels):
            evalkit.linear_probe_train(np.ones((5, 2)), np.ones(5))

    def test_seeded_training_is_reproducible(self):
        x, y = self.separable_set(np.random.default_rng(13))
        a = evalkit.linear_probe_train(x, y, seed=3)
        b = evalkit.linear_probe_train(x, y, seed=3)
        assert np.array_equal(a.weight, b.weight)
        assert a.bias == b.bias

    def test_map_features_flatten(self):
        rng = np.random.default_rng(14)
        maps = rng.normal(size=(10, 3, 3))
        labels = (maps.mean(axis=(1, 2)) > 0).astype(int)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        probe = evalkit.linear_probe_train(maps, labels, epochs=50)
        assert probe.weight.shape == (9,)

    def test_label_length_checked(self):
        with pytest.raises(DimensionMismatch):
            evalkit.linear_probe_train(np.ones((4, 2)), np.array([0, 1, 0]))


class TestProtocols:
    """End-to-end eval drivers over a tiny synthetic corpus."""

    @staticmethod
    def tiny_setup():
        from tokenforge.model import ModelConfig, init_params
        from tokenforge.trainer import SyntheticCorpusSpec, generate_synthetic_corpus

        spec = SyntheticCorpusSpec(
            image_side=32, n_classes=3, glyphs_per_image=1, n_records=4, seed=5
        )
        records = generate_synthetic_corpus(spec)
        cfg = ModelConfig(
            patch_size=8, encoder_dim=8, encoder_layers=1, embed_dim=6,
            vocab_size=16, seed=2,
        )
        return init_params(cfg), records

    def test_seg_report_shape(self):
        params, records = self.tiny_setup()
        report = evalkit.seg_protocol(params, records)
        assert report.metric == "zero_shot_fg_iou"
        # one glyph token per record; the trailing space token is skipped
        assert len(report.items) == len(records)
        assert all(0.0 <= it["fg_iou"] <= 1.0 for it in report.items)
        assert report.value == pytest.approx(
            np.mean([it["fg_iou"] for it in report.items])
        )

    def test_seg_matches_manual_pipeline(self):
        from tokenforge.gridops import pool_weights
        from tokenforge.model import (
            forward_features, prepare_image, token_embedding,
        )

        params, records = self.tiny_setup()
        report = evalkit.seg_protocol(params, records, threshold=0.3)
        rec = records[0]
        en = rec.entries[0]
        feats, _ = forward_features(prepare_image(rec.image), params)
        weights, _ = pool_weights(rec.token_mask(en), feats.shape[0], feats.shape[1])
        sim = evalkit.similarity_map(feats, token_embedding([en.token_id], params)[0])
        want = evalkit.fg_iou(
            evalkit.minmax_norm(sim.scores) >= 0.3, weights.astype(bool)
        )
        assert report.items[0]["fg_iou"] == pytest.approx(want)

    def test_seg_empty_corpus(self):
        params, _ = self.tiny_setup()
        with pytest.raises(EmptyCorpus):
            evalkit.seg_protocol(params, [])

    def test_retrieval_queries_are_distinct_tokens(self):
        params, records = self.tiny_setup()
        report = evalkit.retrieval_protocol(params, records)
        texts = [it["query_text"] for it in report.items]
        assert texts == sorted(set(texts))
        want = sorted(
            {en.text for r in records for en in r.entries if not en.text.isspace()}
        )
        assert texts == want

    def test_retrieval_relevance_by_membership(self):
        params, records = self.tiny_setup()
        report = evalkit.retrieval_protocol(params, records)
        assert report.metric == "mean_average_precision"
        for it in report.items:
            n_rel = sum(
                it["query_text"] in {en.text for en in r.entries} for r in records
            )
            assert it["n_relevant"] == n_rel

    def test_edit_protocol_means_pairs(self):
        report = evalkit.edit_protocol(["kitten", "abc"], ["sitting", "abc"])
        assert report.metric == "normalized_edit_distance"
        assert report.items[0]["raw"] == 3
        assert report.items[1]["normalized"] == 0.0
        assert report.value == pytest.approx((3 / 7 + 0.0) / 2)

    def test_edit_protocol_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            evalkit.edit_protocol(["a"], ["a", "b"])

    def test_edit_protocol_empty(self):
        with pytest.raises(EmptyCorpus):
            evalkit.edit_protocol([], [])
