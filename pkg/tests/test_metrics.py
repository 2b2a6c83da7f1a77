import itertools

import numpy as np
import pytest

from conmamba.metrics import aggregate, cer, render_report, wer, wer_counts


def brute_force_distance(ref, hyp):
    """Minimum cost over every monotone alignment, by exhaustive enumeration
    of matched index subsets."""
    n, m = len(ref), len(hyp)
    best = n + m  # align nothing: delete all, insert all
    for k in range(1, min(n, m) + 1):
        for ri in itertools.combinations(range(n), k):
            for hj in itertools.combinations(range(m), k):
                subs = sum(ref[a] != hyp[b] for a, b in zip(ri, hj))
                best = min(best, subs + (n - k) + (m - k))
    return best


class TestWer:
    def test_identity(self):
        b = wer("a b c", "a b c")
        assert (b.substitutions, b.insertions, b.deletions) == (0, 0, 0)
        assert b.rate == 0.0

    def test_single_substitution(self):
        b = wer("a b c", "a x c")
        assert b.substitutions == 1 and b.insertions == 0 and b.deletions == 0
        assert b.rate == pytest.approx(1 / 3)

    def test_single_deletion(self):
        b = wer("a b", "a")
        assert b.deletions == 1 and b.substitutions == 0 and b.insertions == 0
        assert b.rate == pytest.approx(1 / 2)

    def test_empty_reference_counts_insertions(self):
        b = wer("", "a b")
        assert b.empty_reference
        assert b.insertions == 2
        assert b.rate == 2.0  # I / max(1, N) with N = 0

    def test_tie_prefers_substitution_over_ins_del(self):
        b = wer("a", "b")
        assert (b.substitutions, b.insertions, b.deletions) == (1, 0, 0)

    def test_error_bound(self):
        rng = np.random.default_rng(0)
        vocab = ["a", "b", "c"]
        for _ in range(300):
            ref = [vocab[i] for i in rng.integers(0, 3, rng.integers(0, 6))]
            hyp = [vocab[i] for i in rng.integers(0, 3, rng.integers(0, 6))]
            b = wer_counts(ref, hyp)
            assert b.errors <= max(len(ref), len(hyp))
            assert b.rate == 0 if ref == hyp else True
            if b.rate == 0:
                assert ref == hyp

    def test_matches_brute_force_on_random_sample(self):
        rng = np.random.default_rng(1)
        vocab = ["a", "b", "c"]
        for _ in range(200):
            ref = [vocab[i] for i in rng.integers(0, 3, rng.integers(0, 7))]
            hyp = [vocab[i] for i in rng.integers(0, 3, rng.integers(0, 7))]
            assert wer_counts(ref, hyp).errors == brute_force_distance(ref, hyp)

    def test_cer_is_character_level(self):
        b = cer("abc", "axc")
        assert b.substitutions == 1 and b.ref_words == 3


class TestAggregate:
    def test_corpus_rate_pools_counts(self):
        rate = aggregate([wer("a b", "a b"), wer("a b", "a x")])
        assert rate == pytest.approx(1 / 4)


class TestRenderReport:
    def test_single_cell(self):
        text, csv = render_report({"set1": {"en": 12.5}})
        lines = text.splitlines()
        assert lines[0].split() == ["Dataset", "EN"]
        assert lines[-1].split() == ["Avg.", "12.5"]
        assert "set1,en,12.5000" in csv

    def test_average_over_two_datasets(self):
        text, _ = render_report({"s1": {"en": 10.0}, "s2": {"en": 20.0}})
        assert text.splitlines()[-1].split() == ["Avg.", "15.0"]

    def test_absent_cells_excluded_from_average(self):
        text, csv = render_report({"s1": {"en": 10.0, "it": 30.0}, "s2": {"en": 20.0}})
        lines = text.splitlines()
        assert lines[0].split() == ["Dataset", "EN", "IT"]
        assert lines[2].split() == ["s2", "20.0", "-"]
        assert lines[-1].split() == ["Avg.", "15.0", "30.0"]
        assert "s2,it" not in csv

    def test_averages_recompute_from_csv_cells(self):
        cells = {"d1": {"en": 7.25, "nl": 3.5}, "d2": {"en": 9.75}}
        text, csv = render_report(cells)
        per_lang = {}
        for line in csv.strip().splitlines()[1:]:
            _, lang, v = line.split(",")
            per_lang.setdefault(lang, []).append(float(v))
        avg_line = text.splitlines()[-1].split()
        assert avg_line[1] == f"{np.mean(per_lang['en']):.1f}"
        assert avg_line[2] == f"{np.mean(per_lang['nl']):.1f}"

    def test_no_cells_rejected(self):
        with pytest.raises(ValueError):
            render_report({})
