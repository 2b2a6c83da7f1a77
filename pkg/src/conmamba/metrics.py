"""Word error rate and per-language report rendering.

WER is word-level Levenshtein with unit costs,
rate = (substitutions + insertions + deletions) / reference length.
Among equal-cost alignments the backtrace prefers substitutions over
insertion+deletion pairs, so breakdowns are deterministic.

Reports are dataset-by-language grids with an "Avg." row holding the
arithmetic mean over the cells present in each column; absent cells are
marked, never counted as zero.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class WerBreakdown:
    substitutions: int
    insertions: int
    deletions: int
    ref_words: int
    empty_reference: bool = False

    @property
    def errors(self):
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self):
        return self.errors / max(1, self.ref_words)


def wer_counts(ref_words, hyp_words):
    """Alignment counts between two token lists.

    DP over (i, j) = prefix lengths; on cost ties the diagonal move wins,
    then deletion, so equal-cost alignments resolve to the same breakdown.
    """
    n, m = len(ref_words), len(hyp_words)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    move = [[None] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
        move[i][0] = "del"
    for j in range(1, m + 1):
        cost[0][j] = j
        move[0][j] = "ins"
    for i in range(1, n + 1):
        ci_1 = cost[i - 1]
        ci = cost[i]
        ref_i = ref_words[i - 1]
        for j in range(1, m + 1):
            diag = ci_1[j - 1] + (ref_i != hyp_words[j - 1])
            dele = ci_1[j] + 1
            ins = ci[j - 1] + 1
            best = diag if diag <= dele else dele
            if ins < best:
                best = ins
            ci[j] = best
            if diag == best:
                move[i][j] = "sub" if ref_i != hyp_words[j - 1] else "hit"
            elif dele == best:
                move[i][j] = "del"
            else:
                move[i][j] = "ins"
    s = d = ins_count = 0
    i, j = n, m
    while i > 0 or j > 0:
        m_ = move[i][j]
        if m_ in ("hit", "sub"):
            s += m_ == "sub"
            i, j = i - 1, j - 1
        elif m_ == "del":
            d += 1
            i -= 1
        else:
            ins_count += 1
            j -= 1
    return WerBreakdown(substitutions=s, insertions=ins_count, deletions=d,
                        ref_words=n, empty_reference=(n == 0))


def wer(ref, hyp):
    """Word error breakdown of two whitespace-separated strings.

    Both sides must already be normalized by the tokenizer's rules. An empty
    reference against a non-empty hypothesis yields rate = insertions (the
    max(1, N) convention) with the breakdown flagged.
    """
    return wer_counts(ref.split(), hyp.split())


def cer(ref, hyp):
    """Character error breakdown (diagnostic only)."""
    return wer_counts(list(ref), list(hyp))


def aggregate(breakdowns):
    """Corpus-level rate: total errors over total reference words."""
    errors = sum(b.errors for b in breakdowns)
    words = sum(b.ref_words for b in breakdowns)
    return errors / max(1, words)


def render_report(cells):
    """Render {dataset: {language: wer_percent}} as text and CSV.

    The Avg. row averages the cells present in each column. The CSV carries
    only the data cells (schema: dataset,language,wer_percent) so consumers
    can recompute the averages exactly.
    """
    if not cells or not any(cells.values()):
        raise ValueError("render_report: no result cells")
    languages = sorted({lang for row in cells.values() for lang in row})
    header = ["Dataset"] + [lang.upper() for lang in languages]
    rows = []
    for name, row in cells.items():
        rows.append([name] + [f"{row[lang]:.1f}" if lang in row else "-" for lang in languages])
    avg = []
    for lang in languages:
        present = [row[lang] for row in cells.values() if lang in row]
        avg.append(f"{sum(present) / len(present):.1f}" if present else "-")
    rows.append(["Avg."] + avg)

    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))

    csv_lines = ["dataset,language,wer_percent"]
    for name, row in cells.items():
        for lang in languages:
            if lang in row:
                csv_lines.append(f"{name},{lang},{row[lang]:.4f}")
    return "\n".join(lines), "\n".join(csv_lines) + "\n"
