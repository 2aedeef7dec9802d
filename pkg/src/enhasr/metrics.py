"""Error-rate scoring: minimal-cost edit alignment with a deterministic
tie-break, plus corpus-level aggregation over pooled counts.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class WerBreakdown:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    ref_words: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        if self.ref_words == 0:
            raise ValueError("empty reference")
        return 100.0 * self.errors / self.ref_words

    def add(self, other: "WerBreakdown"):
        self.substitutions += other.substitutions
        self.deletions += other.deletions
        self.insertions += other.insertions
        self.ref_words += other.ref_words


def _tokens(text: str, unit: str) -> list[str]:
    if unit == "char":
        return list(text)
    if unit == "word":
        return text.split()
    raise ValueError(f"unknown unit {unit!r}")


def wer(reference: str, hypothesis: str, unit: str = "char") -> WerBreakdown:
    """Unit-cost edit distance with counts from the backtrace.

    On cost ties the backtrace prefers substitution, then insertion, then
    deletion, which pins the (S, D, I) split deterministically.
    """
    ref = _tokens(reference, unit)
    hyp = _tokens(hypothesis, unit)
    if not ref:
        raise ValueError("empty reference")
    n, m = len(ref), len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            if ref[i - 1] == hyp[j - 1]:
                cost[i][j] = cost[i - 1][j - 1]
            else:
                cost[i][j] = 1 + min(cost[i - 1][j - 1], cost[i][j - 1], cost[i - 1][j])
    out = WerBreakdown(ref_words=n)
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and cost[i][j] == cost[i - 1][j - 1]:
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + 1:
            out.substitutions += 1
            i, j = i - 1, j - 1
        elif j > 0 and cost[i][j] == cost[i][j - 1] + 1:
            out.insertions += 1
            j -= 1
        else:
            out.deletions += 1
            i -= 1
    return out
