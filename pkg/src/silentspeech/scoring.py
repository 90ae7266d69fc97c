"""Word error rate scoring.

Hypotheses are aligned to references by minimum edit distance, then
    WER = (I + D + S) / N        correct rate = (N - D - S) / N
with N the reference word count. Counts are kept exact (integers and
Fractions); table percentages round half-up to two decimals only at
formatting time, matching how recognition results are conventionally
printed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction
from typing import NamedTuple


class EditOp(NamedTuple):
    op: str                      # "match" | "sub" | "del" | "ins"
    ref_word: str | None
    hyp_word: str | None


@dataclass(frozen=True)
class EditCosts:
    ins: int = 1
    delete: int = 1
    sub: int = 1


UNIT_COSTS = EditCosts()
# HTK's HResults weights edits this way; alignments can differ from the
# unit-cost ones, the rate formula does not change.
HTK_COSTS = EditCosts(ins=7, delete=7, sub=10)


def _norm(words) -> list[str]:
    return [str(w).upper() for w in getattr(words, "words", words)]


def align(ref, hyp, costs: EditCosts = UNIT_COSTS) -> list[EditOp]:
    """Minimum-cost alignment of hyp to ref.

    On cost ties the backtrace prefers substitution over deletion over
    insertion, so results are deterministic.
    """
    r, h = _norm(ref), _norm(hyp)
    n, m = len(r), len(h)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = d[i - 1][0] + costs.delete
    for j in range(1, m + 1):
        d[0][j] = d[0][j - 1] + costs.ins
    for i in range(1, n + 1):
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if r[i - 1] == h[j - 1] else costs.sub)
            row[j] = min(sub, prev[j] + costs.delete, row[j - 1] + costs.ins)
    ops: list[EditOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and \
                d[i][j] == d[i - 1][j - 1] + (0 if r[i - 1] == h[j - 1] else costs.sub):
            kind = "match" if r[i - 1] == h[j - 1] else "sub"
            ops.append(EditOp(kind, r[i - 1], h[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + costs.delete:
            ops.append(EditOp("del", r[i - 1], None))
            i -= 1
        else:
            ops.append(EditOp("ins", None, h[j - 1]))
            j -= 1
    ops.reverse()
    return ops


def edit_cost(ref, hyp, costs: EditCosts = UNIT_COSTS) -> int:
    """Total cost of the minimum alignment (Levenshtein distance under
    unit costs)."""
    price = {"match": 0, "sub": costs.sub, "del": costs.delete, "ins": costs.ins}
    return sum(price[op.op] for op in align(ref, hyp, costs))


def count_ops(ops) -> tuple[int, int, int]:
    """(insertions, deletions, substitutions) in an alignment."""
    kinds = [op.op for op in ops]
    return kinds.count("ins"), kinds.count("del"), kinds.count("sub")


@dataclass
class WerReport:
    insertions: int
    deletions: int
    substitutions: int
    num_ref_words: int
    per_utterance: dict[str, tuple[int, int, int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if min(self.insertions, self.deletions, self.substitutions,
               self.num_ref_words) < 0:
            raise ValueError("negative counts")
        if self.deletions + self.substitutions > self.num_ref_words:
            raise ValueError("D + S cannot exceed N")

    @property
    def correct(self) -> int:
        return self.num_ref_words - self.deletions - self.substitutions

    @property
    def errors(self) -> int:
        return self.insertions + self.deletions + self.substitutions

    @property
    def wer(self) -> Fraction:
        if self.num_ref_words == 0:
            return Fraction(0)
        return Fraction(self.errors, self.num_ref_words)

    @property
    def correct_rate(self) -> Fraction:
        if self.num_ref_words == 0:
            return Fraction(0)
        return Fraction(self.correct, self.num_ref_words)

    @property
    def wer_percent(self) -> str:
        return format_percent(self.wer)

    @property
    def correct_percent(self) -> str:
        return format_percent(self.correct_rate)


def format_percent(fraction: Fraction) -> str:
    """Exact rational -> percentage string, half-up at 2 decimals."""
    with localcontext() as ctx:
        ctx.prec = 50
        value = Decimal(fraction.numerator) * 100 / Decimal(fraction.denominator)
        return str(value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def score_corpus(refs, hyps, costs: EditCosts = UNIT_COSTS) -> WerReport:
    """Aggregate error counts over a corpus.

    `refs` and `hyps` map utterance id to word sequences. A reference with
    no hypothesis counts all its words as deletions; a hypothesis without
    a reference is an error.
    """
    orphans = sorted(set(hyps) - set(refs))
    if orphans:
        raise ValueError(f"hypotheses without references: {orphans[:5]}")
    total_i = total_d = total_s = total_n = 0
    per_utt = {}
    for utt_id in sorted(refs):
        ref = _norm(refs[utt_id])
        if utt_id in hyps:
            i, d, s = count_ops(align(ref, hyps[utt_id], costs))
        else:
            i, d, s = 0, len(ref), 0
        per_utt[utt_id] = (i, d, s, len(ref))
        total_i += i
        total_d += d
        total_s += s
        total_n += len(ref)
    return WerReport(total_i, total_d, total_s, total_n, per_utt)


def format_report(report: WerReport, label: str = "") -> str:
    """Human-readable summary block."""
    head = f"=== {label} ===" if label else "=== scoring ==="
    lines = [
        head,
        f"ref words (N):    {report.num_ref_words}",
        f"insertions (I):   {report.insertions}",
        f"deletions (D):    {report.deletions}",
        f"substitutions (S):{report.substitutions:>6}",
        f"correct words:    {report.correct}",
        f"correct rate:     {report.correct_percent}%",
        f"WER:              {report.wer_percent}%",
    ]
    return "\n".join(lines)


def write_report_csv(path, reports: dict[str, WerReport]) -> None:
    """One row per labeled report (system, feature set, ...)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label,N,insertions,deletions,substitutions,correct,"
                 "correct_rate_percent,wer_percent\n")
        for label in sorted(reports):
            r = reports[label]
            fh.write(f"{label},{r.num_ref_words},{r.insertions},{r.deletions},"
                     f"{r.substitutions},{r.correct},{r.correct_percent},"
                     f"{r.wer_percent}\n")
