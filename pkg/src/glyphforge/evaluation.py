"""Recognition metrics: word error rate from Levenshtein distance, plus
precision / recall / F1 / accuracy derived from codepoint-level edit
alignments (TP = matches, FP = substitutions + insertions, FN =
substitutions + deletions, TN fixed at zero for open-vocabulary output)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


class LengthMismatchError(ValueError):
    """Prediction and reference lists have different lengths."""


class EmptyReferenceError(ValueError):
    """No reference words to normalize by."""


def levenshtein(a, b) -> int:
    """Minimum unit-cost edit distance between two sequences."""
    if len(a) < len(b):
        a, b = b, a
    if len(b) == 0:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(
                prev[j - 1] + (ca != cb),
                prev[j] + 1,
                cur[j - 1] + 1,
            )
        prev = cur
    return prev[-1]


def wer(predictions: list[str], references: list[str]) -> float:
    """Word error rate: summed word-level edit distance over reference count.

    Each transcript is split on whitespace; with one-word references this is
    the fraction of samples not matched exactly (an empty prediction counts
    as one deletion).
    """
    if len(predictions) != len(references):
        raise LengthMismatchError(
            f"{len(predictions)} predictions vs {len(references)} references"
        )
    total_words = sum(len(r.split()) for r in references)
    if total_words == 0:
        raise EmptyReferenceError("references contain no words")
    distance = sum(levenshtein(p.split(), r.split()) for p, r in zip(predictions, references))
    return distance / total_words


@dataclass(frozen=True)
class EditCounts:
    """Operation counts from one optimal codepoint alignment."""

    matches: int
    substitutions: int
    insertions: int
    deletions: int


def edit_counts(prediction: str, reference: str) -> EditCounts:
    """Align prediction to reference and count operations.

    Ties in the backtrace prefer match > substitute > delete > insert, so the
    counts are deterministic. Insertions are prediction codepoints with no
    reference counterpart; deletions are reference codepoints left uncovered.
    """
    m, n = len(prediction), len(reference)
    d = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m + 1):
        d[i][0] = i
    for j in range(n + 1):
        d[0][j] = j
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d[i][j] = min(
                d[i - 1][j - 1] + (prediction[i - 1] != reference[j - 1]),
                d[i - 1][j] + 1,
                d[i][j - 1] + 1,
            )
    matches = subs = ins = dels = 0
    i, j = m, n
    while i > 0 or j > 0:
        if i > 0 and j > 0 and prediction[i - 1] == reference[j - 1] and d[i][j] == d[i - 1][j - 1]:
            matches += 1
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + 1:
            subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and d[i][j] == d[i][j - 1] + 1:
            dels += 1
            j -= 1
        else:
            ins += 1
            i -= 1
    return EditCounts(matches=matches, substitutions=subs, insertions=ins, deletions=dels)


@dataclass
class EvalReport:
    """Aggregate metrics over an evaluation run, plus per-sample records."""

    wer: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    matched_words: int
    total_words: int
    cer: float  # codepoint-level diagnostic, not part of the report schema
    per_sample: list[dict] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "wer": self.wer,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "matched_words": self.matched_words,
            "total_words": self.total_words,
        }

    def save(self, path: str | Path, per_sample_path: str | Path | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n", encoding="utf-8")
        if per_sample_path is not None:
            with open(per_sample_path, "w", encoding="utf-8") as fh:
                for rec in self.per_sample:
                    fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else 0.0


def report(predictions: list[str], references: list[str]) -> EvalReport:
    """Micro-aggregated metrics over parallel prediction/reference lists."""
    if len(predictions) != len(references):
        raise LengthMismatchError(
            f"{len(predictions)} predictions vs {len(references)} references"
        )
    if not references:
        raise EmptyReferenceError("empty evaluation set")
    tp = fp = fn = 0
    matched = 0
    dist_sum = 0
    ref_len_sum = 0
    per_sample = []
    for pred, ref in zip(predictions, references):
        counts = edit_counts(pred, ref)
        tp += counts.matches
        fp += counts.substitutions + counts.insertions
        fn += counts.substitutions + counts.deletions
        if pred == ref:
            matched += 1
        dist = counts.substitutions + counts.insertions + counts.deletions
        dist_sum += dist
        ref_len_sum += len(ref)
        per_sample.append({"prediction": pred, "reference": ref, "edit_distance": dist})
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(
        wer=wer(predictions, references),
        accuracy=_ratio(tp, tp + fp + fn),
        precision=precision,
        recall=recall,
        f1=f1,
        matched_words=matched,
        total_words=len(references),
        cer=_ratio(dist_sum, ref_len_sum),
        per_sample=per_sample,
    )
