"""Text and classification metrics for prediction manifests.

Scene-understanding answers are scored with ROUGE-1/2 (clipped n-gram
overlap) and ROUGE-L (longest common subsequence), all as plain F1
(beta = 1, no stemming, no stopword removal).  Risk answers are parsed back
to a category by synonym search and scored with accuracy and macro-averaged
precision/recall/F1.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import RiskforgeError
from .synth import ScenarioKind

_ASCII_DIGITS = set("0123456789")


class EmptyInput(RiskforgeError):
    pass


class MissingSample(RiskforgeError):
    pass


class DuplicateSample(RiskforgeError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every character that is neither Unicode
    alphabetic nor an ASCII digit (so superscripts and punctuation split)."""
    tokens = []
    current = []
    for ch in text.lower():
        if ch.isalpha() or ch in _ASCII_DIGITS:
            current.append(ch)
        elif current:
            tokens.append("".join(current))
            current = []
    if current:
        tokens.append("".join(current))
    return tokens


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def rouge_n(candidate: list[str], reference: list[str], n: int) -> tuple[float, float, float]:
    """Clipped n-gram overlap (precision, recall, f1); zero denominators
    score 0 for that quantity."""
    cand = Counter(tuple(candidate[i:i + n]) for i in range(len(candidate) - n + 1))
    ref = Counter(tuple(reference[i:i + n]) for i in range(len(reference) - n + 1))
    overlap = sum(min(count, ref[gram]) for gram, count in cand.items())
    total_cand = sum(cand.values())
    total_ref = sum(ref.values())
    precision = overlap / total_cand if total_cand else 0.0
    recall = overlap / total_ref if total_ref else 0.0
    return precision, recall, _f1(precision, recall)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        row = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                row.append(prev[j - 1] + 1)
            else:
                row.append(max(prev[j], row[-1]))
        prev = row
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> tuple[float, float, float]:
    lcs = _lcs_length(candidate, reference)
    precision = lcs / len(candidate) if candidate else 0.0
    recall = lcs / len(reference) if reference else 0.0
    return precision, recall, _f1(precision, recall)


# ----------------------------------------------------------------------------
# Category parsing

CANONICAL_TOKEN = {
    ScenarioKind.COLLISION: "collision",
    ScenarioKind.HARD_BRAKING: "hard braking",
    ScenarioKind.ABNORMAL_ACCELERATION: "abnormal acceleration",
    ScenarioKind.LANE_VIOLATION: "lane violation",
}

SAFE = "safe"
UNKNOWN = "unknown"

# Synonym phrases per class; matching is case-insensitive on word boundaries.
DEFAULT_TAXONOMY: dict[str, tuple[str, ...]] = {
    ScenarioKind.COLLISION.value: (
        "collision", "collide", "collides", "colliding", "crash", "crashes",
        "crashing", "rear-end", "rear end", "impact with",
    ),
    ScenarioKind.HARD_BRAKING.value: (
        "hard braking", "hard brake", "brakes hard", "braking hard",
        "sudden braking", "emergency braking", "emergency brake",
        "abrupt braking", "hard deceleration", "sudden deceleration",
        "decelerates sharply",
    ),
    ScenarioKind.ABNORMAL_ACCELERATION.value: (
        "abnormal acceleration", "sudden acceleration", "hard acceleration",
        "aggressive acceleration", "accelerates", "accelerates abruptly",
        "rapid acceleration",
    ),
    ScenarioKind.LANE_VIOLATION.value: (
        "lane violation", "lane departure", "off-road", "off road",
        "leaves the road", "leaves the drivable area", "crosses the lane boundary",
        "road departure", "lane encroachment",
    ),
    SAFE: (
        "no high-risk", "no high risk", "safe", "no risk", "risk-free",
    ),
}


def extract_risk_category(text: str, taxonomy: dict[str, tuple[str, ...]] | None = None) -> str:
    """Map free text to a risk class name, 'safe', or 'unknown'.

    When several classes match, the one whose first match occurs latest in
    the text wins: the concluding risk statement comes last.
    """
    taxonomy = taxonomy or DEFAULT_TAXONOMY
    lowered = text.lower()
    first_hit: dict[str, int] = {}
    for cls, phrases in taxonomy.items():
        best = None
        for phrase in phrases:
            m = re.search(r"(?<![0-9a-z])" + re.escape(phrase.lower()) + r"(?![0-9a-z])", lowered)
            if m and (best is None or m.start() < best):
                best = m.start()
        if best is not None:
            first_hit[cls] = best
    if not first_hit:
        return UNKNOWN
    return max(first_hit.items(), key=lambda kv: kv[1])[0]


# ----------------------------------------------------------------------------
# Classification report


@dataclass(frozen=True)
class ClassStats:
    name: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    macro_recall: float
    macro_f1: float
    macro_precision: float
    per_class: tuple[ClassStats, ...]
    unknown_prediction_count: int


ALL_CLASSES = tuple(k.value for k in ScenarioKind) + (SAFE,)


def classification_report(pairs: list[tuple[str, str]]) -> ClassificationReport:
    """Accuracy plus per-class and macro precision/recall/F1 from
    (gold, predicted) class-name pairs.  Predicted 'unknown' counts as wrong
    for every class; macro averages cover classes with gold support only."""
    if not pairs:
        raise EmptyInput("no prediction pairs")
    correct = sum(1 for gold, pred in pairs if gold == pred)
    unknown = sum(1 for _, pred in pairs if pred == UNKNOWN)
    stats = []
    macro_p = macro_r = macro_f = 0.0
    supported = 0
    for cls in ALL_CLASSES:
        tp = sum(1 for g, p in pairs if g == cls and p == cls)
        pred_count = sum(1 for _, p in pairs if p == cls)
        support = sum(1 for g, _ in pairs if g == cls)
        precision = tp / pred_count if pred_count else 0.0
        recall = tp / support if support else 0.0
        stats.append(ClassStats(cls, precision, recall, _f1(precision, recall), support))
        if support > 0:
            supported += 1
            macro_p += precision
            macro_r += recall
            macro_f += _f1(precision, recall)
    if supported == 0:
        raise EmptyInput("no gold class has support")
    return ClassificationReport(
        accuracy=correct / len(pairs),
        macro_recall=macro_r / supported,
        macro_f1=macro_f / supported,
        macro_precision=macro_p / supported,
        per_class=tuple(stats),
        unknown_prediction_count=unknown,
    )


# ----------------------------------------------------------------------------
# Manifest-level evaluation


@dataclass(frozen=True)
class EvalReport:
    """All values are percentages in [0, 100]."""

    rouge1_f1: float
    rouge2_f1: float
    rougeL_f1: float
    accuracy: float
    macro_recall: float
    macro_f1: float
    per_class: tuple[ClassStats, ...]
    unknown_prediction_count: int
    sample_count: int
    bertscore_f1: float | None = None   # populated only when a similarity provider is configured

    def to_dict(self) -> dict:
        return {
            "scene_understanding": {
                "rouge1_f1": self.rouge1_f1,
                "rouge2_f1": self.rouge2_f1,
                "rougeL_f1": self.rougeL_f1,
                "bertscore_f1": self.bertscore_f1,
            },
            "risk_prediction": {
                "accuracy": self.accuracy,
                "macro_recall": self.macro_recall,
                "macro_f1": self.macro_f1,
                "per_class": [
                    {"class": s.name, "precision": round(s.precision * 100.0, 6),
                     "recall": round(s.recall * 100.0, 6), "f1": round(s.f1 * 100.0, 6),
                     "support": s.support}
                    for s in self.per_class
                ],
                "unknown_prediction_count": self.unknown_prediction_count,
            },
            "sample_count": self.sample_count,
        }

    def to_table(self) -> str:
        lines = [
            "metric                 value",
            "---------------------  ------",
            f"ROUGE-1 F1             {self.rouge1_f1:6.2f}",
            f"ROUGE-2 F1             {self.rouge2_f1:6.2f}",
            f"ROUGE-L F1             {self.rougeL_f1:6.2f}",
            f"BERTScore F1           {'  n/a' if self.bertscore_f1 is None else format(self.bertscore_f1, '6.2f')}",
            f"Accuracy               {self.accuracy:6.2f}",
            f"Macro recall           {self.macro_recall:6.2f}",
            f"Macro F1               {self.macro_f1:6.2f}",
            f"Unknown predictions    {self.unknown_prediction_count:6d}",
            f"Samples                {self.sample_count:6d}",
        ]
        return "\n".join(lines)


@dataclass(frozen=True)
class PredictionRow:
    sample_id: str
    stage1_text: str
    stage2_text: str
    stage3_text: str


def load_predictions(path) -> list[PredictionRow]:
    """Line-delimited JSON: {sample_id, stage1_text, stage2_text, stage3_text}."""
    rows = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            sample_id = doc.get("sample_id")
            if not sample_id:
                raise MissingSample(f"predictions line {line_no}: missing sample_id")
            if sample_id in seen:
                raise DuplicateSample(sample_id)
            seen.add(sample_id)
            rows.append(PredictionRow(
                sample_id,
                doc.get("stage1_text", ""),
                doc.get("stage2_text", ""),
                doc.get("stage3_text", ""),
            ))
    return rows


def greedy_cosine_f1(candidate_vectors, reference_vectors) -> float:
    """Similarity-provider aggregation: greedy cosine matching F1 over token
    embeddings.  No embedding model ships with this package; callers supply
    vectors (this is the pluggable seam for semantic scoring)."""
    import numpy as np

    if len(candidate_vectors) == 0 or len(reference_vectors) == 0:
        return 0.0
    cand = np.asarray(candidate_vectors, dtype=np.float64)
    ref = np.asarray(reference_vectors, dtype=np.float64)
    cand = cand / np.maximum(np.linalg.norm(cand, axis=1, keepdims=True), 1e-12)
    ref = ref / np.maximum(np.linalg.norm(ref, axis=1, keepdims=True), 1e-12)
    sim = cand @ ref.T
    precision = float(np.mean(np.max(sim, axis=1)))
    recall = float(np.mean(np.max(sim, axis=0)))
    return _f1(precision, recall)


def evaluate_pairs(gold_rows, pred_rows, taxonomy=None,
                   similarity_provider=None) -> EvalReport:
    """Score predictions against gold records.

    ``gold_rows`` is a list of (sample_id, scene_text, motion_text,
    primary_class_name); predictions must cover every gold sample exactly
    once.  Text metrics pool the scene and motion stages over all samples.
    """
    if not gold_rows:
        raise EmptyInput("no gold samples")
    by_id = {}
    for row in pred_rows:
        if row.sample_id in by_id:
            raise DuplicateSample(row.sample_id)
        by_id[row.sample_id] = row
    r1 = r2 = rl = 0.0
    bert_scores = []
    pairs = []
    n_texts = 0
    for sample_id, scene_text, motion_text, gold_class in gold_rows:
        pred = by_id.get(sample_id)
        if pred is None:
            raise MissingSample(sample_id)
        for gold_text, pred_text in ((scene_text, pred.stage1_text), (motion_text, pred.stage2_text)):
            cand, ref = tokenize(pred_text), tokenize(gold_text)
            r1 += rouge_n(cand, ref, 1)[2]
            r2 += rouge_n(cand, ref, 2)[2]
            rl += rouge_l(cand, ref)[2]
            if similarity_provider is not None:
                bert_scores.append(greedy_cosine_f1(
                    similarity_provider(cand), similarity_provider(ref)))
            n_texts += 1
        pairs.append((gold_class, extract_risk_category(pred.stage3_text, taxonomy)))
    cls = classification_report(pairs)
    return EvalReport(
        rouge1_f1=100.0 * r1 / n_texts,
        rouge2_f1=100.0 * r2 / n_texts,
        rougeL_f1=100.0 * rl / n_texts,
        accuracy=100.0 * cls.accuracy,
        macro_recall=100.0 * cls.macro_recall,
        macro_f1=100.0 * cls.macro_f1,
        per_class=cls.per_class,
        unknown_prediction_count=cls.unknown_prediction_count,
        sample_count=len(gold_rows),
        bertscore_f1=(100.0 * sum(bert_scores) / len(bert_scores)) if bert_scores else None,
    )
