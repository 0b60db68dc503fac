"""Prediction scoring: SQuAD-style token F1 for reading-comprehension
datasets, highest-overlap exact match for multi-choice, aggregated per subset."""

from __future__ import annotations

import json
import logging
import math
import re
import string
from dataclasses import dataclass

from .corpus import PreparedCorpus, Sample
from .errors import AuditError, ConsistencyError
from .filtering import SubsetAssignment

log = logging.getLogger(__name__)

METRICS = ("f1", "em_mc")
SUBSET_ORDER = ("all", "least_similar", "unmemorisable")

_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_TAG_RE = re.compile(r"^(?P<family>.+)-seed(?P<seed>\d+)\.jsonl$")


@dataclass(frozen=True)
class PredictionRecord:
    eval_id: str
    model_tag: str
    prediction: str


@dataclass(frozen=True)
class SubsetScore:
    model_tag: str
    dataset: str
    subset: str
    metric: str
    mean_score: float
    n: int


def squad_normalize(t: str) -> list[str]:
    """Lowercase, strip punctuation, drop the articles a/an/the, split."""
    t = t.lower().translate(_PUNCT_TABLE)
    return _ARTICLE_RE.sub(" ", t).split()


def f1_score(prediction: str, gold: str) -> float:
    """Token-multiset F1 over normalized tokens, in [0, 1].

    Both sides empty after normalization scores 1.0, exactly one empty 0.0.
    """
    pred_tokens = squad_normalize(prediction)
    gold_tokens = squad_normalize(gold)
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    gold_counts: dict[str, int] = {}
    for token in gold_tokens:
        gold_counts[token] = gold_counts.get(token, 0) + 1
    common = 0
    for token in pred_tokens:
        if gold_counts.get(token, 0) > 0:
            gold_counts[token] -= 1
            common += 1
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def mc_score(prediction: str, options: tuple[str, ...] | list[str], gold: str) -> int:
    """Exact match after snapping the prediction to the option with the
    highest token F1 against it; ties go to the lowest option index."""
    if not options:
        raise AuditError("mc_score requires non-empty options")
    if gold not in options:
        raise AuditError(f"gold answer {gold!r} not among options")
    best_index = 0
    best_f1 = -1.0
    for index, option in enumerate(options):
        overlap = f1_score(prediction, option)
        if overlap > best_f1:
            best_f1 = overlap
            best_index = index
    return 1 if options[best_index] == gold else 0


def model_tag_from_filename(name: str) -> str:
    """Model tag from a "<family>-seed<k>.jsonl" prediction filename."""
    match = _TAG_RE.match(name)
    if not match:
        raise AuditError(f"prediction filename {name!r} does not match '<family>-seed<k>.jsonl'")
    return f"{match.group('family')}-seed{match.group('seed')}"


def family_of_tag(tag: str) -> str:
    if "-seed" not in tag:
        raise AuditError(f"model tag {tag!r} has no '-seed<k>' suffix")
    return tag.rsplit("-seed", 1)[0]


def read_prediction_file(path, model_tag: str) -> list[PredictionRecord]:
    """JSONL of {"eval_id", "prediction"}; (eval_id, model_tag) must be unique."""
    records: list[PredictionRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AuditError(f"{path}: line {line_no}: malformed JSON: {exc.msg}") from exc
            eval_id = record["eval_id"]
            if eval_id in seen:
                raise AuditError(f"{path}: line {line_no}: duplicate eval_id {eval_id!r}")
            seen.add(eval_id)
            records.append(
                PredictionRecord(
                    eval_id=eval_id, model_tag=model_tag, prediction=str(record["prediction"])
                )
            )
    return records


def _sample_score(sample: Sample, prediction: str, metric: str) -> float:
    if metric == "f1":
        return f1_score(prediction, sample.answer)
    try:
        return float(mc_score(prediction, sample.options or (), sample.answer))
    except AuditError as exc:
        raise AuditError(f"eval sample {sample.id!r}: {exc}") from exc


def evaluate_runs(
    predictions: list[PredictionRecord],
    corpus: PreparedCorpus,
    metric: str,
    assignments: list[SubsetAssignment],
    allow_missing: bool = False,
) -> tuple[list[SubsetScore], dict[str, int]]:
    """Mean per-sample score (x100) per (model_tag, subset) for one dataset.

    Every corpus sample needs a prediction under every model tag; missing ones
    are an error unless allow_missing, in which case they are excluded and
    counted in the returned mapping.
    """
    if metric not in METRICS:
        raise AuditError(f"unknown metric {metric!r}")
    samples = list(corpus.samples)
    if not samples:
        raise AuditError("cannot evaluate an empty corpus")
    dataset = samples[0].dataset
    assignment_by_id = {a.eval_id: a for a in assignments}
    for sample in samples:
        if sample.id not in assignment_by_id:
            raise ConsistencyError(f"eval sample {sample.id!r} has no subset assignment")

    by_tag: dict[str, dict[str, str]] = {}
    for record in predictions:
        by_tag.setdefault(record.model_tag, {})[record.eval_id] = record.prediction

    missing_counts: dict[str, int] = {}
    scores: list[SubsetScore] = []
    for tag in sorted(by_tag):
        tag_predictions = by_tag[tag]
        missing = [s.id for s in samples if s.id not in tag_predictions]
        if missing and not allow_missing:
            shown = ", ".join(repr(i) for i in missing[:10])
            raise AuditError(
                f"model {tag!r} is missing predictions for {len(missing)} "
                f"samples of {dataset!r}: {shown}"
            )
        if missing:
            missing_counts[tag] = len(missing)
        scored = [
            (s, _sample_score(s, tag_predictions[s.id], metric))
            for s in samples
            if s.id in tag_predictions
        ]
        members = {
            "all": scored,
            "least_similar": [
                (s, v) for s, v in scored if assignment_by_id[s.id].in_least_similar
            ],
            "unmemorisable": [
                (s, v) for s, v in scored if assignment_by_id[s.id].in_unmemorisable
            ],
        }
        for subset in SUBSET_ORDER:
            rows = members[subset]
            if not rows:
                log.warning("dataset %s subset %s is empty for %s; row omitted", dataset, subset, tag)
                continue
            mean = math.fsum(v for _, v in rows) / len(rows) * 100.0
            scores.append(
                SubsetScore(
                    model_tag=tag,
                    dataset=dataset,
                    subset=subset,
                    metric=metric,
                    mean_score=mean,
                    n=len(rows),
                )
            )
    return scores, missing_counts
