"""Subset derivation: threshold the top-1 similarity score to get the Least
Similar subset, then drop samples whose answer tokens overlap their most
similar training sample to get the Unmemorisable subset."""

from __future__ import annotations

import json
from dataclasses import dataclass

from .corpus import PreparedCorpus, Sample, format_prompt, normalize_text, split_alnum
from .errors import AuditError, ConsistencyError
from .similarity import SimilarityMatch

OVERLAP_SCOPES = ("train_full_text", "train_answer_only")


@dataclass(frozen=True)
class FilterConfig:
    threshold_T: float = 60.0
    overlap_scope: str = "train_full_text"
    k_review: int = 10

    def __post_init__(self):
        if not -100.0 <= self.threshold_T <= 100.0:
            raise AuditError(f"threshold_T must be in [-100, 100], got {self.threshold_T}")
        if self.overlap_scope not in OVERLAP_SCOPES:
            raise AuditError(f"unknown overlap_scope {self.overlap_scope!r}")
        if self.k_review < 1:
            raise AuditError("k_review must be >= 1")


@dataclass(frozen=True)
class SubsetAssignment:
    eval_id: str
    top1_train_id: str
    top1_score: float
    in_least_similar: bool
    in_unmemorisable: bool
    overlapping_answer_tokens: tuple[str, ...]

    @property
    def subset(self) -> str:
        """Narrowest subset this sample belongs to."""
        if self.in_unmemorisable:
            return "unmemorisable"
        if self.in_least_similar:
            return "least_similar"
        return "all"


def answer_overlap_tokens(eval_answer: str, train_sample: Sample, scope: str) -> list[str]:
    """Eval-answer tokens that also occur in the training sample.

    Scope train_full_text checks the formatted prompt plus answer;
    train_answer_only checks the answer alone. Tokens are alphanumeric runs of
    the normalized texts; no stopword removal or stemming. Result keeps eval
    answer order, de-duplicated.
    """
    if scope not in OVERLAP_SCOPES:
        raise AuditError(f"unknown overlap_scope {scope!r}")
    if scope == "train_full_text":
        train_text = f"{format_prompt(train_sample)} {train_sample.answer}"
    else:
        train_text = train_sample.answer
    train_tokens = set(split_alnum(normalize_text(train_text)))
    seen: set[str] = set()
    overlap: list[str] = []
    for token in split_alnum(normalize_text(eval_answer)):
        if token in train_tokens and token not in seen:
            seen.add(token)
            overlap.append(token)
    return overlap


def _samples_of(corpus) -> list[Sample]:
    return list(corpus.samples) if isinstance(corpus, PreparedCorpus) else list(corpus)


def assign_subsets(
    matches: list[SimilarityMatch],
    eval_corpus,
    train_lookup: dict[str, Sample],
    config: FilterConfig,
) -> list[SubsetAssignment]:
    """One assignment per eval sample, judged on its top-1 match only.

    Least Similar: top-1 score strictly under the threshold. Unmemorisable:
    Least Similar with no answer-token overlap against the top-1 train sample.
    """
    match_by_id = {m.eval_id: m for m in matches}
    assignments: list[SubsetAssignment] = []
    for sample in _samples_of(eval_corpus):
        match = match_by_id.get(sample.id)
        if match is None:
            raise ConsistencyError(f"eval sample {sample.id!r} has no match record")
        if not match.matches:
            raise ConsistencyError(f"eval sample {sample.id!r} has an empty match list")
        top = match.matches[0]
        train_sample = train_lookup.get(top.train_id)
        if train_sample is None:
            raise ConsistencyError(f"train id {top.train_id!r} not found in train corpus")
        overlap = answer_overlap_tokens(sample.answer, train_sample, config.overlap_scope)
        least_similar = top.score < config.threshold_T
        assignments.append(
            SubsetAssignment(
                eval_id=sample.id,
                top1_train_id=top.train_id,
                top1_score=top.score,
                in_least_similar=least_similar,
                in_unmemorisable=least_similar and not overlap,
                overlapping_answer_tokens=tuple(overlap),
            )
        )
    return assignments


def subset_counts(assignments: list[SubsetAssignment]) -> dict[str, int]:
    return {
        "all": len(assignments),
        "least_similar": sum(a.in_least_similar for a in assignments),
        "unmemorisable": sum(a.in_unmemorisable for a in assignments),
    }


def write_subsets(path, assignments: list[SubsetAssignment]) -> None:
    """JSONL subset file; each record carries the narrowest subset membership."""
    with open(path, "w", encoding="utf-8") as fh:
        for a in assignments:
            fh.write(
                '{"eval_id": %s, "subset": %s, "top1_train_id": %s, "top1_score": %.6f}\n'
                % (json.dumps(a.eval_id), json.dumps(a.subset), json.dumps(a.top1_train_id), a.top1_score)
            )


def read_subsets(path) -> list[SubsetAssignment]:
    """Reload subset assignments written by write_subsets. The overlap token
    evidence is not serialized; membership flags are reconstructed from the
    subset label."""
    assignments: list[SubsetAssignment] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            subset = record["subset"]
            assignments.append(
                SubsetAssignment(
                    eval_id=record["eval_id"],
                    top1_train_id=record["top1_train_id"],
                    top1_score=record["top1_score"],
                    in_least_similar=subset in ("least_similar", "unmemorisable"),
                    in_unmemorisable=subset == "unmemorisable",
                    overlapping_answer_tokens=(),
                )
            )
    return assignments


def _truncate(text: str, limit: int) -> str:
    return text if len(text) <= limit else text[: limit - 3] + "..."


def calibration_report(
    per_dataset: dict[str, tuple[list[SimilarityMatch], PreparedCorpus]],
    train_lookup: dict[str, Sample],
    candidate_T: float,
    k_review: int = 10,
    truncate_chars: int = 200,
) -> dict:
    """Review artifact for picking the threshold by hand: per dataset, the
    k_review highest-scoring top-1 pairs with score under candidate_T, with
    truncated texts. Datasets with fewer qualifying pairs return all of them.
    """
    if k_review < 1:
        raise AuditError("k_review must be >= 1")
    report: dict = {"candidate_T": candidate_T, "k_review": k_review, "datasets": {}}
    for dataset in sorted(per_dataset):
        matches, corpus = per_dataset[dataset]
        eval_lookup = {s.id: s for s in corpus.samples}
        qualifying = []
        for match in matches:
            if not match.matches:
                raise ConsistencyError(f"eval sample {match.eval_id!r} has an empty match list")
            top = match.matches[0]
            if top.score < candidate_T:
                qualifying.append((match.eval_id, top))
        qualifying.sort(key=lambda item: (-item[1].score, item[0]))
        rows = []
        for eval_id, top in qualifying[:k_review]:
            eval_sample = eval_lookup.get(eval_id)
            if eval_sample is None:
                raise ConsistencyError(f"eval id {eval_id!r} not found in dataset {dataset!r}")
            train_sample = train_lookup.get(top.train_id)
            if train_sample is None:
                raise ConsistencyError(f"train id {top.train_id!r} not found in train corpus")
            rows.append(
                {
                    "eval_id": eval_id,
                    "train_id": top.train_id,
                    "eval_text": _truncate(format_prompt(eval_sample), truncate_chars),
                    "eval_answer": eval_sample.answer,
                    "train_text": _truncate(format_prompt(train_sample), truncate_chars),
                    "train_answer": train_sample.answer,
                    "score": round(top.score, 6),
                }
            )
        report["datasets"][dataset] = rows
    return report
