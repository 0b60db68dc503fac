"""QA corpus ingestion: JSONL parsing, prompt formatting, de-duplication and
numeric-answer filtering."""

from __future__ import annotations

import hashlib
import json
import re
import string
import unicodedata
from dataclasses import dataclass, field
from typing import IO, Iterable

from .errors import AuditError

FORMATS = ("open", "rc", "mc", "mc_rc")

# Literal two-character backslash-n separator used by the fixed prompt formats.
PROMPT_SEP = " \\n"

_ALNUM_RE = re.compile(r"[^\W_]+", re.UNICODE)
_NUMERIC_RE = re.compile(r"[+-]?(\d+(\.\d*)?|\.\d+)")
_GROUP_COMMA_RE = re.compile(r"(?<=\d),(?=\d)")


class CorpusError(AuditError):
    pass


@dataclass(frozen=True)
class Sample:
    """One QA item. `format` is inferred from which optional fields are present."""

    id: str
    dataset: str
    split: str
    question: str
    answer: str
    context: str | None = None
    options: tuple[str, ...] | None = None
    format: str = "open"

    def __post_init__(self):
        if not self.id:
            raise CorpusError("sample id must be non-empty")
        if not self.answer:
            raise CorpusError(f"sample {self.id!r}: answer must be non-empty")
        if self.format not in FORMATS:
            raise CorpusError(f"sample {self.id!r}: unknown format {self.format!r}")
        if self.format in ("mc", "mc_rc") and not self.options:
            raise CorpusError(f"sample {self.id!r}: format {self.format!r} requires options")
        if self.format in ("rc", "mc_rc") and self.context is None:
            raise CorpusError(f"sample {self.id!r}: format {self.format!r} requires context")


@dataclass(frozen=True)
class PreparedCorpus:
    """Samples after de-duplication (and optional numeric-answer removal),
    in stable first-occurrence order."""

    samples: tuple[Sample, ...]
    dropped_duplicates: int = 0
    dropped_numeric: int = 0
    provenance: dict[str, str] = field(default_factory=dict)


def infer_format(context: str | None, options: tuple[str, ...] | None) -> str:
    if options and context is not None:
        return "mc_rc"
    if options:
        return "mc"
    if context is not None:
        return "rc"
    return "open"


def _coerce_text(value, fld: str, line_no: int) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return str(value)
    raise CorpusError(f"line {line_no}: field {fld!r} must be a string")


def parse_jsonl(stream: IO[bytes] | IO[str], dataset: str, split: str) -> list[Sample]:
    """Parse one sample per JSONL line.

    Schema: {"id": str?, "question": str, "context": str?, "options": [str]?,
    "answer": str}. A missing id becomes "<dataset>-<line#>"; empty context or
    options are treated as absent.
    """
    samples: list[Sample] = []
    seen_ids: set[str] = set()
    for line_no, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {line_no}: malformed JSON: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise CorpusError(f"line {line_no}: expected a JSON object")
        for fld in ("question", "answer"):
            if fld not in record or record[fld] in (None, ""):
                raise CorpusError(f"line {line_no}: missing required field {fld!r}")
        question = _coerce_text(record["question"], "question", line_no)
        answer = _coerce_text(record["answer"], "answer", line_no)
        context = record.get("context")
        if context is not None:
            context = _coerce_text(context, "context", line_no) or None
        raw_options = record.get("options")
        options: tuple[str, ...] | None = None
        if raw_options:
            if not isinstance(raw_options, list):
                raise CorpusError(f"line {line_no}: field 'options' must be a list")
            options = tuple(_coerce_text(o, "options", line_no) for o in raw_options)
        sample_id = record.get("id")
        sample_id = _coerce_text(sample_id, "id", line_no) if sample_id else f"{dataset}-{line_no}"
        if sample_id in seen_ids:
            raise CorpusError(f"line {line_no}: duplicate id {sample_id!r} in ({dataset}, {split})")
        seen_ids.add(sample_id)
        try:
            sample = Sample(
                id=sample_id,
                dataset=dataset,
                split=split,
                question=question,
                answer=answer,
                context=context,
                options=options,
                format=infer_format(context, options),
            )
        except CorpusError as exc:
            raise CorpusError(f"line {line_no}: {exc}") from exc
        samples.append(sample)
    return samples


def format_prompt(sample: Sample) -> str:
    """Render the model input text for a sample in its fixed prompt format."""
    if sample.format == "open":
        return f"{sample.question}{PROMPT_SEP}"
    if sample.format == "rc":
        return f"{sample.question}{PROMPT_SEP} {sample.context}"
    assert sample.options is not None
    if len(sample.options) > len(string.ascii_uppercase):
        raise CorpusError(
            f"sample {sample.id!r}: {len(sample.options)} options exceed the option letter alphabet"
        )
    lettered = " ".join(
        f"({letter}) {opt}" for letter, opt in zip(string.ascii_uppercase, sample.options)
    )
    if sample.format == "mc":
        return f"{sample.question}{PROMPT_SEP} {lettered}"
    return f"{sample.question}{PROMPT_SEP} {lettered}{PROMPT_SEP} {sample.context}"


def normalize_text(t: str) -> str:
    """Lowercase, Unicode-NFC, collapse whitespace runs, strip ends."""
    return " ".join(unicodedata.normalize("NFC", t).lower().split())


def split_alnum(t: str) -> list[str]:
    """Tokenize on runs of non-alphanumeric characters (underscore excluded)."""
    return _ALNUM_RE.findall(t)


def duplicate_key(sample: Sample) -> str:
    return normalize_text(format_prompt(sample)) + "|" + normalize_text(sample.answer)


def deduplicate(samples: Iterable[Sample]) -> tuple[list[Sample], int]:
    """Drop samples whose normalized prompt+answer matches an earlier one.

    Keeps the first occurrence; returns (kept, removed_count).
    """
    kept: list[Sample] = []
    seen: set[str] = set()
    removed = 0
    for sample in samples:
        key = duplicate_key(sample)
        if key in seen:
            removed += 1
            continue
        seen.add(key)
        kept.append(sample)
    return kept, removed


def is_numeric_answer(answer: str) -> bool:
    """True iff the trimmed answer, with digit-group commas removed, is a plain
    decimal integer or decimal float. Forms like "3-0", "B12" or "1e5" do not
    count."""
    trimmed = _GROUP_COMMA_RE.sub("", answer.strip())
    return bool(_NUMERIC_RE.fullmatch(trimmed))


def prepare_eval_set(
    samples: Iterable[Sample],
    drop_numeric: bool,
    provenance: dict[str, str] | None = None,
) -> PreparedCorpus:
    """De-duplicate, then optionally remove numeric-answer samples."""
    deduped, n_dupes = deduplicate(samples)
    n_numeric = 0
    if drop_numeric:
        kept = [s for s in deduped if not is_numeric_answer(s.answer)]
        n_numeric = len(deduped) - len(kept)
        deduped = kept
    if not deduped:
        raise CorpusError("empty corpus after preparation")
    return PreparedCorpus(
        samples=tuple(deduped),
        dropped_duplicates=n_dupes,
        dropped_numeric=n_numeric,
        provenance=dict(provenance or {}),
    )


def pooled_id(sample: Sample) -> str:
    """Corpus-wide sample id for pooled (multi-dataset) training corpora."""
    return f"{sample.dataset}:{sample.id}"


def sample_to_record(sample: Sample) -> dict:
    record = {
        "id": sample.id,
        "dataset": sample.dataset,
        "split": sample.split,
        "question": sample.question,
        "answer": sample.answer,
    }
    if sample.context is not None:
        record["context"] = sample.context
    if sample.options is not None:
        record["options"] = list(sample.options)
    return record


def write_sample_file(path, samples: Iterable[Sample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            fh.write(json.dumps(sample_to_record(sample), sort_keys=True) + "\n")


def read_sample_file(path) -> list[Sample]:
    """Load samples written by write_sample_file, honoring per-record
    dataset/split (pooled corpora mix datasets in one file)."""
    samples: list[Sample] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {line_no}: malformed JSON: {exc.msg}") from exc
            context = record.get("context")
            options = tuple(record["options"]) if record.get("options") else None
            samples.append(
                Sample(
                    id=record["id"],
                    dataset=record["dataset"],
                    split=record["split"],
                    question=record["question"],
                    answer=record["answer"],
                    context=context,
                    options=options,
                    format=infer_format(context, options),
                )
            )
    return samples


def file_digest(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
