"""Pipeline CLI: ingest -> embed -> score -> filter -> evaluate -> compare ->
report, driven by a single JSON run manifest.

Each stage validates the digests of the artifacts it consumes against the
producing stage's metadata, writes its own artifacts plus a meta.json record,
and can be re-run alone. `run` executes all stages in order. Artifacts are
deterministic for a fixed manifest and inputs; only meta.json carries wall
times.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .corpus import (
    PreparedCorpus,
    file_digest,
    parse_jsonl,
    pooled_id,
    prepare_eval_set,
    read_sample_file,
    write_sample_file,
)
from .embedding import (
    VectorCache,
    embed_corpus,
    provider_from_config,
    read_vectors,
    write_vectors,
)
from .errors import AuditError, ConsistencyError
from .evaluation import (
    SubsetScore,
    evaluate_runs,
    model_tag_from_filename,
    read_prediction_file,
)
from .filtering import (
    FilterConfig,
    assign_subsets,
    calibration_report,
    read_subsets,
    write_subsets,
)
from .reports import (
    comparison_records,
    counts_rows,
    divergence_summary,
    most_similar_pairs,
    render_calibration_markdown,
    render_comparison_csv,
    render_comparison_markdown,
    render_counts_markdown,
    render_divergence_markdown,
    render_pairs_markdown,
)
from .similarity import baseline_comparison, read_matches, top_k_matches, write_matches
from .stats import compare_families

log = logging.getLogger(__name__)

STAGES = ("ingest", "embed", "score", "filter", "evaluate", "compare", "report")


class StaleArtifactError(AuditError):
    pass


@dataclass
class CorpusSpec:
    path: Path
    name: str
    split: str


@dataclass
class EvalCorpusSpec(CorpusSpec):
    metric: str = "f1"
    drop_numeric: bool = False


@dataclass
class PredictionSpec:
    path: Path
    dataset: str
    model_tag: str


@dataclass
class RunManifest:
    train_corpora: list[CorpusSpec]
    eval_corpora: list[EvalCorpusSpec]
    provider: dict
    filter: FilterConfig
    output_dir: Path
    k: int = 5
    ngram_n: int = 8
    threads: int = 1
    truncate_chars: int = 200
    predictions: list[PredictionSpec] = field(default_factory=list)
    families: tuple[str, str] | None = None
    cache_path: Path | None = None
    allow_missing: bool = False
    config_digest: str = ""


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def load_manifest(path: str, overrides: dict | None = None) -> RunManifest:
    """Load and validate the run manifest; CLI overrides win over file values.

    Relative paths are resolved against the manifest's directory, except an
    --output override, which resolves against the working directory.
    """
    manifest_path = Path(path)
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise AuditError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise AuditError(f"manifest {path}: malformed JSON: {exc.msg}")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    base = manifest_path.parent

    trains = []
    for entry in raw.get("train_corpora", []):
        if isinstance(entry, str):
            entry = {"path": entry}
        trains.append(
            CorpusSpec(
                path=_resolve(base, entry["path"]),
                name=entry.get("name", Path(entry["path"]).stem),
                split=entry.get("split", "train"),
            )
        )
    evals = []
    for entry in raw.get("eval_corpora", []):
        evals.append(
            EvalCorpusSpec(
                path=_resolve(base, entry["path"]),
                name=entry.get("name", Path(entry["path"]).stem),
                split=entry.get("split", "dev"),
                metric=entry.get("metric", "f1"),
                drop_numeric=bool(entry.get("drop_numeric", False)),
            )
        )
    if not trains or not evals:
        raise AuditError("manifest must list at least one train corpus and one eval corpus")
    names = [c.name for c in trains] + [c.name for c in evals]
    if len(set(names)) != len(names):
        raise AuditError(f"corpus names must be unique, got {names}")
    for spec in trains + evals:
        if not spec.path.exists():
            raise AuditError(f"corpus file not found: {spec.path}")
    for spec in evals:
        if spec.metric not in ("f1", "em_mc"):
            raise AuditError(f"corpus {spec.name!r}: unknown metric {spec.metric!r}")

    provider = dict(raw.get("provider", {"kind": "deterministic_bow", "dimension": 256}))
    if "provider" in overrides:
        provider["kind"] = overrides["provider"]

    filter_raw = raw.get("filter", {})
    threshold = overrides.get("threshold", filter_raw.get("threshold", 60.0))
    filter_config = FilterConfig(
        threshold_T=float(threshold),
        overlap_scope=filter_raw.get("overlap_scope", "train_full_text"),
        k_review=int(filter_raw.get("k_review", 10)),
    )

    predictions: list[PredictionSpec] = []
    pred_raw = raw.get("predictions")
    if isinstance(pred_raw, dict) and "dir" in pred_raw:
        root = _resolve(base, pred_raw["dir"])
        if not root.is_dir():
            raise AuditError(f"predictions dir not found: {root}")
        for dataset_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            for pred_file in sorted(dataset_dir.glob("*.jsonl")):
                predictions.append(
                    PredictionSpec(
                        path=pred_file,
                        dataset=dataset_dir.name,
                        model_tag=model_tag_from_filename(pred_file.name),
                    )
                )
    elif isinstance(pred_raw, list):
        for entry in pred_raw:
            pred_path = _resolve(base, entry["path"])
            predictions.append(
                PredictionSpec(
                    path=pred_path,
                    dataset=entry["dataset"],
                    model_tag=entry.get("model_tag", model_tag_from_filename(pred_path.name)),
                )
            )
    for spec in predictions:
        if not spec.path.exists():
            raise AuditError(f"prediction file not found: {spec.path}")

    if "output" in overrides:
        output_dir = Path(overrides["output"]).absolute()
    else:
        output_dir = _resolve(base, raw.get("output_dir", "out"))

    families = raw.get("families")
    manifest = RunManifest(
        train_corpora=trains,
        eval_corpora=evals,
        provider=provider,
        filter=filter_config,
        output_dir=output_dir,
        k=int(overrides.get("k", raw.get("k", 5))),
        ngram_n=int(overrides.get("ngram_n", raw.get("ngram_n", 8))),
        threads=int(overrides.get("threads", raw.get("threads", 1))),
        truncate_chars=int(raw.get("truncate_chars", 200)),
        predictions=predictions,
        families=tuple(families) if families else None,
        cache_path=_resolve(base, raw["cache_path"]) if raw.get("cache_path") else None,
        allow_missing=bool(overrides.get("allow_missing", raw.get("allow_missing", False))),
    )
    if manifest.k < 1:
        raise AuditError("k must be >= 1")
    if manifest.threads < 1:
        raise AuditError("threads must be >= 1")
    canonical = json.dumps(
        {
            "trains": [[str(c.path), c.name, c.split] for c in manifest.train_corpora],
            "evals": [
                [str(c.path), c.name, c.split, c.metric, c.drop_numeric]
                for c in manifest.eval_corpora
            ],
            "provider": manifest.provider,
            "filter": [
                manifest.filter.threshold_T,
                manifest.filter.overlap_scope,
                manifest.filter.k_review,
            ],
            "k": manifest.k,
            "ngram_n": manifest.ngram_n,
            "truncate_chars": manifest.truncate_chars,
        },
        sort_keys=True,
    )
    manifest.config_digest = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
    return manifest


# ---------------------------------------------------------------------------
# Stage plumbing


def _stage_dir(manifest: RunManifest, stage: str) -> Path:
    directory = manifest.output_dir / stage
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def _write_meta(
    manifest: RunManifest,
    stage: str,
    inputs: dict[str, str],
    outputs: list[Path],
    started: float,
    extra: dict | None = None,
) -> None:
    meta = {
        "stage": stage,
        "tool_version": __version__,
        "config_digest": manifest.config_digest,
        "inputs": dict(sorted(inputs.items())),
        "outputs": {
            str(p.relative_to(manifest.output_dir)): file_digest(p) for p in sorted(outputs)
        },
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    if extra:
        meta.update(extra)
    path = _stage_dir(manifest, stage) / "meta.json"
    path.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _require_stage_outputs(manifest: RunManifest, stage: str, files: list[Path]) -> dict[str, str]:
    """Check consumed artifacts against the producing stage's recorded digests."""
    meta_path = manifest.output_dir / stage / "meta.json"
    if not meta_path.exists():
        raise StaleArtifactError(f"stage {stage!r} has not been run (missing {meta_path})")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    recorded = meta.get("outputs", {})
    digests: dict[str, str] = {}
    for path in files:
        rel = str(path.relative_to(manifest.output_dir))
        if not path.exists():
            raise StaleArtifactError(f"stale artifact: {rel} is missing; re-run {stage!r}")
        digest = file_digest(path)
        if rel not in recorded or recorded[rel] != digest:
            raise StaleArtifactError(
                f"stale artifact: {rel} does not match the digest recorded by "
                f"{stage!r}; re-run the pipeline from that stage"
            )
        digests[rel] = digest
    return digests


@contextlib.contextmanager
def output_lock(output_dir: Path):
    """One writer per output directory, via an O_EXCL lock file."""
    output_dir.mkdir(parents=True, exist_ok=True)
    lock = output_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise AuditError(
            f"output directory is locked by another run ({lock}); remove the file if stale"
        )
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


def _train_path(manifest: RunManifest) -> Path:
    return manifest.output_dir / "ingest" / "train.jsonl"


def _eval_path(manifest: RunManifest, name: str) -> Path:
    return manifest.output_dir / "ingest" / f"eval.{name}.jsonl"


def _train_vectors_path(manifest: RunManifest) -> Path:
    return manifest.output_dir / "embed" / "train.embv"


def _eval_vectors_path(manifest: RunManifest, name: str) -> Path:
    return manifest.output_dir / "embed" / f"eval.{name}.embv"


def _matches_path(manifest: RunManifest, name: str) -> Path:
    return manifest.output_dir / "score" / f"{name}.matches.jsonl"


def _subsets_path(manifest: RunManifest, name: str) -> Path:
    return manifest.output_dir / "filter" / f"{name}.subsets.jsonl"


def _load_train_lookup(manifest: RunManifest):
    samples = read_sample_file(_train_path(manifest))
    return {pooled_id(s): s for s in samples}


def _load_eval_corpus(manifest: RunManifest, name: str) -> PreparedCorpus:
    return PreparedCorpus(samples=tuple(read_sample_file(_eval_path(manifest, name))))


# ---------------------------------------------------------------------------
# Stages


def stage_ingest(manifest: RunManifest) -> None:
    started = time.perf_counter()
    out_dir = _stage_dir(manifest, "ingest")
    inputs: dict[str, str] = {}
    outputs: list[Path] = []

    train_samples = []
    for spec in manifest.train_corpora:
        inputs[str(spec.path)] = file_digest(spec.path)
        with open(spec.path, "rb") as fh:
            train_samples.extend(parse_jsonl(fh, spec.name, spec.split))
    write_sample_file(_train_path(manifest), train_samples)
    outputs.append(_train_path(manifest))

    counts: dict = {"train_samples": len(train_samples), "eval": {}}
    for spec in manifest.eval_corpora:
        digest = file_digest(spec.path)
        inputs[str(spec.path)] = digest
        with open(spec.path, "rb") as fh:
            parsed = parse_jsonl(fh, spec.name, spec.split)
        prepared = prepare_eval_set(
            parsed, drop_numeric=spec.drop_numeric, provenance={str(spec.path): digest}
        )
        write_sample_file(_eval_path(manifest, spec.name), prepared.samples)
        outputs.append(_eval_path(manifest, spec.name))
        counts["eval"][spec.name] = {
            "all": len(prepared.samples),
            "dropped_duplicates": prepared.dropped_duplicates,
            "dropped_numeric": prepared.dropped_numeric,
        }
    counts_path = out_dir / "counts.json"
    counts_path.write_text(json.dumps(counts, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    outputs.append(counts_path)
    _write_meta(manifest, "ingest", inputs, outputs, started)
    log.info("ingest: %d train samples, %d eval corpora", len(train_samples), len(counts["eval"]))


def stage_embed(manifest: RunManifest) -> None:
    started = time.perf_counter()
    _stage_dir(manifest, "embed")
    consumed = [_train_path(manifest)] + [
        _eval_path(manifest, spec.name) for spec in manifest.eval_corpora
    ]
    inputs = _require_stage_outputs(manifest, "ingest", consumed)

    provider = provider_from_config(manifest.provider)
    cache_path = manifest.cache_path or (manifest.output_dir / "embed" / "cache.sqlite")
    cache = VectorCache(str(cache_path))
    outputs: list[Path] = []
    try:
        train_corpus = PreparedCorpus(samples=tuple(read_sample_file(_train_path(manifest))))
        embedded = embed_corpus(provider, train_corpus, cache=cache, id_fn=pooled_id)
        write_vectors(_train_vectors_path(manifest), embedded)
        outputs.append(_train_vectors_path(manifest))
        for spec in manifest.eval_corpora:
            corpus = _load_eval_corpus(manifest, spec.name)
            embedded = embed_corpus(provider, corpus, cache=cache)
            write_vectors(_eval_vectors_path(manifest, spec.name), embedded)
            outputs.append(_eval_vectors_path(manifest, spec.name))
    finally:
        cache.close()
    extra = {}
    truncated = getattr(provider, "truncated_keys", None)
    if truncated:
        extra["truncated_texts"] = len(truncated)
        log.warning("provider reported %d truncated texts", len(truncated))
    _write_meta(manifest, "embed", inputs, outputs, started, extra=extra)
    log.info("embed: provider %s", provider.identity)


def stage_score(manifest: RunManifest) -> None:
    started = time.perf_counter()
    _stage_dir(manifest, "score")
    consumed = [_train_vectors_path(manifest)] + [
        _eval_vectors_path(manifest, spec.name) for spec in manifest.eval_corpora
    ]
    inputs = _require_stage_outputs(manifest, "embed", consumed)

    trains = read_vectors(_train_vectors_path(manifest))
    outputs: list[Path] = []
    for spec in manifest.eval_corpora:
        evals = read_vectors(_eval_vectors_path(manifest, spec.name))
        matches = top_k_matches(evals, trains, manifest.k, threads=manifest.threads)
        write_matches(_matches_path(manifest, spec.name), matches)
        outputs.append(_matches_path(manifest, spec.name))
    _write_meta(manifest, "score", inputs, outputs, started)
    log.info("score: k=%d over %d train samples", manifest.k, len(trains))


def stage_filter(manifest: RunManifest) -> None:
    started = time.perf_counter()
    out_dir = _stage_dir(manifest, "filter")
    consumed = [_matches_path(manifest, spec.name) for spec in manifest.eval_corpora]
    inputs = _require_stage_outputs(manifest, "score", consumed)
    ingest_files = [_train_path(manifest)] + [
        _eval_path(manifest, spec.name) for spec in manifest.eval_corpora
    ]
    inputs.update(_require_stage_outputs(manifest, "ingest", ingest_files))

    train_lookup = _load_train_lookup(manifest)
    outputs: list[Path] = []
    per_dataset = {}
    for spec in manifest.eval_corpora:
        matches = read_matches(_matches_path(manifest, spec.name))
        corpus = _load_eval_corpus(manifest, spec.name)
        assignments = assign_subsets(matches, corpus, train_lookup, manifest.filter)
        write_subsets(_subsets_path(manifest, spec.name), assignments)
        outputs.append(_subsets_path(manifest, spec.name))
        per_dataset[spec.name] = (matches, corpus)

    calibration = calibration_report(
        per_dataset,
        train_lookup,
        candidate_T=manifest.filter.threshold_T,
        k_review=manifest.filter.k_review,
        truncate_chars=manifest.truncate_chars,
    )
    calib_json = out_dir / "calibration.json"
    calib_json.write_text(
        json.dumps(calibration, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    calib_md = out_dir / "calibration.md"
    calib_md.write_text(render_calibration_markdown(calibration), encoding="utf-8")
    outputs.extend([calib_json, calib_md])
    _write_meta(manifest, "filter", inputs, outputs, started)
    log.info("filter: T=%s", manifest.filter.threshold_T)


def stage_evaluate(manifest: RunManifest) -> None:
    started = time.perf_counter()
    out_dir = _stage_dir(manifest, "evaluate")
    if not manifest.predictions:
        raise AuditError("no prediction files configured in the manifest")
    ingest_files = [_eval_path(manifest, spec.name) for spec in manifest.eval_corpora]
    inputs = _require_stage_outputs(manifest, "ingest", ingest_files)
    subset_files = [_subsets_path(manifest, spec.name) for spec in manifest.eval_corpora]
    inputs.update(_require_stage_outputs(manifest, "filter", subset_files))

    by_dataset: dict[str, list[PredictionSpec]] = {}
    for spec in manifest.predictions:
        by_dataset.setdefault(spec.dataset, []).append(spec)
    known = {spec.name for spec in manifest.eval_corpora}
    for dataset in by_dataset:
        if dataset not in known:
            raise AuditError(f"predictions reference unknown eval dataset {dataset!r}")

    all_scores: list[SubsetScore] = []
    missing: dict[str, dict[str, int]] = {}
    for spec in manifest.eval_corpora:
        if spec.name not in by_dataset:
            log.warning("no predictions for dataset %s; skipping", spec.name)
            continue
        corpus = _load_eval_corpus(manifest, spec.name)
        assignments = read_subsets(_subsets_path(manifest, spec.name))
        records = []
        for pred_spec in sorted(by_dataset[spec.name], key=lambda p: p.model_tag):
            inputs[str(pred_spec.path)] = file_digest(pred_spec.path)
            records.extend(read_prediction_file(pred_spec.path, pred_spec.model_tag))
        scores, missing_counts = evaluate_runs(
            records, corpus, spec.metric, assignments, allow_missing=manifest.allow_missing
        )
        all_scores.extend(scores)
        if missing_counts:
            missing[spec.name] = missing_counts

    payload = {
        "scores": [
            {
                "model_tag": s.model_tag,
                "dataset": s.dataset,
                "subset": s.subset,
                "metric": s.metric,
                "mean_score": round(s.mean_score, 6),
                "n": s.n,
            }
            for s in all_scores
        ],
        "missing": missing,
    }
    scores_path = out_dir / "scores.json"
    scores_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _write_meta(manifest, "evaluate", inputs, [scores_path], started)
    log.info("evaluate: %d subset scores", len(all_scores))


def stage_compare(manifest: RunManifest) -> None:
    started = time.perf_counter()
    out_dir = _stage_dir(manifest, "compare")
    scores_path = manifest.output_dir / "evaluate" / "scores.json"
    inputs = _require_stage_outputs(manifest, "evaluate", [scores_path])
    payload = json.loads(scores_path.read_text(encoding="utf-8"))
    scores = [
        SubsetScore(
            model_tag=s["model_tag"],
            dataset=s["dataset"],
            subset=s["subset"],
            metric=s["metric"],
            mean_score=s["mean_score"],
            n=s["n"],
        )
        for s in payload["scores"]
    ]
    family_a, family_b = manifest.families or (None, None)
    comparisons = compare_families(scores, family_a=family_a, family_b=family_b)
    records = comparison_records(comparisons)
    json_path = out_dir / "comparison.json"
    json_path.write_text(json.dumps(records, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    csv_path = out_dir / "comparison.csv"
    csv_path.write_text(render_comparison_csv(comparisons), encoding="utf-8")
    md_path = out_dir / "comparison.md"
    md_path.write_text(render_comparison_markdown(comparisons), encoding="utf-8")
    _write_meta(manifest, "compare", inputs, [json_path, csv_path, md_path], started)
    log.info("compare: %d comparisons", len(comparisons))


def stage_report(manifest: RunManifest) -> None:
    started = time.perf_counter()
    out_dir = _stage_dir(manifest, "report")
    match_files = [_matches_path(manifest, spec.name) for spec in manifest.eval_corpora]
    inputs = _require_stage_outputs(manifest, "score", match_files)
    subset_files = [_subsets_path(manifest, spec.name) for spec in manifest.eval_corpora]
    inputs.update(_require_stage_outputs(manifest, "filter", subset_files))
    ingest_files = [_train_path(manifest)] + [
        _eval_path(manifest, spec.name) for spec in manifest.eval_corpora
    ]
    inputs.update(_require_stage_outputs(manifest, "ingest", ingest_files))

    train_lookup = _load_train_lookup(manifest)
    assignments_by_dataset = {}
    pairs_input = {}
    divergence_by_dataset = {}
    for spec in manifest.eval_corpora:
        matches = read_matches(_matches_path(manifest, spec.name))
        corpus = _load_eval_corpus(manifest, spec.name)
        assignments = read_subsets(_subsets_path(manifest, spec.name))
        assignments_by_dataset[spec.name] = assignments
        pairs_input[spec.name] = (matches, assignments, {s.id: s for s in corpus.samples})
        divergence_by_dataset[spec.name] = baseline_comparison(
            matches,
            corpus,
            train_lookup,
            n=manifest.ngram_n,
            threshold=manifest.filter.threshold_T,
        )

    counts = counts_rows(assignments_by_dataset)
    pairs = most_similar_pairs(pairs_input, train_lookup, truncate_chars=manifest.truncate_chars)
    divergence = divergence_summary(divergence_by_dataset, manifest.ngram_n)

    comparison_path = manifest.output_dir / "compare" / "comparison.json"
    comparison = None
    if comparison_path.exists():
        inputs.update(_require_stage_outputs(manifest, "compare", [comparison_path]))
        comparison = json.loads(comparison_path.read_text(encoding="utf-8"))

    report = {
        "threshold_T": manifest.filter.threshold_T,
        "counts": counts,
        "comparison": comparison,
        "most_similar_pairs": pairs,
        "divergence": divergence,
    }
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    sections = [
        "# Contamination audit report",
        "",
        f"Similarity threshold T = {manifest.filter.threshold_T}; "
        f"subset rules: Least Similar = top-1 score under T, Unmemorisable = "
        "Least Similar with no answer-token overlap against the top-1 match.",
        "",
        "## Subset sample counts",
        "",
        render_counts_markdown(counts),
    ]
    if comparison is not None:
        md_comparison = (manifest.output_dir / "compare" / "comparison.md").read_text(
            encoding="utf-8"
        )
        sections += ["## Model family comparison", "", md_comparison]
    sections += [render_pairs_markdown(pairs), render_divergence_markdown(divergence)]
    md_path = out_dir / "report.md"
    md_path.write_text("\n".join(sections), encoding="utf-8")
    _write_meta(manifest, "report", inputs, [json_path, md_path], started)
    log.info("report: written to %s", out_dir)


def stage_run(manifest: RunManifest) -> None:
    stage_ingest(manifest)
    stage_embed(manifest)
    stage_score(manifest)
    stage_filter(manifest)
    if manifest.predictions:
        stage_evaluate(manifest)
        stage_compare(manifest)
    else:
        log.info("run: no predictions configured; skipping evaluate/compare")
    stage_report(manifest)


# ---------------------------------------------------------------------------
# Entry point

_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "embed": stage_embed,
    "score": stage_score,
    "filter": stage_filter,
    "evaluate": stage_evaluate,
    "compare": stage_compare,
    "report": stage_report,
    "run": stage_run,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", required=True, help="path to the run manifest JSON")
    common.add_argument("--output", help="override the manifest output directory")
    common.add_argument("--threshold", type=float, help="similarity threshold T")
    common.add_argument("--k", type=int, help="top-k matches per eval sample")
    common.add_argument("--provider", help="override the embedding provider kind")
    common.add_argument("--ngram-n", type=int, dest="ngram_n", help="n-gram size for the baseline")
    common.add_argument("--threads", type=int, help="worker threads for the top-k search")
    common.add_argument(
        "--allow-missing",
        action="store_const",
        const=True,
        dest="allow_missing",
        help="exclude samples without predictions instead of failing",
    )
    parser = argparse.ArgumentParser(
        prog="overlap-audit",
        description="Contamination audit pipeline over QA corpora.",
    )
    parser.add_argument("--version", action="version", version=f"overlap-audit {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    help_text = {
        "ingest": "parse, de-duplicate and pre-filter the corpora",
        "embed": "compute and store prompt/answer vectors",
        "score": "exact top-k similarity search",
        "filter": "derive Least Similar / Unmemorisable subsets",
        "evaluate": "score prediction files per subset",
        "compare": "cross-run family comparison with confidence intervals",
        "report": "render the audit report",
        "run": "run every stage in order",
    }
    for command in (*STAGES, "run"):
        subparsers.add_parser(command, parents=[common], help=help_text[command])
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    overrides = {
        "output": args.output,
        "threshold": args.threshold,
        "k": args.k,
        "provider": args.provider,
        "ngram_n": args.ngram_n,
        "threads": args.threads,
        "allow_missing": args.allow_missing,
    }
    try:
        manifest = load_manifest(args.manifest, overrides)
        with output_lock(manifest.output_dir):
            _STAGE_FUNCS[args.command](manifest)
    except Exception as exc:  # noqa: BLE001 - stage failures become error JSON
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
