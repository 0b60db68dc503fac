"""Markdown/CSV/JSON rendering of the audit artifacts: subset count tables,
family comparison tables, most-similar-pair listings, calibration review and
the n-gram divergence report."""

from __future__ import annotations

import io
from dataclasses import asdict

from .corpus import Sample, format_prompt
from .errors import ConsistencyError
from .filtering import SubsetAssignment
from .similarity import BaselineRow, SimilarityMatch
from .stats import RunComparison

SUBSET_LABELS = {
    "all": "All",
    "least_similar": "Least Similar",
    "unmemorisable": "Unmemorisable",
}


def _truncate(text: str, limit: int) -> str:
    return text if len(text) <= limit else text[: limit - 3] + "..."


def counts_rows(per_dataset: dict[str, list[SubsetAssignment]]) -> list[dict]:
    rows = []
    for dataset in sorted(per_dataset):
        assignments = per_dataset[dataset]
        rows.append(
            {
                "dataset": dataset,
                "all": len(assignments),
                "least_similar": sum(a.in_least_similar for a in assignments),
                "unmemorisable": sum(a.in_unmemorisable for a in assignments),
            }
        )
    return rows


def render_counts_markdown(rows: list[dict]) -> str:
    out = ["| Eval Dataset | All | Least Similar | Unmemorisable |", "| --- | ---: | ---: | ---: |"]
    for row in rows:
        out.append(
            f"| {row['dataset']} | {row['all']} | {row['least_similar']} | {row['unmemorisable']} |"
        )
    return "\n".join(out) + "\n"


def render_comparison_markdown(comparisons: list[RunComparison]) -> str:
    """Wide comparison table: one row per dataset, All/Least Similar/
    Unmemorisable column groups, significant changes in bold."""
    if not comparisons:
        return "(no comparisons)\n"
    family_a = comparisons[0].family_a
    family_b = comparisons[0].family_b
    by_dataset: dict[str, dict[str, RunComparison]] = {}
    for comparison in comparisons:
        by_dataset.setdefault(comparison.dataset, {})[comparison.subset] = comparison
    header = ["Eval Dataset"]
    for subset in ("all", "least_similar", "unmemorisable"):
        label = SUBSET_LABELS[subset]
        header += [f"{family_a} ({label})", f"{family_b} ({label})", f"%Change ({label})"]
    out = ["| " + " | ".join(header) + " |", "|" + " --- |" * len(header)]
    for dataset in sorted(by_dataset):
        cells = [dataset]
        for subset in ("all", "least_similar", "unmemorisable"):
            comparison = by_dataset[dataset].get(subset)
            if comparison is None:
                cells += ["-", "-", "-"]
                continue
            pct = f"{comparison.pct_change:.1f}"
            if comparison.significant:
                pct = f"**{pct}**"
            cells += [f"{comparison.mean_a:.1f}", f"{comparison.mean_b:.1f}", pct]
        out.append("| " + " | ".join(cells) + " |")
    return "\n".join(out) + "\n"


def render_comparison_csv(comparisons: list[RunComparison]) -> str:
    buf = io.StringIO()
    buf.write(
        "dataset,subset,metric,family_a,mean_a,std_a,family_b,mean_b,std_b,"
        "pct_change,ci_low,ci_high,significant\n"
    )
    for c in comparisons:
        buf.write(
            f"{c.dataset},{c.subset},{c.metric},{c.family_a},{c.mean_a:.6f},{c.std_a:.6f},"
            f"{c.family_b},{c.mean_b:.6f},{c.std_b:.6f},{c.pct_change:.6f},"
            f"{c.ci_low:.6f},{c.ci_high:.6f},{str(c.significant).lower()}\n"
        )
    return buf.getvalue()


def comparison_records(comparisons: list[RunComparison]) -> list[dict]:
    records = []
    for c in comparisons:
        record = asdict(c)
        record["means_a"] = [round(x, 6) for x in c.means_a]
        record["means_b"] = [round(x, 6) for x in c.means_b]
        for key in ("mean_a", "mean_b", "std_a", "std_b", "pct_change", "ci_low", "ci_high"):
            record[key] = round(record[key], 6)
        records.append(record)
    return records


def most_similar_pairs(
    per_dataset: dict[str, tuple[list[SimilarityMatch], list[SubsetAssignment], dict[str, Sample]]],
    train_lookup: dict[str, Sample],
    truncate_chars: int = 200,
) -> dict[str, list[dict]]:
    """Most similar top-1 pair per dataset, within each subset scope."""
    listings: dict[str, list[dict]] = {"all": [], "least_similar": [], "unmemorisable": []}
    for dataset in sorted(per_dataset):
        matches, assignments, eval_lookup = per_dataset[dataset]
        assignment_by_id = {a.eval_id: a for a in assignments}
        for scope in listings:
            best: tuple[float, str] | None = None
            for match in matches:
                assignment = assignment_by_id.get(match.eval_id)
                if assignment is None:
                    raise ConsistencyError(f"eval id {match.eval_id!r} has no subset assignment")
                if scope == "least_similar" and not assignment.in_least_similar:
                    continue
                if scope == "unmemorisable" and not assignment.in_unmemorisable:
                    continue
                score = match.matches[0].score
                if best is None or score > best[0]:
                    best = (score, match.eval_id)
            if best is None:
                continue
            _, eval_id = best
            assignment = assignment_by_id[eval_id]
            eval_sample = eval_lookup[eval_id]
            train_sample = train_lookup.get(assignment.top1_train_id)
            if train_sample is None:
                raise ConsistencyError(
                    f"train id {assignment.top1_train_id!r} not found in train corpus"
                )
            listings[scope].append(
                {
                    "dataset": dataset,
                    "eval_id": eval_id,
                    "eval_text": _truncate(format_prompt(eval_sample), truncate_chars),
                    "eval_answer": eval_sample.answer,
                    "train_id": assignment.top1_train_id,
                    "train_text": _truncate(format_prompt(train_sample), truncate_chars),
                    "train_answer": train_sample.answer,
                    "score": round(assignment.top1_score, 6),
                }
            )
    return listings


def render_pairs_markdown(listings: dict[str, list[dict]]) -> str:
    out = []
    for scope in ("all", "least_similar", "unmemorisable"):
        rows = listings.get(scope, [])
        out.append(f"### Most similar pair per dataset: {SUBSET_LABELS[scope]} samples")
        out.append("")
        if not rows:
            out.append("(no qualifying samples)")
            out.append("")
            continue
        out.append("| Eval Dataset | Eval Sample | Most Similar Train Sample |")
        out.append("| --- | --- | --- |")
        for row in rows:
            eval_cell = f"{row['eval_text']} *{row['eval_answer']}*"
            train_cell = f"{row['train_text']} *{row['train_answer']}* ({row['score']:.2f})"
            out.append(f"| {row['dataset']} | {_md_escape(eval_cell)} | {_md_escape(train_cell)} |")
        out.append("")
    return "\n".join(out) + "\n"


def render_calibration_markdown(report: dict) -> str:
    out = [
        f"## Threshold calibration review (candidate T = {report['candidate_T']}, "
        f"top {report['k_review']} pairs under T per dataset)",
        "",
    ]
    for dataset in sorted(report["datasets"]):
        rows = report["datasets"][dataset]
        out.append(f"### {dataset}")
        out.append("")
        if not rows:
            out.append("(no pairs under the candidate threshold)")
            out.append("")
            continue
        out.append("| Eval Sample | Most Similar Train Sample |")
        out.append("| --- | --- |")
        for row in rows:
            eval_cell = f"{row['eval_text']} *{row['eval_answer']}*"
            train_cell = f"{row['train_text']} *{row['train_answer']}* ({row['score']:.2f})"
            out.append(f"| {_md_escape(eval_cell)} | {_md_escape(train_cell)} |")
        out.append("")
    return "\n".join(out) + "\n"


def divergence_summary(per_dataset: dict[str, list[BaselineRow]], n: int) -> dict:
    summary: dict = {"ngram_n": n, "datasets": {}}
    for dataset in sorted(per_dataset):
        rows = per_dataset[dataset]
        divergent = [r for r in rows if r.divergent]
        summary["datasets"][dataset] = {
            "samples": len(rows),
            "ngram_hits": sum(r.ngram_hit for r in rows),
            "divergent": len(divergent),
            "divergent_rows": [
                {
                    "eval_id": r.eval_id,
                    "train_id": r.train_id,
                    "score": round(r.score, 6),
                    "max_shared_len": r.max_shared_len,
                }
                for r in sorted(divergent, key=lambda r: (-r.score, r.eval_id))
            ],
        }
    return summary


def render_divergence_markdown(summary: dict) -> str:
    n = summary["ngram_n"]
    out = [
        f"## Similarity vs contiguous {n}-gram baseline",
        "",
        "Divergent samples score at or above the threshold against their top-1",
        f"training match while sharing no contiguous {n}-token run with it: overlap",
        "the n-gram detector cannot see.",
        "",
        "| Eval Dataset | Samples | With n-gram hit | Divergent |",
        "| --- | ---: | ---: | ---: |",
    ]
    for dataset in sorted(summary["datasets"]):
        entry = summary["datasets"][dataset]
        out.append(
            f"| {dataset} | {entry['samples']} | {entry['ngram_hits']} | {entry['divergent']} |"
        )
    out.append("")
    return "\n".join(out) + "\n"


def _md_escape(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ")
