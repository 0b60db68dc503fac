"""Cross-run aggregation: per-family means and stds over seeds, confidence
intervals on the difference of family means, and significance flags."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from scipy import stats as scipy_stats

from .errors import AuditError
from .evaluation import SUBSET_ORDER, SubsetScore, family_of_tag

log = logging.getLogger(__name__)

CI_METHODS = ("welch", "pooled", "normal_z")


@dataclass(frozen=True)
class RunComparison:
    dataset: str
    subset: str
    metric: str
    family_a: str
    family_b: str
    means_a: tuple[float, ...]
    means_b: tuple[float, ...]
    mean_a: float
    mean_b: float
    std_a: float
    std_b: float
    pct_change: float
    ci_low: float
    ci_high: float
    significant: bool


def summarize(per_run_scores: list[float]) -> tuple[float, float]:
    """(mean, sample standard deviation) over runs; needs at least two runs."""
    n = len(per_run_scores)
    if n < 2:
        raise AuditError("need >=2 runs")
    mean = math.fsum(per_run_scores) / n
    variance = math.fsum((x - mean) ** 2 for x in per_run_scores) / (n - 1)
    return mean, math.sqrt(variance)


def interval_excludes_zero(low: float, high: float) -> bool:
    return low > 0.0 or high < 0.0


def diff_ci(
    scores_a: list[float],
    scores_b: list[float],
    level: float = 0.95,
    method: str = "welch",
) -> tuple[float, float]:
    """Confidence interval on (mean_a - mean_b).

    Default is the Welch unequal-variance t interval with Welch-Satterthwaite
    degrees of freedom; "pooled" and "normal_z" are available for matching
    other conventions. Zero variance in both groups with equal means yields
    the degenerate interval (0, 0) with a warning.
    """
    if not 0.0 < level < 1.0:
        raise AuditError(f"level must be in (0, 1), got {level}")
    if method not in CI_METHODS:
        raise AuditError(f"unknown CI method {method!r}")
    n_a, n_b = len(scores_a), len(scores_b)
    mean_a, std_a = summarize(scores_a)
    mean_b, std_b = summarize(scores_b)
    center = mean_a - mean_b
    var_a, var_b = std_a**2, std_b**2
    if var_a == 0.0 and var_b == 0.0 and mean_a == mean_b:
        log.warning("both groups have zero variance and equal means; degenerate interval")
        return (0.0, 0.0)
    quantile = (1.0 + level) / 2.0
    if method == "welch":
        se = math.sqrt(var_a / n_a + var_b / n_b)
        df = (var_a / n_a + var_b / n_b) ** 2 / (
            (var_a / n_a) ** 2 / (n_a - 1) + (var_b / n_b) ** 2 / (n_b - 1)
        )
        crit = float(scipy_stats.t.ppf(quantile, df))
    elif method == "pooled":
        df = n_a + n_b - 2
        pooled_var = ((n_a - 1) * var_a + (n_b - 1) * var_b) / df
        se = math.sqrt(pooled_var * (1.0 / n_a + 1.0 / n_b))
        crit = float(scipy_stats.t.ppf(quantile, df))
    else:
        se = math.sqrt(var_a / n_a + var_b / n_b)
        crit = float(scipy_stats.norm.ppf(quantile))
    return (center - crit * se, center + crit * se)


def compare_families(
    scores: list[SubsetScore],
    family_a: str | None = None,
    family_b: str | None = None,
    level: float = 0.95,
    method: str = "welch",
) -> list[RunComparison]:
    """One comparison per (dataset, subset): family_a as baseline, family_b as
    intervention. Families default to the two distinct families present, in
    sorted order. Run counts must match across families."""
    grouped: dict[tuple[str, str, str], dict[str, list[tuple[str, float]]]] = {}
    for score in scores:
        family = family_of_tag(score.model_tag)
        cell = grouped.setdefault((score.dataset, score.subset, score.metric), {})
        cell.setdefault(family, []).append((score.model_tag, score.mean_score))

    families = sorted({family_of_tag(s.model_tag) for s in scores})
    if family_a is None or family_b is None:
        if len(families) != 2:
            raise AuditError(
                f"expected exactly two model families, found {families}; "
                "pass family_a/family_b explicitly"
            )
        family_a, family_b = families
    for family in (family_a, family_b):
        if family not in families:
            raise AuditError(f"family {family!r} has no scores")

    run_counts = {
        family: len({s.model_tag for s in scores if family_of_tag(s.model_tag) == family})
        for family in (family_a, family_b)
    }
    if run_counts[family_a] != run_counts[family_b]:
        raise AuditError(
            f"unbalanced run counts: {family_a} has {run_counts[family_a]}, "
            f"{family_b} has {run_counts[family_b]}"
        )

    comparisons: list[RunComparison] = []
    for dataset, subset, metric in sorted(
        grouped, key=lambda key: (key[0], SUBSET_ORDER.index(key[1]), key[2])
    ):
        cell = grouped[(dataset, subset, metric)]
        if family_a not in cell or family_b not in cell:
            continue
        runs_a = [v for _, v in sorted(cell[family_a])]
        runs_b = [v for _, v in sorted(cell[family_b])]
        if len(runs_a) != len(runs_b):
            family = family_a if len(runs_a) < len(runs_b) else family_b
            raise AuditError(
                f"unbalanced run counts for {dataset}/{subset}: family {family!r}"
            )
        mean_a, std_a = summarize(runs_a)
        mean_b, std_b = summarize(runs_b)
        ci_low, ci_high = diff_ci(runs_a, runs_b, level=level, method=method)
        pct = (mean_b - mean_a) / mean_a * 100.0 if mean_a != 0.0 else math.nan
        comparisons.append(
            RunComparison(
                dataset=dataset,
                subset=subset,
                metric=metric,
                family_a=family_a,
                family_b=family_b,
                means_a=tuple(runs_a),
                means_b=tuple(runs_b),
                mean_a=mean_a,
                mean_b=mean_b,
                std_a=std_a,
                std_b=std_b,
                pct_change=pct,
                ci_low=ci_low,
                ci_high=ci_high,
                significant=interval_excludes_zero(ci_low, ci_high),
            )
        )
    return comparisons
