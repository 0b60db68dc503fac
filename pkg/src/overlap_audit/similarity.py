"""Similarity scoring and exact top-k retrieval.

The score for an (evaluation, training) pair is the mean of the prompt-side
and answer-side cosines, scaled by 100, so it lives in [-100, 100]. Top-k
search is exact brute force over blocked f64 matrix products; ties are broken
by ascending train corpus index and results are bitwise identical for any
thread count or block size.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .corpus import PreparedCorpus, Sample, format_prompt, normalize_text
from .embedding import EmbeddedSample
from .errors import AuditError, ConsistencyError

log = logging.getLogger(__name__)


class MatchEntry(NamedTuple):
    train_id: str
    q_cos: float
    a_cos: float
    score: float


@dataclass(frozen=True)
class SimilarityMatch:
    """Top-k training matches for one evaluation sample, best first."""

    eval_id: str
    matches: tuple[MatchEntry, ...]


@dataclass(frozen=True)
class NgramHit:
    """A maximal contiguous token run shared by two texts."""

    n: int
    shared_ngram: tuple[str, ...]
    eval_pos: int
    train_pos: int
    eval_id: str = ""
    train_id: str = ""


@dataclass(frozen=True)
class BaselineRow:
    """Per-eval-sample comparison of the similarity detector against the
    contiguous n-gram detector, both applied to the top-1 training match."""

    eval_id: str
    train_id: str
    score: float
    ngram_hit: bool
    max_shared_len: int
    divergent: bool


def similarity_score(e: EmbeddedSample, t: EmbeddedSample) -> float:
    """Mean of q-side and a-side cosines, scaled by 100 (f64 accumulation).

    Cosines are clamped to [-1, 1] to absorb float32 normalization round-off,
    keeping scores inside [-100, 100].
    """
    if e.dimension != t.dimension:
        raise AuditError(f"dimension mismatch: {e.dimension} vs {t.dimension}")
    q_cos = _clamp_cos(float(np.dot(e.q_vec.astype(np.float64), t.q_vec.astype(np.float64))))
    a_cos = _clamp_cos(float(np.dot(e.a_vec.astype(np.float64), t.a_vec.astype(np.float64))))
    return (q_cos + a_cos) * 50.0


def _clamp_cos(x: float) -> float:
    return -1.0 if x < -1.0 else (1.0 if x > 1.0 else x)


def _stack(samples: list[EmbeddedSample], side: str) -> np.ndarray:
    return np.stack([getattr(s, side) for s in samples]).astype(np.float32, copy=False)


def top_k_matches(
    evals: list[EmbeddedSample],
    trains: list[EmbeddedSample],
    k: int,
    threads: int = 1,
    eval_block_rows: int = 512,
    train_block_rows: int = 8192,
) -> list[SimilarityMatch]:
    """Exact top-k most similar training samples for every evaluation sample."""
    if not evals or not trains:
        raise AuditError("top_k_matches requires non-empty eval and train corpora")
    dim = evals[0].dimension
    for s in evals + trains:
        if s.dimension != dim:
            raise AuditError(f"sample {s.sample_id!r}: dimension {s.dimension} != {dim}")
    return top_k_from_arrays(
        [s.sample_id for s in evals],
        _stack(evals, "q_vec"),
        _stack(evals, "a_vec"),
        [s.sample_id for s in trains],
        _stack(trains, "q_vec"),
        _stack(trains, "a_vec"),
        k,
        threads=threads,
        eval_block_rows=eval_block_rows,
        train_block_rows=train_block_rows,
    )


def top_k_from_arrays(
    eval_ids: list[str],
    eval_q: np.ndarray,
    eval_a: np.ndarray,
    train_ids: list[str],
    train_q: np.ndarray,
    train_a: np.ndarray,
    k: int,
    threads: int = 1,
    eval_block_rows: int = 512,
    train_block_rows: int = 8192,
) -> list[SimilarityMatch]:
    """Array-level exact top-k search (row i of each matrix = sample i).

    Block sizes tune memory and speed only; results are identical to the naive
    double loop with ties broken by ascending train index. Requesting k larger
    than the train corpus returns all matches with a warning.
    """
    if k < 1:
        raise AuditError("k must be >= 1")
    n_eval, n_train = eval_q.shape[0], train_q.shape[0]
    if n_eval == 0 or n_train == 0:
        raise AuditError("top-k search requires non-empty eval and train corpora")
    if k > n_train:
        log.warning("k=%d exceeds train corpus size %d; returning all matches", k, n_train)
    kk = min(k, n_train)

    # f64 once per train block: the per-pair dot products are then independent
    # of eval blocking and thread count.
    train_blocks = [
        (
            start,
            train_q[start : start + train_block_rows].astype(np.float64),
            train_a[start : start + train_block_rows].astype(np.float64),
        )
        for start in range(0, n_train, train_block_rows)
    ]

    block_starts = list(range(0, n_eval, eval_block_rows))
    results: list[list[SimilarityMatch] | None] = [None] * len(block_starts)

    def run_block(bi: int) -> None:
        lo = block_starts[bi]
        hi = min(lo + eval_block_rows, n_eval)
        results[bi] = _search_eval_block(
            eval_ids[lo:hi],
            eval_q[lo:hi].astype(np.float64),
            eval_a[lo:hi].astype(np.float64),
            train_ids,
            train_blocks,
            kk,
        )

    if threads > 1 and len(block_starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_block, range(len(block_starts))))
    else:
        for bi in range(len(block_starts)):
            run_block(bi)

    out: list[SimilarityMatch] = []
    for block in results:
        assert block is not None
        out.extend(block)
    return out


def _search_eval_block(
    ids: list[str],
    eq: np.ndarray,
    ea: np.ndarray,
    train_ids: list[str],
    train_blocks: list[tuple[int, np.ndarray, np.ndarray]],
    kk: int,
) -> list[SimilarityMatch]:
    n_rows = eq.shape[0]
    n_train = sum(tq.shape[0] for _, tq, _ in train_blocks)
    rows = np.arange(n_rows)[:, None]
    run_s = np.full((n_rows, kk), -np.inf)
    run_q = np.zeros((n_rows, kk))
    run_a = np.zeros((n_rows, kk))
    run_i = np.full((n_rows, kk), n_train, dtype=np.int64)
    # Highest score discarded by any per-block partition; a discarded candidate
    # can only belong in the final top-k through an exact tie, which the
    # per-row fallback below re-resolves exhaustively.
    max_dropped = np.full(n_rows, -np.inf)

    for offset, tq, ta in train_blocks:
        qs = eq @ tq.T
        as_ = ea @ ta.T
        np.clip(qs, -1.0, 1.0, out=qs)
        np.clip(as_, -1.0, 1.0, out=as_)
        scores = (qs + as_) * 50.0
        width = scores.shape[1]
        c = min(kk, width)
        if c < width:
            part = np.argpartition(-scores, c - 1, axis=1)
            keep = part[:, :c]
            dropped = np.take_along_axis(scores, part[:, c:], axis=1).max(axis=1)
            max_dropped = np.maximum(max_dropped, dropped)
        else:
            keep = np.broadcast_to(np.arange(width), (n_rows, width))
        cand_s = np.take_along_axis(scores, keep, axis=1)
        cand_q = np.take_along_axis(qs, keep, axis=1)
        cand_a = np.take_along_axis(as_, keep, axis=1)
        cand_i = (keep + offset).astype(np.int64)

        all_s = np.hstack([run_s, cand_s])
        all_q = np.hstack([run_q, cand_q])
        all_a = np.hstack([run_a, cand_a])
        all_i = np.hstack([run_i, cand_i])
        order = np.lexsort((all_i, -all_s), axis=1)[:, :kk]
        run_s = np.take_along_axis(all_s, order, axis=1)
        run_q = np.take_along_axis(all_q, order, axis=1)
        run_a = np.take_along_axis(all_a, order, axis=1)
        run_i = np.take_along_axis(all_i, order, axis=1)

    suspects = np.nonzero(max_dropped >= run_s[:, -1])[0]
    for r in suspects:
        qs_full = np.concatenate([tq @ eq[r] for _, tq, _ in train_blocks])
        as_full = np.concatenate([ta @ ea[r] for _, _, ta in train_blocks])
        np.clip(qs_full, -1.0, 1.0, out=qs_full)
        np.clip(as_full, -1.0, 1.0, out=as_full)
        s_full = (qs_full + as_full) * 50.0
        order = np.lexsort((np.arange(n_train), -s_full))[:kk]
        run_s[r] = s_full[order]
        run_q[r] = qs_full[order]
        run_a[r] = as_full[order]
        run_i[r] = order

    return [
        SimilarityMatch(
            eval_id=ids[r],
            matches=tuple(
                MatchEntry(
                    train_id=train_ids[run_i[r, j]],
                    q_cos=float(run_q[r, j]),
                    a_cos=float(run_a[r, j]),
                    score=float(run_s[r, j]),
                )
                for j in range(kk)
            ),
        )
        for r in range(n_rows)
    ]


def ngram_overlaps(eval_text: str, train_text: str, n: int = 8) -> list[NgramHit]:
    """All maximal shared contiguous token runs of length >= n.

    Tokens are whitespace tokens of the normalized texts. A shared run of
    length m >= n is reported once as a single length-m hit, not as its m-n+1
    constituent n-grams.
    """
    if n < 1:
        raise AuditError("n must be >= 1")
    a_toks = normalize_text(eval_text).split()
    b_toks = normalize_text(train_text).split()
    if len(a_toks) < n or len(b_toks) < n:
        return []
    index: dict[tuple[str, ...], list[int]] = {}
    for j in range(len(b_toks) - n + 1):
        index.setdefault(tuple(b_toks[j : j + n]), []).append(j)
    hits: list[NgramHit] = []
    for i in range(len(a_toks) - n + 1):
        positions = index.get(tuple(a_toks[i : i + n]))
        if not positions:
            continue
        for j in positions:
            if i > 0 and j > 0 and a_toks[i - 1] == b_toks[j - 1]:
                continue  # interior window of a run already reported
            end_a, end_b = i + n, j + n
            while end_a < len(a_toks) and end_b < len(b_toks) and a_toks[end_a] == b_toks[end_b]:
                end_a += 1
                end_b += 1
            hits.append(
                NgramHit(
                    n=end_a - i,
                    shared_ngram=tuple(a_toks[i:end_a]),
                    eval_pos=i,
                    train_pos=j,
                )
            )
    return hits


def sample_full_text(sample: Sample) -> str:
    return f"{format_prompt(sample)} {sample.answer}"


def _samples_of(corpus) -> list[Sample]:
    return list(corpus.samples) if isinstance(corpus, PreparedCorpus) else list(corpus)


def baseline_comparison(
    matches: list[SimilarityMatch],
    eval_corpus,
    train_lookup: dict[str, Sample],
    n: int = 8,
    threshold: float = 60.0,
) -> list[BaselineRow]:
    """Compare the similarity detector against contiguous n-gram overlap.

    A row is divergent when the top-1 score is at or above the threshold (the
    complement of Least Similar) while no shared n-gram exists: overlap the
    n-gram baseline cannot see.
    """
    eval_lookup = {s.id: s for s in _samples_of(eval_corpus)}
    rows: list[BaselineRow] = []
    for match in matches:
        if not match.matches:
            raise ConsistencyError(f"eval sample {match.eval_id!r} has an empty match list")
        top = match.matches[0]
        eval_sample = eval_lookup.get(match.eval_id)
        if eval_sample is None:
            raise ConsistencyError(f"eval id {match.eval_id!r} not found in eval corpus")
        train_sample = train_lookup.get(top.train_id)
        if train_sample is None:
            raise ConsistencyError(f"train id {top.train_id!r} not found in train corpus")
        hits = ngram_overlaps(sample_full_text(eval_sample), sample_full_text(train_sample), n=n)
        rows.append(
            BaselineRow(
                eval_id=match.eval_id,
                train_id=top.train_id,
                score=top.score,
                ngram_hit=bool(hits),
                max_shared_len=max((h.n for h in hits), default=0),
                divergent=top.score >= threshold and not hits,
            )
        )
    return rows


def _fmt6(x: float) -> str:
    return f"{x:.6f}"


def write_matches(path, matches: Iterable[SimilarityMatch]) -> None:
    """JSONL match file; all scores serialized with 6 decimal places."""
    with open(path, "w", encoding="utf-8") as fh:
        for match in matches:
            entries = ", ".join(
                '{"train_id": %s, "q_cos": %s, "a_cos": %s, "score": %s}'
                % (json.dumps(m.train_id), _fmt6(m.q_cos), _fmt6(m.a_cos), _fmt6(m.score))
                for m in match.matches
            )
            fh.write('{"eval_id": %s, "matches": [%s]}\n' % (json.dumps(match.eval_id), entries))


def read_matches(path) -> list[SimilarityMatch]:
    matches: list[SimilarityMatch] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            matches.append(
                SimilarityMatch(
                    eval_id=record["eval_id"],
                    matches=tuple(
                        MatchEntry(m["train_id"], m["q_cos"], m["a_cos"], m["score"])
                        for m in record["matches"]
                    ),
                )
            )
    return matches
