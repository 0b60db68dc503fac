#!/usr/bin/env python3
"""Generate the bundled toy corpora, prediction files and golden pipeline
artifacts under tests/data/toy/.

The corpus is synthetic but structured. Eval samples fall into planted groups:
near-copies of training samples (caught by both detectors), token-shuffled
twins (caught by the similarity score, invisible to contiguous n-grams),
low-similarity samples whose answer token still occurs in their closest
training sample (Least Similar but not Unmemorisable), and rare-answer noise
(Unmemorisable). Two model families x three seeds of predictions differ only
on the rc dataset, mimicking an intervention that helps one dataset and not
the other.

Regenerate after changing pipeline output formats:

    python scripts/make_toy_data.py --write-golden
"""

from __future__ import annotations

import argparse
import json
import random
import shutil
import sys
from pathlib import Path

TOY_DIR = Path(__file__).resolve().parent.parent / "tests" / "data" / "toy"

# training-side vocabulary
FILLER = (
    "team player game season quarter city river country score goal match crowd "
    "people group region light energy plant animal metal stone harvest market "
    "change system report value record study measure result summer winter "
    "bridge castle harbor valley meadow engine signal window garden street "
    "silver copper marble timber barley cotton velvet amber coral ivory "
    "captain farmer sailor miner weaver potter singer dancer runner keeper"
).split()

# eval-side vocabulary for noise questions, disjoint from FILLER
EVALWORDS = (
    "orbit comet nebula quasar photon proton neutron isotope lattice crystal "
    "glacier tundra savanna lagoon estuary plateau canyon dune reef atoll "
    "sonnet ballad fresco mosaic statue easel canvas palette chisel loom "
    "ledger invoice tariff quota surplus deficit audit budget escrow lien"
).split()

# rare answer words that never occur in any training text
RARE = (
    "zubrik quampol fenwick dorlat mizzen crellow vantor pilkra sodwen "
    "tarniok blesper fromund gensler hapvort ilmenor jaskell kronfeld"
).split()

MC_POOL = (
    "barometer seismograph thermometer anemometer compass telescope microscope "
    "sundial hourglass lodestone prism sextant astrolabe hygrometer altimeter "
    "voltmeter ammeter galvanometer chronometer theodolite"
).split()


def words(rng: random.Random, pool, n):
    return " ".join(rng.choice(pool) for _ in range(n))


def make_train_rc(rng: random.Random, n: int) -> list[dict]:
    rows = []
    for i in range(n):
        answer = rng.choice(FILLER if i % 3 else RARE[:4])
        rows.append(
            {
                "id": f"sq{i:03d}",
                "question": f"{words(rng, FILLER, 6)}?",
                # "water" is planted in every context: see the blocked eval group
                "context": f"{words(rng, FILLER, 22)} {answer} near the water "
                f"{words(rng, FILLER, 6)}.",
                "answer": answer,
            }
        )
    return rows


def make_train_mc(rng: random.Random, n: int) -> list[dict]:
    rows = []
    for i in range(n):
        options = rng.sample(MC_POOL, 4)
        rows.append(
            {
                "id": f"sci{i:03d}",
                "question": f"{words(rng, FILLER, 7)} near the water?",
                "options": options,
                "answer": options[rng.randrange(4)],
            }
        )
    return rows


def make_eval_rc(rng: random.Random, trains: list[dict]) -> list[dict]:
    rows = []
    # near-copies of training samples: high score plus shared 8-grams
    for j, train in enumerate(trains[:5]):
        perturbed = train["context"].split()
        perturbed[3] = "indeed"
        rows.append(
            {
                "id": f"d{j:03d}",
                "question": train["question"],
                "context": " ".join(perturbed),
                "answer": train["answer"],
            }
        )
    # same answer as a training sample, unrelated question: answer side alone
    # keeps these at or above the threshold
    for j, train in enumerate(trains[10:14]):
        rows.append(
            {
                "id": f"d1{j:02d}",
                "question": f"{words(rng, FILLER, 7)}?",
                "context": f"{words(rng, FILLER, 18)}.",
                "answer": train["answer"],
            }
        )
    # low similarity but the answer token occurs in every training context:
    # Least Similar, blocked from Unmemorisable by answer overlap
    for j in range(3):
        rows.append(
            {
                "id": f"d2{j:02d}",
                "question": f"{words(rng, EVALWORDS, 6)}?",
                "context": f"{words(rng, EVALWORDS, 16)}.",
                "answer": "water",
            }
        )
    # rare-answer noise: Least Similar and Unmemorisable
    for j in range(6):
        rows.append(
            {
                "id": f"d3{j:02d}",
                "question": f"{words(rng, EVALWORDS, 6)}?",
                "context": f"{words(rng, EVALWORDS, 16)}.",
                "answer": f"{rng.choice(RARE[8:])} {rng.choice(RARE[4:8])}",
            }
        )
    # one exact duplicate and one numeric answer; both removed by ingest
    rows.append(dict(rows[2]) | {"id": "d900"})
    rows.append(
        {
            "id": "d901",
            "question": f"{words(rng, FILLER, 6)}?",
            "context": f"{words(rng, FILLER, 15)}.",
            "answer": "19306",
        }
    )
    return rows


def make_eval_mc(rng: random.Random, trains: list[dict]) -> list[dict]:
    rows = []
    # token-shuffled twins: same bag of tokens, no shared 8-gram, same answer
    for j, train in enumerate(trains[:3]):
        tokens = train["question"].rstrip("?").split()
        rows.append(
            {
                "id": f"q{j:03d}",
                "question": " ".join(reversed(tokens)) + "?",
                "options": list(reversed(train["options"])),
                "answer": train["answer"],
            }
        )
    # low similarity but the answer token occurs in every training sample:
    # Least Similar, blocked from Unmemorisable by answer overlap
    for j in range(3):
        options = [f"{rng.choice(RARE[8:])} {rng.choice(RARE[4:8])}" for _ in range(3)] + ["water"]
        rng.shuffle(options)
        rows.append(
            {
                "id": f"q1{j:02d}",
                "question": f"{words(rng, EVALWORDS, 8)}?",
                "options": options,
                "answer": "water",
            }
        )
    # rare-answer noise: Least Similar and Unmemorisable
    for j in range(6):
        rare_option = f"{rng.choice(RARE[8:])} {rng.choice(RARE[4:8])}"
        options = rng.sample(MC_POOL, 3) + [rare_option]
        rng.shuffle(options)
        answer = rare_option
        rows.append(
            {
                "id": f"q2{j:02d}",
                "question": f"{words(rng, EVALWORDS, 8)}?",
                "options": options,
                "answer": answer,
            }
        )
    return rows


def write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def prepared_ids(rows: list[dict], drop_numeric: bool) -> list[str]:
    # mirrors ingest: de-duplicate on content, then drop numeric answers
    from overlap_audit.corpus import Sample, duplicate_key, infer_format, is_numeric_answer

    seen, kept = set(), []
    for row in rows:
        context = row.get("context")
        options = tuple(row["options"]) if row.get("options") else None
        sample = Sample(
            id=row["id"],
            dataset="toy",
            split="dev",
            question=row["question"],
            answer=row["answer"],
            context=context,
            options=options,
            format=infer_format(context, options),
        )
        key = duplicate_key(sample)
        if key in seen:
            continue
        seen.add(key)
        if drop_numeric and is_numeric_answer(row["answer"]):
            continue
        kept.append(row["id"])
    return kept


def make_predictions(
    rng: random.Random, rows: list[dict], ids: list[str], mc: bool, p_correct: float
) -> list[dict]:
    by_id = {row["id"]: row for row in rows}
    records = []
    for eval_id in ids:
        row = by_id[eval_id]
        if rng.random() < p_correct:
            prediction = row["answer"]
        elif mc:
            wrong = [o for o in row["options"] if o != row["answer"]]
            prediction = rng.choice(wrong)
        else:
            prediction = words(rng, FILLER, 2)
        records.append({"eval_id": eval_id, "prediction": prediction})
    return records


ACCURACY = {
    # (dataset, family) -> per-seed probability of emitting the gold answer
    ("droplike", "uqa"): [0.45, 0.5, 0.55],
    ("droplike", "uqa_tdnd"): [0.75, 0.8, 0.85],
    ("qasclike", "uqa"): [0.6, 0.6, 0.65],
    ("qasclike", "uqa_tdnd"): [0.6, 0.65, 0.6],
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--write-golden", action="store_true", help="regenerate golden artifacts")
    args = parser.parse_args()

    rng = random.Random(20240811)
    train_rc = make_train_rc(rng, 120)
    train_mc = make_train_mc(rng, 80)
    eval_rc = make_eval_rc(rng, train_rc)
    eval_mc = make_eval_mc(rng, train_mc)

    write_jsonl(TOY_DIR / "train_squadlike.jsonl", train_rc)
    write_jsonl(TOY_DIR / "train_scilike.jsonl", train_mc)
    write_jsonl(TOY_DIR / "eval_droplike.jsonl", eval_rc)
    write_jsonl(TOY_DIR / "eval_qasclike.jsonl", eval_mc)

    rc_ids = prepared_ids(eval_rc, drop_numeric=True)
    mc_ids = prepared_ids(eval_mc, drop_numeric=False)
    assert len(rc_ids) + len(mc_ids) == 30, (len(rc_ids), len(mc_ids))

    for dataset, rows, ids, mc in (
        ("droplike", eval_rc, rc_ids, False),
        ("qasclike", eval_mc, mc_ids, True),
    ):
        for family in ("uqa", "uqa_tdnd"):
            for seed in (1, 2, 3):
                p = ACCURACY[(dataset, family)][seed - 1]
                pred_rng = random.Random(f"{dataset}/{family}/{seed}")
                records = make_predictions(pred_rng, rows, ids, mc, p)
                write_jsonl(
                    TOY_DIR / "predictions" / dataset / f"{family}-seed{seed}.jsonl", records
                )

    manifest = {
        "version": 1,
        "train_corpora": [
            {"path": "train_squadlike.jsonl", "name": "squadlike"},
            {"path": "train_scilike.jsonl", "name": "scilike"},
        ],
        "eval_corpora": [
            {"path": "eval_droplike.jsonl", "name": "droplike", "metric": "f1", "drop_numeric": True},
            {"path": "eval_qasclike.jsonl", "name": "qasclike", "metric": "em_mc"},
        ],
        "provider": {"kind": "deterministic_bow", "dimension": 256},
        "filter": {"threshold": 60.0, "overlap_scope": "train_full_text", "k_review": 10},
        "k": 5,
        "ngram_n": 8,
        "threads": 1,
        "output_dir": "out",
        "predictions": {"dir": "predictions"},
        "families": ["uqa", "uqa_tdnd"],
    }
    (TOY_DIR / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"toy corpus written to {TOY_DIR} ({len(rc_ids)} + {len(mc_ids)} eval samples)")

    if args.write_golden:
        from overlap_audit.cli import main as cli_main

        golden = TOY_DIR / "golden"
        if golden.exists():
            shutil.rmtree(golden)
        rc = cli_main(
            ["run", "--manifest", str(TOY_DIR / "manifest.json"), "--output", str(golden)]
        )
        if rc != 0:
            print("pipeline failed", file=sys.stderr)
            return rc
        # goldens keep only the deterministic artifacts
        for junk in list(golden.rglob("meta.json")) + list(golden.rglob("cache.sqlite")):
            junk.unlink()
        print(f"golden artifacts written to {golden}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
