#!/usr/bin/env python3
"""Regenerate the bundled synthetic fixtures under fixtures/.

The texts embed cue words that both the mock responder and a bag-of-words
model can pick up, so mock-mode pipeline runs have real signal to learn.
Deterministic: rerunning reproduces the same files byte for byte.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from affectfuse import corpus, evaluation, llm  # noqa: E402

OUT = REPO / "fixtures"

SPLIT_SIZES = (120, 40, 40)
SPLIT_SEEDS = {"sentiment": 101, "suicide": 202, "personality": 303}

FILLER = (
    "today the morning commute felt long and i kept thinking about plans "
    "for the weekend with some coffee and music on the way home again"
).split()

NEUTRAL_CHATTER = [
    "anyone watch the game last night",
    "thinking about what to cook for dinner later",
    "my homework is due tomorrow and the weather is nice",
    "just finished a long walk around the park",
    "getting new shoes this weekend probably",
    "that new song has been stuck in my head all day",
]

DISTRESS_LINES = [
    "everything feels {cue} lately and i cannot see it getting better",
    "i feel {cue} and tired of trying every single day",
    "lately it all seems {cue} and i do not know who to tell",
    "things have felt {cue} for weeks and i am running out of energy",
]


def words(rng: random.Random, k: int) -> list[str]:
    return [rng.choice(FILLER) for _ in range(k)]


def make_sentiment(rng: random.Random, n: int) -> list[dict]:
    rows = []
    for i in range(n):
        positive = i % 2 == 0
        cues = llm.POSITIVE_CUES if positive else llm.NEGATIVE_CUES
        tokens = words(rng, rng.randint(3, 7)) + [rng.choice(cues)]
        if rng.random() < 0.4:
            tokens.append(rng.choice(cues))
        rng.shuffle(tokens)
        rows.append({"text": " ".join(tokens), "label": 1 if positive else 0})
    rng.shuffle(rows)
    return rows


def make_suicide(rng: random.Random, n: int, n_long: int) -> list[dict]:
    rows = []
    n_pos = int(round(n * 0.4))
    for i in range(n):
        positive = i < n_pos
        if positive:
            text = rng.choice(DISTRESS_LINES).format(cue=rng.choice(llm.DISTRESS_CUES))
        else:
            text = rng.choice(NEUTRAL_CHATTER) + " " + " ".join(words(rng, rng.randint(0, 4)))
        rows.append({"text": text.strip(), "label": 1 if positive else 0})
    rng.shuffle(rows)
    # Overlong rows get dropped by the 512-character filter before splitting.
    for i in range(n_long):
        pad = " ".join(words(rng, 120))
        rows.insert(
            rng.randrange(len(rows)),
            {"text": (rng.choice(NEUTRAL_CHATTER) + " " + pad)[:600].ljust(513, "x"), "label": 0},
        )
    for i, row in enumerate(rows):
        row["id"] = f"su{i:04d}"
    return rows


def make_personality(rng: random.Random, n: int) -> list[dict]:
    rows = []
    for i in range(n):
        tokens = words(rng, rng.randint(2, 5))
        labels = {}
        for trait in corpus.TRAITS:
            high_cues, low_cues = llm.TRAIT_CUES[corpus.TRAIT_NAMES[trait]]
            roll = rng.random()
            if roll < 0.45:
                tokens.append(rng.choice(high_cues))
                labels[trait] = round(rng.uniform(0.62, 0.95), 4)
            elif roll < 0.9:
                tokens.append(rng.choice(low_cues))
                labels[trait] = round(rng.uniform(0.05, 0.38), 4)
            else:
                labels[trait] = round(rng.uniform(0.35, 0.65), 4)
        rng.shuffle(tokens)
        rows.append({"id": f"fi{i:04d}", "text": "i am " + " ".join(tokens), "labels": labels})
    return rows


def write_jsonl(rows: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def check_problem(path: Path, task: corpus.TaskSpec, split_seed: int, max_chars=None) -> None:
    """Both classes must survive in every part, and in the baseline-evaluable test subset."""
    examples = corpus.load_dataset(path, "jsonl", task)
    if max_chars is not None:
        examples = corpus.filter_max_chars(examples, max_chars)
    split = corpus.split_dataset(examples, SPLIT_SIZES, split_seed)
    for part in ("train", "dev", "test"):
        values = np.array([e.label for e in getattr(split, part)])
        n_pos = int((values >= 0.5).sum())
        assert 8 <= n_pos <= len(values) - 8, (task.name, part, n_pos, len(values))
    kept = []
    for e in split.test:
        outcome = evaluation.baseline_classify(
            llm.heuristic_responder(llm.build_prompt(task, e.text)), task
        )
        if outcome is not evaluation.BaselineOutcome.EXCLUDED:
            kept.append(e.label)
    kept = np.array(kept)
    assert 2 <= int((kept >= 0.5).sum()) <= len(kept) - 2, (task.name, "baseline-test")


def main() -> None:
    OUT.mkdir(exist_ok=True)
    rng = random.Random(20240601)

    write_jsonl(make_sentiment(rng, 200), OUT / "sentiment.jsonl")
    write_jsonl(make_suicide(rng, 200, n_long=10), OUT / "suicide.jsonl")
    write_jsonl(make_personality(rng, 200), OUT / "personality.jsonl")

    check_problem(OUT / "sentiment.jsonl", corpus.sentiment_task(), SPLIT_SEEDS["sentiment"])
    check_problem(OUT / "suicide.jsonl", corpus.suicide_task(), SPLIT_SEEDS["suicide"], max_chars=512)
    for trait in corpus.TRAITS:
        check_problem(
            OUT / "personality.jsonl", corpus.personality_task(trait), SPLIT_SEEDS["personality"]
        )

    config = {
        "tasks": ["sentiment", "suicide", "personality"],
        "datasets": {
            "sentiment": {
                "path": "sentiment.jsonl",
                "split_sizes": list(SPLIT_SIZES),
                "split_seed": SPLIT_SEEDS["sentiment"],
            },
            "suicide": {
                "path": "suicide.jsonl",
                "split_sizes": list(SPLIT_SIZES),
                "split_seed": SPLIT_SEEDS["suicide"],
                "max_chars": 512,
            },
            "personality": {
                "path": "personality.jsonl",
                "split_sizes": list(SPLIT_SIZES),
                "split_seed": SPLIT_SEEDS["personality"],
            },
        },
        "llm": {"mock": True},
        "embeddings": {"mock": True, "mock_dim": 16},
        "bow": {
            "text": {"n_range": [1], "size_cap": 200},
            "chat": {"n_range": [1, 2, 3], "size_cap": 150},
        },
        "search": {"n_samples": 5},
        "training": {"max_epochs": 12, "batch_size": 32, "patience": 4},
        "plans": "all",
        "output_dir": "../out/synthetic",
        "seed": 20240601,
    }
    with open(OUT / "config_synthetic.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)
        fh.write("\n")
    print(f"wrote fixtures to {OUT}")


if __name__ == "__main__":
    main()
