#!/usr/bin/env python3
"""Regenerate the bundled training corpus and the toy classification task.

The repo ships with data/corpus.txt and data/classify_toy.tsv already
committed; this script exists so they can be rebuilt from scratch. Output is
fully determined by SEED, so a rerun produces byte-identical files.

Corpus properties the test suite relies on:
  - lowercase letters, space, comma, period, newline only (30 distinct chars)
  - every letter a..z occurs, so the vocab is stable across regenerations
  - text is template-generated and therefore low-entropy enough for a small
    character model to learn well within a couple thousand steps
"""

import random
from pathlib import Path

SEED = 20260814
CORPUS_TARGET_CHARS = 1_000_000
CLASSIFY_LINES_PER_CLASS = 240

OUT_DIR = Path(__file__).resolve().parent.parent / "data"

ADJECTIVES = [
    "old", "quiet", "grey", "small", "bright", "cold", "warm", "dusty",
    "narrow", "wide", "green", "pale", "heavy", "light", "slow", "quick",
    "jagged", "smooth", "dark", "clear", "low", "high", "thin", "deep",
    "young", "broad", "calm", "rough", "dry", "wet", "lazy", "exact",
]

NOUNS = [
    "river", "stone", "valley", "harbor", "garden", "window", "market",
    "bridge", "meadow", "forest", "mountain", "village", "signal", "engine",
    "ledger", "zephyr", "quarry", "junction", "anvil", "basket", "lantern",
    "orchard", "paddock", "railway", "saddle", "tunnel", "upland", "wagon",
    "yard", "axle", "kiln", "jetty", "quay", "fox", "ox", "zone",
]

VERBS = [
    "rests", "turns", "waits", "drifts", "settles", "rises", "falls",
    "moves", "stands", "leans", "holds", "shifts", "bends", "opens",
    "closes", "carries", "crosses", "follows", "gathers", "fades",
    "returns", "remains", "quickens", "joins", "expands", "buzzes",
]

PLACES = [
    "near the mill", "by the gate", "under the elm", "past the wall",
    "along the track", "beyond the ridge", "at the crossing",
    "beside the well", "over the ford", "within the square",
    "behind the barn", "below the cliff", "against the fence",
    "among the reeds", "around the bend", "inside the yard",
]

TIMES = [
    "at dawn", "at dusk", "in winter", "in summer", "after the rain",
    "before the frost", "through the night", "all morning", "by evening",
    "in the late hours", "when the fog lifts", "as the light fails",
]

OPENERS = [
    "meanwhile", "later", "soon", "even so", "in time", "for years",
    "once more", "as always", "by custom", "little by little",
]


def sentence(rng: random.Random) -> str:
    a = rng.choice(ADJECTIVES)
    n = rng.choice(NOUNS)
    v = rng.choice(VERBS)
    p = rng.choice(PLACES)
    form = rng.randrange(10)
    if form < 4:
        s = f"the {a} {n} {v} {p}"
    elif form < 6:
        s = f"the {a} {n} {v} {p} {rng.choice(TIMES)}"
    elif form < 8:
        s = f"{rng.choice(OPENERS)}, the {a} {n} {v} {p}"
    elif form == 8:
        n2 = rng.choice(NOUNS)
        v2 = rng.choice(VERBS)
        s = f"the {a} {n} {v}, and the {n2} {v2} {p}"
    else:
        s = f"{rng.choice(TIMES)}, the {n} {v} {p}"
    return s + "."


def make_corpus(rng: random.Random) -> str:
    parts = []
    total = 0
    while total < CORPUS_TARGET_CHARS:
        n_sent = rng.randrange(4, 10)
        para = " ".join(sentence(rng) for _ in range(n_sent)) + "\n\n"
        parts.append(para)
        total += len(para)
    return "".join(parts)


# Two topic families with disjoint content words; every class-0 line ends in
# "water." and every class-1 line ends in "stone." so the final characters
# alone separate the classes.
WATER_SUBJ = ["river", "stream", "tide", "rain", "harbor", "mist", "spring"]
WATER_VERB = ["carries", "drifts", "pools", "flows", "washes", "soaks"]
STONE_SUBJ = ["cliff", "quarry", "boulder", "ridge", "anvil", "ledge", "peak"]
STONE_VERB = ["stands", "weighs", "anchors", "endures", "braces", "grinds"]


def classify_line(rng: random.Random, label: int) -> str:
    a = rng.choice(ADJECTIVES)
    p = rng.choice(PLACES)
    if label == 0:
        s = rng.choice(WATER_SUBJ)
        v = rng.choice(WATER_VERB)
        text = f"the {a} {s} {v} {p} and turns to water."
    else:
        s = rng.choice(STONE_SUBJ)
        v = rng.choice(STONE_VERB)
        text = f"the {a} {s} {v} {p} and sets like stone."
    return f"{text}\t{label}\n"


def main() -> None:
    rng = random.Random(SEED)
    OUT_DIR.mkdir(parents=True, exist_ok=True)

    corpus = make_corpus(rng)
    charset = sorted(set(corpus))
    assert all(c.islower() or c in " ,.\n" for c in charset), charset
    assert all(chr(o) in charset for o in range(ord("a"), ord("z") + 1))
    (OUT_DIR / "corpus.txt").write_text(corpus, encoding="ascii")

    lines = [classify_line(rng, i % 2) for i in range(2 * CLASSIFY_LINES_PER_CLASS)]
    task = "".join(lines)
    assert set(task) - set(charset) == {"\t", "0", "1"}, "task text must stay in-vocab"
    (OUT_DIR / "classify_toy.tsv").write_text(task, encoding="ascii")

    print(f"corpus.txt: {len(corpus)} chars, {len(charset)} distinct")
    print(f"classify_toy.tsv: {len(lines)} lines")


if __name__ == "__main__":
    main()
