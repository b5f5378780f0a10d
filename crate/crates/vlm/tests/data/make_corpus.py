"""Builds grammar_corpus.json. Each clause is assembled from a verb phrase,
a referent and a remainder, so the expected pair is known by construction."""
import json
import random

rng = random.Random(20240611)

VERBS = [
    ("remove", "", "remove"),
    ("Remove", "", "remove"),
    ("Change", "to a dog", "change to a dog"),
    ("recolor", "to blue", "recolor to blue"),
    ("add a hat to", "", "add a hat"),
    ("put a bow on", "", "put a bow"),
    ("replace", "with a lemon", "replace with a lemon"),
    ("make", "out of glass", "make out of glass"),
    ("turn", "green", "turn green"),
    ("paint", "bright red", "paint bright red"),
    ("set_color", "to (1,0,0)", "set_color to (1,0,0)"),
    ("Erase", "", "erase"),
    ("swap", "for a teapot", "swap for a teapot"),
]
SIDES = ["leftmost", "rightmost", "middle", "top", "bottom", "left", "right", "last", "center"]
ORDINALS = ["first", "second", "third", "fourth", "fifth"]
NOUNS = ["cat", "dog", "cup", "square", "bird", "car", "apple", "chair", "vase", "bottle"]


def referent():
    noun = rng.choice(NOUNS)
    if rng.random() < 0.45:
        word = rng.choice(ORDINALS)
        suffix = rng.choice(["", " from the left", " from the right"])
        return f"the {word} {noun}{suffix}"
    return f"the {rng.choice(SIDES)} {noun}"


cases = []
while len(cases) < 50:
    k = rng.choice([1, 1, 2, 2, 2, 3])
    clauses, pairs = [], []
    for _ in range(k):
        verb, rest, edit = rng.choice(VERBS)
        ref = referent()
        clause = f"{verb} {ref}" + (f" {rest}" if rest else "")
        clauses.append(clause)
        pairs.append({"refer": ref, "edit": edit})
    sep = rng.choice(["; ", ";", " ; "])
    instruction = sep.join(clauses)
    if any(c["instruction"] == instruction for c in cases):
        continue
    cases.append({"instruction": instruction, "pairs": pairs})

with open("grammar_corpus.json", "w") as f:
    json.dump(cases, f, indent=1)
    f.write("\n")
