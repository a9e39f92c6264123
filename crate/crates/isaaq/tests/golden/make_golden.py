"""Writes the sequence-layout golden files from a standalone tokenizer.

Run from this directory: python3 make_golden.py
Outputs vocab.txt, cases.json and expected.txt.
"""
import json

SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]


def tokenize(text):
    out, cur = [], ""
    for ch in text:
        if ch.isspace():
            if cur:
                out.append(cur)
                cur = ""
        elif not ch.isalnum():
            if cur:
                out.append(cur)
                cur = ""
            out.append(ch)
        else:
            cur += ch.lower()
    if cur:
        out.append(cur)
    return out


LONG_K = " ".join(
    "Layer %d of the crust, made of basalt; granite rests above it." % i for i in range(25)
)
LONG_LS = " ".join("Sediment %d settles slowly and hardens into rock." % i for i in range(12))
LONG_Q = " ".join("rivers carry sand number %d" % i for i in range(14)) + " to the sea?"

CASES = [
    {"name": "mc_basic", "layout": "mc", "first": "Rocks weather into soil.",
     "second": ["What forms from weathered rocks?", "soil"], "max_len": 180},
    {"name": "mc_empty_background", "layout": "mc", "first": "",
     "second": ["is water wet", "true"], "max_len": 64},
    {"name": "mc_oov", "layout": "mc", "first": "A zygote divides.",
     "second": ["What divides?", "the zygote"], "max_len": 64},
    {"name": "mc_truncate_180", "layout": "mc", "first": LONG_K,
     "second": ["Which rock lies under granite?", "basalt"], "max_len": 180},
    {"name": "mc_truncate_64", "layout": "mc", "first": LONG_K,
     "second": ["Which rock lies under granite?", "basalt"], "max_len": 64},
    {"name": "mc_question_over_budget_64", "layout": "mc", "first": "Sand moves.",
     "second": [LONG_Q, "yes"], "max_len": 64},
    {"name": "tf_basic", "layout": "tf", "first": "Soil holds water.",
     "second": ["Topsoil is rich."], "max_len": 64},
    {"name": "tf_truncate_64", "layout": "tf", "first": "Sediment hardens into rock.",
     "second": [LONG_LS], "max_len": 64},
    {"name": "tf_truncate_180", "layout": "tf", "first": "Sediment hardens into rock.",
     "second": [LONG_LS + " " + LONG_LS], "max_len": 180},
    {"name": "tf_question_over_budget_64", "layout": "tf", "first": LONG_Q,
     "second": ["Sand moves."], "max_len": 64},
]


def build_vocab():
    words = set()
    for c in CASES:
        for text in [c["first"]] + c["second"]:
            words.update(t for t in tokenize(text) if t != "zygote")
    return SPECIALS + sorted(words - set(SPECIALS))


def encode(vocab, text):
    index = {t: i for i, t in enumerate(vocab)}
    return [index.get(t, index["[UNK]"]) for t in tokenize(text)]


def layout(vocab, case):
    cls, sep = vocab.index("[CLS]"), vocab.index("[SEP]")
    if case["layout"] == "mc":
        # [CLS] K [SEP] q a [SEP]; K loses tokens first
        first = encode(vocab, case["first"])
        second = encode(vocab, case["second"][0]) + encode(vocab, case["second"][1])
        trim_first = True
    else:
        # [CLS] q [SEP] ls [SEP]; ls loses tokens first
        first = encode(vocab, case["first"])
        second = encode(vocab, case["second"][0])
        trim_first = False
    budget = case["max_len"] - 3
    excess = max(0, len(first) + len(second) - budget)
    a, b = (first, second) if trim_first else (second, first)
    cut = min(excess, len(a))
    del a[len(a) - cut:]
    excess -= cut
    cut = min(excess, len(b))
    del b[len(b) - cut:]
    ids = [cls] + first + [sep] + second + [sep]
    segs = [0] * (len(first) + 2) + [1] * (len(second) + 1)
    return ids, segs


def main():
    vocab = build_vocab()
    with open("vocab.txt", "w") as f:
        f.write("".join(t + "\n" for t in vocab))
    with open("cases.json", "w") as f:
        json.dump(CASES, f, indent=1)
        f.write("\n")
    with open("expected.txt", "w") as f:
        for c in CASES:
            ids, segs = layout(vocab, c)
            assert len(ids) <= c["max_len"]
            f.write("%s\t%s\t%s\n" % (c["name"], " ".join(map(str, ids)), "".join(map(str, segs))))


if __name__ == "__main__":
    main()
