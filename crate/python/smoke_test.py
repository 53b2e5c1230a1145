"""Smoke test for the paraalign extension module.

Build first:  maturin develop -m crates/py/Cargo.toml
Then run:     python python/smoke_test.py
"""

import pathlib

import paraalign

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "fixtures"


def main():
    assert paraalign.tokenize("So that it doesn't happen again.", "en") == [
        "so", "that", "it", "doesn't", "happen", "again",
    ]
    assert paraalign.tokenize("他是一般人", "zh") == ["他", "是", "一", "般", "人"]
    assert paraalign.lcs_length(list("ABCBDAB"), list("BDCABA")) == 4

    p, r, f1 = paraalign.rouge_l("the cat sat", "the cat sat on the mat")
    assert (p, r) == (1.0, 0.5) and abs(f1 - 2 / 3) < 1e-9

    case = FIXTURES / "prompts"
    shots = [("他是一般人", "He is not famous enough."), ("我们明天见。", "See you tomorrow.")]
    p1 = paraalign.render_prompt("P1", "Chinese", "English", "以免再次发生这样的事情", shots)
    assert p1 == (case / "zh_en_p1.txt").read_text(encoding="utf-8")
    p2 = paraalign.render_prompt("P2", "Chinese", "English", "以免再次发生这样的事情")
    assert p2 == (case / "zh_en_p2.txt").read_text(encoding="utf-8")
    assert len(paraalign.golden_digest("P2", "Chinese", "English", "x")) == 64

    raw = "###English: So that it doesn't happen again.\n###Chinese: 以免"
    assert paraalign.extract_answer(raw, "P1", "English") == "So that it doesn't happen again."

    assert paraalign.score_delta("comet", 86.66, 83.95)[1] == "+2.71"
    assert paraalign.score_delta("rouge_l", 65.56, 58.45)[1] == "+7.11"
    assert paraalign.score_delta("comet", 71.64, 77.68)[1] == "-6.04"

    corpus = paraalign.Corpus.load(str(FIXTURES / "split" / "flores_zh_en_2007.tsv"), "zh-en")
    assert len(corpus) == 2007
    train, test = corpus.split(505)
    assert (len(train), len(test)) == (1502, 505)
    assert not {i for i, _, _ in train.pairs()} & {i for i, _, _ in test.pairs()}
    again = corpus.split(505, seed=paraalign.DEFAULT_SPLIT_SEED)[1]
    assert again.checksum == test.checksum

    dup = paraalign.Corpus.from_pairs("de-en", [("a", "b"), ("a", "b"), ("c", "d")])
    deduped, removed = dup.dedupe()
    assert (len(deduped), removed) == (2, 1)

    pool = [(i, f"o{i}", f"p{i}") for i in range(100)]
    subsets = paraalign.sweep_subsets(pool, [0, 10, 50, 100])
    assert [len(subsets[n]) for n in (0, 10, 50, 100)] == [0, 10, 50, 100]
    assert set(subsets[10]) <= set(subsets[50]) <= set(subsets[100])

    try:
        corpus.split(5000)
    except ValueError:
        pass
    else:
        raise AssertionError("oversized split accepted")

    print("paraalign smoke test: ok")


if __name__ == "__main__":
    main()
