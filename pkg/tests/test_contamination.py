import random

import pytest

from metasynth.contamination import (
    ContaminationError,
    em_overlap,
    em_overlap_bruteforce,
    normalize_tokens,
)


def random_text(rng, vocabulary, n):
    return " ".join(rng.choice(vocabulary) for _ in range(n))


def test_normalization_rules():
    assert normalize_tokens("The CAT, sat!  on\tthe mat.") == [
        "the", "cat", "sat", "on", "the", "mat",
    ]


def test_planted_verbatim_reference_is_contaminated():
    reference = "the cat sat on the mat today ok fine yes"
    target = "prefix words " + reference + " suffix words"
    report = em_overlap([reference], [target], [10])
    assert report.fractions[10] == 1.0


def test_disjoint_vocabularies_all_zero():
    rng = random.Random(1)
    refs = [random_text(rng, [f"r{i}" for i in range(40)], 30) for _ in range(25)]
    targets = [random_text(rng, [f"t{i}" for i in range(40)], 30) for _ in range(25)]
    report = em_overlap(refs, targets, [1, 2, 3, 5, 10])
    assert all(frac == 0.0 for frac in report.fractions.values())
    assert report.fractions[10] == 0.0


def test_planted_five_gram_fraction():
    rng = random.Random(2)
    ref_vocab = [f"r{i}" for i in range(50)]
    tgt_vocab = [f"t{i}" for i in range(50)]
    refs = [random_text(rng, ref_vocab, 25) for _ in range(200)]
    targets = [random_text(rng, tgt_vocab, 60) for _ in range(40)]
    # plant a distinct 5-gram from 17 references into targets
    planted = rng.sample(range(200), 17)
    for index, ref_index in enumerate(planted):
        tokens = refs[ref_index].split()
        start = rng.randrange(0, len(tokens) - 5)
        fragment = " ".join(tokens[start : start + 5])
        targets[index % len(targets)] += " " + fragment
    report = em_overlap(refs, targets, [5])
    assert report.fractions[5] == 17 / 200
    brute = em_overlap_bruteforce(refs, targets, [5])
    assert report.fractions[5] == brute[5]


def test_monotone_nonincreasing_in_n():
    rng = random.Random(3)
    shared = [f"s{i}" for i in range(15)]
    refs = [random_text(rng, shared, 20) for _ in range(30)]
    targets = [random_text(rng, shared, 40) for _ in range(10)]
    n_values = [1, 2, 3, 5, 10]
    report = em_overlap(refs, targets, n_values)
    fractions = [report.fractions[n] for n in n_values]
    for a, b in zip(fractions, fractions[1:]):
        assert a >= b


def test_self_overlap_is_total():
    rng = random.Random(4)
    corpus = [random_text(rng, [f"w{i}" for i in range(30)], 15) for _ in range(20)]
    report = em_overlap(corpus, corpus, [1, 2, 3, 5, 10])
    for n, fraction in report.fractions.items():
        assert fraction == 1.0, f"EM-{n}"


def test_matches_bruteforce_on_fuzz():
    rng = random.Random(5)
    for case in range(200):
        vocab = [f"v{i}" for i in range(rng.randrange(4, 12))]
        refs = [
            random_text(rng, vocab, rng.randrange(1, 15))
            for _ in range(rng.randrange(1, 8))
        ]
        targets = [
            random_text(rng, vocab, rng.randrange(1, 20))
            for _ in range(rng.randrange(1, 6))
        ]
        n_values = [1, 2, 3]
        fast = em_overlap(refs, targets, n_values).fractions
        brute = em_overlap_bruteforce(refs, targets, n_values)
        assert fast == brute, f"case {case}"


def test_short_references_count_clean():
    refs = ["only three tokens", "a much longer reference that runs past ten tokens easily now"]
    targets = ["a much longer reference that runs past ten tokens easily now indeed"]
    report = em_overlap(refs, targets, [10])
    # the 3-token reference is skipped (counted clean), the long one matches
    assert report.fractions[10] == 0.5
    assert report.skipped[10] == 1


def test_punctuation_and_case_robust_matching():
    refs = ["The Cat: sat, on the MAT? today ok fine yes"]
    targets = ["the cat sat on the mat today ok fine yes and more"]
    report = em_overlap(refs, targets, [10])
    assert report.fractions[10] == 1.0


def test_empty_corpora_rejected():
    with pytest.raises(ContaminationError):
        em_overlap([], ["x"], [1])
    with pytest.raises(ContaminationError):
        em_overlap(["x"], [], [1])


def test_n_range_validated():
    with pytest.raises(ContaminationError):
        em_overlap(["a"], ["a"], [0])
    with pytest.raises(ContaminationError):
        em_overlap(["a"], ["a"], [51])


def test_report_json_row_shape():
    refs = ["alpha beta gamma delta"]
    targets = ["alpha beta gamma delta epsilon"]
    payload = em_overlap(refs, targets, [1, 2, 3]).to_json_dict()
    assert payload["n_reference"] == 1
    assert set(payload["fractions"]) == {"EM-1", "EM-2", "EM-3"}
    assert "normalization" in payload
