import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialkb.errors import AlignmentError
from dialkb.metrics import (
    bleu, detection_metrics, f1_score, generation_metrics, lcs_length, meteor_lite, paired_t_test, rouge,
    selection_metrics, sentence_bleu, tokenize,
)
from oracles import (
    bleu_oracle, lcs_brute, lcs_recursive, meteor_oracle, meteor_oracle_max, rouge_l_oracle, rouge_n_oracle, selection_oracle, t_test_oracle,
)

VOCAB = "the a cat dog sat on mat ran".split()


def random_sentence(rng, lo=1, hi=7, vocab=VOCAB):
    return " ".join(rng.choice(vocab) for _ in range(rng.randint(lo, hi)))


def test_f1_from_reported_precision_recall():
    assert f1_score(0.9933, 0.9021) == pytest.approx(0.9455, abs=1e-4)


def test_detection_perfect_and_all_negative():
    rep = detection_metrics([True, False, True], [True, False, True])
    assert (rep.precision, rep.recall, rep.f1) == (1.0, 1.0, 1.0)
    rep = detection_metrics([False, False], [True, False])
    assert rep.recall == 0.0 and rep.f1 == 0.0
    assert not rep.precision_defined and rep.recall_defined


def test_detection_misaligned():
    with pytest.raises(AlignmentError):
        detection_metrics([True], [True, False])


@given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40))
def test_detection_consistent_with_counts(pairs):
    preds, golds = zip(*pairs)
    rep = detection_metrics(preds, golds)
    p = rep.tp / (rep.tp + rep.fp) if rep.tp + rep.fp else 0.0
    r = rep.tp / (rep.tp + rep.fn) if rep.tp + rep.fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    assert abs(rep.precision - p) < 1e-12 and abs(rep.recall - r) < 1e-12 and abs(rep.f1 - f) < 1e-12
    assert rep.tp + rep.fp + rep.fn + rep.tn == len(pairs)


def test_selection_examples():
    assert selection_metrics([["a"], ["b"]], [["a"], ["b"]]).to_json() == {
        "mrr_at_5": 1.0, "recall_at_1": 1.0, "recall_at_5": 1.0, "n": 2}
    rep = selection_metrics([["x", "g"]], [["g"]])
    assert (rep.mrr_at_5, rep.recall_at_1, rep.recall_at_5) == (0.5, 0.0, 1.0)
    rep = selection_metrics([list("abcdeg")], [["g"]])
    assert (rep.mrr_at_5, rep.recall_at_1, rep.recall_at_5) == (0.0, 0.0, 0.0)


def test_selection_any_gold_counts():
    rep = selection_metrics([["x", "b", "a"]], [["a", "b"]])
    assert rep.mrr_at_5 == 0.5


def test_selection_misaligned():
    with pytest.raises(AlignmentError):
        selection_metrics([["a"]], [])


@pytest.mark.parametrize("seed", range(30))
def test_selection_matches_oracle(seed):
    rng = random.Random(seed)
    ranked, golds = [], []
    for _ in range(rng.randint(1, 12)):
        cands = rng.sample(range(10), rng.randint(1, 10))
        ranked.append(cands)
        golds.append(rng.sample(range(12), rng.randint(1, 2)))
    rep = selection_metrics(ranked, golds)
    exp = selection_oracle(ranked, golds)
    assert abs(rep.mrr_at_5 - exp[0]) <= 1e-9
    assert abs(rep.recall_at_1 - exp[1]) <= 1e-9
    assert abs(rep.recall_at_5 - exp[2]) <= 1e-9
    assert rep.recall_at_1 <= rep.mrr_at_5 <= rep.recall_at_5


def test_selection_reorder_invariant():
    ranked = [["a", "b"], ["c", "d", "e"], ["f"]]
    golds = [["b"], ["e"], ["z"]]
    a = selection_metrics(ranked, golds)
    b = selection_metrics(ranked[::-1], golds[::-1])
    assert a == b


def test_bleu_identity_and_clipping():
    assert bleu("the cat sat on the mat", ["the cat sat on the mat"]) == [1.0, 1.0, 1.0, 1.0]
    # unigram clipped precision 1/3: "the" appears once in the reference
    assert sentence_bleu("the the the", ["the cat sat"], 1)[0] == pytest.approx(1 / 3)


def test_bleu_brevity_penalty_applies():
    short = sentence_bleu("the cat", ["the cat sat on the mat"])
    assert short[0] == pytest.approx(math.exp(1 - 6 / 2))


def test_bleu_add_one_smoothing_value():
    # no bigram matches: p2 = 1 / (2 + 1)
    got = sentence_bleu("cat the dog", ["the cat sat"], 2)
    assert got[1] == pytest.approx(math.sqrt((2 / 3) * (1 / 3)))


@pytest.mark.parametrize("seed", range(40))
def test_bleu_matches_oracle(seed):
    rng = random.Random(1000 + seed)
    hyp = random_sentence(rng)
    refs = [random_sentence(rng) for _ in range(rng.randint(1, 3))]
    got = sentence_bleu(hyp, refs)
    exp = bleu_oracle(tokenize(hyp), [tokenize(r) for r in refs])
    assert all(abs(g - e) <= 1e-9 for g, e in zip(got, exp)), (hyp, refs, got, exp)


def test_corpus_bleu_is_mean():
    hyps = ["the cat sat", "a dog ran"]
    refs = [["the cat sat on"], ["a dog"]]
    rows = [sentence_bleu(h, r) for h, r in zip(hyps, refs)]
    assert bleu(hyps, refs) == pytest.approx([(x + y) / 2 for x, y in zip(*rows)])


def test_rouge_examples():
    assert rouge("a b c", "a b c") == (1.0, 1.0, 1.0)
    assert rouge("a b c", "a x c")[2] == pytest.approx(2 / 3)
    assert rouge("a b", "c d") == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("seed", range(40))
def test_rouge_matches_oracle(seed):
    rng = random.Random(2000 + seed)
    hyp, ref = random_sentence(rng), random_sentence(rng)
    h, r = tokenize(hyp), tokenize(ref)
    r1, r2, rl = rouge(hyp, ref)
    assert abs(rl - rouge_l_oracle(h, r)) <= 1e-9
    assert abs(r1 - rouge_n_oracle(h, r, 1)) <= 1e-9
    assert abs(r2 - rouge_n_oracle(h, r, 2)) <= 1e-9
    assert lcs_length(h, r) == lcs_brute(h, r) == lcs_recursive(h, r)


def test_meteor_examples():
    # identity: one chunk over m matches
    m = 3
    assert meteor_lite("the cat sat", "the cat sat") == pytest.approx(1 - 0.5 / m ** 3)
    assert meteor_lite("a b", "c d") == 0.0
    p, r = 2 / 3, 1.0
    fmean = 10 * p * r / (r + 9 * p)
    assert meteor_lite("the cat sat", "the cat") == pytest.approx(fmean * (1 - 0.5 * (1 / 2) ** 3))


def test_meteor_prefers_fewest_chunks():
    # "the" can align to either occurrence; the contiguous choice gives one chunk
    assert meteor_lite("the cat", "the dog the cat") == pytest.approx(meteor_oracle(["the", "cat"], ["the", "dog", "the", "cat"]))
    p, r = 1.0, 0.5
    assert meteor_lite("the cat", "the dog the cat") == pytest.approx(10 * p * r / (r + 9 * p) * (1 - 0.5 / 8))


@pytest.mark.parametrize("seed", range(40))
def test_meteor_matches_oracle(seed):
    rng = random.Random(3000 + seed)
    vocab = VOCAB[:4]
    hyp, ref = random_sentence(rng, 1, 6, vocab), random_sentence(rng, 1, 6, vocab)
    got = meteor_lite(hyp, ref)
    exp = meteor_oracle(tokenize(hyp), tokenize(ref))
    assert abs(got - exp) <= 1e-9, (hyp, ref, got, exp)
    assert meteor_oracle_max(tokenize(hyp), tokenize(ref)) == exp


def test_generation_metrics_in_unit_interval():
    rep = generation_metrics(["the cat sat", "a dog"], ["the cat sat on the mat", "a dog ran"])
    for k, v in rep.to_json().items():
        if k != "n":
            assert 0.0 <= v <= 1.0
    assert rep.n == 2


def test_ttest_examples():
    assert paired_t_test([1, 2, 3], [1, 2, 3]) == (0.0, 1.0)
    t, p = paired_t_test([2, 3, 4, 5], [1, 2, 3, 4])
    assert t == math.inf and p == 0.0
    t, p = paired_t_test([1, 2, 3, 4], [2, 3, 4, 5])
    assert t == -math.inf and p == 0.0


def test_ttest_fixture_against_oracle():
    d = [0.1, 0.3, -0.1, 0.2, 0.0]
    t, p = paired_t_test(d, [0.0] * 5)
    et, ep = t_test_oracle(d, [0.0] * 5)
    assert abs(t - et) <= 1e-9 and abs(p - ep) <= 1e-9
    # closed form: mean 0.1, sd sqrt(0.025), n 5
    assert t == pytest.approx(0.1 / (math.sqrt(0.025) / math.sqrt(5)))


@pytest.mark.parametrize("seed", range(25))
def test_ttest_matches_oracle(seed):
    rng = random.Random(4000 + seed)
    n = rng.randint(2, 15)
    a = [rng.random() for _ in range(n)]
    b = [rng.random() for _ in range(n)]
    t, p = paired_t_test(a, b)
    et, ep = t_test_oracle(a, b)
    assert abs(t - et) <= 1e-9 * max(1.0, abs(et))
    assert abs(p - ep) <= 1e-9


def test_ttest_errors():
    with pytest.raises(AlignmentError):
        paired_t_test([1, 2], [1])
    with pytest.raises(ValueError):
        paired_t_test([1], [2])


@settings(max_examples=50)
@given(st.lists(st.sampled_from(VOCAB), min_size=2, max_size=8))
def test_identity_scores(tokens):
    text = " ".join(tokens)
    assert rouge(text, text) == (1.0, 1.0, 1.0)
    assert sentence_bleu(text, [text])[0] == 1.0
    assert meteor_lite(text, text) == pytest.approx(1 - 0.5 / len(tokens) ** 3)


def test_single_token_has_no_bigram_score():
    assert rouge("cat", "cat") == (1.0, 0.0, 1.0)


def test_tokenize_detaches_punctuation():
    assert tokenize("Yes, it's FREE!") == ["yes", ",", "it", "'", "s", "free", "!"]
