import json

import numpy as np
import pytest

from dialkb import Dialogue, load_knowledge_base
from dialkb.domain import (
    DomainClassifier, DomainLabel, DomainSample, Origin, SlotSpan, augment_attraction_dialogues, classify_domain,
    gold_domain_label, parse_slot_spans, train_domain_classifier,
)
from dialkb.errors import DegenerateTrainingError, EmptyContextError, MissingDomainError
from dialkb.kb import SnippetRef
from dialkb.synthetic import make_attraction_sources

ORIGINAL = [
    "I was hoping to see local places while in Cambridge. Some entertainment would be great.",
    "I got 5 options. which side is okay for you?",
    "It doesn't matter. Can I have the address of a good one?",
    "How about funky fun house, they are located at 8 mercers row, mercers row industrial estate.",
    "Could I also get the phone number and postcode?",
]
NEW = ORIGINAL[:3] + [
    "How about California Academy of Sciences, they are located at 8 mercers row, mercers row industrial estate.",
    "Is WiFi available?",
]
ACADEMY_KB = {"attraction": {"7": {"name": "California Academy of Sciences", "docs": {
    "0": {"title": "Is WiFi available?", "body": "Yes, free WiFi is offered."}}}}}


def test_gold_domain_label():
    assert gold_domain_label("train") is DomainLabel.TRAIN
    assert gold_domain_label("taxi") is DomainLabel.TAXI
    assert gold_domain_label("hotel") is DomainLabel.OTHERS
    assert gold_domain_label("attraction") is DomainLabel.OTHERS
    assert gold_domain_label("spa") is DomainLabel.OTHERS
    assert gold_domain_label(SnippetRef("Train", "*", "0")) is DomainLabel.TRAIN


def test_attraction_augmentation_reproduces_worked_example():
    kb = load_knowledge_base(json.dumps(ACADEMY_KB))
    start = ORIGINAL[3].index("funky fun house")
    spans = [[[], [], [], [SlotSpan(start, start + len("funky fun house"))], []]]
    (sample,) = augment_attraction_dialogues([Dialogue.from_texts(ORIGINAL)], spans, kb, rng_seed=5)
    assert [t.text for t in sample.context] == NEW
    assert sample.label is DomainLabel.OTHERS and sample.provenance is Origin.ATTRACTION_AUGMENTED


def test_attraction_augmentation_edges(synth):
    kb = load_knowledge_base(json.dumps(ACADEMY_KB))
    d = Dialogue.from_texts(["hi"])
    assert augment_attraction_dialogues([d], [[[]]], kb) == []
    with pytest.raises(MissingDomainError):
        augment_attraction_dialogues([d], [[[]]], load_knowledge_base('{"hotel": {}}'))
    dialogues, spans = make_attraction_sources(40, seed=1)
    a = augment_attraction_dialogues(dialogues, spans, synth.kb, rng_seed=9)
    b = augment_attraction_dialogues(dialogues, spans, synth.kb, rng_seed=9)
    assert a == b and len(a) > 0
    for s in a:
        last = s.context[-1].text
        owners = [e for _, e in synth.kb.entities() if any(doc.question == last for doc in e.docs.values())]
        assert owners and all(s.label is DomainLabel.OTHERS for s in a)


def test_substitution_preserves_outside_bytes(synth):
    dialogues, spans = make_attraction_sources(20, seed=2)
    out = augment_attraction_dialogues(dialogues, spans, synth.kb, rng_seed=0)
    kept = [i for i, sp in enumerate(spans) if any(sp)]
    for s, i in zip(out, kept):
        for j, (old, new) in enumerate(zip(dialogues[i][:-1], s.context[:-1])):
            if not spans[i][j]:
                assert old.text == new.text
            else:
                sp = spans[i][j][0]
                assert new.text.startswith(old.text[:sp.char_start])
                assert new.text.endswith(old.text[sp.char_end:])


def test_parse_slot_spans():
    (spans,) = parse_slot_spans('[[[], [{"char_start": 1, "char_end": 4, "slot": "attraction-name"}]]]')
    assert spans == [[], [SlotSpan(1, 4)]]


def _toy():
    texts = {
        DomainLabel.TRAIN: ["i need a train to london on friday", "which train leaves from the station"],
        DomainLabel.TAXI: ["book me a taxi to the museum", "i want a cab pickup at five"],
        DomainLabel.OTHERS: ["find me a cheap hotel in the north", "a restaurant serving italian food"],
    }
    return [DomainSample(Dialogue.from_texts([t]), lab) for lab, ts in texts.items() for t in ts]


def test_training_separable_deterministic_and_valid_distribution():
    samples = _toy()
    a = train_domain_classifier(samples, epochs=40, random_state=1)
    b = train_domain_classifier(samples, epochs=40, random_state=1)
    assert np.array_equal(a.coef_, b.coef_)
    for s in samples:
        label, dist = classify_domain(a, s.context)
        assert label is s.label
        assert abs(dist.sum() - 1.0) <= 1e-9 and (dist >= 0).all()


def test_train_fixture_is_train(trained):
    d = Dialogue.from_texts(["I need a train from cambridge to ely on saturday, leaving after 9:00."])
    label, dist = classify_domain(trained["domain_model"], d)
    assert label is DomainLabel.TRAIN and dist.argmax() == 0


def test_uniform_model_ties_to_train():
    label, dist = classify_domain(DomainClassifier.uniform(), Dialogue.from_texts(["anything"]))
    assert label is DomainLabel.TRAIN
    assert np.allclose(dist, 1 / 3)


def test_domain_training_degenerate():
    with pytest.raises(DegenerateTrainingError):
        train_domain_classifier([])
    one = [s for s in _toy() if s.label is DomainLabel.TAXI]
    with pytest.raises(DegenerateTrainingError):
        train_domain_classifier(one)
    with pytest.raises(EmptyContextError):
        Dialogue([])
