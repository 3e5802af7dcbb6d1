import json

import pytest

from dialkb import (
    Dialogue, EntityTracker, KnowledgeRanker, augment_detection_data, last_user_utterance, load_knowledge_base,
    train_detector, train_domain_classifier,
)
from dialkb.detection import corpus_detection_samples
from dialkb.domain import corpus_domain_samples
from dialkb.synthetic import make_synthetic

# the worked hotel conversation: the user asks about a gym at turn 5
HOTEL_DIALOGUE = [
    "I'm looking for a place to stay in the south of town. It doesn't need to have free parking.",
    "There are 4 hotels that are in the area you are looking for. Would you prefer a 3 or 4 star rated hotel?",
    "I don't care about the star rating as long as it's expensive.",
    "The Lensfield Hotel is the only expensive hotel in the south area. Would you like any more information on this location?",
    "I'm interested in knowing, do they have a workout facility on the premises?",
    "There are both a fitness center and gym available on the premises. Does this sound ok?",
    "That is perfect can you book that for me please.",
    "The Lensfield Hotel is located in the South. It has a 3 star rating and is expensive. There is free parking and internet. I have booked it for you.",
    "Great, thank you!",
]

HOTEL_KB = {
    "hotel": {
        "11": {
            "name": "Lensfield Hotel",
            "docs": {
                "0": {"title": "Do you have room service for your guests?",
                      "body": "Yes, the Lensfield Hotel provides room services."},
                "1": {"title": "Is there a gym available at your location?",
                      "body": "There is both a fitness center and gym available on the premises."},
                "2": {"title": "Can I bring my dog?", "body": "Pets are not allowed at the Lensfield Hotel."},
            },
        },
        "12": {
            "name": "Acorn Guest House",
            "docs": {
                "0": {"title": "Is breakfast included?", "body": "Breakfast is included."},
            },
        },
    },
    "taxi": {
        "*": {"name": None, "docs": {
            "0": {"title": "Can I pay by card?", "body": "Cards are accepted."},
            "1": {"title": "Do you provide child seats?", "body": "On request."},
        }},
    },
}


@pytest.fixture
def hotel_kb():
    return load_knowledge_base(json.dumps(HOTEL_KB))


@pytest.fixture
def hotel_dialogue():
    return Dialogue.from_texts(HOTEL_DIALOGUE)


@pytest.fixture(scope="session")
def synth():
    return make_synthetic(seed=0, n_dialogues=600)


@pytest.fixture(scope="session")
def trained(synth):
    kb = synth.kb
    det = train_detector(augment_detection_data(kb) + corpus_detection_samples(synth.train), random_state=0)
    det.tune_threshold([last_user_utterance(d) for d in synth.val.dialogues], [lab.target for lab in synth.val.labels])
    dom = train_domain_classifier(corpus_domain_samples(synth.train), random_state=0)
    tracker = EntityTracker().fit(kb)
    pos = [(d, lab) for d, lab in synth.train if lab.target]
    ranker = KnowledgeRanker(random_state=0).fit([d for d, _ in pos], [lab.knowledge for _, lab in pos], kb)
    return {"detector": det, "domain_model": dom, "tracker": tracker, "ranker": ranker}


# acceptance reporting: one line per criterion in the terminal summary

_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        detail = ""
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2].removeprefix("Skipped: ")
        _CRITERIA[name] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, detail) in _CRITERIA.items():
        terminalreporter.write_line(f"{status}  {name}" + (f"  ({detail})" if detail else ""))
