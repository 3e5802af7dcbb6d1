"""Deterministic synthetic knowledge base and dialogue corpus.

The corpus mimics the DSTC9 Track 1 layout at desk scale. Knowledge-seeking
final turns paraphrase an FAQ question of the entity (or domain) under
discussion; other final turns are booking or information requests. The two
are lexically separable by construction, so trained built-in models should
score near-perfectly; the corpus exists to check pipeline wiring, not to
estimate accuracy on real data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dialogue import Dialogue, LabeledCorpus, Speaker, Turn, TurnLabel
from .domain import SlotSpan
from .kb import DOMAIN_ENTITY, EntityRecord, KnowledgeBase, Snippet, SnippetRef

# topic -> (FAQ question, answer template, user paraphrases)
TOPICS = {
    "hotel": {
        "gym": ("Is there a gym available at your location?", "There is both a fitness center and gym available on the premises.",
                ["Do they have a gym I could use?", "I'm interested in knowing, do they have a gym or fitness center?"]),
        "pets": ("Can I bring my dog?", "Pets are not allowed at {name}.",
                 ["Can I bring my dog along?", "Is it ok to bring a dog with me?"]),
        "parking": ("Is there parking for guests?", "Yes, {name} offers private parking for guests.",
                    ["Is there parking for guests there?", "Will I be able to find parking at the place?"]),
        "wifi": ("Is WiFi available in the rooms?", "Free WiFi is available in all rooms.",
                 ["Do the rooms have wifi?", "Can I get wifi in the rooms?"]),
        "breakfast": ("Is breakfast included?", "A continental breakfast is included with every stay.",
                      ["Does the stay include breakfast?", "Will breakfast be included?"]),
        "pool": ("Do you have a swimming pool?", "Yes, there is an indoor swimming pool.",
                 ["Is there a swimming pool?", "Can I go swimming in a pool there?"]),
        "laundry": ("Is there a laundry service?", "Laundry service is offered for a small fee.",
                    ["Can they do my laundry?", "Do they offer laundry service?"]),
        "checkin": ("What time is check-in?", "Check-in starts at 3 pm.",
                    ["When can I check in?", "What is the check-in time?"]),
        "smoking": ("Is smoking allowed in the rooms?", "All rooms at {name} are non-smoking.",
                    ["Am I allowed to be smoking in my room?", "Is there smoking allowed inside?"]),
        "shuttle": ("Do you offer an airport shuttle?", "An airport shuttle runs every hour.",
                    ["Is there an airport shuttle?", "Can I take a shuttle from the airport?"]),
        "roomservice": ("Do you have room service for your guests?", "Yes, {name} provides room services.",
                        ["Can I order room service?", "Is room service offered to guests?"]),
        "wheelchair": ("Is the hotel wheelchair accessible?", "All public areas are wheelchair accessible.",
                       ["Is the hotel accessible for a wheelchair?", "Can someone in a wheelchair get around the hotel easily?"]),
        "luggage": ("Can I store my luggage after checkout?", "Luggage can be stored at the front desk.",
                    ["Can they store my luggage for a while?", "Is luggage storage available?"]),
        "kitchen": ("Do rooms have a kitchen?", "Some suites come with a small kitchen.",
                    ["Will my room have a kitchen?", "Is there a kitchen in the rooms?"]),
    },
    "restaurant": {
        "vegan": ("Do you have vegan options?", "Several vegan dishes are on the menu.",
                  ["Are there vegan options on the menu?", "Can they serve vegan food?"]),
        "reservation": ("Are reservations required?", "Reservations are recommended on weekends.",
                        ["Do I need reservations to eat there?", "Are reservations required or can we walk in?"]),
        "outdoor": ("Is there outdoor seating?", "Yes, {name} has a patio with outdoor seating.",
                    ["Can we sit in the outdoor seating area?", "Do they have outdoor seating?"]),
        "kids": ("Is there a kids menu?", "A kids menu is available.",
                 ["Do they have a menu for kids?", "Is there a kids menu for my children?"]),
        "alcohol": ("Do you serve alcohol?", "Beer and wine are served.",
                    ["Is alcohol like wine or beer available?", "Do they serve alcohol?"]),
        "takeout": ("Do you offer takeout?", "Takeout orders can be placed by phone.",
                    ["Can I order takeout from them?", "Is takeout available?"]),
        "dresscode": ("Is there a dress code?", "There is no dress code at {name}.",
                      ["Do I need to follow a dress code?", "Is there any dress code?"]),
        "music": ("Do you have live music?", "Live music plays on Friday nights.",
                  ["Will there be live music?", "Does the restaurant offer live music on the weekend?"]),
        "gluten": ("Are gluten free dishes available?", "Most dishes can be made gluten free.",
                   ["Can they make gluten free food?", "I eat gluten free, is that an option?"]),
        "private": ("Can I book a private party?", "A private room is available for parties.",
                    ["Is it possible to hold a private party there?", "Do they host private parties?"]),
        "wifi": ("Is WiFi available?", "Free WiFi is offered to diners.",
                 ["Is there wifi for customers?", "Can I use wifi while eating?"]),
        "parking": ("Is there parking nearby?", "Street parking is available nearby.",
                    ["Where would I find parking nearby?", "Is there parking close by?"]),
        "card": ("Do you accept credit cards?", "All major credit cards are accepted.",
                 ["Can I pay with a credit card?", "Do they take credit cards?"]),
        "delivery": ("Do you deliver?", "Delivery is available within three miles.",
                     ["Can they deliver to my place?", "Will they deliver food to me?"]),
    },
    "attraction": {
        "tickets": ("How much are tickets?", "Tickets cost 12 pounds for adults.",
                    ["How much do the tickets cost?", "What is the price of tickets?"]),
        "tours": ("Are guided tours offered?", "Guided tours run twice a day.",
                  ["Can I join a guided tour?", "Do they have guided tours?"]),
        "photos": ("Is photography allowed?", "Photography without flash is allowed.",
                   ["Am I allowed to take photography inside?", "Can I do photography there?"]),
        "food": ("Can I bring food inside?", "Outside food is not permitted at {name}.",
                 ["Am I allowed to bring my own food inside?", "Can we bring food in?"]),
        "wheelchair": ("Is it wheelchair accessible?", "The site is fully wheelchair accessible.",
                       ["Is it accessible with a wheelchair?", "Could a wheelchair user visit easily?"]),
        "parking": ("Is parking available?", "A paid parking lot is next to {name}.",
                    ["Is there any parking available?", "Where can I find parking?"]),
        "holidays": ("Is {name} open on holidays?", "{name} is open on most public holidays.",
                     ["Are they open on holidays?", "Will it be open during the holidays?"]),
        "giftshop": ("Is there a gift shop?", "A gift shop is located by the exit.",
                     ["Do they have a gift shop?", "Can I buy souvenirs at a gift shop?"]),
        "pets": ("Are pets allowed?", "Only service animals are allowed.",
                 ["Can I bring my pets?", "Are pets allowed inside?"]),
        "strollers": ("Are strollers allowed?", "Strollers are welcome throughout.",
                      ["Are strollers ok for my baby?", "Are strollers allowed in?"]),
        "wifi": ("Is WiFi available?", "Free WiFi is available in the lobby.",
                 ["Will I have wifi there?", "Is there free wifi?"]),
        "lockers": ("Are there lockers for bags?", "Lockers are available for a small fee.",
                    ["Can I put my bags in a locker?", "Do they have lockers?"]),
        "audio": ("Do you offer audio guides?", "Audio guides are available in six languages.",
                  ["Is there an audio guide?", "Can I rent an audio guide?"]),
        "cafe": ("Is there a cafe on site?", "A cafe serves snacks and coffee.",
                 ["Can I get coffee at a cafe there?", "Is there a cafe inside?"]),
    },
    "train": {
        "bikes": ("Can I bring my bike on the train?", "Bikes are allowed on all trains free of charge.",
                  ["Can I take my bicycle or bike on the train?", "Is a bike allowed onboard?"]),
        "wifi": ("Is there a data limit for wifi on the train?", "Data is limited to 50MB per day with no option of additional data.",
                 ["Does the train have a data limit for wifi usage?", "Is the wifi data on the train limited?"]),
        "food": ("Is there a food car on the train?", "A food car serves snacks and drinks.",
                 ["Can I buy food on the train?", "Will there be a food car onboard?"]),
        "luggage": ("How much luggage can I take on the train?", "Each passenger may bring two large bags.",
                    ["How much luggage is allowed on the train?", "How many luggage bags can I bring?"]),
        "pets": ("Can pets travel on the train?", "Small pets may travel in a carrier.",
                 ["Can I take my pets on the train?", "Are pets allowed to travel by train?"]),
        "refund": ("Can I get a refund on train tickets?", "Refunds are given up to one day before travel.",
                   ["Is it possible to get a refund?", "Can I refund the train ticket if plans change?"]),
        "seats": ("Can I reserve a specific seat?", "Seat reservations are free when booking.",
                  ["Can I reserve a seat by the window?", "Is it possible to reserve a specific seat?"]),
        "student": ("Is there a student discount?", "Students receive a third off with a railcard.",
                    ["Do students get a discount?", "Is there any student discount for tickets?"]),
        "outlets": ("Are there power outlets on the train?", "Power outlets are at every table seat.",
                    ["Can I charge my laptop from power outlets?", "Will there be power outlets to charge my phone?"]),
        "quiet": ("Is there a quiet car?", "The first coach is a quiet car.",
                  ["Do they have a quiet car for working?", "Is one coach a quiet car?"]),
        "smoking": ("Is smoking allowed on the train?", "Smoking is not allowed on any train.",
                    ["Am I allowed smoking on the train?", "Is there a smoking area on board?"]),
        "toilets": ("Are there toilets on the train?", "Every train has accessible toilets.",
                    ["Will there be toilets onboard?", "Does the train have toilets?"]),
    },
    "taxi": {
        "card": ("Can I pay the taxi by card?", "All taxis accept card payments.",
                 ["Can I pay by card in the taxi?", "Do taxis accept card payment?"]),
        "childseat": ("Do you provide child seats?", "Child seats are available on request.",
                      ["Can I get a child seat for my son?", "Will the taxi have child seats?"]),
        "pets": ("Can I bring a pet in the taxi?", "Pets are welcome in a carrier.",
                 ["Can my pet ride along in the taxi?", "Is a pet allowed in the taxi?"]),
        "luggage": ("How much luggage fits in the taxi?", "Up to four suitcases fit in the taxi.",
                    ["Will my luggage fit in the taxi?", "How many suitcases of luggage can the taxi take?"]),
        "smoking": ("Is smoking allowed in the taxi?", "Smoking is not permitted in our taxis.",
                    ["Can I be smoking in the taxi?", "Is smoking ok in the cab?"]),
    },
}

_NAME_HEADS = (
    "Acorn Alpha Amber Arbury Ashley Aylesbray Bridge Carolina Cityroomz Finches Gonville Hamilton "
    "Hobsons Huntingdon Kirkwood Lensfield Leverton Limehouse Lovell Marriott Meadow Nirala Oak Orchard "
    "Pembroke Regency Riverside Rosa Sterling Tenpin Varsity Warkworth Willow Yippee Zizzi Bedouin Charlie "
    "Copper Dojo Eraina Fitzbillies Golden Graffiti Jinling Kohinoor Loch Maharajah Midsummer Nandos Panahar "
    "Peking Quayside Rajmahal Saffron Shanghai Sitar Taj Thanh Wagamama Yu Anatolia Backstreet Cambridge "
    "Cherry Clare Corpus Downing Emmanuel Fez Girton Holy Jesus Kettles Lynne Magdalene Mumford Nusha "
    "Primavera Queens Ruskin Scott Sidney Soul Trinity Tree Vue Whale Whipple Abbey Broughton Castle "
    "Christs Cineworld Funky Gallery Kings Milton Planet Sheeps Stazione Wandlebury Folk Byard Lakeside "
    "Harbour Ivory Jasper Kestrel Lantern Marble Nimbus Opal Pelican Quarry Raven Sable Thistle Umber "
    "Velvet Wren Yarrow Zephyr Bramble Cobalt Dahlia Ember Fennel Garnet Heron Indigo Juniper Kelp Lilac"
).split()
_NAME_TAILS = {
    "hotel": ["Hotel", "Inn", "Lodge", "Guesthouse", "House Hotel", "Suites"],
    "restaurant": ["Cafe", "Bistro", "Kitchen", "Grill", "Deli", "Brasserie"],
    "attraction": ["Museum", "Gallery", "Park", "Theatre", "Gardens", "Pool"],
}
_AREAS = ["north", "south", "east", "west", "centre"]
_DAYS = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
_CITIES = ["Cambridge", "London Kings Cross", "Stansted Airport", "Ely", "Norwich", "Peterborough", "Broxbourne"]
_DOMAIN_WORDS = {"hotel": "place to stay", "restaurant": "place to eat", "attraction": "place to visit"}

_BOOKING_TURNS = {
    "hotel": ["Please book it for {n} people for {k} nights starting {day}.", "Can you book a room for {n} guests on {day}?",
              "What is the postcode and phone number?", "I would like to book that for {k} nights.",
              "That sounds great, thank you. That is all I need."],
    "restaurant": ["Please reserve a table for {n} at {t} on {day}.", "Can you book a table for {n} people on {day}?",
                   "What is the address and phone number?", "What price range is it in?",
                   "Great, thanks for your help today."],
    "attraction": ["What is the postcode and the address?", "What area of town is it in?",
                   "Could you give me the phone number please?", "Thanks, that is all for today.",
                   "What type of attraction is it?"],
    "train": ["Yes, please book {n} tickets.", "What is the travel time and the price?",
              "I need it to arrive by {t}.", "Please book it for {n} people on {day}.",
              "Thank you, that will be all."],
    "taxi": ["I need it to arrive by {t}.", "What is the contact number for the driver?",
             "Please pick me up at {t} instead.", "What kind of car will it be?",
             "Thanks, that is everything."],
}


@dataclass
class SyntheticData:
    kb: KnowledgeBase
    train: LabeledCorpus
    val: LabeledCorpus
    test: LabeledCorpus
    topics: dict


DEFAULT_LAYOUT = {"train": (1, 12), "taxi": (1, 5), "hotel": (10, 8), "restaurant": (10, 8), "attraction": (6, 8)}
# 12 + 5 + 33*10 + 40*10 + 23*11 = 1000 snippets
LARGE_LAYOUT = {"train": (1, 12), "taxi": (1, 5), "hotel": (33, 10), "restaurant": (40, 10), "attraction": (23, 11)}


def _entity_names(domain: str, n: int, rng: np.random.Generator, taken: set) -> list[str]:
    names = []
    tails = _NAME_TAILS[domain]
    heads = list(_NAME_HEADS)
    order = rng.permutation(len(heads))
    for k in order:
        if len(names) == n:
            break
        head = heads[int(k)]
        if head.lower() in taken:
            continue
        tail = tails[len(names) % len(tails)]
        name = f"{head} {tail}"
        style = len(names) % 7
        if style == 3 and domain == "restaurant":
            name = f"{head} & {tail}"
        elif style == 5:
            name = f"{name} - {_AREAS[len(names) % len(_AREAS)].title()}"
        elif style == 6 and domain == "hotel":
            name = f"{name} Cambridge"
        taken.add(head.lower())
        names.append(name)
    if len(names) < n:
        raise ValueError(f"not enough distinct names for {n} {domain} entities")
    return names


def make_knowledge_base(layout=None, seed: int = 0) -> tuple[KnowledgeBase, dict]:
    """Build a KB; ``layout`` maps domain -> (entities, faqs per entity).

    Returns the KB and a map SnippetRef -> topic key.
    """
    layout = layout or DEFAULT_LAYOUT
    rng = np.random.default_rng(seed)
    taken: set = set()
    domains = {}
    topic_of = {}
    for domain, (n_ent, n_faq) in layout.items():
        pool = list(TOPICS[domain])
        if n_faq > len(pool):
            raise ValueError(f"{domain} has only {len(pool)} topics")
        ents = {}
        if domain in ("train", "taxi"):
            specs = [(DOMAIN_ENTITY, None)]
        else:
            specs = [(str(i), nm) for i, nm in enumerate(_entity_names(domain, n_ent, rng, taken))]
        for eid, name in specs:
            chosen = sorted(rng.choice(len(pool), size=n_faq, replace=False)) if domain not in ("train", "taxi") \
                else range(n_faq)
            docs = {}
            for doc_id, t in enumerate(chosen):
                key = pool[int(t)]
                q, a, _ = TOPICS[domain][key]
                docs[str(doc_id)] = Snippet(q.format(name=name or domain), a.format(name=name or domain))
                topic_of[SnippetRef(domain, eid, str(doc_id))] = key
            ents[eid] = EntityRecord(eid, name, docs)
        domains[domain] = ents
    return KnowledgeBase(domains), topic_of


def spoken_name(name: str) -> str:
    """How people say a KB name in conversation: no area suffix, no city, '&' spelled out."""
    for sep in (" - ", ", "):
        name = name.split(sep)[0]
    if name.endswith(" Cambridge"):
        name = name[: -len(" Cambridge")]
    name = name.replace("Guesthouse", "Guest House")
    return name.replace("&", "and")


def _fill(template: str, rng: np.random.Generator) -> str:
    return template.format(
        n=int(rng.integers(1, 9)), k=int(rng.integers(1, 6)), day=_DAYS[int(rng.integers(7))],
        t=f"{int(rng.integers(7, 22))}:{int(rng.choice([0, 15, 30, 45])):02d}",
    )


def _aside(kb, domain, eid, avoid, rng) -> str:
    docs = [k for k in kb.domains[domain][eid].docs if k != avoid]
    if not docs or rng.random() >= 0.5:
        return ""
    return " " + kb.domains[domain][eid].docs[docs[int(rng.integers(len(docs)))]].answer


def _entity_dialogue(kb, domain, target_eid, rng, avoid=None):
    ents = [e for eid, e in kb.domains[domain].items() if eid != DOMAIN_ENTITY]
    target = kb.entity(domain, target_eid)
    area = _AREAS[int(rng.integers(len(_AREAS)))]
    turns = [f"I am looking for a {_DOMAIN_WORDS[domain]} in the {area} of town."]
    if rng.random() < 0.6 and len(ents) > 1:
        others = [e for e in ents if e.entity_id != target_eid]
        distractor = others[int(rng.integers(len(others)))]
        turns.append(f"{spoken_name(distractor.name)} is a nice option in the {area}. Would that work?")
        turns.append("Do you have anything else?")
    if rng.random() < 0.3:
        # a mention from another entity domain, e.g. a restaurant near the hotel
        alt = [d for d in kb.entity_domains() if d != domain]
        if alt:
            od = alt[int(rng.integers(len(alt)))]
            oe = [e for eid, e in kb.domains[od].items() if eid != DOMAIN_ENTITY]
            pick = oe[int(rng.integers(len(oe)))]
            turns.append(f"There are {int(rng.integers(2, 9))} options. Are you near {spoken_name(pick.name)}?")
            turns.append("Yes, I will be close to there.")
    turns.append(f"How about {spoken_name(target.name)}? It is in the {area} and gets good reviews."
                 + _aside(kb, domain, target_eid, avoid, rng))
    return turns, spoken_name(target.name)


def _domain_dialogue(kb, domain, rng, avoid=None):
    if domain == "train":
        a, b = rng.choice(len(_CITIES), size=2, replace=False)
        day = _DAYS[int(rng.integers(7))]
        return [
            f"I need a train from {_CITIES[int(a)]} to {_CITIES[int(b)]} on {day}.",
            f"TR{int(rng.integers(1000, 9999))} leaves at {int(rng.integers(5, 22))}:01. Would you like me to book the train?"
            + _aside(kb, domain, DOMAIN_ENTITY, avoid, rng),
        ], "the train"
    return [
        f"I need a taxi to pick me up at {int(rng.integers(5, 22))}:30.",
        f"I have booked a taxi for you. The contact number is 07{int(rng.integers(10**8, 10**9))}."
        + _aside(kb, domain, DOMAIN_ENTITY, avoid, rng),
    ], "the taxi"


def make_dialogues(kb: KnowledgeBase, topic_of: dict, n: int, seed: int = 0, knowledge_rate: float = 0.5) -> LabeledCorpus:
    rng = np.random.default_rng(seed)
    domain_weights = {"train": 0.15, "taxi": 0.1, "hotel": 0.3, "restaurant": 0.3, "attraction": 0.15}
    doms = [d for d in domain_weights if d in kb.domains]
    w = np.array([domain_weights[d] for d in doms])
    w = w / w.sum()
    pairs = []
    for _ in range(n):
        domain = doms[int(rng.choice(len(doms), p=w))]
        if domain in ("train", "taxi"):
            eid = DOMAIN_ENTITY
        else:
            eids = [e for e in kb.domains[domain] if e != DOMAIN_ENTITY]
            eid = eids[int(rng.integers(len(eids)))]
        seeking = rng.random() < knowledge_rate
        doc_id = None
        if seeking:
            docs = list(kb.domains[domain][eid].docs)
            doc_id = docs[int(rng.integers(len(docs)))]
        if eid == DOMAIN_ENTITY:
            texts, spoken = _domain_dialogue(kb, domain, rng, doc_id)
        else:
            texts, spoken = _entity_dialogue(kb, domain, eid, rng, doc_id)
        if seeking:
            ref = SnippetRef(domain, eid, doc_id)
            paraphrases = TOPICS[domain][topic_of[ref]][2]
            final = paraphrases[int(rng.integers(len(paraphrases)))]
            if domain not in ("train", "taxi") and rng.random() < 0.3:
                final = f"{final} I mean at {spoken}."
            texts.append(final)
            answer = kb.resolve(ref).answer
            label = TurnLabel(True, (ref,), f"{answer} Anything else I can do for you?")
        else:
            opts = _BOOKING_TURNS[domain]
            texts.append(_fill(opts[int(rng.integers(len(opts)))], rng))
            label = TurnLabel(False)
        pairs.append((Dialogue.from_texts(texts), label))
    return LabeledCorpus(tuple(pairs))


def make_synthetic(seed: int = 0, n_dialogues: int = 600, layout=None, split=(0.6, 0.2, 0.2)) -> SyntheticData:
    kb, topic_of = make_knowledge_base(layout, seed)
    corpus = make_dialogues(kb, topic_of, n_dialogues, seed + 1)
    n_train = int(round(split[0] * n_dialogues))
    n_val = int(round(split[1] * n_dialogues))
    idx = list(range(n_dialogues))
    return SyntheticData(
        kb,
        corpus.subset(idx[:n_train]),
        corpus.subset(idx[n_train:n_train + n_val]),
        corpus.subset(idx[n_train + n_val:]),
        topic_of,
    )


_SOURCE_ATTRACTIONS = ["funky fun house", "cherry hinton water play", "the cambridge punter", "kettles yard",
                       "the fitzwilliam museum", "whipple museum of the history of science"]


def make_attraction_sources(n: int, seed: int = 0, attraction_rate: float = 0.7):
    """MultiWOZ-like dialogues with attraction-name slot spans (sidecar layout)."""
    rng = np.random.default_rng(seed)
    dialogues, spans = [], []
    for _ in range(n):
        if rng.random() < attraction_rate:
            name = _SOURCE_ATTRACTIONS[int(rng.integers(len(_SOURCE_ATTRACTIONS)))]
            agent = f"How about {name}, they are located at 8 mercers row, mercers row industrial estate."
            texts = [
                "I was hoping to see local places while in Cambridge. Some entertainment would be great.",
                "I got 5 options. which side is okay for you?",
                "It doesn't matter. Can I have the address of a good one?",
                agent,
                "Could I also get the phone number and postcode?",
            ]
            start = agent.index(name)
            turn_spans = [[], [], [], [SlotSpan(start, start + len(name))], []]
        else:
            texts = ["I need a taxi to the station.", "What time would you like to leave?", "At 5 pm please."]
            turn_spans = [[], [], []]
        dialogues.append(Dialogue.from_texts(texts))
        spans.append(turn_spans)
    return dialogues, spans


def spans_to_json(spans) -> list:
    return [[[{"char_start": s.char_start, "char_end": s.char_end, "slot": s.slot} for s in ts] for ts in d] for d in spans]


__all__ = [
    "LARGE_LAYOUT", "DEFAULT_LAYOUT", "SyntheticData", "make_knowledge_base", "make_dialogues",
    "make_synthetic", "make_attraction_sources", "spans_to_json", "spoken_name", "Speaker", "Turn",
]
