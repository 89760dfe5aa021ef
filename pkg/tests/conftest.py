from __future__ import annotations

import os
from pathlib import Path

import pytest
from hypothesis import settings

from absakit.corpus import (
    AspectAnnotation,
    Corpus,
    ReviewSentence,
    SentimentPolarity,
)
from absakit.experiments import CorpusStore

settings.register_profile("default", deadline=None)
settings.load_profile("default")

REPO_ROOT = Path(__file__).resolve().parent.parent
GOLDENS_DIR = Path(__file__).resolve().parent / "goldens"

# Accepted file name patterns for the official gold XML distributions.
SEMEVAL_PATTERNS = {
    ("laptops", "train"): ("Laptop*Train*.xml", "laptops_train.xml"),
    ("laptops", "test"): ("Laptop*Test*.xml", "laptops_test.xml"),
    ("restaurants", "train"): ("Restaurant*Train*.xml", "restaurants_train.xml"),
    ("restaurants", "test"): ("Restaurant*Test*.xml", "restaurants_test.xml"),
}


def semeval_data_dir() -> Path:
    return Path(os.environ.get("ABSAKIT_DATA_DIR", REPO_ROOT / "data" / "semeval2014"))


def find_semeval_file(domain: str, split: str) -> Path | None:
    data_dir = semeval_data_dir()
    if not data_dir.is_dir():
        return None
    for pattern in SEMEVAL_PATTERNS[(domain, split)]:
        matches = sorted(data_dir.glob(pattern))
        if matches:
            return matches[0]
    return None


def require_semeval_file(domain: str, split: str) -> Path:
    path = find_semeval_file(domain, split)
    if path is None:
        pytest.skip(
            f"SemEval-2014 gold file for {domain}/{split} not found under "
            f"{semeval_data_dir()} (set ABSAKIT_DATA_DIR); the dataset is "
            "licensed and not bundled"
        )
    return path


def sent(
    sid: str,
    text: str,
    aspects: list[tuple[str, str]] = (),
    domain: str = "laptops",
) -> ReviewSentence:
    return ReviewSentence(
        id=sid,
        text=text,
        domain=domain,
        aspects=tuple(
            AspectAnnotation(term=t, polarity=SentimentPolarity(p)) for t, p in aspects
        ),
    )


def laptops_train() -> Corpus:
    d = "laptops"
    return Corpus(
        domain=d,
        split="train",
        sentences=(
            sent("l1", "The battery life is amazing and the screen is crisp.",
                 [("battery life", "positive"), ("screen", "positive")], d),
            sent("l2", "I hate the keyboard.", [("keyboard", "negative")], d),
            sent("l3", "It boots in about ten seconds.", [], d),
            sent("l4", "The trackpad is okay, nothing special.",
                 [("trackpad", "neutral")], d),
            sent("l5", "Sound is loud but tinny.", [("sound", "conflict")], d),
            sent("l6", "Price and performance are both great.",
                 [("price", "positive"), ("performance", "positive")], d),
            sent("l7", "The fan noise drives me crazy.", [("fan noise", "negative")], d),
            sent("l8", "I carry it everywhere.", [], d),
        ),
    )


def laptops_test() -> Corpus:
    d = "laptops"
    return Corpus(
        domain=d,
        split="test",
        sentences=(
            sent("lt1", "Great screen and a sturdy hinge.",
                 [("screen", "positive"), ("hinge", "positive")], d),
            sent("lt2", "The power brick is heavy.", [("power brick", "negative")], d),
            sent("lt3", "Works as expected.", [], d),
            sent("lt4", "The webcam is standard.", [("webcam", "neutral")], d),
        ),
    )


def restaurants_train() -> Corpus:
    d = "restaurants"
    return Corpus(
        domain=d,
        split="train",
        sentences=(
            sent("r1", "The pasta was delicious but the service was slow.",
                 [("pasta", "positive"), ("service", "negative")], d),
            sent("r2", "Lovely patio in the summer.", [("patio", "positive")], d),
            sent("r3", "We waited an hour.", [], d),
            sent("r4", "The menu lists twenty wines.", [("menu", "neutral"), ("wines", "neutral")], d),
            sent("r5", "Dessert was huge and too sweet.", [("dessert", "conflict")], d),
            sent("r6", "Their bread is baked daily.", [("bread", "positive")], d),
            sent("r7", "The hostess ignored us.", [("hostess", "negative")], d),
            sent("r8", "It is near the station.", [], d),
        ),
    )


def restaurants_test() -> Corpus:
    d = "restaurants"
    return Corpus(
        domain=d,
        split="test",
        sentences=(
            sent("rt1", "The soup is fantastic.", [("soup", "positive")], d),
            sent("rt2", "Rude waiters and cold coffee.",
                 [("waiters", "negative"), ("coffee", "negative")], d),
            sent("rt3", "A corner place.", [], d),
            sent("rt4", "Portions are average.", [("portions", "neutral")], d),
        ),
    )


@pytest.fixture()
def two_domain_store() -> CorpusStore:
    return CorpusStore(
        {
            ("laptops", "train"): laptops_train(),
            ("laptops", "test"): laptops_test(),
            ("restaurants", "train"): restaurants_train(),
            ("restaurants", "test"): restaurants_test(),
        }
    )


@pytest.fixture()
def cheeseburger_sentence() -> ReviewSentence:
    return sent(
        "cb1",
        "My son and his girlfriend both wanted cheeseburgers and they were huge!",
        [("cheeseburgers", "positive")],
        "restaurants",
    )
