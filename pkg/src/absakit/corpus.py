"""Review corpus ingestion and per-subtask dataset expansion.

Loads SemEval-2014-style XML review files into immutable corpus objects,
expands them into per-aspect sentiment-classification samples, merges
corpora across domains, and computes the dataset statistics used to sanity
check a loaded corpus (sentence totals, per-sentence aspect histogram,
per-polarity sample counts).

All types are frozen dataclasses and all operations are pure functions, so
everything here is safe to share across threads.
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

logger = logging.getLogger(__name__)

DOMAINS = ("laptops", "restaurants")
SPLITS = ("train", "test")


class CorpusError(Exception):
    """Base class for corpus loading/combination failures."""


class MalformedXml(CorpusError):
    """The input file is not well-formed XML."""


class SchemaViolation(CorpusError):
    """Well-formed XML that does not follow the annotation schema."""


class DuplicateId(CorpusError):
    """Two sentences in one corpus share an id."""


class SplitMismatch(CorpusError):
    """Attempt to merge corpora from different splits."""


class SentimentPolarity(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NEUTRAL = "neutral"
    CONFLICT = "conflict"

    def __str__(self) -> str:  # json-friendly
        return self.value


#: Polarities that may appear in emitted training/evaluation data.
EMITTED_POLARITIES = (
    SentimentPolarity.POSITIVE,
    SentimentPolarity.NEGATIVE,
    SentimentPolarity.NEUTRAL,
)


def dedup_key(term: str) -> str:
    """Canonical key for merging duplicate gold aspects: trim + lowercase only.

    Deliberately does not collapse internal whitespace; the surface form is
    kept for prompt rendering and evaluation strings.
    """
    return term.strip().lower()


@dataclass(frozen=True)
class AspectAnnotation:
    """One gold aspect: surface form, polarity, optional character span."""

    term: str
    polarity: SentimentPolarity
    span: Optional[tuple[int, int]] = None

    def __post_init__(self) -> None:
        if not self.term.strip():
            raise ValueError("aspect term must be non-empty after trimming")
        if self.span is not None:
            start, end = self.span
            if start < 0 or end < start:
                raise ValueError(f"invalid aspect span {self.span!r}")


@dataclass(frozen=True)
class ReviewSentence:
    """One annotated review sentence with its gold aspects (may be empty).

    Gold data may annotate the same (term, polarity) at several positions in
    one sentence; every occurrence is preserved here because the published
    dataset statistics and the per-aspect sample expansion count occurrences.
    Extraction targets and scoring apply set semantics downstream.
    """

    id: str
    text: str
    domain: str
    aspects: tuple[AspectAnnotation, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "aspects", tuple(self.aspects))
        if not self.text:
            raise ValueError(f"sentence {self.id!r}: text must be non-empty")
        for a in self.aspects:
            if a.span is not None:
                start, end = a.span
                if self.text[start:end] != a.term:
                    raise ValueError(
                        f"sentence {self.id!r}: span {a.span!r} does not cover "
                        f"term {a.term!r}"
                    )


@dataclass(frozen=True)
class Corpus:
    """An ordered collection of review sentences from one domain and split.

    Sentence order is preserved from the source file; downstream prompting
    and batching determinism depends on it.
    """

    domain: str
    split: str
    sentences: tuple[ReviewSentence, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "sentences", tuple(self.sentences))
        seen: set[str] = set()
        for s in self.sentences:
            if s.id in seen:
                raise DuplicateId(f"duplicate sentence id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.sentences)

    def by_id(self) -> dict[str, ReviewSentence]:
        return {s.id: s for s in self.sentences}


@dataclass(frozen=True)
class AtscSample:
    """One (sentence, aspect term) classification sample; never conflict."""

    sentence: ReviewSentence
    aspect_term: str
    gold_polarity: SentimentPolarity

    def __post_init__(self) -> None:
        if self.gold_polarity not in EMITTED_POLARITIES:
            raise ValueError(
                f"gold polarity must be one of {[p.value for p in EMITTED_POLARITIES]}, "
                f"got {self.gold_polarity!r}"
            )


@dataclass(frozen=True)
class StatsRecord:
    """Counts describing one corpus: totals, aspect histogram, polarity mix."""

    domain: str
    split: str
    n_sentences: int
    aspect_histogram: dict[int, int] = field(default_factory=dict)
    polarity_counts: dict[str, int] = field(default_factory=dict)
    conflict_aspects: int = 0

    def histogram_total(self) -> int:
        return sum(self.aspect_histogram.values())


def load_semeval_xml(
    path: str | Path, domain: str, split: str, *, merge_duplicates: bool = False
) -> Corpus:
    """Load one SemEval-2014 Task-4 style XML file into a Corpus.

    The file holds ``sentence`` elements with an ``id`` attribute, a ``text``
    child, and an optional ``aspectTerms`` child whose ``aspectTerm`` elements
    carry ``term``/``polarity`` attributes and optional ``from``/``to``
    character offsets. Offsets that do not reproduce the term are dropped
    with a counted warning.

    Duplicate (term, polarity) occurrences within one sentence are counted
    and kept by default: the published dataset statistics and the per-aspect
    sample expansion both count occurrences. Pass ``merge_duplicates=True``
    to collapse them at load time instead.

    Raises MalformedXml, SchemaViolation, or DuplicateId; diagnostics name
    the offending sentence id.
    """
    path = Path(path)
    if domain not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        raise MalformedXml(f"{path}: {exc}") from exc

    sentences: list[ReviewSentence] = []
    seen_ids: set[str] = set()
    duplicate_count = 0
    dropped_spans = 0

    for el in tree.getroot().iter("sentence"):
        sid = el.get("id")
        if sid is None:
            raise SchemaViolation(f"{path}: sentence element without id attribute")
        if sid in seen_ids:
            raise DuplicateId(f"{path}: duplicate sentence id {sid!r}")
        seen_ids.add(sid)

        text_el = el.find("text")
        if text_el is None or not (text_el.text or "").strip():
            raise SchemaViolation(f"{path}: sentence {sid!r} has missing or empty text")
        text = text_el.text or ""

        aspects: list[AspectAnnotation] = []
        keys: set[tuple[str, SentimentPolarity]] = set()
        terms_el = el.find("aspectTerms")
        if terms_el is not None:
            for term_el in terms_el.findall("aspectTerm"):
                term = term_el.get("term")
                if term is None or not term.strip():
                    raise SchemaViolation(
                        f"{path}: sentence {sid!r} has an empty aspect term"
                    )
                raw_polarity = term_el.get("polarity")
                try:
                    polarity = SentimentPolarity(raw_polarity)
                except ValueError:
                    raise SchemaViolation(
                        f"{path}: sentence {sid!r} has unknown polarity "
                        f"{raw_polarity!r} for term {term!r}"
                    ) from None

                span: Optional[tuple[int, int]] = None
                start_attr, end_attr = term_el.get("from"), term_el.get("to")
                if start_attr is not None and end_attr is not None:
                    try:
                        span = (int(start_attr), int(end_attr))
                    except ValueError:
                        raise SchemaViolation(
                            f"{path}: sentence {sid!r} has non-integer span "
                            f"({start_attr!r}, {end_attr!r})"
                        ) from None
                    if text[span[0] : span[1]] != term:
                        dropped_spans += 1
                        span = None

                key = (dedup_key(term), polarity)
                if key in keys:
                    duplicate_count += 1
                    if merge_duplicates:
                        continue
                keys.add(key)
                aspects.append(AspectAnnotation(term=term, polarity=polarity, span=span))

        sentences.append(
            ReviewSentence(id=sid, text=text, domain=domain, aspects=tuple(aspects))
        )

    if duplicate_count:
        logger.warning(
            "%s: %s %d duplicate (term, polarity) gold aspect occurrence(s)",
            path.name,
            "merged" if merge_duplicates else "kept",
            duplicate_count,
        )
    if dropped_spans:
        logger.warning(
            "%s: dropped %d aspect span(s) that did not match the sentence text",
            path.name,
            dropped_spans,
        )
    return Corpus(domain=domain, split=split, sentences=tuple(sentences))


def expand_atsc(corpus: Corpus) -> list[AtscSample]:
    """Expand a corpus into one sample per non-conflict gold aspect.

    A sentence with m gold aspects yields m samples (conflict-labeled ones
    are dropped and counted); zero-aspect sentences contribute nothing.
    Sample order follows sentence order, then gold aspect order.
    """
    samples: list[AtscSample] = []
    dropped_conflict = 0
    for sentence in corpus.sentences:
        for aspect in sentence.aspects:
            if aspect.polarity is SentimentPolarity.CONFLICT:
                dropped_conflict += 1
                continue
            samples.append(
                AtscSample(
                    sentence=sentence,
                    aspect_term=aspect.term,
                    gold_polarity=aspect.polarity,
                )
            )
    if dropped_conflict:
        logger.info(
            "expand_atsc(%s/%s): dropped %d conflict-labeled aspect(s)",
            corpus.domain,
            corpus.split,
            dropped_conflict,
        )
    return samples


def merge_corpora(a: Corpus, b: Corpus) -> Corpus:
    """Concatenate two same-split corpora (a then b) into a mixed corpus.

    Every sentence id is prefixed with its own domain tag so ids stay unique
    even when the raw ids collide across domains.
    """
    if a.split != b.split:
        raise SplitMismatch(f"cannot merge split {a.split!r} with {b.split!r}")
    merged = [
        replace(s, id=f"{s.domain}:{s.id}") for s in (*a.sentences, *b.sentences)
    ]
    return Corpus(domain=f"{a.domain}+{b.domain}", split=a.split, sentences=tuple(merged))


def corpus_stats(corpus: Corpus) -> StatsRecord:
    """Compute sentence totals, per-sentence aspect histogram, and polarity counts.

    The histogram counts all gold aspects (conflict included), matching how
    the extraction-task statistics are tabulated; the polarity counts cover
    only the three polarities that survive into classification samples.
    """
    histogram: Counter[int] = Counter(len(s.aspects) for s in corpus.sentences)
    histogram.setdefault(0, 0)
    polarity: Counter[str] = Counter()
    conflict = 0
    for sentence in corpus.sentences:
        for aspect in sentence.aspects:
            if aspect.polarity is SentimentPolarity.CONFLICT:
                conflict += 1
            else:
                polarity[aspect.polarity.value] += 1
    for p in EMITTED_POLARITIES:
        polarity.setdefault(p.value, 0)
    return StatsRecord(
        domain=corpus.domain,
        split=corpus.split,
        n_sentences=len(corpus),
        aspect_histogram=dict(sorted(histogram.items())),
        polarity_counts=dict(polarity),
        conflict_aspects=conflict,
    )


def drop_conflict_aspects(corpus: Corpus) -> Corpus:
    """Return a corpus with conflict-labeled gold aspects removed everywhere."""
    sentences = tuple(
        replace(
            s,
            aspects=tuple(
                a for a in s.aspects if a.polarity is not SentimentPolarity.CONFLICT
            ),
        )
        for s in corpus.sentences
    )
    return replace(corpus, sentences=sentences)


# --- line-delimited serialization -----------------------------------------
#
# One sentence per line:
#   {"id", "domain", "split", "text", "aspects": [{"term", "polarity", "span"}]}


def sentence_to_record(sentence: ReviewSentence, split: str) -> dict:
    return {
        "id": sentence.id,
        "domain": sentence.domain,
        "split": split,
        "text": sentence.text,
        "aspects": [
            {
                "term": a.term,
                "polarity": a.polarity.value,
                "span": list(a.span) if a.span is not None else None,
            }
            for a in sentence.aspects
        ],
    }


def sentence_from_record(record: dict) -> ReviewSentence:
    aspects = tuple(
        AspectAnnotation(
            term=a["term"],
            polarity=SentimentPolarity(a["polarity"]),
            span=tuple(a["span"]) if a.get("span") else None,
        )
        for a in record.get("aspects", [])
    )
    return ReviewSentence(
        id=record["id"], text=record["text"], domain=record["domain"], aspects=aspects
    )


def write_corpus_jsonl(corpus: Corpus, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for sentence in corpus.sentences:
            fh.write(json.dumps(sentence_to_record(sentence, corpus.split), ensure_ascii=False))
            fh.write("\n")


def read_corpus_jsonl(
    path: str | Path, domain: str | None = None, split: str | None = None
) -> Corpus:
    """Read a serialized corpus back; domain/split are inferred from records
    unless overridden (required for empty files)."""
    path = Path(path)
    sentences: list[ReviewSentence] = []
    splits: set[str] = set()
    domains_in_order: list[str] = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}:{lineno}: invalid JSON record") from exc
            sentences.append(sentence_from_record(record))
            if record.get("split"):
                splits.add(record["split"])
            d = record["domain"]
            if d not in domains_in_order:
                domains_in_order.append(d)
    if split is None:
        if len(splits) != 1:
            raise SchemaViolation(
                f"{path}: cannot infer split from records (saw {sorted(splits)!r}); "
                "pass split= explicitly"
            )
        split = splits.pop()
    if domain is None:
        if not domains_in_order:
            raise SchemaViolation(f"{path}: empty corpus file; pass domain= explicitly")
        domain = "+".join(domains_in_order)
    return Corpus(domain=domain, split=split, sentences=tuple(sentences))
