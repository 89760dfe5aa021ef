"""Parsers turning raw generated text back into structured predictions.

Every parser is total: any input string, including the empty string, yields
a prediction object. Anomalies (non-label text, fragments that fail to
parse) are preserved on the prediction instead of raised. Matching is
string-level: case-insensitive and whitespace-normalized, no stemming.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

#: Sentinel emitted for sentences with no opinionated aspect.
NO_ASPECT_TERM = "noaspectterm"
#: Sentinel pair emitted by the joint task for zero-aspect sentences.
JOINT_EMPTY_OUTPUT = "noaspectterm:none"

POLARITY_WORDS = ("positive", "negative", "neutral")

_JOINT_EMPTY_RE = re.compile(r"^noaspectterm\s*:\s*none$")


def canonicalize_term(text: str) -> str:
    """Lowercase and whitespace-normalize a term for matching."""
    return " ".join(text.split()).lower()


def canonicalize_label(text: str) -> str:
    """Lowercase, trim, and strip one trailing period from a label word."""
    label = text.strip().lower()
    if label.endswith("."):
        label = label[:-1].rstrip()
    return label


@dataclass(frozen=True)
class AtePrediction:
    """Ordered set of canonicalized aspect terms; empty means 'no aspect'."""

    terms: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("predicted terms must be unique")
        if NO_ASPECT_TERM in self.terms:
            raise ValueError(f"{NO_ASPECT_TERM!r} is a sentinel, not a term")


@dataclass(frozen=True)
class AtscPrediction:
    """A polarity label, or 'invalid' with the raw text preserved."""

    label: str
    raw: str

    def __post_init__(self) -> None:
        if self.label not in (*POLARITY_WORDS, "invalid"):
            raise ValueError(f"unknown label {self.label!r}")


@dataclass(frozen=True)
class JointPrediction:
    """Ordered set of (term, polarity) pairs plus any unparseable fragments."""

    pairs: tuple[tuple[str, str], ...] = ()
    malformed_fragments: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        object.__setattr__(
            self, "malformed_fragments", tuple(self.malformed_fragments)
        )
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("predicted pairs must be unique")
        for _, polarity in self.pairs:
            if polarity not in POLARITY_WORDS:
                raise ValueError(f"unknown pair polarity {polarity!r}")


def parse_ate(raw: str) -> AtePrediction:
    """Parse an extraction output: comma-separated terms or the sentinel."""
    if canonicalize_term(raw) == NO_ASPECT_TERM:
        return AtePrediction(())
    terms: list[str] = []
    for fragment in raw.split(","):
        term = canonicalize_term(fragment)
        if not term or term == NO_ASPECT_TERM:
            continue
        if term not in terms:
            terms.append(term)
    return AtePrediction(tuple(terms))


def parse_atsc(raw: str) -> AtscPrediction:
    label = canonicalize_label(raw)
    if label not in POLARITY_WORDS:
        return AtscPrediction(label="invalid", raw=raw)
    return AtscPrediction(label=label, raw=raw)


def parse_joint(raw: str) -> JointPrediction:
    """Parse a joint output: comma-separated "term:polarity" fragments.

    Each fragment splits at its rightmost colon, so terms containing ":"
    survive as long as the polarity suffix is well-formed. Fragments that
    do not parse are kept in ``malformed_fragments``.
    """
    if _JOINT_EMPTY_RE.match(raw.strip().lower()):
        return JointPrediction((), ())
    pairs: list[tuple[str, str]] = []
    malformed: list[str] = []
    for fragment in raw.split(","):
        if not fragment.strip():
            continue
        term_part, sep, polarity_part = fragment.rpartition(":")
        polarity = canonicalize_label(polarity_part)
        term = canonicalize_term(term_part)
        if not sep or polarity not in POLARITY_WORDS or not term:
            malformed.append(fragment.strip())
            continue
        pair = (term, polarity)
        if pair not in pairs:
            pairs.append(pair)
    return JointPrediction(tuple(pairs), tuple(malformed))


# --- prediction records ------------------------------------------------------
#
# Line-delimited interchange so external scorers (and external models) can
# produce or consume predictions:
#   {"sentence_id", "subtask", "aspect_term", "raw", "parsed", "flags"}


def prediction_to_record(
    sentence_id: str,
    subtask: str,
    raw: str,
    prediction: AtePrediction | AtscPrediction | JointPrediction,
    aspect_term: Optional[str] = None,
) -> dict:
    flags: list[str] = []
    if isinstance(prediction, AtePrediction):
        parsed: dict = {"terms": list(prediction.terms)}
    elif isinstance(prediction, AtscPrediction):
        parsed = {"label": prediction.label}
        if prediction.label == "invalid":
            flags.append("invalid_label")
    elif isinstance(prediction, JointPrediction):
        parsed = {
            "pairs": [list(p) for p in prediction.pairs],
            "malformed": list(prediction.malformed_fragments),
        }
        if prediction.malformed_fragments:
            flags.append("malformed_fragments")
    else:
        raise TypeError(f"unsupported prediction type {type(prediction)!r}")
    record = {
        "sentence_id": sentence_id,
        "subtask": subtask,
        "raw": raw,
        "parsed": parsed,
        "flags": flags,
    }
    if aspect_term is not None:
        record["aspect_term"] = aspect_term
    return record


def write_predictions_jsonl(records: Iterable[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False))
            fh.write("\n")


def read_predictions_jsonl(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records
