"""Instruction prompt rendering for the three ABSA subtasks.

The instruction wording lives in versioned plain-text template files (one
per subtask) with named slots: a task definition, two in-context examples
per sentiment block, and a completion cue. The two shipped prompt variants
select blocks from the same file: variant 1 renders the definition plus the
positive examples; variant 2 additionally renders the negative and neutral
examples, in that fixed order. Rendering is pure and byte-deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

from .corpus import (
    AtscSample,
    Corpus,
    ReviewSentence,
    SentimentPolarity,
    expand_atsc,
)
from .decoding import JOINT_EMPTY_OUTPUT, NO_ASPECT_TERM, canonicalize_term

logger = logging.getLogger(__name__)


class SubtaskKind(str, Enum):
    ATE = "ATE"
    ATSC = "ATSC"
    JOINT = "JOINT"

    def __str__(self) -> str:
        return self.value


class PromptVariant(str, Enum):
    V1 = "V1"
    V2 = "V2"

    def __str__(self) -> str:
        return self.value


_TEMPLATE_FILES = {
    SubtaskKind.ATE: "ate.txt",
    SubtaskKind.ATSC: "atsc.txt",
    SubtaskKind.JOINT: "joint.txt",
}

_EXAMPLES_PER_BLOCK = 2


class TemplateError(Exception):
    """A template file is missing a slot or has an unpaired example line."""


class UnrepresentableTerm(Exception):
    """A gold term cannot survive the target syntax (separator collision)."""

    def __init__(self, sentence_id: str, term: str, reason: str):
        super().__init__(f"sentence {sentence_id!r}: term {term!r} {reason}")
        self.sentence_id = sentence_id
        self.term = term


@dataclass(frozen=True)
class InstructionPrompt:
    """Parsed template for one subtask: definition, example pairs, cue.

    Example pairs hold the fully rendered input and output lines (label
    prefixes included) so the shipped wording is reproduced byte-for-byte.
    """

    definition: str
    positive_examples: tuple[tuple[str, str], ...]
    negative_examples: tuple[tuple[str, str], ...]
    neutral_examples: tuple[tuple[str, str], ...]
    completion_cue: str

    def __post_init__(self) -> None:
        if not self.definition:
            raise TemplateError("definition must be non-empty")
        for name, pairs in (
            ("positive", self.positive_examples),
            ("negative", self.negative_examples),
            ("neutral", self.neutral_examples),
        ):
            if len(pairs) != _EXAMPLES_PER_BLOCK:
                raise TemplateError(
                    f"{name} block must hold exactly {_EXAMPLES_PER_BLOCK} examples, "
                    f"got {len(pairs)}"
                )


@dataclass(frozen=True)
class PromptConfig:
    """A prompt variant plus the per-subtask instruction templates."""

    variant: PromptVariant
    prompts: dict[SubtaskKind, InstructionPrompt] = field(default_factory=dict)


@dataclass(frozen=True)
class PromptMeta:
    sentence_id: str
    subtask: SubtaskKind
    aspect_term: Optional[str] = None


@dataclass(frozen=True)
class PromptedExample:
    """One rendered (input text, target text) pair."""

    input_text: str
    target_text: str
    meta: PromptMeta

    def __post_init__(self) -> None:
        if not self.target_text:
            raise ValueError("target_text must be non-empty")


def _parse_sections(text: str, source: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for line in text.splitlines():
        if line.startswith("[") and line.rstrip().endswith("]"):
            current = line.strip()[1:-1]
            sections[current] = []
            continue
        if current is None:
            if line.strip():
                raise TemplateError(f"{source}: content before first [section]")
            continue
        sections[current].append(line)
    # trailing/leading blank lines inside a section are layout, not content
    return {
        name: [ln for ln in lines if ln.strip()] for name, lines in sections.items()
    }


def _pair_up(lines: list[str], section: str, source: str) -> tuple[tuple[str, str], ...]:
    if len(lines) % 2 != 0:
        raise TemplateError(f"{source}: [{section}] has an unpaired example line")
    return tuple((lines[i], lines[i + 1]) for i in range(0, len(lines), 2))


def parse_instruction_template(text: str, source: str = "<template>") -> InstructionPrompt:
    sections = _parse_sections(text, source)
    required = (
        "definition",
        "positive_examples",
        "negative_examples",
        "neutral_examples",
        "completion_cue",
    )
    for name in required:
        if name not in sections:
            raise TemplateError(f"{source}: missing [{name}] section")
    return InstructionPrompt(
        definition="\n".join(sections["definition"]),
        positive_examples=_pair_up(sections["positive_examples"], "positive_examples", source),
        negative_examples=_pair_up(sections["negative_examples"], "negative_examples", source),
        neutral_examples=_pair_up(sections["neutral_examples"], "neutral_examples", source),
        completion_cue="\n".join(sections["completion_cue"]),
    )


def load_prompt_config(
    variant: PromptVariant | str, template_dir: str | Path | None = None
) -> PromptConfig:
    """Load the per-subtask instruction templates for one prompt variant.

    ``template_dir`` overrides the packaged defaults, enabling wording
    experiments without code changes.
    """
    variant = PromptVariant(variant)
    prompts: dict[SubtaskKind, InstructionPrompt] = {}
    for subtask, filename in _TEMPLATE_FILES.items():
        if template_dir is not None:
            text = (Path(template_dir) / filename).read_text(encoding="utf-8")
        else:
            text = (
                resources.files("absakit").joinpath("templates", filename)
            ).read_text(encoding="utf-8")
        prompts[subtask] = parse_instruction_template(text, source=filename)
    return PromptConfig(variant=variant, prompts=prompts)


def _target_aspects(sentence: ReviewSentence, keep_conflict: bool):
    if keep_conflict:
        return sentence.aspects
    return tuple(
        a for a in sentence.aspects if a.polarity is not SentimentPolarity.CONFLICT
    )


def render_ate_target(sentence: ReviewSentence, *, keep_conflict: bool = False) -> str:
    """Join gold aspect terms with ", " in gold order; sentinel when empty.

    The target is a term set: repeated gold occurrences of the same
    canonical term render once, keeping the first surface form. A term
    containing "," cannot be represented in the comma-separated output and
    raises UnrepresentableTerm.
    """
    aspects = _target_aspects(sentence, keep_conflict)
    for a in aspects:
        if "," in a.term:
            raise UnrepresentableTerm(sentence.id, a.term, "contains the ',' separator")
    terms: list[str] = []
    seen: set[str] = set()
    for a in aspects:
        key = canonicalize_term(a.term)
        if key in seen:
            continue
        seen.add(key)
        terms.append(a.term)
    if not terms:
        return NO_ASPECT_TERM
    return ", ".join(terms)


def render_atsc_target(sample: AtscSample) -> str:
    return sample.gold_polarity.value


def render_joint_target(
    sentence: ReviewSentence, *, empty_target: str = JOINT_EMPTY_OUTPUT
) -> str:
    """Join "term:polarity" pairs with ", " in gold order; sentinel when empty.

    The target is a pair set: repeated occurrences of the same canonical
    (term, polarity) render once. Conflict-labeled aspects are always
    dropped here: the pair grammar has a fixed three-polarity vocabulary.
    Terms containing "," or ":" raise UnrepresentableTerm.
    """
    aspects = _target_aspects(sentence, keep_conflict=False)
    for a in aspects:
        if "," in a.term:
            raise UnrepresentableTerm(sentence.id, a.term, "contains the ',' separator")
        if ":" in a.term:
            raise UnrepresentableTerm(sentence.id, a.term, "contains the ':' separator")
    pairs: list[str] = []
    seen: set[tuple[str, str]] = set()
    for a in aspects:
        key = (canonicalize_term(a.term), a.polarity.value)
        if key in seen:
            continue
        seen.add(key)
        pairs.append(f"{a.term}:{a.polarity.value}")
    if not pairs:
        return empty_target
    return ", ".join(pairs)


def _example_block(pairs: tuple[tuple[str, str], ...]) -> str:
    return "\n".join(line for pair in pairs for line in pair)


def _sample_line(subtask: SubtaskKind, sample: Union[ReviewSentence, AtscSample]) -> str:
    if subtask is SubtaskKind.ATSC:
        assert isinstance(sample, AtscSample)
        return f"input: {sample.sentence.text} Aspect: {sample.aspect_term}."
    assert isinstance(sample, ReviewSentence)
    return f"input: {sample.text}"


def render_prompt(
    config: PromptConfig,
    subtask: SubtaskKind,
    sample: Union[ReviewSentence, AtscSample],
    *,
    keep_conflict: bool = False,
) -> PromptedExample:
    """Render one (input text, target text) pair for a subtask and variant.

    The input is the definition block, the example blocks selected by the
    variant, the completion cue, and the unanswered sample, joined by single
    newlines. The target never appears inside the input.
    """
    subtask = SubtaskKind(subtask)
    prompt = config.prompts[subtask]
    blocks = [prompt.definition, _example_block(prompt.positive_examples)]
    if config.variant is PromptVariant.V2:
        blocks.append(_example_block(prompt.negative_examples))
        blocks.append(_example_block(prompt.neutral_examples))
    blocks.append(prompt.completion_cue)
    blocks.append(_sample_line(subtask, sample))

    if subtask is SubtaskKind.ATE:
        assert isinstance(sample, ReviewSentence)
        target = render_ate_target(sample, keep_conflict=keep_conflict)
        meta = PromptMeta(sentence_id=sample.id, subtask=subtask)
    elif subtask is SubtaskKind.ATSC:
        assert isinstance(sample, AtscSample)
        target = render_atsc_target(sample)
        meta = PromptMeta(
            sentence_id=sample.sentence.id, subtask=subtask, aspect_term=sample.aspect_term
        )
    else:
        assert isinstance(sample, ReviewSentence)
        target = render_joint_target(sample)
        meta = PromptMeta(sentence_id=sample.id, subtask=subtask)

    return PromptedExample(input_text="\n".join(blocks), target_text=target, meta=meta)


def build_dataset(
    config: PromptConfig,
    subtask: SubtaskKind,
    corpus: Corpus,
    *,
    keep_conflict: bool = False,
) -> list[PromptedExample]:
    """Render the whole corpus for one subtask, preserving order.

    ATE/JOINT yield one example per sentence; ATSC yields one per expanded
    (sentence, aspect) sample. Sentences whose gold targets cannot be
    represented are skipped with a counted warning.
    """
    subtask = SubtaskKind(subtask)
    examples: list[PromptedExample] = []
    skipped = 0
    if subtask is SubtaskKind.ATSC:
        for sample in expand_atsc(corpus):
            examples.append(render_prompt(config, subtask, sample))
        return examples
    for sentence in corpus.sentences:
        try:
            examples.append(
                render_prompt(config, subtask, sentence, keep_conflict=keep_conflict)
            )
        except UnrepresentableTerm as exc:
            skipped += 1
            logger.warning("excluded from %s dataset: %s", subtask.value, exc)
    if skipped:
        logger.warning(
            "%s/%s: excluded %d sentence(s) with unrepresentable gold terms",
            corpus.domain,
            subtask.value,
            skipped,
        )
    return examples


def unrepresentable_sentences(
    corpus: Corpus, subtask: SubtaskKind
) -> list[tuple[str, str]]:
    """List (sentence id, term) pairs whose gold targets cannot be rendered."""
    subtask = SubtaskKind(subtask)
    if subtask is SubtaskKind.ATSC:
        return []
    render = render_ate_target if subtask is SubtaskKind.ATE else render_joint_target
    bad: list[tuple[str, str]] = []
    for sentence in corpus.sentences:
        try:
            render(sentence)
        except UnrepresentableTerm as exc:
            bad.append((exc.sentence_id, exc.term))
    return bad


# --- dataset serialization ---------------------------------------------------


def example_to_record(example: PromptedExample) -> dict:
    return {
        "input_text": example.input_text,
        "target_text": example.target_text,
        "meta": {
            "sentence_id": example.meta.sentence_id,
            "subtask": example.meta.subtask.value,
            "aspect_term": example.meta.aspect_term,
        },
    }


def example_from_record(record: dict) -> PromptedExample:
    meta = record["meta"]
    return PromptedExample(
        input_text=record["input_text"],
        target_text=record["target_text"],
        meta=PromptMeta(
            sentence_id=meta["sentence_id"],
            subtask=SubtaskKind(meta["subtask"]),
            aspect_term=meta.get("aspect_term"),
        ),
    )


def write_examples_jsonl(examples: Iterable[PromptedExample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(json.dumps(example_to_record(example), ensure_ascii=False))
            fh.write("\n")


def read_examples_jsonl(path: str | Path) -> list[PromptedExample]:
    examples = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                examples.append(example_from_record(json.loads(line)))
    return examples
