"""Command-line surface for the pipeline.

Every command is scriptable: ``--format json`` mirrors the human output in
machine-readable form, exit status is 0 only on full success, and all file
formats match the producing modules so predictions from external models can
be scored with the same tooling.
"""

from __future__ import annotations

import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from . import backends as backends_mod
from .backends import Hyperparameters, create_backend, train as train_backend
from .corpus import (
    CorpusError,
    corpus_stats,
    expand_atsc,
    load_semeval_xml,
    read_corpus_jsonl,
    write_corpus_jsonl,
)
from .decoding import (
    parse_ate,
    parse_atsc,
    parse_joint,
    prediction_to_record,
    read_predictions_jsonl,
    write_predictions_jsonl,
)
from .experiments import (
    ExperimentError,
    report_from_store,
    run_experiment,
    read_experiment_spec,
)
from .metrics import (
    IdMismatch,
    MetricsError,
    format_report,
    gold_pair_set,
    gold_term_set,
    report_to_dict,
    score_ate,
    score_atsc,
    score_joint,
)
from .prompting import (
    SubtaskKind,
    PromptVariant,
    build_dataset,
    load_prompt_config,
    read_examples_jsonl,
    unrepresentable_sentences,
    write_examples_jsonl,
)

STORE_ROOT_ENV = "ABSAKIT_STORE_ROOT"

_format_option = click.option(
    "--format",
    "output_format",
    type=click.Choice(["text", "json"]),
    default="text",
    show_default=True,
    help="Human-readable text or machine-readable JSON.",
)


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _emit(output_format: str, text: str, payload: dict) -> None:
    if output_format == "json":
        click.echo(json.dumps(payload, ensure_ascii=False))
    else:
        click.echo(text)


@click.group()
def main() -> None:
    """Aspect-based sentiment analysis pipeline."""


@main.command()
@click.option("--input", "input_path", type=click.Path(path_type=Path), required=True)
@click.option("--domain", type=click.Choice(["laptops", "restaurants"]), required=True)
@click.option("--split", type=click.Choice(["train", "test"]), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@_format_option
def ingest(input_path: Path, domain: str, split: str, out_path: Path, output_format: str) -> None:
    """Load a SemEval-2014 style XML file and serialize the corpus."""
    if not input_path.exists():
        _fail(f"input file not found: {input_path}")
    try:
        corpus = load_semeval_xml(input_path, domain, split)
    except CorpusError as exc:
        _fail(str(exc))
    write_corpus_jsonl(corpus, out_path)
    stats = corpus_stats(corpus)
    text = (
        f"{stats.n_sentences} sentences ({domain}/{split})\n"
        f"aspect histogram: {stats.aspect_histogram}\n"
        f"polarity counts: {stats.polarity_counts} (+{stats.conflict_aspects} conflict)"
    )
    _emit(
        output_format,
        text,
        {
            "n_sentences": stats.n_sentences,
            "domain": domain,
            "split": split,
            "aspect_histogram": {str(k): v for k, v in stats.aspect_histogram.items()},
            "polarity_counts": stats.polarity_counts,
            "conflict_aspects": stats.conflict_aspects,
            "out": str(out_path),
        },
    )


@main.command()
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, path_type=Path), required=True)
@_format_option
def stats(corpus_path: Path, output_format: str) -> None:
    """Print statistics for a serialized corpus."""
    try:
        corpus = read_corpus_jsonl(corpus_path)
    except CorpusError as exc:
        _fail(str(exc))
    record = corpus_stats(corpus)
    text = (
        f"{record.n_sentences} sentences ({record.domain}/{record.split})\n"
        f"aspect histogram: {record.aspect_histogram}\n"
        f"polarity counts: {record.polarity_counts} (+{record.conflict_aspects} conflict)"
    )
    _emit(
        output_format,
        text,
        {
            "n_sentences": record.n_sentences,
            "domain": record.domain,
            "split": record.split,
            "aspect_histogram": {str(k): v for k, v in record.aspect_histogram.items()},
            "polarity_counts": record.polarity_counts,
            "conflict_aspects": record.conflict_aspects,
        },
    )


@main.command(name="build-prompts")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--subtask", type=click.Choice([s.value for s in SubtaskKind]), required=True)
@click.option("--variant", type=click.Choice([v.value for v in PromptVariant]), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--template-dir", type=click.Path(exists=True, path_type=Path), default=None)
@click.option(
    "--max-unrepresentable",
    type=int,
    default=10,
    show_default=True,
    help="Fail when more gold sentences than this cannot be rendered.",
)
@_format_option
def build_prompts(
    corpus_path: Path,
    subtask: str,
    variant: str,
    out_path: Path,
    template_dir: Path | None,
    max_unrepresentable: int,
    output_format: str,
) -> None:
    """Render the prompted (input, target) dataset for one subtask."""
    if not corpus_path.read_text(encoding="utf-8").strip():
        # an empty corpus renders an empty dataset; domain/split are moot
        write_examples_jsonl([], out_path)
        _emit(
            output_format,
            "0 examples",
            {"n_examples": 0, "subtask": subtask, "variant": variant,
             "excluded": 0, "out": str(out_path)},
        )
        return
    try:
        corpus = read_corpus_jsonl(corpus_path)
    except CorpusError as exc:
        _fail(str(exc))
    config = load_prompt_config(variant, template_dir=template_dir)
    kind = SubtaskKind(subtask)
    excluded = unrepresentable_sentences(corpus, kind)
    if len(excluded) > max_unrepresentable:
        _fail(
            f"{len(excluded)} sentences have unrepresentable gold terms "
            f"(limit {max_unrepresentable}): {excluded[:5]}..."
        )
    examples = build_dataset(config, kind, corpus)
    write_examples_jsonl(examples, out_path)
    _emit(
        output_format,
        f"{len(examples)} examples",
        {
            "n_examples": len(examples),
            "subtask": subtask,
            "variant": variant,
            "excluded": len(excluded),
            "out": str(out_path),
        },
    )


@main.command()
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--backend", "backend_id", default="toy", show_default=True)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--learning-rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--grad-accum", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@_format_option
def train(
    dataset_path: Path,
    backend_id: str,
    out_dir: Path,
    learning_rate: float | None,
    batch_size: int | None,
    grad_accum: int | None,
    epochs: int | None,
    seed: int,
    output_format: str,
) -> None:
    """Fine-tune a backend on a prompted dataset and save its checkpoint."""
    examples = read_examples_jsonl(dataset_path)
    if not examples:
        _fail(f"dataset {dataset_path} is empty")
    hp = Hyperparameters.for_subtask(examples[0].meta.subtask, seed=seed)
    overrides = {
        "learning_rate": learning_rate,
        "train_batch_size": batch_size,
        "gradient_accumulation_steps": grad_accum,
        "epochs": epochs,
    }
    hp = replace(hp, **{k: v for k, v in overrides.items() if v is not None})
    try:
        backend = create_backend(backend_id, seed=seed)
        report = train_backend(backend, examples, hp, manifest_path=Path(out_dir) / "manifest.json")
        if backend.persistable:
            backend.save(out_dir)
    except backends_mod.BackendError as exc:
        _fail(str(exc))
    _emit(
        output_format,
        f"trained {backend_id} for {report.steps} steps "
        f"(final loss {report.final_loss:.4f}, {report.wall_time:.1f}s)",
        {
            "backend": backend_id,
            "steps": report.steps,
            "final_loss": report.final_loss,
            "wall_time_s": report.wall_time,
            "seed": seed,
            "out": str(out_dir),
        },
    )


@main.command()
@click.option("--dataset", "dataset_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--backend", "backend_id", default="oracle", show_default=True)
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--max-output-length", type=int, default=backends_mod.DEFAULT_MAX_OUTPUT_LENGTH, show_default=True)
@_format_option
def predict(
    dataset_path: Path,
    backend_id: str,
    checkpoint: Path | None,
    out_path: Path,
    max_output_length: int,
    output_format: str,
) -> None:
    """Generate and parse predictions for a prompted dataset."""
    examples = read_examples_jsonl(dataset_path)
    if not examples:
        _fail(f"dataset {dataset_path} is empty")
    try:
        backend = create_backend(backend_id)
        if checkpoint is not None:
            backend.load(checkpoint)
        raws = backends_mod.predict_examples(backend, examples, max_output_length)
    except backends_mod.BackendError as exc:
        _fail(str(exc))
    parser = {
        SubtaskKind.ATE: parse_ate,
        SubtaskKind.ATSC: parse_atsc,
        SubtaskKind.JOINT: parse_joint,
    }
    records = []
    for example, raw in zip(examples, raws):
        kind = example.meta.subtask
        records.append(
            prediction_to_record(
                example.meta.sentence_id,
                kind.value,
                raw,
                parser[kind](raw),
                aspect_term=example.meta.aspect_term,
            )
        )
    write_predictions_jsonl(records, out_path)
    _emit(
        output_format,
        f"{len(records)} predictions",
        {"n_predictions": len(records), "backend": backend_id, "out": str(out_path)},
    )


@main.command()
@click.option("--gold", "gold_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--pred", "pred_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--subtask", type=click.Choice([s.value for s in SubtaskKind]), required=True)
@_format_option
def score(gold_path: Path, pred_path: Path, subtask: str, output_format: str) -> None:
    """Score serialized predictions (from any source) against a gold corpus."""
    try:
        corpus = read_corpus_jsonl(gold_path)
    except CorpusError as exc:
        _fail(str(exc))
    records = read_predictions_jsonl(pred_path)
    kind = SubtaskKind(subtask)
    by_id = corpus.by_id()
    try:
        if kind is SubtaskKind.ATSC:
            gold_samples = expand_atsc(corpus)
            expected = [(s.sentence.id, s.aspect_term) for s in gold_samples]
            got = [(r["sentence_id"], r.get("aspect_term")) for r in records]
            if expected != got:
                raise IdMismatch(
                    "predictions are not aligned with the gold (sentence, aspect) expansion"
                )
            preds = [parse_atsc(r["raw"]) for r in records]
            report = score_atsc(gold_samples, preds)
        else:
            unknown = [r["sentence_id"] for r in records if r["sentence_id"] not in by_id]
            if unknown:
                raise IdMismatch(f"prediction ids not in gold corpus: {unknown[:5]}")
            if kind is SubtaskKind.ATE:
                gold_pairs = [
                    (r["sentence_id"], gold_term_set(by_id[r["sentence_id"]])) for r in records
                ]
                preds_ate = [(r["sentence_id"], parse_ate(r["raw"])) for r in records]
                report = score_ate(gold_pairs, preds_ate)
            else:
                gold_pairs = [
                    (r["sentence_id"], gold_pair_set(by_id[r["sentence_id"]])) for r in records
                ]
                preds_joint = [(r["sentence_id"], parse_joint(r["raw"])) for r in records]
                report = score_joint(gold_pairs, preds_joint)
    except MetricsError as exc:
        _fail(str(exc))
    _emit(output_format, format_report(report), report_to_dict(report))


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--store", "store_root", type=click.Path(path_type=Path), default=None)
@_format_option
def experiment(spec_path: Path, store_root: Path | None, output_format: str) -> None:
    """Run one experiment cell (all seeds) from a declarative spec file."""
    root = store_root or Path(os.environ.get(STORE_ROOT_ENV, "results"))
    try:
        spec, store = read_experiment_spec(spec_path)
        result = run_experiment(spec, store, root)
    except (CorpusError, ExperimentError, backends_mod.BackendError) as exc:
        _fail(str(exc))
    mean = result.aggregate.mean
    text = (
        f"{spec.cell_name} ({spec.regime}, {result.aggregate.n_runs} runs)\n"
        f"  {format_report(mean)}"
    )
    payload = {
        "cell": spec.cell_name,
        "regime": spec.regime,
        "n_runs": result.aggregate.n_runs,
        "mean": report_to_dict(mean),
        "store": str(root),
    }
    _emit(output_format, text, payload)


@main.command()
@click.option("--results", "store_root", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None)
@click.option("--rows-out", type=click.Path(path_type=Path), default=None,
              help="Also write one JSON row per cell for machine consumption.")
@_format_option
def report(store_root: Path | None, out_path: Path | None, rows_out: Path | None, output_format: str) -> None:
    """Emit reproduction tables over a results store."""
    root = store_root or Path(os.environ.get(STORE_ROOT_ENV, "results"))
    if not Path(root).exists():
        _fail(f"results store not found: {root}")
    document = report_from_store(root)
    if out_path is not None:
        Path(out_path).write_text(document.text, encoding="utf-8")
    if rows_out is not None:
        with Path(rows_out).open("w", encoding="utf-8") as fh:
            for row in document.rows:
                fh.write(json.dumps(row, ensure_ascii=False))
                fh.write("\n")
    if output_format == "json":
        click.echo(json.dumps({"rows": list(document.rows)}, ensure_ascii=False))
    else:
        click.echo(document.text, nl=False)


if __name__ == "__main__":
    main()
