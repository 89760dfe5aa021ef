"""Experiment orchestration: in-domain, cross-domain, and joint-domain runs.

One experiment cell fixes (subtask, variant, train domains, test domain) and
runs once per seed: build the prompted training set (merging corpora for
joint-domain cells), train the backend, predict on the test split, parse,
and score. Per-seed artifacts (manifest, predictions, score) are committed
atomically into a results store; completed seeds are skipped on rerun when
the dataset fingerprints and seed match, and trained checkpoints are reused
across cells that share (subtask, variant, train domains, seed).
"""

from __future__ import annotations

import json
import logging
import random
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional, Sequence

from .backends import (
    Hyperparameters,
    ModelBackend,
    create_backend,
    dataset_fingerprint,
    predict_examples,
    train,
)
from .corpus import (
    Corpus,
    expand_atsc,
    load_semeval_xml,
    merge_corpora,
    read_corpus_jsonl,
)
from .decoding import (
    parse_ate,
    parse_atsc,
    parse_joint,
    prediction_to_record,
    write_predictions_jsonl,
)
from .metrics import (
    RunAggregate,
    ScoreReport,
    aggregate_runs,
    as_percent,
    primary_metric,
    gold_pair_set,
    gold_term_set,
    read_report_json,
    report_from_dict,
    report_to_dict,
    score_ate,
    score_atsc,
    score_joint,
    write_report_json,
)
from .prompting import (
    PromptVariant,
    PromptedExample,
    SubtaskKind,
    build_dataset,
    load_prompt_config,
)

logger = logging.getLogger(__name__)

#: Canonical domain ordering for merged training corpora.
DOMAIN_ORDER = ("laptops", "restaurants")

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


class ExperimentError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    subtask: SubtaskKind
    variant: PromptVariant
    train_domains: tuple[str, ...]
    test_domain: str
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    backend: str = "oracle"
    hyperparameters: Optional[Hyperparameters] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "subtask", SubtaskKind(self.subtask))
        object.__setattr__(self, "variant", PromptVariant(self.variant))
        ordered = tuple(d for d in DOMAIN_ORDER if d in self.train_domains)
        leftovers = tuple(d for d in self.train_domains if d not in DOMAIN_ORDER)
        object.__setattr__(self, "train_domains", ordered + leftovers)
        object.__setattr__(self, "seeds", tuple(self.seeds))
        if not self.train_domains:
            raise ValueError("train_domains must be non-empty")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")

    @property
    def train_tag(self) -> str:
        return "+".join(self.train_domains)

    @property
    def cell_name(self) -> str:
        return (
            f"{self.subtask.value}_{self.variant.value}"
            f"_train-{self.train_tag}_test-{self.test_domain}"
        )

    @property
    def regime(self) -> str:
        if len(self.train_domains) > 1:
            return "joint-domain"
        if self.train_domains[0] == self.test_domain:
            return "in-domain"
        return "cross-domain"

    def resolved_hyperparameters(self) -> Hyperparameters:
        return self.hyperparameters or Hyperparameters.for_subtask(self.subtask)


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    aggregate: RunAggregate
    manifests: tuple[dict, ...]
    predictions_path: Path

    def __post_init__(self) -> None:
        if len(self.manifests) != len(self.spec.seeds):
            raise ValueError("one manifest per seed is required")


class CorpusStore:
    """Maps (domain, split) to loaded corpora."""

    def __init__(self, corpora: dict[tuple[str, str], Corpus]):
        self._corpora = dict(corpora)

    def get(self, domain: str, split: str) -> Corpus:
        try:
            return self._corpora[(domain, split)]
        except KeyError:
            raise ExperimentError(
                f"no corpus loaded for domain={domain!r} split={split!r}"
            ) from None

    @classmethod
    def from_paths(cls, config: dict, base_dir: str | Path = ".") -> "CorpusStore":
        """Build a store from {domain: {split: path}} with .xml or .jsonl files."""
        base = Path(base_dir)
        corpora: dict[tuple[str, str], Corpus] = {}
        for domain, splits in config.items():
            for split, raw_path in splits.items():
                path = Path(raw_path)
                if not path.is_absolute():
                    path = base / path
                if path.suffix == ".xml":
                    corpora[(domain, split)] = load_semeval_xml(path, domain, split)
                else:
                    corpora[(domain, split)] = read_corpus_jsonl(path, domain=domain, split=split)
        return cls(corpora)


def read_experiment_spec(path: str | Path) -> tuple[ExperimentSpec, CorpusStore]:
    """Read a declarative experiment file: the spec plus its corpora paths."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    hp = None
    if data.get("hyperparameters"):
        hp = Hyperparameters(**data["hyperparameters"])
    spec = ExperimentSpec(
        subtask=SubtaskKind(data["subtask"]),
        variant=PromptVariant(data["variant"]),
        train_domains=tuple(data["train_domains"]),
        test_domain=data["test_domain"],
        seeds=tuple(data.get("seeds", DEFAULT_SEEDS)),
        backend=data.get("backend", "oracle"),
        hyperparameters=hp,
    )
    store = CorpusStore.from_paths(data["corpora"], base_dir=path.parent)
    return spec, store


def _assemble_train_corpus(spec: ExperimentSpec, store: CorpusStore) -> Corpus:
    corpora = [store.get(domain, "train") for domain in spec.train_domains]
    corpus = corpora[0]
    for other in corpora[1:]:
        corpus = merge_corpora(corpus, other)
    return corpus


def _shuffled(dataset: list[PromptedExample], seed: int) -> list[PromptedExample]:
    # seed-keyed shuffle before batching avoids a domain-ordered curriculum
    shuffled = list(dataset)
    random.Random(seed).shuffle(shuffled)
    return shuffled


def _score_run(
    subtask: SubtaskKind,
    eval_examples: Sequence[PromptedExample],
    raw_outputs: Sequence[str],
    test_corpus: Corpus,
) -> tuple[ScoreReport, list[dict]]:
    by_id = test_corpus.by_id()
    records: list[dict] = []
    if subtask is SubtaskKind.ATE:
        preds = [parse_ate(raw) for raw in raw_outputs]
        gold = [
            (ex.meta.sentence_id, gold_term_set(by_id[ex.meta.sentence_id]))
            for ex in eval_examples
        ]
        report = score_ate(
            gold, [(ex.meta.sentence_id, p) for ex, p in zip(eval_examples, preds)]
        )
        records = [
            prediction_to_record(ex.meta.sentence_id, subtask.value, raw, p)
            for ex, raw, p in zip(eval_examples, raw_outputs, preds)
        ]
    elif subtask is SubtaskKind.ATSC:
        gold_samples = expand_atsc(test_corpus)
        expected = [(s.sentence.id, s.aspect_term) for s in gold_samples]
        got = [(ex.meta.sentence_id, ex.meta.aspect_term) for ex in eval_examples]
        if expected != got:
            raise ExperimentError("eval dataset is not aligned with the gold expansion")
        preds = [parse_atsc(raw) for raw in raw_outputs]
        report = score_atsc(gold_samples, preds)
        records = [
            prediction_to_record(
                ex.meta.sentence_id, subtask.value, raw, p, aspect_term=ex.meta.aspect_term
            )
            for ex, raw, p in zip(eval_examples, raw_outputs, preds)
        ]
    else:
        preds = [parse_joint(raw) for raw in raw_outputs]
        gold = [
            (ex.meta.sentence_id, gold_pair_set(by_id[ex.meta.sentence_id]))
            for ex in eval_examples
        ]
        report = score_joint(
            gold, [(ex.meta.sentence_id, p) for ex, p in zip(eval_examples, preds)]
        )
        records = [
            prediction_to_record(ex.meta.sentence_id, subtask.value, raw, p)
            for ex, raw, p in zip(eval_examples, raw_outputs, preds)
        ]
    return report, records


def _completed_run(run_dir: Path, seed: int, train_fp: str, eval_fp: str) -> Optional[tuple[ScoreReport, dict]]:
    manifest_path = run_dir / "manifest.json"
    score_path = run_dir / "score.json"
    if not (manifest_path.exists() and score_path.exists()):
        return None
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if (
        manifest.get("seed") == seed
        and manifest.get("train_fingerprint") == train_fp
        and manifest.get("eval_fingerprint") == eval_fp
    ):
        return read_report_json(score_path), manifest
    return None


def run_experiment(
    spec: ExperimentSpec,
    store: CorpusStore,
    store_root: str | Path,
    *,
    backend_factory: Callable[[str, int], ModelBackend] = create_backend,
    template_dir: str | Path | None = None,
) -> ExperimentResult:
    """Run one experiment cell across its seeds and aggregate the scores.

    Completed seeds (matching manifest + score on disk) are skipped. Any
    failure leaves a FAILED marker in the run directory and re-raises with
    the cell and seed attached.
    """
    store_root = Path(store_root)
    cell_dir = store_root / spec.cell_name
    cell_dir.mkdir(parents=True, exist_ok=True)

    config = load_prompt_config(spec.variant, template_dir=template_dir)
    hp_base = spec.resolved_hyperparameters()

    train_corpus = _assemble_train_corpus(spec, store)
    test_corpus = store.get(spec.test_domain, "test")
    train_examples = build_dataset(config, spec.subtask, train_corpus)
    eval_examples = build_dataset(config, spec.subtask, test_corpus)
    if not eval_examples:
        raise ExperimentError(f"{spec.cell_name}: empty evaluation dataset")
    eval_fp = dataset_fingerprint(eval_examples)

    reports: list[ScoreReport] = []
    manifests: list[dict] = []
    for seed in spec.seeds:
        run_dir = cell_dir / f"seed{seed}"
        hp = replace(hp_base, seed=seed)
        shuffled_train = _shuffled(train_examples, seed)
        train_fp = dataset_fingerprint(shuffled_train)

        done = _completed_run(run_dir, seed, train_fp, eval_fp)
        if done is not None:
            logger.info("%s seed %d: reusing completed run", spec.cell_name, seed)
            reports.append(done[0])
            manifests.append(done[1])
            continue

        run_dir.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        try:
            backend = backend_factory(spec.backend, seed)
            train_info: Optional[dict] = None
            if backend.trainable:
                ckpt_dir = (
                    store_root
                    / "checkpoints"
                    / f"{spec.subtask.value}_{spec.variant.value}_{spec.train_tag}_seed{seed}"
                )
                if backend.persistable and _checkpoint_matches(ckpt_dir, train_fp):
                    backend.load(ckpt_dir)
                    train_info = {"reused_checkpoint": str(ckpt_dir)}
                    logger.info("%s seed %d: reusing checkpoint %s", spec.cell_name, seed, ckpt_dir)
                else:
                    if not shuffled_train:
                        raise ExperimentError(f"{spec.cell_name}: empty training dataset")
                    report = train(
                        backend,
                        shuffled_train,
                        hp,
                        manifest_path=run_dir / "train_manifest.json",
                    )
                    train_info = {
                        "steps": report.steps,
                        "final_loss": report.final_loss,
                        "wall_time_s": report.wall_time,
                    }
                    if backend.persistable:
                        backend.save(ckpt_dir)
                        (ckpt_dir / "fingerprint.json").write_text(
                            json.dumps({"dataset_fingerprint": train_fp}), encoding="utf-8"
                        )

            raw_outputs = predict_examples(backend, eval_examples, hp.max_output_length)
            score, records = _score_run(spec.subtask, eval_examples, raw_outputs, test_corpus)

            write_predictions_jsonl(records, run_dir / "predictions.jsonl")
            manifest = {
                "cell": spec.cell_name,
                "seed": seed,
                "backend": backend.identity,
                "hyperparameters": {
                    "learning_rate": hp.learning_rate,
                    "train_batch_size": hp.train_batch_size,
                    "gradient_accumulation_steps": hp.gradient_accumulation_steps,
                    "epochs": hp.epochs,
                    "max_output_length": hp.max_output_length,
                },
                "train": train_info,
                "train_fingerprint": train_fp,
                "eval_fingerprint": eval_fp,
                "n_train_examples": len(shuffled_train),
                "n_eval_examples": len(eval_examples),
                "wall_time_s": time.perf_counter() - started,
                "created_at": datetime.now(timezone.utc).isoformat(),
            }
            write_report_json(score, run_dir / "score.json")
            (run_dir / "manifest.json").write_text(
                json.dumps(manifest, indent=2), encoding="utf-8"
            )
            reports.append(score)
            manifests.append(manifest)
        except Exception as exc:
            (run_dir / "FAILED.json").write_text(
                json.dumps(
                    {
                        "cell": spec.cell_name,
                        "seed": seed,
                        "error": f"{type(exc).__name__}: {exc}",
                        "created_at": datetime.now(timezone.utc).isoformat(),
                    },
                    indent=2,
                ),
                encoding="utf-8",
            )
            raise ExperimentError(f"{spec.cell_name} seed {seed}: {exc}") from exc

    aggregate = aggregate_runs(reports)
    (cell_dir / "aggregate.json").write_text(
        json.dumps(
            {
                "cell": spec.cell_name,
                "regime": spec.regime,
                "subtask": spec.subtask.value,
                "variant": spec.variant.value,
                "train": spec.train_tag,
                "test": spec.test_domain,
                "n_runs": aggregate.n_runs,
                "mean": report_to_dict(aggregate.mean),
                "per_run": [report_to_dict(r) for r in aggregate.per_run],
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    return ExperimentResult(
        spec=spec,
        aggregate=aggregate,
        manifests=tuple(manifests),
        predictions_path=cell_dir,
    )


def _checkpoint_matches(ckpt_dir: Path, train_fp: str) -> bool:
    marker = ckpt_dir / "fingerprint.json"
    if not marker.exists():
        return False
    data = json.loads(marker.read_text(encoding="utf-8"))
    return data.get("dataset_fingerprint") == train_fp


# --- reproduction report -------------------------------------------------------

#: Published reference scores (percent) keyed by
#: (subtask, variant, train domains tag, test domain).
REFERENCE_SCORES: dict[tuple[str, str, str, str], float] = {
    # in-domain, extraction F1
    ("ATE", "V1", "laptops", "laptops"): 91.40,
    ("ATE", "V2", "laptops", "laptops"): 92.30,
    ("ATE", "V1", "restaurants", "restaurants"): 92.76,
    ("ATE", "V2", "restaurants", "restaurants"): 92.10,
    # in-domain, classification accuracy
    ("ATSC", "V1", "laptops", "laptops"): 88.37,
    ("ATSC", "V2", "laptops", "laptops"): 85.85,
    ("ATSC", "V1", "restaurants", "restaurants"): 87.42,
    ("ATSC", "V2", "restaurants", "restaurants"): 89.76,
    # in-domain, joint F1
    ("JOINT", "V1", "laptops", "laptops"): 78.89,
    ("JOINT", "V2", "laptops", "laptops"): 79.34,
    ("JOINT", "V1", "restaurants", "restaurants"): 76.16,
    ("JOINT", "V2", "restaurants", "restaurants"): 79.47,
    # cross-domain
    ("ATE", "V1", "restaurants", "laptops"): 71.98,
    ("ATSC", "V1", "restaurants", "laptops"): 87.20,
    ("JOINT", "V1", "restaurants", "laptops"): 64.30,
    ("ATE", "V2", "restaurants", "laptops"): 71.83,
    ("ATSC", "V2", "restaurants", "laptops"): 82.75,
    ("JOINT", "V2", "restaurants", "laptops"): 65.30,
    ("ATE", "V1", "laptops", "restaurants"): 62.85,
    ("ATSC", "V1", "laptops", "restaurants"): 85.91,
    ("JOINT", "V1", "laptops", "restaurants"): 55.06,
    ("ATE", "V2", "laptops", "restaurants"): 76.85,
    ("ATSC", "V2", "laptops", "restaurants"): 83.05,
    ("JOINT", "V2", "laptops", "restaurants"): 62.95,
    # joint-domain
    ("ATE", "V1", "laptops+restaurants", "laptops"): 90.35,
    ("ATSC", "V1", "laptops+restaurants", "laptops"): 88.47,
    ("JOINT", "V1", "laptops+restaurants", "laptops"): 80.07,
    ("ATE", "V2", "laptops+restaurants", "laptops"): 93.28,
    ("ATSC", "V2", "laptops+restaurants", "laptops"): 87.30,
    ("JOINT", "V2", "laptops+restaurants", "laptops"): 80.47,
    ("ATE", "V1", "laptops+restaurants", "restaurants"): 88.88,
    ("ATSC", "V1", "laptops+restaurants", "restaurants"): 88.30,
    ("JOINT", "V1", "laptops+restaurants", "restaurants"): 80.81,
    ("ATE", "V2", "laptops+restaurants", "restaurants"): 93.55,
    ("ATSC", "V2", "laptops+restaurants", "restaurants"): 88.62,
    ("JOINT", "V2", "laptops+restaurants", "restaurants"): 79.70,
}


@dataclass(frozen=True)
class ReportDocument:
    text: str
    rows: tuple[dict, ...] = field(default_factory=tuple)


def _make_row(
    regime: str,
    subtask: str,
    variant: str,
    train_tag: str,
    test_domain: str,
    mean: ScoreReport,
    n_runs: int,
) -> dict:
    score = as_percent(primary_metric(mean))
    reference = REFERENCE_SCORES.get((subtask, variant, train_tag, test_domain))
    return {
        "regime": regime,
        "subtask": subtask,
        "variant": variant,
        "train": train_tag,
        "test": test_domain,
        "metric": "accuracy" if subtask == "ATSC" else "f1",
        "score": score,
        "reference": reference,
        "delta": round(score - reference, 2) if reference is not None else None,
        "n_runs": n_runs,
    }


def _result_cell(result: ExperimentResult) -> dict:
    spec = result.spec
    return _make_row(
        spec.regime,
        spec.subtask.value,
        spec.variant.value,
        spec.train_tag,
        spec.test_domain,
        result.aggregate.mean,
        result.aggregate.n_runs,
    )


def _fmt_cell(rows: dict, key: tuple) -> str:
    row = rows.get(key)
    if row is None:
        return "n/a"
    if row["reference"] is None:
        return f"{row['score']:.2f}"
    return f"{row['score']:.2f} (ref {row['reference']:.2f}, Δ{row['delta']:+.2f})"


def reproduce_tables(results: Sequence[ExperimentResult]) -> ReportDocument:
    """Arrange aggregated results into the published table layouts.

    In-domain results render one table per subtask (rows: variants, columns:
    domains); cross-domain and joint-domain results render one table each
    with subtask columns. Each cell shows this artifact's mean score next to
    the published reference and their delta; missing cells are explicit.
    """
    return tables_from_rows([_result_cell(r) for r in results])


def tables_from_rows(rows: Sequence[dict]) -> ReportDocument:
    if not rows:
        return ReportDocument(text="No experiment results to report.\n", rows=())

    rows = list(rows)
    indexed = {
        (r["regime"], r["subtask"], r["variant"], r["train"], r["test"]): r for r in rows
    }
    lines: list[str] = []
    domains = ("laptops", "restaurants")
    variants = ("V1", "V2")
    subtasks = ("ATE", "ATSC", "JOINT")

    if any(r["regime"] == "in-domain" for r in rows):
        for subtask in subtasks:
            metric = "accuracy" if subtask == "ATSC" else "F1"
            lines.append(f"== In-domain {subtask} ({metric}) ==")
            lines.append(f"{'model':<10} {'laptops':<34} {'restaurants':<34}")
            for variant in variants:
                cells = [
                    _fmt_cell(indexed, ("in-domain", subtask, variant, d, d))
                    for d in domains
                ]
                lines.append(f"{variant:<10} {cells[0]:<34} {cells[1]:<34}")
            lines.append("")

    if any(r["regime"] == "cross-domain" for r in rows):
        lines.append("== Cross-domain (train -> test) ==")
        lines.append(f"{'train':<12} {'test':<12} {'model':<7} {'ATE':<30} {'ATSC':<30} {'JOINT':<30}")
        for train_d, test_d in (("restaurants", "laptops"), ("laptops", "restaurants")):
            for variant in variants:
                cells = [
                    _fmt_cell(indexed, ("cross-domain", s, variant, train_d, test_d))
                    for s in subtasks
                ]
                lines.append(
                    f"{train_d:<12} {test_d:<12} {variant:<7} "
                    f"{cells[0]:<30} {cells[1]:<30} {cells[2]:<30}"
                )
        lines.append("")

    if any(r["regime"] == "joint-domain" for r in rows):
        lines.append("== Joint-domain (trained on both, tested per domain) ==")
        lines.append(f"{'test':<12} {'model':<7} {'ATE':<30} {'ATSC':<30} {'JOINT':<30}")
        for test_d in domains:
            for variant in variants:
                cells = [
                    _fmt_cell(
                        indexed,
                        ("joint-domain", s, variant, "laptops+restaurants", test_d),
                    )
                    for s in subtasks
                ]
                lines.append(
                    f"{test_d:<12} {variant:<7} {cells[0]:<30} {cells[1]:<30} {cells[2]:<30}"
                )
        lines.append("")

    return ReportDocument(text="\n".join(lines) + "\n", rows=tuple(rows))


def load_results_store(store_root: str | Path) -> list[dict]:
    """Read every aggregate record from a results store directory."""
    store_root = Path(store_root)
    aggregates = []
    for path in sorted(store_root.glob("*/aggregate.json")):
        aggregates.append(json.loads(path.read_text(encoding="utf-8")))
    return aggregates


def report_from_store(store_root: str | Path) -> ReportDocument:
    """Build the reproduction report from persisted aggregate records."""
    rows = []
    for record in load_results_store(store_root):
        mean = report_from_dict(record["mean"])
        rows.append(
            _make_row(
                record["regime"],
                record["subtask"],
                record["variant"],
                record["train"],
                record["test"],
                mean,
                record["n_runs"],
            )
        )
    return tables_from_rows(rows)
