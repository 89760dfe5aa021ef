"""Trainable text-to-text engines behind a narrow train/predict contract.

Three mock engines make the whole pipeline hermetic: an oracle that answers
from the example metadata, a constant responder, and an echo of the last
input line. A small numpy softmax classifier over hashed character n-grams
provides a genuinely trainable engine for end-to-end wiring tests without
any accelerator. The real seq2seq adapter lives in ``hf_backend`` and is
optional.

Decoding is greedy and deterministic by default; a run manifest recording
backend identity, hyperparameters, seed, dataset fingerprint, and wall time
is emitted for every training call.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
import zlib
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .prompting import PromptedExample, SubtaskKind

logger = logging.getLogger(__name__)

DEFAULT_MAX_OUTPUT_LENGTH = 128


class BackendError(Exception):
    pass


class NotTrainable(BackendError):
    """train() was called on a backend that does not support training."""


class BackendUnavailable(BackendError):
    """The backend cannot serve predictions (missing deps, untrained, ...)."""


class ResourceExhausted(BackendError):
    """Training or generation ran out of memory or similar resources."""


@dataclass(frozen=True)
class Hyperparameters:
    learning_rate: float = 3e-4
    train_batch_size: int = 16
    gradient_accumulation_steps: int = 2
    epochs: int = 4
    seed: int = 0
    max_output_length: int = DEFAULT_MAX_OUTPUT_LENGTH

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for name in ("train_batch_size", "gradient_accumulation_steps", "epochs", "max_output_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")

    @classmethod
    def for_subtask(cls, subtask: SubtaskKind, seed: int = 0) -> "Hyperparameters":
        # joint task trains with the smaller batch to fit accelerator memory
        batch = 8 if SubtaskKind(subtask) is SubtaskKind.JOINT else 16
        return cls(train_batch_size=batch, seed=seed)


@dataclass(frozen=True)
class TrainReport:
    steps: int
    final_loss: float
    wall_time: float
    seed: int

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


class ModelBackend(ABC):
    """Abstract trainable text-to-text engine.

    ``predict`` must return exactly one output string per input, positionally
    aligned. Backends that can persist a trained state set ``persistable``
    and implement ``save``/``load``.
    """

    identity: str = "backend"
    trainable: bool = False
    persistable: bool = False

    def fit(self, dataset: Sequence[PromptedExample], hp: Hyperparameters) -> tuple[int, float]:
        """Run supervised fine-tuning; returns (optimizer steps, final loss)."""
        raise NotTrainable(f"backend {self.identity!r} does not support training")

    @abstractmethod
    def predict(
        self, inputs: Sequence[str], max_output_length: int = DEFAULT_MAX_OUTPUT_LENGTH
    ) -> list[str]:
        ...

    def predict_examples(
        self,
        examples: Sequence[PromptedExample],
        max_output_length: int = DEFAULT_MAX_OUTPUT_LENGTH,
    ) -> list[str]:
        return self.predict([e.input_text for e in examples], max_output_length)

    def save(self, directory: str | Path) -> None:
        raise BackendUnavailable(f"backend {self.identity!r} has no persistent state")

    def load(self, directory: str | Path) -> None:
        raise BackendUnavailable(f"backend {self.identity!r} has no persistent state")


class OracleBackend(ModelBackend):
    """Returns the gold target attached to each prompted example.

    Training is a no-op by contract (steps=0); plain-text predict is
    unavailable because the oracle answers from example metadata only.
    Useful to verify pipeline wiring independent of any model.
    """

    identity = "oracle"
    trainable = True

    def fit(self, dataset, hp):
        return 0, 0.0

    def predict(self, inputs, max_output_length=DEFAULT_MAX_OUTPUT_LENGTH):
        raise BackendUnavailable(
            "the oracle answers only from prompted examples with gold metadata"
        )

    def predict_examples(self, examples, max_output_length=DEFAULT_MAX_OUTPUT_LENGTH):
        return [e.target_text for e in examples]


class ConstantBackend(ModelBackend):
    """Emits one fixed string for every input."""

    def __init__(self, text: str):
        self.text = text
        self.identity = f"constant:{text}"

    def predict(self, inputs, max_output_length=DEFAULT_MAX_OUTPUT_LENGTH):
        return [self.text for _ in inputs]


class EchoTailBackend(ModelBackend):
    """Returns the final line of each input; a prompt-plumbing smoke tool."""

    identity = "echo-tail"

    def predict(self, inputs, max_output_length=DEFAULT_MAX_OUTPUT_LENGTH):
        return [text.rstrip("\n").rsplit("\n", 1)[-1] for text in inputs]


def _truncate_tokens(text: str, max_tokens: int) -> str:
    tokens = text.split(" ")
    if len(tokens) <= max_tokens:
        return text
    return " ".join(tokens[:max_tokens])


class ToyTrainableBackend(ModelBackend):
    """Softmax regression over hashed character trigrams of the input text.

    Distinct target strings become classes; enough epochs of seeded
    mini-batch SGD memorize any small dataset, which is exactly what the
    end-to-end wiring tests need. Bit-deterministic for a fixed seed.
    """

    trainable = True
    persistable = True

    def __init__(self, seed: int = 0, n_features: int = 1024):
        self.identity = f"toy:{n_features}"
        self.seed = seed
        self.n_features = n_features
        self._weights: Optional[np.ndarray] = None
        self._classes: list[str] = []

    def _featurize(self, text: str) -> np.ndarray:
        # binary presence keeps rare distinguishing trigrams as strong as the
        # boilerplate a long shared prompt prefix contributes
        vec = np.zeros(self.n_features, dtype=np.float64)
        padded = f"  {text}  "
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3]
            vec[zlib.crc32(gram.encode("utf-8")) % self.n_features] = 1.0
        return vec

    def _matrix(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self._featurize(t) for t in texts]) if texts else np.zeros((0, self.n_features))

    def fit(self, dataset, hp):
        self._classes = sorted({e.target_text for e in dataset})
        class_index = {c: i for i, c in enumerate(self._classes)}
        x = self._matrix([e.input_text for e in dataset])
        y = np.array([class_index[e.target_text] for e in dataset])
        n, n_classes = len(dataset), len(self._classes)
        weights = np.zeros((self.n_features, n_classes), dtype=np.float64)

        rng = np.random.default_rng(hp.seed)
        steps = 0
        final_loss = 0.0
        accumulated = np.zeros_like(weights)
        pending = 0
        for _ in range(hp.epochs):
            order = rng.permutation(n)
            epoch_losses = []
            for start in range(0, n, hp.train_batch_size):
                batch = order[start : start + hp.train_batch_size]
                xb, yb = x[batch], y[batch]
                logits = xb @ weights
                logits -= logits.max(axis=1, keepdims=True)
                probs = np.exp(logits)
                probs /= probs.sum(axis=1, keepdims=True)
                epoch_losses.append(float(-np.log(probs[np.arange(len(batch)), yb] + 1e-12).mean()))
                probs[np.arange(len(batch)), yb] -= 1.0
                accumulated += xb.T @ probs / len(batch)
                pending += 1
                if pending == hp.gradient_accumulation_steps:
                    weights -= hp.learning_rate * accumulated / pending
                    accumulated[:] = 0.0
                    pending = 0
                    steps += 1
            final_loss = float(np.mean(epoch_losses))
        if pending:
            weights -= hp.learning_rate * accumulated / pending
            steps += 1
        self._weights = weights
        return steps, final_loss

    def predict(self, inputs, max_output_length=DEFAULT_MAX_OUTPUT_LENGTH):
        if self._weights is None or not self._classes:
            raise BackendUnavailable("toy backend has not been trained yet")
        if not inputs:
            return []
        logits = self._matrix(list(inputs)) @ self._weights
        picks = logits.argmax(axis=1)
        return [_truncate_tokens(self._classes[i], max_output_length) for i in picks]

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if self._weights is None:
            raise BackendUnavailable("nothing to save: toy backend is untrained")
        np.savez(directory / "weights.npz", weights=self._weights)
        (directory / "model.json").write_text(
            json.dumps(
                {"classes": self._classes, "n_features": self.n_features, "seed": self.seed}
            ),
            encoding="utf-8",
        )

    def load(self, directory):
        directory = Path(directory)
        meta = json.loads((directory / "model.json").read_text(encoding="utf-8"))
        self._classes = list(meta["classes"])
        self.n_features = int(meta["n_features"])
        with np.load(directory / "weights.npz") as data:
            self._weights = data["weights"]


def create_backend(identity: str, seed: int = 0) -> ModelBackend:
    """Instantiate a backend from its identity string.

    Recognized forms: ``oracle``, ``constant:<text>``, ``echo-tail``,
    ``toy``, and ``hf[:<checkpoint>]`` (requires the optional ``hf`` extra).
    """
    if identity == "oracle":
        return OracleBackend()
    if identity.startswith("constant:"):
        return ConstantBackend(identity.split(":", 1)[1])
    if identity == "echo-tail":
        return EchoTailBackend()
    if identity == "toy":
        return ToyTrainableBackend(seed=seed)
    if identity == "hf" or identity.startswith("hf:"):
        from .hf_backend import DEFAULT_CHECKPOINT, Seq2SeqBackend

        checkpoint = identity.split(":", 1)[1] if ":" in identity else DEFAULT_CHECKPOINT
        return Seq2SeqBackend(checkpoint=checkpoint)
    raise ValueError(f"unknown backend identity {identity!r}")


def dataset_fingerprint(dataset: Sequence[PromptedExample]) -> str:
    """Content hash of the (input, target) pairs, independent of metadata."""
    digest = hashlib.sha256()
    for example in dataset:
        digest.update(example.input_text.encode("utf-8"))
        digest.update(b"\x1f")
        digest.update(example.target_text.encode("utf-8"))
        digest.update(b"\x1e")
    return digest.hexdigest()


def train(
    backend: ModelBackend,
    dataset: Sequence[PromptedExample],
    hp: Hyperparameters,
    manifest_path: str | Path | None = None,
) -> TrainReport:
    """Fine-tune a backend on (input_text -> target_text) pairs.

    Emits a run manifest when ``manifest_path`` is given. Raises NotTrainable
    for backends without a training path; resource errors surface as-is.
    """
    if not dataset:
        raise ValueError("training dataset must be non-empty")
    if not backend.trainable:
        raise NotTrainable(f"backend {backend.identity!r} does not support training")
    started = time.perf_counter()
    steps, final_loss = backend.fit(dataset, hp)
    wall = time.perf_counter() - started
    report = TrainReport(steps=steps, final_loss=final_loss, wall_time=wall, seed=hp.seed)
    if manifest_path is not None:
        write_manifest(Path(manifest_path), backend, dataset, hp, report)
    return report


def write_manifest(
    path: Path,
    backend: ModelBackend,
    dataset: Sequence[PromptedExample],
    hp: Hyperparameters,
    report: TrainReport,
) -> dict:
    manifest = {
        "backend": backend.identity,
        "hyperparameters": asdict(hp),
        "seed": hp.seed,
        "dataset_fingerprint": dataset_fingerprint(dataset),
        "n_examples": len(dataset),
        "steps": report.steps,
        "final_loss": report.final_loss,
        "wall_time_s": report.wall_time,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "decoding": {"strategy": "greedy", "max_output_length": hp.max_output_length},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest


def predict(
    backend: ModelBackend,
    inputs: Sequence[str],
    max_output_length: int = DEFAULT_MAX_OUTPUT_LENGTH,
) -> list[str]:
    outputs = backend.predict(list(inputs), max_output_length)
    if len(outputs) != len(inputs):
        raise BackendError(
            f"backend {backend.identity!r} returned {len(outputs)} outputs "
            f"for {len(inputs)} inputs"
        )
    return outputs


def predict_examples(
    backend: ModelBackend,
    examples: Sequence[PromptedExample],
    max_output_length: int = DEFAULT_MAX_OUTPUT_LENGTH,
) -> list[str]:
    outputs = backend.predict_examples(list(examples), max_output_length)
    if len(outputs) != len(examples):
        raise BackendError(
            f"backend {backend.identity!r} returned {len(outputs)} outputs "
            f"for {len(examples)} examples"
        )
    return outputs
