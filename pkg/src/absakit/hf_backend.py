"""Optional adapter for real seq2seq checkpoints via torch + transformers.

The adapter keeps the engine behind the same narrow contract as the mock
backends: supervised fine-tuning on (input, target) text pairs and greedy
batched generation. Optimizer family and schedule follow the engine's
standard fine-tuning defaults (AdamW, constant rate) and are recorded in
the run manifest via the hyperparameters block.

Requires the ``hf`` extra; importing this module without torch/transformers
installed raises BackendUnavailable at construction time, not import time.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

from .backends import (
    DEFAULT_MAX_OUTPUT_LENGTH,
    BackendUnavailable,
    Hyperparameters,
    ModelBackend,
    ResourceExhausted,
)
from .prompting import PromptedExample

logger = logging.getLogger(__name__)

#: 200M-parameter instruction-tuned seq2seq base used by default.
DEFAULT_CHECKPOINT = "allenai/tk-instruct-base-def-pos"

_MAX_INPUT_TOKENS = 512
_PREDICT_BATCH_SIZE = 16


class Seq2SeqBackend(ModelBackend):
    trainable = True
    persistable = True

    def __init__(
        self,
        checkpoint: str = DEFAULT_CHECKPOINT,
        device: str | None = None,
        local_files_only: bool = False,
    ):
        try:
            import torch
            from transformers import AutoModelForSeq2SeqLM, AutoTokenizer
        except ImportError as exc:
            raise BackendUnavailable(
                "seq2seq backend needs the 'hf' extra (torch + transformers)"
            ) from exc
        self._torch = torch
        self.identity = f"hf:{checkpoint}"
        self.checkpoint = checkpoint
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        self.tokenizer = AutoTokenizer.from_pretrained(
            checkpoint, local_files_only=local_files_only
        )
        self.model = AutoModelForSeq2SeqLM.from_pretrained(
            checkpoint, local_files_only=local_files_only
        ).to(self.device)

    def _encode_batch(self, inputs: Sequence[str], targets: Sequence[str] | None = None):
        encoded = self.tokenizer(
            list(inputs),
            padding=True,
            truncation=True,
            max_length=_MAX_INPUT_TOKENS,
            return_tensors="pt",
        ).to(self.device)
        if targets is not None:
            labels = self.tokenizer(
                list(targets),
                padding=True,
                truncation=True,
                max_length=DEFAULT_MAX_OUTPUT_LENGTH,
                return_tensors="pt",
            ).input_ids.to(self.device)
            labels[labels == self.tokenizer.pad_token_id] = -100
            encoded["labels"] = labels
        return encoded

    def fit(self, dataset: Sequence[PromptedExample], hp: Hyperparameters) -> tuple[int, float]:
        torch = self._torch
        torch.manual_seed(hp.seed)
        generator = torch.Generator().manual_seed(hp.seed)
        optimizer = torch.optim.AdamW(self.model.parameters(), lr=hp.learning_rate)
        inputs = [e.input_text for e in dataset]
        targets = [e.target_text for e in dataset]
        n = len(dataset)
        steps = 0
        final_loss = 0.0
        self.model.train()
        try:
            for _ in range(hp.epochs):
                order = torch.randperm(n, generator=generator).tolist()
                epoch_losses = []
                optimizer.zero_grad()
                pending = 0
                for start in range(0, n, hp.train_batch_size):
                    idx = order[start : start + hp.train_batch_size]
                    batch = self._encode_batch(
                        [inputs[i] for i in idx], [targets[i] for i in idx]
                    )
                    loss = self.model(**batch).loss
                    epoch_losses.append(loss.item())
                    (loss / hp.gradient_accumulation_steps).backward()
                    pending += 1
                    if pending == hp.gradient_accumulation_steps:
                        optimizer.step()
                        optimizer.zero_grad()
                        pending = 0
                        steps += 1
                if pending:
                    optimizer.step()
                    optimizer.zero_grad()
                    steps += 1
                final_loss = sum(epoch_losses) / len(epoch_losses)
                logger.info("%s: epoch done, mean loss %.4f", self.identity, final_loss)
        except torch.cuda.OutOfMemoryError as exc:  # pragma: no cover - hw specific
            raise ResourceExhausted(f"{self.identity}: {exc}") from exc
        finally:
            self.model.eval()
        return steps, final_loss

    def predict(
        self, inputs: Sequence[str], max_output_length: int = DEFAULT_MAX_OUTPUT_LENGTH
    ) -> list[str]:
        torch = self._torch
        outputs: list[str] = []
        self.model.eval()
        with torch.no_grad():
            for start in range(0, len(inputs), _PREDICT_BATCH_SIZE):
                batch = self._encode_batch(inputs[start : start + _PREDICT_BATCH_SIZE])
                generated = self.model.generate(
                    **batch,
                    max_new_tokens=max_output_length,
                    num_beams=1,
                    do_sample=False,
                )
                outputs.extend(
                    text.strip()
                    for text in self.tokenizer.batch_decode(
                        generated, skip_special_tokens=True
                    )
                )
        return outputs

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.model.save_pretrained(directory)
        self.tokenizer.save_pretrained(directory)

    def load(self, directory: str | Path) -> None:
        from transformers import AutoModelForSeq2SeqLM, AutoTokenizer

        self.tokenizer = AutoTokenizer.from_pretrained(str(directory))
        self.model = AutoModelForSeq2SeqLM.from_pretrained(str(directory)).to(self.device)
