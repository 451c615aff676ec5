"""Optional backend exposing Hugging Face causal LMs as LanguageModels.

Imported lazily so the base package works without torch installed.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class TransformersBackend:
    """Wrap a causal LM + tokenizer pair behind the LanguageModel protocol.

    Logits come from a single forward pass over the full prefix (no cache;
    capture workloads are short) and are promoted to float64 so entropy
    recomputation from dumped logits is bit-stable.
    """

    def __init__(self, model, tokenizer, model_id: str) -> None:
        import torch  # deferred: only needed when this backend is used

        self._torch = torch
        self._model = model.eval()
        self._tokenizer = tokenizer
        self.model_id = model_id
        self._vocab_size: int | None = None

    @classmethod
    def from_pretrained(cls, name: str) -> "TransformersBackend":
        from transformers import AutoModelForCausalLM, AutoTokenizer

        model = AutoModelForCausalLM.from_pretrained(name)
        tokenizer = AutoTokenizer.from_pretrained(name)
        return cls(model, tokenizer, model_id=name)

    @property
    def vocab_size(self) -> int:
        if self._vocab_size is None:
            self._vocab_size = int(self.next_token_logits(self.encode("a")).shape[0])
        return self._vocab_size

    @property
    def eos_id(self) -> int:
        eos = self._tokenizer.eos_token_id
        if eos is None:
            raise ValueError(f"{self.model_id}: tokenizer declares no EOS token")
        return int(eos)

    def encode(self, text: str) -> list[int]:
        ids = self._tokenizer.encode(text, add_special_tokens=False)
        if not ids:
            raise ValueError(f"{self.model_id}: text tokenized to nothing")
        return [int(t) for t in ids]

    def decode(self, token_ids: Sequence[int]) -> str:
        return self._tokenizer.decode(list(token_ids), skip_special_tokens=False)

    def next_token_logits(self, token_ids: Sequence[int]) -> np.ndarray:
        torch = self._torch
        ids = torch.tensor([list(token_ids)], dtype=torch.long)
        with torch.no_grad():
            out = self._model(input_ids=ids)
        return out.logits[0, -1].double().cpu().numpy()
