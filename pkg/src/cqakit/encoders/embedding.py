"""Unified token embedding table.

One table covers every token id: specials, relations, entities. The entity
block doubles as the answer-entity embeddings, so retrieval scores are plain
inner products against the same rows the encoder consumes as inputs (tied).
"""

from __future__ import annotations

import numpy as np

from ..linearize import Vocabulary
from .numerics import uniform_init


class EmbeddingTable:
    def __init__(self, vocab: Vocabulary, rows: np.ndarray):
        if rows.shape[0] != vocab.size:
            raise ValueError(f"table has {rows.shape[0]} rows, vocabulary needs {vocab.size}")
        self.vocab = vocab
        self.rows = rows

    @staticmethod
    def create(vocab: Vocabulary, d: int, rng: np.random.Generator, dtype=np.float64):
        return EmbeddingTable(vocab, uniform_init(rng, (vocab.size, d), d, dtype))

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    @property
    def entity_rows(self) -> np.ndarray:
        """View of the answer-entity embeddings e_v, in entity-id order."""
        return self.rows[self.vocab.entity_offset :]

    def embed(self, tokens) -> np.ndarray:
        """One embedding row per token, in order (works batched)."""
        ids = np.asarray(tokens)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab.size):
            raise IndexError(f"token id out of range [0, {self.vocab.size})")
        return self.rows[ids]


def score_all(e_q: np.ndarray, table: EmbeddingTable) -> np.ndarray:
    """Inner-product score of a query embedding against every entity.

    Accepts a single query vector ``(d,)`` or a batch ``(B, d)``; returns
    ``(num_entities,)`` or ``(B, num_entities)`` accordingly.
    """
    return e_q @ table.entity_rows.T
