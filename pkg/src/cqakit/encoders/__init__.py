"""Learnable query encoders over the unified token embedding table.

Architectures (all gradients hand-derived, verified by finite differences):

* ``LSTM`` — stacked bidirectional LSTM over the linearized token sequence,
  readout at position 0;
* ``TreeLSTM`` / ``TreeLSTM-NoMemoryCell`` — child-sum recursion over the
  computational graph itself, readout at the root;
* ``Transformer-APE`` / ``Transformer-RPE`` — pre-norm encoder stack with
  learned absolute positions, or relative-distance embeddings inside the
  attention logits.

:class:`QueryModel` bundles vocabulary + embedding table + encoder behind a
single encode/backward surface used by the trainer and evaluator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..linearize import PAD, Vocabulary, linearize
from ..queries import ComputationGraph
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .embedding import EmbeddingTable, score_all
from .gradcheck import NonFiniteLossError, grad_check
from .lstm import BiLSTMEncoder
from .numerics import softmax
from .transformer import TransformerEncoder
from .treelstm import TreeLSTMEncoder, TreeNoMemEncoder

ARCHITECTURES = (
    "LSTM",
    "TreeLSTM",
    "TreeLSTM-NoMemoryCell",
    "Transformer-APE",
    "Transformer-RPE",
)

TREE_ARCHS = ("TreeLSTM", "TreeLSTM-NoMemoryCell")

# benchmark-scale defaults: d=400, 3 layers, 16 heads; desk scale: d=64, 2, 4
FULL_SCALE = {"d": 400, "layers": 3, "heads": 16}
DESK_SCALE = {"d": 64, "layers": 2, "heads": 4}


def normalize_arch(name: str) -> str:
    for arch in ARCHITECTURES:
        if name.lower() == arch.lower():
            return arch
    raise ValueError(f"unknown architecture {name!r}; expected one of {ARCHITECTURES}")


def make_encoder(
    arch: str,
    d: int,
    rng: np.random.Generator,
    layers: int = 2,
    heads: int = 4,
    max_len: int = 64,
    rpe_clip: int = 16,
    dtype=np.float64,
):
    arch = normalize_arch(arch)
    if arch == "LSTM":
        return BiLSTMEncoder(d, layers, rng, dtype)
    if arch == "TreeLSTM":
        return TreeLSTMEncoder(d, rng, dtype)
    if arch == "TreeLSTM-NoMemoryCell":
        return TreeNoMemEncoder(d, rng, dtype)
    relative = arch == "Transformer-RPE"
    return TransformerEncoder(d, layers, heads, rng, relative, max_len, rpe_clip, dtype)


def pad_batch(sequences: list[list[int]], dtype=np.float64):
    """Right-pad token sequences with PAD; returns (ids (B,T), mask (B,T))."""
    B = len(sequences)
    T = max((len(s) for s in sequences), default=1)
    ids = np.full((B, max(T, 1)), PAD, dtype=np.int64)
    mask = np.zeros((B, max(T, 1)), dtype=dtype)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = 1.0
    return ids, mask


@dataclass
class QueryModel:
    """Embedding table + encoder with one encode/backward surface.

    Sequence architectures consume linearized token sequences; tree
    architectures consume the computational graph directly. ``parameters``
    exposes every learnable tensor under a flat name space ('table' plus
    'enc.*') for the optimizer and the gradient checker.
    """

    vocab: Vocabulary
    table: EmbeddingTable
    encoder: object

    @property
    def arch(self) -> str:
        return self.encoder.arch

    @property
    def is_tree(self) -> bool:
        return self.arch in TREE_ARCHS

    @property
    def d(self) -> int:
        return self.table.d

    def parameters(self) -> dict[str, np.ndarray]:
        out = {"table": self.table.rows}
        out.update({f"enc.{k}": v for k, v in self.encoder.params.items()})
        return out

    def prepare(self, graphs: list[ComputationGraph]):
        """Per-architecture query representation (token lists or the graphs)."""
        if self.is_tree:
            return list(graphs)
        return [linearize(g, self.vocab) for g in graphs]

    def encode(self, queries) -> tuple[np.ndarray, object]:
        """Encode prepared queries; returns ((B,d) embeddings, cache)."""
        if self.is_tree:
            out, cache = self.encoder.forward(queries, self.table, self.vocab)
            return out, ("tree", cache)
        ids, mask = pad_batch(queries, dtype=self.table.rows.dtype)
        x = self.table.rows[ids]
        out, enc_cache = self.encoder.forward(x, mask)
        return out, ("seq", enc_cache, ids, mask)

    def backward(self, cache, d_out: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients for every parameter given d(loss)/d(embeddings)."""
        d_table = np.zeros_like(self.table.rows)
        if cache[0] == "tree":
            enc_grads, tok_ids, tok_dxs = self.encoder.backward(cache[1], d_out)
            if len(tok_ids):
                np.add.at(d_table, tok_ids, tok_dxs)
        else:
            _, enc_cache, ids, mask = cache
            enc_grads, dx = self.encoder.backward(enc_cache, d_out)
            np.add.at(d_table, ids.reshape(-1), (dx * mask[:, :, None]).reshape(-1, self.d))
        grads = {"table": d_table}
        grads.update({f"enc.{k}": v for k, v in enc_grads.items()})
        return grads

    def encode_graphs(self, graphs: list[ComputationGraph]) -> np.ndarray:
        """Convenience: embeddings only, no cache (evaluation path)."""
        out, _ = self.encode(self.prepare(graphs))
        return out

    def entity_scores(self, e_q: np.ndarray) -> np.ndarray:
        return score_all(e_q, self.table)

    # -- persistence --------------------------------------------------------

    def meta(self) -> dict:
        m = {
            "arch": self.arch,
            "d": self.d,
            "vocab_hash": self.vocab.layout_hash(),
            "num_relations": self.vocab.num_relations,
            "num_entities": self.vocab.num_entities,
            "readout": "position0",
        }
        for attr in ("layers", "heads", "max_len", "rpe_clip"):
            if hasattr(self.encoder, attr):
                m[attr] = getattr(self.encoder, attr)
        return m

    def save(self, path, extra_meta: dict | None = None, extra_tensors: dict | None = None):
        meta = self.meta()
        if extra_meta:
            meta.update(extra_meta)
        tensors = dict(self.parameters())
        if extra_tensors:
            tensors.update(extra_tensors)
        save_checkpoint(path, meta, tensors)

    @staticmethod
    def load(path) -> tuple["QueryModel", dict, dict]:
        """Rebuild a model from a checkpoint; returns (model, meta, leftover tensors)."""
        meta, tensors = load_checkpoint(path)
        vocab = Vocabulary(meta["num_relations"], meta["num_entities"])
        if vocab.layout_hash() != meta["vocab_hash"]:
            raise CheckpointError(
                "vocabulary layout hash mismatch: checkpoint was written for a different universe"
            )
        rng = np.random.default_rng(0)  # shapes are overwritten below
        encoder = make_encoder(
            meta["arch"],
            meta["d"],
            rng,
            layers=meta.get("layers", 2),
            heads=meta.get("heads", 4),
            max_len=meta.get("max_len", 64),
            rpe_clip=meta.get("rpe_clip", 16),
        )
        table = EmbeddingTable(vocab, tensors.pop("table"))
        model = QueryModel(vocab, table, encoder)
        leftover = {}
        for name, arr in tensors.items():
            if name.startswith("enc."):
                key = name[4:]
                if key not in encoder.params or encoder.params[key].shape != arr.shape:
                    raise CheckpointError(f"unexpected tensor {name} {arr.shape}")
                encoder.params[key] = arr
            else:
                leftover[name] = arr
        return model, meta, leftover


def new_model(
    vocab: Vocabulary,
    arch: str,
    d: int,
    seed: int,
    layers: int = 2,
    heads: int = 4,
    max_len: int = 64,
    rpe_clip: int = 16,
    dtype=np.float64,
) -> QueryModel:
    """Freshly initialized model (seeded uniform init scaled by 1/sqrt(d))."""
    from ..rng import make_rng

    rng = make_rng(seed, 0)
    table = EmbeddingTable.create(vocab, d, rng, dtype)
    encoder = make_encoder(arch, d, rng, layers, heads, max_len, rpe_clip, dtype)
    return QueryModel(vocab, table, encoder)


__all__ = [
    "ARCHITECTURES",
    "TREE_ARCHS",
    "FULL_SCALE",
    "DESK_SCALE",
    "BiLSTMEncoder",
    "TreeLSTMEncoder",
    "TreeNoMemEncoder",
    "TransformerEncoder",
    "EmbeddingTable",
    "QueryModel",
    "grad_check",
    "NonFiniteLossError",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "score_all",
    "softmax",
    "make_encoder",
    "new_model",
    "normalize_arch",
    "pad_batch",
]
