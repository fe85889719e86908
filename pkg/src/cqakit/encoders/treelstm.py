"""Child-sum tree encoders over query computational graphs.

The tree mirrors the query: every node feeds its operator token embedding
into the cell, anchors feed their entity token, and a grounded projection's
relation token enters as an extra leaf child. Child-sum composition handles
the variable arity of intersections and unions; the readout is the root's
hidden state.

Two variants share the recursion:

* ``TreeLSTM`` — full cell with per-child forget gates,
      h~ = sum_k h_k
      i = s(Wi x + Ui h~ + bi),  o = s(Wo x + Uo h~ + bo)
      u = tanh(Wu x + Uu h~ + bu),  f_k = s(Wf x + Uf h_k + bf)
      c = i * u + sum_k f_k * c_k,  h = o * tanh(c)
* ``TreeLSTM-NoMemoryCell`` — the cell state removed,
      h = tanh(W x + U sum_k h_k + b)
"""

from __future__ import annotations

import numpy as np

from ..linearize import OP_I, OP_N, OP_P, OP_U, Vocabulary
from ..queries import OperatorKind, QueryNode
from .numerics import sigmoid, uniform_init

_OP_TOKEN = {
    OperatorKind.PROJECTION: OP_P,
    OperatorKind.INTERSECTION: OP_I,
    OperatorKind.UNION: OP_U,
    OperatorKind.NEGATION: OP_N,
}


def tree_token_nodes(graph: QueryNode, vocab: Vocabulary):
    """Flatten a query into post-order ``(token_id, child_slots)`` nodes.

    Children appear before their parent, so a single forward scan composes
    leaves upward; ``child_slots`` index into the returned list.
    """
    nodes: list[tuple[int, list[int]]] = []

    def visit(node: QueryNode) -> int:
        if node.kind is OperatorKind.ANCHOR:
            nodes.append((vocab.entity_token(node.entity), []))
            return len(nodes) - 1
        child_slots = []
        if node.kind is OperatorKind.PROJECTION:
            nodes.append((vocab.relation_token(node.relation), []))
            child_slots.append(len(nodes) - 1)
        child_slots.extend(visit(c) for c in node.children)
        nodes.append((_OP_TOKEN[node.kind], child_slots))
        return len(nodes) - 1

    visit(graph)
    return nodes


class TreeLSTMEncoder:
    arch = "TreeLSTM"

    def __init__(self, d: int, rng: np.random.Generator, dtype=np.float64):
        self.d = d
        p = {}
        for gate in ("i", "f", "o", "u"):
            p[f"W{gate}"] = uniform_init(rng, (d, d), d, dtype)
            p[f"U{gate}"] = uniform_init(rng, (d, d), d, dtype)
            p[f"b{gate}"] = np.zeros(d, dtype=dtype)
        self.params = p

    def forward(self, graphs: list[QueryNode], table, vocab: Vocabulary):
        """Encode each query tree; returns (B,d) readouts and a cache."""
        p = self.params
        outs = []
        tree_caches = []
        for graph in graphs:
            nodes = tree_token_nodes(graph, vocab)
            xs, hs, cs, steps = [], [], [], []
            for token, child_slots in nodes:
                x = table.rows[token]
                h_sum = sum((hs[k] for k in child_slots), np.zeros(self.d, dtype=x.dtype))
                i = sigmoid(x @ p["Wi"] + h_sum @ p["Ui"] + p["bi"])
                o = sigmoid(x @ p["Wo"] + h_sum @ p["Uo"] + p["bo"])
                u = np.tanh(x @ p["Wu"] + h_sum @ p["Uu"] + p["bu"])
                fks = [sigmoid(x @ p["Wf"] + hs[k] @ p["Uf"] + p["bf"]) for k in child_slots]
                c = i * u + sum(
                    (f * cs[k] for f, k in zip(fks, child_slots)),
                    np.zeros(self.d, dtype=x.dtype),
                )
                h = o * np.tanh(c)
                xs.append(x)
                hs.append(h)
                cs.append(c)
                steps.append((token, child_slots, x, h_sum, i, o, u, fks, c))
            outs.append(hs[-1])
            tree_caches.append((steps, hs, cs))
        return np.stack(outs), tree_caches

    def backward(self, cache, d_out: np.ndarray):
        """Returns (param grads, token ids (N,), token grads (N,d))."""
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        tok_ids: list[int] = []
        tok_grads: list[np.ndarray] = []
        for (steps, hs, cs), droot in zip(cache, d_out):
            n = len(steps)
            dh = [np.zeros(self.d, dtype=droot.dtype) for _ in range(n)]
            dc = [np.zeros(self.d, dtype=droot.dtype) for _ in range(n)]
            dh[-1] = droot.copy()
            for idx in range(n - 1, -1, -1):
                token, child_slots, x, h_sum, i, o, u, fks, c = steps[idx]
                tc = np.tanh(c)
                dh_j, dc_j = dh[idx], dc[idx]
                do = dh_j * tc
                dc_j = dc_j + dh_j * o * (1 - tc * tc)
                di = dc_j * u
                du = dc_j * i
                dzi = di * i * (1 - i)
                dzo = do * o * (1 - o)
                dzu = du * (1 - u * u)
                grads["Wi"] += np.outer(x, dzi)
                grads["Wo"] += np.outer(x, dzo)
                grads["Wu"] += np.outer(x, dzu)
                grads["Ui"] += np.outer(h_sum, dzi)
                grads["Uo"] += np.outer(h_sum, dzo)
                grads["Uu"] += np.outer(h_sum, dzu)
                grads["bi"] += dzi
                grads["bo"] += dzo
                grads["bu"] += dzu
                dx = dzi @ p["Wi"].T + dzo @ p["Wo"].T + dzu @ p["Wu"].T
                dh_sum = dzi @ p["Ui"].T + dzo @ p["Uo"].T + dzu @ p["Uu"].T
                for f, k in zip(fks, child_slots):
                    df = dc_j * cs[k]
                    dzf = df * f * (1 - f)
                    grads["Wf"] += np.outer(x, dzf)
                    grads["Uf"] += np.outer(hs[k], dzf)
                    grads["bf"] += dzf
                    dx += dzf @ p["Wf"].T
                    dh[k] += dh_sum + dzf @ p["Uf"].T
                    dc[k] += dc_j * f
                tok_ids.append(token)
                tok_grads.append(dx)
        ids = np.array(tok_ids, dtype=np.int64)
        dxs = np.stack(tok_grads) if tok_grads else np.zeros((0, self.d))
        return grads, ids, dxs


class TreeNoMemEncoder:
    """Ablated tree cell without the memory state: h = tanh(Wx + U sum h_k + b)."""

    arch = "TreeLSTM-NoMemoryCell"

    def __init__(self, d: int, rng: np.random.Generator, dtype=np.float64):
        self.d = d
        self.params = {
            "W": uniform_init(rng, (d, d), d, dtype),
            "U": uniform_init(rng, (d, d), d, dtype),
            "b": np.zeros(d, dtype=dtype),
        }

    def forward(self, graphs: list[QueryNode], table, vocab: Vocabulary):
        p = self.params
        outs = []
        tree_caches = []
        for graph in graphs:
            nodes = tree_token_nodes(graph, vocab)
            hs, steps = [], []
            for token, child_slots in nodes:
                x = table.rows[token]
                h_sum = sum((hs[k] for k in child_slots), np.zeros(self.d, dtype=x.dtype))
                h = np.tanh(x @ p["W"] + h_sum @ p["U"] + p["b"])
                hs.append(h)
                steps.append((token, child_slots, x, h_sum, h))
            outs.append(hs[-1])
            tree_caches.append(steps)
        return np.stack(outs), tree_caches

    def backward(self, cache, d_out: np.ndarray):
        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        tok_ids: list[int] = []
        tok_grads: list[np.ndarray] = []
        for steps, droot in zip(cache, d_out):
            n = len(steps)
            dh = [np.zeros(self.d, dtype=droot.dtype) for _ in range(n)]
            dh[-1] = droot.copy()
            for idx in range(n - 1, -1, -1):
                token, child_slots, x, h_sum, h = steps[idx]
                dz = dh[idx] * (1 - h * h)
                grads["W"] += np.outer(x, dz)
                grads["U"] += np.outer(h_sum, dz)
                grads["b"] += dz
                dx = dz @ p["W"].T
                dh_sum = dz @ p["U"].T
                for k in child_slots:
                    dh[k] += dh_sum
                tok_ids.append(token)
                tok_grads.append(dx)
        ids = np.array(tok_ids, dtype=np.int64)
        dxs = np.stack(tok_grads) if tok_grads else np.zeros((0, self.d))
        return grads, ids, dxs
