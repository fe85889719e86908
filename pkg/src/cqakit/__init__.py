"""Complex-query-answering workbench.

Builds first-order-logic queries over knowledge graphs, linearizes their
computational graphs into token sequences, trains small sequence/tree
encoders with a full-softmax objective, and evaluates entailment/inference
ranking metrics against an exact symbolic engine.
"""

__version__ = "0.1.0"
