import numpy as np
import pytest

from cqakit.encoders import (
    DESK_SCALE,
    FULL_SCALE,
    CheckpointError,
    EmbeddingTable,
    QueryModel,
    grad_check,
    load_checkpoint,
    new_model,
    normalize_arch,
    pad_batch,
    save_checkpoint,
    score_all,
)
from cqakit.encoders.gradcheck import NonFiniteLossError
from cqakit.linearize import PAD, Vocabulary, linearize
from cqakit.queries import anchor, parse_grounded
from cqakit.rng import make_rng

VOCAB = Vocabulary(num_relations=5, num_entities=20)
GRAPHS = [
    parse_grounded("(p,(1),(u,(p,(2),(e,(3))),(p,(0),(e,(5)))))"),
    parse_grounded("(i,(p,(0),(e,(2))),(n,(p,(1),(e,(7)))))"),
    parse_grounded("(e,(4))"),
]
ALL_ARCHS = ("LSTM", "TreeLSTM", "TreeLSTM-NoMemoryCell", "Transformer-APE", "Transformer-RPE")


@pytest.mark.parametrize("arch", ALL_ARCHS)
def test_shape_law(arch):
    model = new_model(VOCAB, arch, d=8, seed=1, layers=2, heads=2)
    out, _ = model.encode(model.prepare(GRAPHS))
    assert out.shape == (3, 8)
    assert np.all(np.isfinite(out))


def test_zero_lstm_is_zero_fixed_point():
    model = new_model(VOCAB, "LSTM", d=8, seed=1, layers=3)
    for name in model.encoder.params:
        model.encoder.params[name][:] = 0.0
    out, _ = model.encode(model.prepare(GRAPHS))
    assert np.all(out == 0.0)


def test_treelstm_anchor_locality():
    model = new_model(VOCAB, "TreeLSTM", d=8, seed=2)
    out1, _ = model.encode([anchor(4)])
    # permuting every other table row must not change the encoding of (e,(4))
    row = VOCAB.entity_token(4)
    other = [i for i in range(VOCAB.size) if i != row]
    model.table.rows[other] = model.table.rows[other][::-1]
    out2, _ = model.encode([anchor(4)])
    np.testing.assert_array_equal(out1, out2)


def test_embed_lookup():
    model = new_model(VOCAB, "LSTM", d=8, seed=0)
    tokens = linearize(GRAPHS[0], VOCAB)
    mat = model.table.embed(tokens)
    assert mat.shape == (len(tokens), 8)
    single = model.table.embed([tokens[0]])
    assert single.shape == (1, 8)
    # shared token -> identical rows
    t2 = linearize(GRAPHS[1], VOCAB)
    np.testing.assert_array_equal(model.table.embed([tokens[0]])[0], model.table.embed([t2[0]])[0])
    with pytest.raises(IndexError):
        model.table.embed([VOCAB.size])


def test_score_all_zero_query():
    model = new_model(VOCAB, "LSTM", d=8, seed=3)
    scores = score_all(np.zeros(8), model.table)
    assert scores.shape == (20,)
    assert np.all(scores == 0.0)
    probs = np.exp(scores) / np.exp(scores).sum()
    np.testing.assert_allclose(probs, np.full(20, 1 / 20))


def test_score_all_orthogonal_argmax():
    table = EmbeddingTable(VOCAB, np.zeros((VOCAB.size, 4)))
    table.rows[VOCAB.entity_token(7)] = np.array([1.0, 0, 0, 0])
    table.rows[VOCAB.entity_token(3)] = np.array([0, 1.0, 0, 0])
    scores = score_all(np.array([1.0, 0, 0, 0]), table)
    assert int(np.argmax(scores)) == 7


def test_score_all_hand_computed():
    rng = make_rng(44)
    vocab = Vocabulary(num_relations=2, num_entities=10)
    rows = rng.normal(size=(vocab.size, 3))
    table = EmbeddingTable(vocab, rows)
    e_q = rng.normal(size=3)
    scores = score_all(e_q, table)
    for v in range(10):
        expected = sum(e_q[j] * rows[vocab.entity_token(v), j] for j in range(3))
        assert scores[v] == pytest.approx(expected, rel=1e-12)


def test_seed_determinism():
    a = new_model(VOCAB, "Transformer-APE", d=8, seed=5, layers=1, heads=2)
    b = new_model(VOCAB, "Transformer-APE", d=8, seed=5, layers=1, heads=2)
    for name in a.parameters():
        np.testing.assert_array_equal(a.parameters()[name], b.parameters()[name])
    out_a, _ = a.encode(a.prepare(GRAPHS))
    out_b, _ = b.encode(b.prepare(GRAPHS))
    np.testing.assert_array_equal(out_a, out_b)


def test_ablation_variants_differ():
    full = new_model(VOCAB, "TreeLSTM", d=8, seed=6)
    ablated = new_model(VOCAB, "TreeLSTM-NoMemoryCell", d=8, seed=6)
    out_full, _ = full.encode(GRAPHS[:1])
    out_ablated, _ = ablated.encode(GRAPHS[:1])
    assert not np.allclose(out_full, out_ablated)


@pytest.mark.parametrize("arch", ("LSTM", "Transformer-APE", "Transformer-RPE"))
def test_pad_row_inert(arch):
    model = new_model(VOCAB, arch, d=8, seed=7, layers=1, heads=2)
    queries = model.prepare(GRAPHS)  # varying lengths force padding
    out1, _ = model.encode(queries)
    model.table.rows[PAD] += 123.456
    out2, _ = model.encode(queries)
    np.testing.assert_array_equal(out1, out2)


def test_pad_batch_shapes():
    ids, mask = pad_batch([[1, 2, 3], [4]])
    assert ids.shape == (2, 3) and mask.shape == (2, 3)
    assert ids[1, 1] == PAD and mask[1, 1] == 0.0


def test_transformer_length_limit():
    model = new_model(VOCAB, "Transformer-APE", d=8, seed=0, layers=1, heads=2, max_len=4)
    with pytest.raises(ValueError, match="exceeds position table"):
        model.encode([[1, 2, 3, 4, 5]])


def test_architecture_names():
    assert normalize_arch("lstm") == "LSTM"
    assert normalize_arch("transformer-rpe") == "Transformer-RPE"
    with pytest.raises(ValueError):
        normalize_arch("cnn")
    assert FULL_SCALE == {"d": 400, "layers": 3, "heads": 16}
    assert DESK_SCALE["d"] == 64


# -- gradient verification ---------------------------------------------------


def quadratic_probe(model, graphs, seed=0):
    """Deterministic scalar head over the query embeddings for FD checks."""
    w = make_rng(seed).normal(size=(len(graphs), model.d))
    queries = model.prepare(graphs)

    def loss_and_grads():
        out, cache = model.encode(queries)
        loss = float(np.sum(np.tanh(out) * w))
        d_out = (1 - np.tanh(out) ** 2) * w
        return loss, model.backward(cache, d_out)

    return loss_and_grads


def test_grad_check_lstm_toy_batch():
    model = new_model(VOCAB, "LSTM", d=8, seed=9, layers=2)
    err = grad_check(quadratic_probe(model, GRAPHS), model.parameters(), subsample_threshold=40)
    assert err < 1e-4


def test_grad_check_treelstm_2i_query():
    model = new_model(VOCAB, "TreeLSTM", d=8, seed=10)
    g = parse_grounded("(i,(p,(1),(e,(2))),(p,(0),(e,(9))))")
    err = grad_check(quadratic_probe(model, [g]), model.parameters(), subsample_threshold=40)
    assert err < 1e-4


def test_grad_check_constant_loss_zeros():
    model = new_model(VOCAB, "LSTM", d=8, seed=11, layers=1)
    queries = model.prepare(GRAPHS[:1])

    def constant():
        out, cache = model.encode(queries)
        grads = model.backward(cache, np.zeros_like(out))
        return 0.0, grads

    assert grad_check(constant, model.parameters(), subsample_threshold=20) == 0.0


def test_grad_check_nonfinite_loss():
    def bad():
        return float("nan"), {}

    with pytest.raises(NonFiniteLossError):
        grad_check(bad, {"w": np.zeros(1)})


# -- checkpoints ---------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    path = tmp_path / "m.ckpt"
    model = new_model(VOCAB, "LSTM", d=8, seed=12, layers=2)
    model.save(path)
    loaded, meta, leftover = QueryModel.load(path)
    assert meta["arch"] == "LSTM" and meta["d"] == 8
    assert not leftover
    for name, arr in model.parameters().items():
        np.testing.assert_array_equal(arr, loaded.parameters()[name])
    out_a, _ = model.encode(model.prepare(GRAPHS))
    out_b, _ = loaded.encode(loaded.prepare(GRAPHS))
    np.testing.assert_array_equal(out_a, out_b)


def test_checkpoint_vocab_hash_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    model = new_model(VOCAB, "LSTM", d=8, seed=13)
    model.save(path)
    meta, tensors = load_checkpoint(path)
    meta["num_entities"] = 21  # table no longer matches the recorded layout
    save_checkpoint(path, meta, tensors)
    with pytest.raises(CheckpointError, match="vocabulary layout"):
        QueryModel.load(path)


def test_checkpoint_detects_corruption(tmp_path):
    path = tmp_path / "m.ckpt"
    model = new_model(VOCAB, "LSTM", d=8, seed=14)
    model.save(path)
    blob = bytearray(path.read_bytes())
    blob[-3] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(path)


def test_positional_schemes_differ():
    # same seed, same queries: absolute vs relative positions must not collapse
    ape = new_model(VOCAB, "Transformer-APE", d=8, seed=21, layers=1, heads=2)
    rpe = new_model(VOCAB, "Transformer-RPE", d=8, seed=21, layers=1, heads=2)
    out_a, _ = ape.encode(ape.prepare(GRAPHS[:1]))
    out_r, _ = rpe.encode(rpe.prepare(GRAPHS[:1]))
    assert not np.allclose(out_a, out_r)


def test_rpe_shifts_attention_by_distance():
    # two two-token sequences with the tokens swapped: with RPE the readout
    # depends on relative order, so the outputs must differ
    model = new_model(VOCAB, "Transformer-RPE", d=8, seed=22, layers=1, heads=2)
    a, _ = model.encode([[1, 2]])
    b, _ = model.encode([[2, 1]])
    assert not np.allclose(a, b)
