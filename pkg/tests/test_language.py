import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from socialref import language as L
from socialref.corpus.generator import GenConfig, generate_corpus
from socialref.datamodel import MASK, TaskInstance, TaskKind, build_task_instances
from socialref.errors import ContractViolation, DataError, DimensionError, WindowOverflowError
from socialref.tensorcore import nn


def first_instance(session, k=None):
    insts = build_task_instances(session, TaskKind.MPP)
    if k is None:
        return insts[0]
    u = session.utterance(k)
    return TaskInstance(TaskKind.STI, session.session_id, k, tuple(u.tokens) + ("(", "To", MASK, ")"), 1)


def test_vocab_specials_and_unknown(small_vocab, tmp_path):
    assert small_vocab.tokens[:len(L.SPECIALS)] == list(L.SPECIALS)
    assert small_vocab.encode(["zebra"]) == [small_vocab.id(L.UNK)]
    assert [small_vocab.tokens[i] for i in small_vocab.player_ids[1:]] == [f"Player{i}" for i in range(1, 7)]
    p = tmp_path / "v.txt"
    small_vocab.save(p)
    again = L.Vocab.load(p)
    assert again.tokens == small_vocab.tokens and again.hash() == small_vocab.hash()
    with pytest.raises(DataError):
        L.Vocab(["a", "b"])


def test_first_utterance_has_no_preceding_context(small_session, small_vocab):
    w = L.build_context(small_session, first_instance(small_session, k=0), 5, small_vocab)
    assert w.context_counts() == (0, 5)


def test_n0_is_target_only(small_session, small_vocab):
    inst = first_instance(small_session, k=3)
    w = L.build_context(small_session, inst, 0, small_vocab)
    toks = [small_vocab.tokens[i] for i in w.ids]
    assert toks == [L.CLS] + list(inst.masked_tokens) + [L.SEP]
    assert w.mask_position == toks.index(MASK)


@given(st.integers(0, 29), st.integers(0, 9))
@settings(max_examples=40, deadline=None)
def test_edge_windows_take_available_context(small_session, small_vocab, k, n):
    w = L.build_context(small_session, first_instance(small_session, k=k), n, small_vocab, max_len=512)
    last = len(small_session.utterances) - 1
    assert w.context_counts() == (min(n, k), min(n, last - k))
    assert sum(small_vocab.tokens[i] == MASK for i in w.ids) == 1


@given(st.integers(0, 29), st.integers(14, 80))
@settings(max_examples=60, deadline=None)
def test_truncation_keeps_exactly_one_mask(small_session, small_vocab, k, max_len):
    inst = first_instance(small_session, k=k)
    try:
        w = L.build_context(small_session, inst, 5, small_vocab, max_len=max_len)
    except WindowOverflowError:
        assert inst.masked_tokens.index(MASK) >= max_len - 2
        return
    assert len(w.ids) <= max_len
    assert sum(small_vocab.tokens[i] == MASK for i in w.ids) == 1
    assert small_vocab.tokens[w.ids[w.mask_position]] == MASK


def test_truncation_drops_farthest_first(small_session, small_vocab):
    inst = first_instance(small_session, k=15)
    full = L.build_context(small_session, inst, 5, small_vocab, max_len=512)
    cut = L.build_context(small_session, inst, 5, small_vocab, max_len=len(full.ids) - 1)
    assert cut.truncated
    before, after = cut.context_counts()
    assert (before, after) == (5, 4)


def test_target_tail_cut_but_never_mask(small_session, small_vocab):
    inst = first_instance(small_session, k=4)
    long = TaskInstance(TaskKind.MPP, inst.session_id, 4, ("a", MASK) + ("b",) * 30, 1)
    w = L.build_context(small_session, long, 5, small_vocab, max_len=10)
    assert len(w.ids) == 10 and w.truncated
    late = TaskInstance(TaskKind.MPP, inst.session_id, 4, ("b",) * 30 + (MASK,), 1)
    with pytest.raises(WindowOverflowError):
        L.build_context(small_session, late, 5, small_vocab, max_len=10)


def test_target_segment_type(small_session, small_vocab):
    inst = first_instance(small_session, k=10)
    w = L.build_context(small_session, inst, 2, small_vocab)
    start, end, k = next(s for s in w.segments if s[2] == 10)
    types = w.segment_types
    assert types[start:end].all() and types.sum() == end - start


def dims(vocab_size, d_out=8):
    return L.LanguageDims(vocab_size, nn.EncoderShape(1, 8, 16, 2), d_out, max_len=128)


@pytest.fixture
def lm(small_vocab):
    store = nn.ParamStore()
    d = dims(len(small_vocab))
    L.init_language(store, d, np.random.default_rng(0))
    return store, d


def windows(session, vocab, n=3, count=4):
    insts = build_task_instances(session, TaskKind.MPP)[:count]
    return [L.build_context(session, i, n, vocab) for i in insts]


def test_output_width(lm, small_session, small_vocab):
    store, d = lm
    ids, keys, seg, pos = L.collate(windows(small_session, small_vocab))
    fc = L.encode_masked_context(store, d, ids, keys, seg, pos)
    assert fc.shape == (len(ids), 8)


def test_padding_neutrality(lm, small_session, small_vocab):
    store, d = lm
    ws = windows(small_session, small_vocab)
    a = L.encode_masked_context(store, d, *L.collate(ws)).data
    padded = L.collate(ws, pad_to=max(len(w.ids) for w in ws) + 17)
    b = L.encode_masked_context(store, d, *padded).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_deterministic(lm, small_session, small_vocab):
    store, d = lm
    batch = L.collate(windows(small_session, small_vocab))
    assert np.array_equal(L.encode_masked_context(store, d, *batch).data,
                          L.encode_masked_context(store, d, *batch).data)


def test_swapping_players_changes_output(lm, small_vocab):
    store, d = lm
    p2, p5 = small_vocab.id("Player2"), small_vocab.id("Player5")
    sessions = [s for s, _ in generate_corpus(GenConfig(player_count=5, sessions=8, seed=21))]
    ws = [L.build_context(s, i, 5, small_vocab) for s in sessions for i in build_task_instances(s, TaskKind.MPP)]
    ws = [w for w in ws if np.isin(w.ids, [p2, p5]).any()][:100]
    ids, keys, seg, pos = L.collate(ws)
    swapped = np.where(ids == p2, p5, np.where(ids == p5, p2, ids))
    a = L.encode_masked_context(store, d, ids, keys, seg, pos).data
    b = L.encode_masked_context(store, d, swapped, keys, seg, pos).data
    assert len(ws) == 100
    assert np.all(np.abs(a - b).max(axis=1) > 0)


def test_contract_checks(lm, small_session, small_vocab):
    store, d = lm
    ids, keys, seg, pos = L.collate(windows(small_session, small_vocab))
    with pytest.raises(ContractViolation):
        L.encode_masked_context(store, d, ids, keys, seg, pos + ids.shape[1])
    with pytest.raises(DimensionError):
        L.encode_masked_context(store, d, *L.collate(windows(small_session, small_vocab), pad_to=200))
