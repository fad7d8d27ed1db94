import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from socialref import datamodel as dm
from socialref.errors import AlignmentError, ConfigError, ContractViolation, DataError


def raw_session(tokens_list, roster=("David", "Alice", "Thomas")):
    times = np.array([0.0, 0.4])
    parts = np.full((2, 17, 2), 0.5)
    valid = np.ones((2, 17), dtype=bool)
    tracks = {10 + i: (times, parts, valid) for i in range(len(roster))}
    utts = [dm.RawUtterance(roster[k % len(roster)], k, k + 0.5, tuple(toks)) for k, toks in enumerate(tokens_list)]
    return dm.RawSession("s0", [(n, 10 + i) for i, n in enumerate(roster)], tracks, utts)


def test_anonymize_names_in_roster_order():
    s = dm.anonymize(raw_session([["@David", "@Alice", "@Thomas"]]))
    assert list(s.utterances[0].tokens) == ["Player1", "Player2", "Player3"]
    assert s.name_table == {"David": 1, "Alice": 2, "Thomas": 3}


def test_anonymize_without_mentions_is_token_identical():
    toks = ["i", "am", "a", "villager"]
    s = dm.anonymize(raw_session([toks]))
    assert list(s.utterances[0].tokens) == toks
    assert len(s.name_table) == 3


def test_deanonymize_round_trip():
    toks = ["@Alice", "saw", "@Thomas", "and", "@David"]
    s = dm.anonymize(raw_session([toks]))
    assert dm.deanonymize_tokens(s.utterances[0].tokens, s.name_table) == toks


def test_unknown_name_names_token_and_utterance():
    with pytest.raises(AlignmentError, match=r"'Zed'.*utterance 1"):
        dm.anonymize(raw_session([["hi"], ["@Zed", "lies"]]))


def _session(tokens, addressee=None, coref=None):
    u = dm.Utterance(0, 1, 0.0, 1.0, tuple(tokens), addressee, coref or {})
    times = np.array([0.0])
    tracks = [dm.PlayerTrack(i, i, times, np.full((1, 17, 2), 0.5), np.ones((1, 17), bool)) for i in (1, 2, 3, 4)]
    return dm.Session("s", 4, tracks, [u], {n: i for i, n in enumerate("abcd", 1)}, 0.4)


def test_sti_instance_appends_suffix():
    s = _session("why are you lying".split(), addressee=3)
    (inst,) = dm.build_task_instances(s, dm.TaskKind.STI)
    assert " ".join(inst.masked_tokens) == "why are you lying ( To [MASK] )"
    assert inst.label == 3


def test_pcr_instance_masks_pronoun():
    s = _session("I think he was the Werewolf".split(), coref={2: 2})
    (inst,) = dm.build_task_instances(s, dm.TaskKind.PCR)
    assert " ".join(inst.masked_tokens) == "I think [MASK] was the Werewolf"
    assert inst.label == 2


def test_mpp_instance_masks_mention():
    s = _session("I switched Player4 with somebody".split())
    (inst,) = dm.build_task_instances(s, dm.TaskKind.MPP)
    assert " ".join(inst.masked_tokens) == "I switched [MASK] with somebody"
    assert inst.label == 4


def test_no_candidates_yields_no_instances():
    s = _session("nothing to see".split())
    for kind in dm.TaskKind:
        assert dm.build_task_instances(s, kind) == []


def test_everyone_only_legal_for_sti():
    inst = dm.TaskInstance(dm.TaskKind.PCR, "s", 0, ("[MASK]",), dm.EVERYONE)
    with pytest.raises(ContractViolation):
        inst.validate(4)


def test_generated_instances_have_exactly_one_mask(small_session):
    for kind in dm.TaskKind:
        for inst in dm.build_task_instances(small_session, kind):
            assert sum(t == dm.MASK for t in inst.masked_tokens) == 1


def test_keypoints_validity_rules():
    parts = np.zeros((17, 2))
    parts[0] = (1.2, 0.5)
    with pytest.raises(DataError):
        dm.Keypoints17(parts, np.ones(17, bool))
    parts[0] = (0.1, 0.1)
    with pytest.raises(DataError):
        dm.Keypoints17(parts, np.zeros(17, bool))


def test_timestamps_strictly_increasing():
    with pytest.raises(DataError):
        dm.PlayerTrack(1, 1, [0.0, 0.0], np.zeros((2, 17, 2)), np.zeros((2, 17), bool))


perms = st.integers(3, 6).flatmap(lambda p: st.permutations(range(1, p + 1)).map(dm.Permutation))


def test_permutation_example():
    pi = dm.Permutation((3, 1, 2))
    inst = dm.TaskInstance(dm.TaskKind.MPP, "s", 0, ("Player1", "told", "[MASK]", "about", "Player1"), 1)
    pos = np.arange(12.0).reshape(6, 2)
    out, new_pos, spk = dm.apply_permutation(inst, pos, 2, pi)
    assert out.label == 3
    assert out.masked_tokens == ("Player3", "told", "[MASK]", "about", "Player3")
    assert spk == 1
    np.testing.assert_array_equal(new_pos[2], pos[0])
    np.testing.assert_array_equal(new_pos[3:], pos[3:])


def test_non_bijection_rejected():
    with pytest.raises(ContractViolation):
        dm.Permutation((1, 1, 2))


@given(perms, st.data())
def test_permutation_inverse_and_identity(pi, data):
    p = pi.size
    label = data.draw(st.integers(1, p))
    toks = tuple(dm.player_token(data.draw(st.integers(1, p))) for _ in range(4)) + ("[MASK]",)
    inst = dm.TaskInstance(dm.TaskKind.MPP, "s", 0, toks, label)
    pos = np.arange(12.0).reshape(6, 2) / 12
    speaker = data.draw(st.integers(1, p))

    same = dm.apply_permutation(inst, pos, speaker, dm.Permutation.identity(p))
    assert same[0] == inst and np.array_equal(same[1], pos) and same[2] == speaker

    fwd = dm.apply_permutation(inst, pos, speaker, pi)
    back = dm.apply_permutation(*fwd, pi.inverse())
    assert back[0] == inst and np.array_equal(back[1], pos) and back[2] == speaker


@given(st.integers(3, 6).flatmap(lambda p: st.tuples(st.permutations(range(1, p + 1)),
                                                     st.permutations(range(1, p + 1)))), st.integers(1, 3))
def test_permutation_is_group_action(pair, label):
    p1, p2 = dm.Permutation(pair[0]), dm.Permutation(pair[1])
    inst = dm.TaskInstance(dm.TaskKind.STI, "s", 0, ("Player1", "Player2", "you") + dm.STI_SUFFIX, label)
    pos = np.random.default_rng(0).random((6, 2))
    seq = dm.apply_permutation(*dm.apply_permutation(inst, pos, 3, p1), p2)
    once = dm.apply_permutation(inst, pos, 3, p2.compose(p1))
    assert seq[0] == once[0] and np.array_equal(seq[1], once[1]) and seq[2] == once[2]


@given(perms)
def test_everyone_label_fixed(pi):
    inst = dm.TaskInstance(dm.TaskKind.STI, "s", 0, ("you",) + dm.STI_SUFFIX, dm.EVERYONE)
    out, _, _ = dm.apply_permutation(inst, np.zeros((6, 2)), 1, pi)
    assert out.label == dm.EVERYONE


class _S:
    def __init__(self, sid):
        self.session_id = sid


def test_split_ten_sessions():
    sessions = [_S(f"s{i:02d}") for i in range(10)]
    train, test = dm.split_sessions(sessions, 0.2, seed=1)
    assert len(train) == 8 and len(test) == 2
    assert not {s.session_id for s in train} & {s.session_id for s in test}
    again = dm.split_sessions(sessions, 0.2, seed=1)
    assert [s.session_id for s in again[1]] == [s.session_id for s in test]


def test_split_151_sessions():
    _, test = dm.split_sessions([_S(f"s{i:03d}") for i in range(151)], 0.2)
    assert len(test) == 30


@given(st.integers(2, 40), st.floats(0.05, 0.95), st.integers(0, 1000))
@settings(max_examples=50)
def test_split_is_partition(n, frac, seed):
    sessions = [_S(f"s{i}") for i in range(n)]
    train, test = dm.split_sessions(sessions, frac, seed)
    ids = [s.session_id for s in train + test]
    assert sorted(ids) == sorted(s.session_id for s in sessions)
    assert len(set(ids)) == n


@pytest.mark.parametrize("frac", [0.0, 1.0, 1.5])
def test_split_rejects_bad_fraction(frac):
    with pytest.raises(ConfigError):
        dm.split_sessions([_S("a"), _S("b")], frac)


def test_json_round_trip(small_session, tmp_path):
    text = dm.dump_session(small_session)
    again = dm.session_from_dict(json.loads(text))
    assert dm.dump_session(again) == text
    path = tmp_path / "s.json"
    dm.save_session(small_session, path)
    assert dm.dump_session(dm.load_session(path)) == text
