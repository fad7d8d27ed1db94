import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from socialref.corpus.agreement import RatingMatrix, krippendorff_alpha
from socialref.corpus.generator import ARM_LENGTH, GenConfig, generate_corpus, generate_session, manifest_entries
from socialref.datamodel import EVERYONE, PART, TaskKind, build_task_instances, dump_session, player_of
from socialref.errors import ConfigError, InsufficientDataError
from socialref.language import Vocab, build_context

from oracles import alpha_by_pairs, random_matrix


def test_alpha_perfect_agreement():
    assert krippendorff_alpha(RatingMatrix(np.array([[1, 1], [1, 1], [2, 2], [2, 2]]))) == 1.0


def test_alpha_single_category_is_insufficient():
    with pytest.raises(InsufficientDataError):
        krippendorff_alpha(RatingMatrix(np.full((5, 3), 2.0)))


def test_alpha_no_pairable_item():
    with pytest.raises(InsufficientDataError):
        krippendorff_alpha(RatingMatrix(np.array([[1.0, np.nan], [np.nan, 2.0]])))


def test_alpha_needs_two_annotators():
    with pytest.raises(InsufficientDataError):
        RatingMatrix(np.ones((4, 1)))


@pytest.mark.parametrize("seed", range(20))
def test_alpha_matches_pair_enumeration(seed):
    v = random_matrix(np.random.default_rng(seed))
    assert abs(krippendorff_alpha(RatingMatrix(v)) - alpha_by_pairs(v)) < 1e-12


def test_alpha_known_value():
    # classic nominal example: 3 coders, 4 items
    v = np.array([[1, 1, np.nan], [2, 2, 2], [1, 2, 1], [3, 3, 3]], dtype=float)
    assert krippendorff_alpha(RatingMatrix(v)) == pytest.approx(alpha_by_pairs(v), abs=1e-12)


@given(st.integers(0, 10_000))
@settings(max_examples=40)
def test_alpha_duplication_only_rescales_expected_disagreement(seed):
    # duplicating items leaves observed disagreement intact; expected disagreement
    # carries an n/(n-1) small-sample factor, so 1-alpha scales by (2n-1)/(2n-2)
    v = random_matrix(np.random.default_rng(seed))
    a1 = krippendorff_alpha(RatingMatrix(v))
    a2 = krippendorff_alpha(RatingMatrix(np.vstack([v, v])))
    n = sum(int(c) for c in (~np.isnan(v)).sum(axis=1) if c >= 2)
    assert (1 - a2) == pytest.approx((1 - a1) * (2 * n - 1) / (2 * n - 2), abs=1e-12)


def test_alpha_reads_csv(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("a,b,c\n1,1,\n2,2,2\n1,2,1\n")
    v = np.array([[1, 1, np.nan], [2, 2, 2], [1, 2, 1]])
    assert krippendorff_alpha(RatingMatrix.from_csv(p)) == pytest.approx(alpha_by_pairs(v), abs=1e-12)


@pytest.mark.parametrize("bad", [dict(player_count=2), dict(player_count=7), dict(everyone_rate=1.0),
                                 dict(gesture_noise=-0.1), dict(frames_per_utterance=0),
                                 dict(language_informativeness=1.5)])
def test_genconfig_rejects(bad):
    with pytest.raises(ConfigError):
        GenConfig(**bad)


def test_generator_is_deterministic():
    cfg = GenConfig(seed=11, sessions=1, utterances_per_session=20)
    a, _ = generate_session(cfg)
    b, _ = generate_session(cfg)
    assert dump_session(a) == dump_session(b)
    c, _ = generate_session(GenConfig(seed=12, sessions=1, utterances_per_session=20))
    assert dump_session(a) != dump_session(c)


def _directed(session, gold, cfg):
    for k, g in gold.items():
        if g["referent"] not in (0, EVERYONE) and g["referent"] > 0:
            yield k, session.utterances[k].speaker, g["referent"]


def test_pointing_is_collinear():
    cfg = GenConfig(player_count=6, utterances_per_session=80, gesture_noise=0.0, seed=5, sessions=1)
    session, gold = generate_session(cfg)
    t = cfg.frames_per_utterance
    checked = 0
    for k, s, r in _directed(session, gold, cfg):
        ts, tr = session.track(s), session.track(r)
        final = k * t + t - 1
        rest = ts.parts[0, PART["r_wrist"]] - ts.parts[0, PART["nose"]] + ts.parts[final, PART["nose"]]
        d = ts.parts[final, PART["r_wrist"]] - rest
        u = tr.parts[final, PART["nose"]] - ts.parts[final, PART["nose"]]
        cos = d @ u / (np.linalg.norm(d) * np.linalg.norm(u))
        assert np.arccos(min(1.0, cos)) < 1e-6
        assert np.linalg.norm(d) == pytest.approx(ARM_LENGTH, abs=1e-12)
        checked += 1
    assert checked > 10


def test_horizontal_pointing_moves_only_in_x():
    # four seats without jitter: players 1 and 3 face each other across the frame
    cfg = GenConfig(player_count=4, utterances_per_session=120, gesture_noise=0.0, seat_jitter=0.0, seed=2,
                    sessions=1)
    session, gold = generate_session(cfg)
    t = cfg.frames_per_utterance
    hits = [(k, s, r) for k, s, r in _directed(session, gold, cfg) if (s, r) == (1, 3)]
    assert hits
    for k, s, r in hits:
        wrist = session.track(s).parts[:, PART["r_wrist"]]
        d = wrist[k * t + t - 1] - wrist[0]
        assert d[0] > 0.07 and abs(d[1]) < 1e-12


def test_non_speakers_hold_rest_pose():
    cfg = GenConfig(player_count=5, utterances_per_session=30, gesture_noise=0.0, seed=1, sessions=1)
    session, _ = generate_session(cfg)
    for tr in session.tracks:
        speaking = np.zeros(len(tr), bool)
        for u in session.utterances:
            if u.speaker == tr.anon_id:
                speaking[tr.index_at(u.t0):tr.index_at(u.t1)] = True
        idle = tr.parts[~speaking]
        assert len(idle) and np.all(idle == idle[0])


def test_referent_balance():
    cfg = GenConfig(player_count=5, utterances_per_session=200, sessions=12, everyone_rate=0.0, seed=4,
                    sti_weight=1, pcr_weight=0, mpp_weight=0)
    counts = Counter()
    for session, gold in generate_corpus(cfg):
        counts.update(g["referent"] for g in gold.values() if g["kind"] == "sti")
    total = sum(counts.values())
    assert total >= 1000
    for slot in range(1, 6):
        assert abs(counts[slot] / total - 0.2) <= 0.2 * 0.2


def text_rule(session, inst, vocab, n=5):
    """Template-level reading: STI names the addressee in the target line (or
    says everyone); PCR and MPP take the latest earlier mention."""
    w = build_context(session, inst, n, vocab)
    toks = [vocab.tokens[i] for i in w.ids]
    target_seg = next(seg for seg in w.segments if seg[2] == inst.target_index)
    if inst.kind is TaskKind.STI:
        line = toks[target_seg[0]:target_seg[1]]
        if "everyone" in line:
            return EVERYONE
        named = [player_of(t) for t in line if player_of(t)]
        return named[0] if named else None
    earlier = [player_of(t) for t in toks[:target_seg[0]] if player_of(t)]
    return earlier[-1] if earlier else None


def episode_targets(cfg):
    pairs = generate_corpus(cfg)
    vocab = Vocab.from_sessions([s for s, _ in pairs])
    for session, gold in pairs:
        rows = {(r["task"], r["k"]) for r in manifest_entries(session, gold) if r["episode_target"]}
        for kind in TaskKind:
            for inst in build_task_instances(session, kind):
                if (kind.value, inst.target_index) in rows and not inst.label_is_unknown:
                    yield session, inst, vocab


def test_language_informative_corpus_is_text_resolvable():
    cfg = GenConfig(language_informativeness=1.0, gesture_noise=0.0, sessions=20, seed=8)
    scored = [text_rule(s, i, v) == i.label for s, i, v in episode_targets(cfg)]
    assert len(scored) > 300
    assert all(scored)


def test_uninformative_corpus_majority_baseline_near_chance():
    cfg = GenConfig(player_count=5, language_informativeness=0.0, sessions=40, everyone_rate=0.0, seed=9,
                    sti_weight=1, pcr_weight=0, mpp_weight=0, utterances_per_session=100)
    labels = [i.label for _, i, _ in episode_targets(cfg)]
    assert len(labels) >= 2000
    majority = Counter(labels).most_common(1)[0][1] / len(labels)
    assert majority <= 1 / (5 - 1) + 0.05
    rule = [text_rule(s, i, v) == i.label for s, i, v in episode_targets(cfg)]
    assert sum(rule) == 0


def test_drop_rate_produces_gaps_outside_speech():
    cfg = GenConfig(drop_rate=0.2, sessions=1, seed=3)
    session, _ = generate_session(cfg)
    frac = np.mean([(~tr.valid[:, 0]).mean() for tr in session.tracks])
    assert 0.05 < frac < 0.3
    for tr in session.tracks:
        assert np.all(tr.parts[~tr.valid] == 0)
