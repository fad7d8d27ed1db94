import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from socialref import visual
from socialref.corpus.generator import GenConfig, generate_session
from socialref.datamodel import KINESICS_PARTS, PART, PlayerTrack, Session, TaskInstance, TaskKind, Utterance
from socialref.errors import AlignmentError, ContractViolation, DimensionError
from socialref.tensorcore import nn, ops
from socialref.tensorcore.tensor import Tensor

HEAD = [i for i, p in enumerate(KINESICS_PARTS) if p in ("nose", "l_eye", "r_eye")]
BODY = [i for i in range(len(KINESICS_PARTS)) if i not in HEAD]


def toy_session(noses, frames=12, shift=(0.0, 0.0), wave=True):
    """Players on a dyadic grid; the speaker of utterance k is player k % P + 1."""
    noses = np.asarray(noses, dtype=np.float64)
    p = len(noses)
    times = np.arange(frames) * 0.5
    tracks = []
    for i, nose in enumerate(noses):
        parts = np.zeros((frames, 17, 2))
        offsets = (np.arange(17)[:, None] - 8) / 256.0 * np.array([1.0, 0.5])
        parts[:] = nose + offsets
        if wave:
            parts[:, PART["r_wrist"], 0] += np.arange(frames) / 128.0
        parts += np.asarray(shift)
        tracks.append(PlayerTrack(100 + i, i + 1, times, parts, np.ones((frames, 17), bool)))
    utts = [Utterance(k, k % p + 1, k * 2.0, k * 2.0 + 2.0, ("you", "there")) for k in range(frames // 4)]
    return Session("toy", p, tracks, utts, {f"n{i}": i + 1 for i in range(p)}, 0.5)


def sti(session, k):
    return TaskInstance(TaskKind.STI, session.session_id, k, ("you", "(", "To", "[MASK]", ")"), 1)


NOSES4 = [(0.25, 0.5), (0.5, 0.25), (0.75, 0.5), (0.5, 0.75)]


def test_nose_relative_example():
    s = toy_session(NOSES4)
    tr = s.track(1)
    tr.parts[:, PART["nose"]] = (0.4, 0.6)
    tr.parts[:, PART["l_wrist"]] = (0.5, 0.7)
    kin, _ = visual.extract_windows(s, sti(s, 0), frames=4)
    np.testing.assert_allclose(kin.coords[0, KINESICS_PARTS.index("l_wrist")], (0.1, 0.1), atol=1e-12)


def test_absent_slots_zero_padded():
    s = toy_session(NOSES4)
    _, pos = visual.extract_windows(s, sti(s, 1), frames=4)
    assert pos.present.tolist() == [True] * 4 + [False] * 2
    assert np.all(pos.coords[4:] == 0)
    assert np.all(pos.coords[1] == 0) and pos.speaker_slot == 2
    np.testing.assert_array_equal(pos.coords[0], np.subtract(NOSES4[0], NOSES4[1]))


def test_static_scene_positions_time_invariant():
    cfg = GenConfig(player_count=5, gesture_noise=0.0, utterances_per_session=40, seed=1, sessions=1)
    s, _ = generate_session(cfg)
    insts = [TaskInstance(TaskKind.STI, s.session_id, u.k, ("[MASK]",), 1) for u in s.utterances]
    by_speaker = {}
    for inst in insts:
        _, pos = visual.extract_windows(s, inst)
        ref = by_speaker.setdefault(pos.speaker_slot, pos.coords)
        np.testing.assert_array_equal(pos.coords, ref)


def test_window_clamps_past_track_end():
    s = toy_session(NOSES4, frames=12)
    kin, _ = visual.extract_windows(s, sti(s, 2), frames=8)
    assert kin.clamped
    np.testing.assert_array_equal(kin.coords[-1], kin.coords[-2])


def test_missing_speaker_track():
    s = toy_session(NOSES4)
    with pytest.raises(AlignmentError, match="no track"):
        Session("toy", 4, s.tracks[1:], s.utterances, s.name_table, 0.5)


@given(st.integers(-8, 8), st.integers(-8, 8), st.integers(0, 2))
@settings(max_examples=25, deadline=None)
def test_translation_invariance_on_dyadic_grid(dx, dy, k):
    shift = (dx / 64.0, dy / 64.0)
    a = toy_session(NOSES4)
    b = toy_session(NOSES4, shift=shift)
    ka, pa = visual.extract_windows(a, sti(a, k), frames=4)
    kb, pb = visual.extract_windows(b, sti(b, k), frames=4)
    assert np.array_equal(ka.coords, kb.coords)
    assert np.array_equal(pa.coords, pb.coords)


def test_correction_fills_from_buffer():
    pos = visual.PlayerPositions(np.zeros((6, 2)), np.array([1, 1, 0, 1, 0, 0], bool), 1, np.array([0.5, 0.5]))
    out = visual.correct_positions(pos, {2: np.array([0.7, 0.6])})
    np.testing.assert_allclose(out.coords[2], (0.2, 0.1))
    assert out.present[2] and out.corrected[2]
    assert not out.present[4] and np.all(out.coords[4] == 0)


def test_correction_no_missing_is_identity():
    pos = visual.PlayerPositions(np.arange(12.0).reshape(6, 2), np.ones(6, bool), 1, np.zeros(2))
    out = visual.correct_positions(pos, {0: np.ones(2), 3: np.ones(2)})
    np.testing.assert_array_equal(out.coords, pos.coords)
    assert not out.corrected.any()


def test_correction_recovers_gap_free_positions_on_static_seating():
    base = dict(player_count=5, gesture_noise=0.0, utterances_per_session=60, seed=7, sessions=1)
    clean, _ = generate_session(GenConfig(**base))
    gappy, _ = generate_session(GenConfig(drop_rate=0.2, **base))
    gaps = 0
    for u in clean.utterances:
        inst = TaskInstance(TaskKind.STI, clean.session_id, u.k, ("[MASK]",), 1)
        _, want = visual.extract_windows(clean, inst)
        _, raw = visual.extract_windows(gappy, inst)
        got = visual.correct_positions(raw, visual.PositionBuffer.for_time(gappy, u.t0))
        gaps += int((~raw.present[:5]).sum())
        np.testing.assert_array_equal(got.coords, want.coords)
    assert gaps > 10


def dims(d_point=4, d=8):
    return visual.VisualDims(d_point, d, nn.EncoderShape(1, d, 16, 2))


@pytest.fixture
def store():
    s = nn.ParamStore()
    visual.init_visual(s, dims(), np.random.default_rng(0))
    return s


@pytest.mark.parametrize("mask,dead", [("no-gesture", BODY), ("no-gaze", HEAD)])
def test_ablation_masks_zero_gradients(store, mask, dead):
    x = Tensor(np.random.default_rng(1).standard_normal((2, 3, 9, 2)) * 0.1, requires_grad=True)
    out = visual.encode_kinesics(store, dims(), x, visual.PART_MASKS[mask])
    ops.sum_all(out).backward()
    assert np.all(x.grad[:, :, dead] == 0)
    live = [i for i in range(9) if i not in dead]
    assert np.any(x.grad[:, :, live] != 0)


def test_identical_frames_identical_features(store):
    frame = np.random.default_rng(2).standard_normal((9, 2)) * 0.1
    x = np.stack([frame, frame, frame])[None]
    f = visual.encode_kinesics(store, dims(), x, visual.PART_MASKS["full"]).data
    assert np.array_equal(f[0, 0], f[0, 1]) and np.array_equal(f[0, 0], f[0, 2])


def test_full_size_widths():
    s = nn.ParamStore(np.float32)
    big = visual.VisualDims(64, 512, nn.EncoderShape(3, 512, 1024, 8))
    visual.init_visual(s, big, np.random.default_rng(0))
    assert s["visual.kin.0.weight"].shape == (576, 512)
    assert s["visual.pos.0.weight"].shape == (384, 512)
    f = visual.encode_kinesics(s, big, np.zeros((1, 8, 9, 2), np.float32), visual.PART_MASKS["full"])
    assert f.shape == (1, 8, 512)


def test_speaker_label_path_is_live(store):
    coords = np.random.default_rng(3).standard_normal((1, 6, 2)) * 0.1
    a = visual.encode_positions(store, dims(), coords, [1]).data
    b = visual.encode_positions(store, dims(), coords, [2]).data
    assert not np.allclose(a, b)
    with pytest.raises(ContractViolation):
        visual.encode_positions(store, dims(), coords, [7])


def test_zero_final_affine_gives_bias(store):
    store["visual.pos_out.weight"].data[:] = 0
    f = visual.encode_positions(store, dims(), np.zeros((1, 6, 2)), [1]).data
    np.testing.assert_array_equal(f[0], store["visual.pos_out.bias"].data)


def test_padded_slot_matches_explicit_zero_input(store):
    cfg = GenConfig(player_count=5, utterances_per_session=10, seed=2, sessions=1)
    s, _ = generate_session(cfg)
    _, pos = visual.extract_windows(s, TaskInstance(TaskKind.STI, s.session_id, 0, ("[MASK]",), 1))
    explicit = np.concatenate([pos.coords[:5], np.zeros((1, 2))])
    a = visual.encode_positions(store, dims(), pos.coords[None], [pos.speaker_slot]).data
    b = visual.encode_positions(store, dims(), explicit[None], [pos.speaker_slot]).data
    assert np.array_equal(a, b)


@pytest.mark.parametrize("t", [1, 3, 8])
def test_interaction_shape_and_equivariance(store, t):
    rng = np.random.default_rng(4)
    kin = rng.standard_normal((2, t, 8))
    pos = rng.standard_normal((2, 8))
    out = visual.visual_interaction_encode(store, dims(), Tensor(kin), Tensor(pos)).data
    assert out.shape == (2, t + 1, 8)
    if t > 1:
        swapped = kin[:, [1, 0] + list(range(2, t))]
        out2 = visual.visual_interaction_encode(store, dims(), Tensor(swapped), Tensor(pos)).data
        np.testing.assert_allclose(out2[:, 0], out[:, 1], atol=1e-12)
        np.testing.assert_allclose(out2[:, t], out[:, t], atol=1e-12)


def test_zero_tokens_equal_outputs():
    s = nn.ParamStore()
    visual.init_visual(s, dims(), np.random.default_rng(0))
    for name, p in s.items():
        if name.startswith("visual.interaction") and name.endswith("weight"):
            p.data[:] = 0
    out = visual.visual_interaction_encode(s, dims(), Tensor(np.zeros((1, 4, 8))), Tensor(np.zeros((1, 8)))).data
    assert np.allclose(out, out[:, :1])


def test_width_mismatch(store):
    with pytest.raises(DimensionError):
        visual.visual_interaction_encode(store, dims(), Tensor(np.zeros((1, 4, 5))), Tensor(np.zeros((1, 8))))
    with pytest.raises(DimensionError):
        visual.encode_kinesics(store, dims(), np.zeros((1, 4, 8, 2)), visual.PART_MASKS["full"])
