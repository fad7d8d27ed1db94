"""Non-verbal path: keypoint windows, player positions, and their encoders."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from socialref.datamodel import HEAD_PARTS, KINESICS_INDEX, KINESICS_PARTS, N_MAX, PART
from socialref.errors import AlignmentError, ContractViolation, DimensionError
from socialref.tensorcore import nn, ops
from socialref.tensorcore.tensor import Tensor, as_tensor

NOSE = PART["nose"]

PART_MASKS = {
    "full": np.ones(len(KINESICS_PARTS)),
    # w/o gesture: head keypoints only
    "no-gesture": np.array([p in HEAD_PARTS for p in KINESICS_PARTS], dtype=np.float64),
    "no-gaze": np.array([p not in HEAD_PARTS for p in KINESICS_PARTS], dtype=np.float64),
}


@dataclass
class KinesicsWindow:
    coords: np.ndarray          # (T, 9, 2), speaker-nose relative
    times: np.ndarray           # (T,)
    part_mask: np.ndarray = field(default_factory=lambda: PART_MASKS["full"].copy())
    clamped: bool = False

    def masked(self):
        return self.coords * self.part_mask[None, :, None]


@dataclass
class PlayerPositions:
    coords: np.ndarray          # (N, 2), speaker-nose relative
    present: np.ndarray         # (N,) bool
    speaker_slot: int
    origin: np.ndarray          # speaker nose (absolute) at t0
    corrected: np.ndarray = None  # (N,) bool, slots filled from the buffer

    def __post_init__(self):
        if self.corrected is None:
            self.corrected = np.zeros(len(self.present), dtype=bool)


def _carry_forward(track, idx):
    """Parts at frame indices ``idx``, each part carrying its last observed value."""
    if track.valid[idx].all():
        return track.parts[idx].copy(), np.ones((len(idx), 17), dtype=bool)
    parts = np.zeros((len(idx), 17, 2))
    valid = np.zeros((len(idx), 17), dtype=bool)
    for j, i in enumerate(idx):
        for part in range(17):
            seen = np.flatnonzero(track.valid[: i + 1, part])
            if len(seen):
                parts[j, part] = track.parts[seen[-1], part]
                valid[j, part] = True
    return parts, valid


def _last_nose(track, i):
    seen = np.flatnonzero(track.valid[: i + 1, NOSE])
    return track.parts[seen[-1], NOSE] if len(seen) else None


def extract_windows(session, instance, frames=8, frame_interval=None, part_mask="full"):
    """Speaker kinesics over ``frames`` samples from the utterance start, plus every
    slot's nose at the start relative to the speaker's nose.

    Absent players and players undetected at the start are zero with
    ``present=False``; :func:`correct_positions` fills the latter.
    """
    dt = session.frame_interval if frame_interval is None else frame_interval
    u = session.utterance(instance.target_index)
    try:
        spk = session.track(u.speaker)
    except AlignmentError:
        raise AlignmentError(f"{session.session_id}: speaker track {u.speaker} absent for utterance {u.k}") from None
    times = u.t0 + dt * np.arange(frames)
    idx = [spk.index_at(t) for t in times]
    clamped = bool(times[-1] > spk.times[-1] + 1e-6)
    parts, valid = _carry_forward(spk, idx)
    sel = parts[:, KINESICS_INDEX]
    sel_valid = valid[:, KINESICS_INDEX]
    nose = parts[:, NOSE]
    coords = np.where(sel_valid[..., None], sel - nose[:, None, :], 0.0)
    mask = PART_MASKS[part_mask] if isinstance(part_mask, str) else np.asarray(part_mask, dtype=np.float64)
    window = KinesicsWindow(coords, times, mask.copy(), clamped)

    i0 = spk.index_at(u.t0)
    origin = _last_nose(spk, i0)
    if origin is None:
        origin = np.zeros(2)
    pos = np.zeros((N_MAX, 2))
    present = np.zeros(N_MAX, dtype=bool)
    for tr in session.tracks:
        j = tr.index_at(u.t0)
        slot = tr.anon_id - 1
        if tr.valid[j, NOSE] and abs(tr.times[j] - u.t0) < 1e-6:
            pos[slot] = tr.parts[j, NOSE] - origin
            present[slot] = True
    pos[u.speaker - 1] = 0.0
    present[u.speaker - 1] = True
    return window, PlayerPositions(pos, present, u.speaker, np.asarray(origin, dtype=np.float64))


class PositionBuffer:
    """Last observed absolute nose point per slot, advanced in timestamp order."""

    def __init__(self):
        self.last = {}

    @classmethod
    def for_time(cls, session, t):
        buf = cls()
        for tr in session.tracks:
            i = int(np.searchsorted(tr.times, t - 1e-6, side="left")) - 1
            if i >= 0:
                nose = _last_nose(tr, i)
                if nose is not None:
                    buf.last[tr.anon_id - 1] = nose.copy()
        return buf

    def observe(self, slot, nose):
        self.last[slot] = np.asarray(nose, dtype=np.float64).copy()


def correct_positions(window: PlayerPositions, buffer) -> PlayerPositions:
    """Fill slots missing at t0 from the buffer; never-observed slots stay zero."""
    last = buffer.last if isinstance(buffer, PositionBuffer) else buffer
    coords = window.coords.copy()
    present = window.present.copy()
    corrected = window.corrected.copy()
    for slot, nose in last.items():
        if not present[slot]:
            coords[slot] = np.asarray(nose) - window.origin
            present[slot] = True
            corrected[slot] = True
    return PlayerPositions(coords, present, window.speaker_slot, window.origin, corrected)


# -- encoders ------------------------------------------------------------------------

@dataclass(frozen=True)
class VisualDims:
    d_point: int
    d: int
    encoder: nn.EncoderShape
    point_layers: int = 3
    kin_layers: int = 4
    pos_layers: int = 4
    share_point: bool = True
    init_gain: float = nn.RELU_GAIN
    coord_scale: float = 10.0


def init_visual(store, dims: VisualDims, rng, prefix="visual"):
    dp, d = dims.d_point, dims.d
    nn.init_mlp(store, f"{prefix}.point", [2] + [dp] * dims.point_layers, rng, dims.init_gain)
    if not dims.share_point:
        nn.init_mlp(store, f"{prefix}.point_pos", [2] + [dp] * dims.point_layers, rng, dims.init_gain)
    nn.init_mlp(store, f"{prefix}.kin", [len(KINESICS_PARTS) * dp] + [d] * dims.kin_layers, rng, dims.init_gain)
    nn.init_mlp(store, f"{prefix}.pos", [N_MAX * dp] + [d] * dims.pos_layers, rng, dims.init_gain)
    nn.init_linear(store, f"{prefix}.speaker_label", N_MAX, d, rng)
    nn.init_linear(store, f"{prefix}.pos_out", d, d, rng)
    nn.init_transformer(store, f"{prefix}.interaction", dims.encoder, rng)


def encode_kinesics(store, dims: VisualDims, coords, part_mask, prefix="visual"):
    """(B, T, 9, 2) nose-relative coordinates -> (B, T, d) kinesics features."""
    if coords.ndim != 4 or coords.shape[-2:] != (len(KINESICS_PARTS), 2):
        raise DimensionError(f"encode_kinesics: expected (B, T, 9, 2), got {coords.shape}")
    b, t = coords.shape[:2]
    mask = np.asarray(part_mask, dtype=coords.dtype)
    mask = mask[:, None, :, None] if mask.ndim == 2 else mask[None, None, :, None]
    x = ops.mul(coords, mask * dims.coord_scale)
    f = nn.mlp(store, f"{prefix}.point", x, dims.point_layers)
    f = ops.reshape(f, (b, t, len(KINESICS_PARTS) * dims.d_point))
    return nn.mlp(store, f"{prefix}.kin", f, dims.kin_layers)


def speaker_one_hot(slots, dtype=np.float64):
    slots = np.asarray(slots)
    if np.any(slots < 1) or np.any(slots > N_MAX):
        raise ContractViolation(f"speaker slot out of range 1..{N_MAX}: {slots}")
    out = np.zeros((len(slots), N_MAX), dtype=dtype)
    out[np.arange(len(slots)), slots - 1] = 1.0
    return out


def encode_positions(store, dims: VisualDims, coords, speaker_slots, prefix="visual"):
    """(B, N, 2) relative positions + speaker slots -> (B, d) player position feature."""
    if coords.ndim != 3 or coords.shape[1:] != (N_MAX, 2):
        raise DimensionError(f"encode_positions: expected (B, {N_MAX}, 2), got {coords.shape}")
    b = coords.shape[0]
    point = f"{prefix}.point" if dims.share_point else f"{prefix}.point_pos"
    f = nn.mlp(store, point, ops.scale(as_tensor(coords), dims.coord_scale), dims.point_layers)
    f = ops.reshape(f, (b, N_MAX * dims.d_point))
    summary = nn.mlp(store, f"{prefix}.pos", f, dims.pos_layers)
    label = nn.linear(store, f"{prefix}.speaker_label",
                      Tensor(speaker_one_hot(speaker_slots, coords.dtype)))
    return nn.linear(store, f"{prefix}.pos_out", ops.add(summary, label))


def visual_interaction_encode(store, dims: VisualDims, kinesics, position, dropout=0.0, rng=None,
                              train=False, prefix="visual"):
    """[f^S_1..f^S_T ; f^P] through the interaction transformer -> (B, T+1, d)."""
    if kinesics.shape[-1] != dims.d or position.shape[-1] != dims.d:
        raise DimensionError(f"visual_interaction_encode: widths {kinesics.shape[-1]}/{position.shape[-1]} != {dims.d}")
    b = kinesics.shape[0]
    seq = ops.concat([kinesics, ops.reshape(position, (b, 1, dims.d))], axis=1)
    return nn.transformer(store, f"{prefix}.interaction", seq, dims.encoder, dropout=dropout,
                          rng=rng, train=train)
