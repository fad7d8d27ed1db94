"""Multimodal fusion, the classification head, and the full forward/training step."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from socialref import language, visual
from socialref.datamodel import EVERYONE, N_MAX, TaskKind
from socialref.errors import ConfigError, ContractViolation, DimensionError, NumericError
from socialref.tensorcore import nn, ops
from socialref.tensorcore.optim import adam_step
from socialref.tensorcore.tensor import Tensor

ABLATIONS = ("no-visual", "no-gesture", "no-gaze", "no-permutation", "no-correction")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    head_size: int = N_MAX + 1
    d_point: int = 16
    d: int = 64
    heads: int = 4
    ffn: int = 128
    visual_layers: int = 3
    fusion_layers: int = 2
    lm_width: int = 64
    lm_layers: int = 2
    lm_heads: int = 4
    lm_ffn: int = 128
    max_len: int = 128
    frames: int = 8
    dropout: float = 0.1
    share_point: bool = True
    coord_scale: float = 10.0
    init_gain: float = nn.RELU_GAIN

    def __post_init__(self):
        if self.head_size not in (N_MAX, N_MAX + 1):
            raise ConfigError(f"head_size must be {N_MAX} or {N_MAX + 1}, got {self.head_size}")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        self.fusion_shape  # validates head divisibility
        self.language_dims

    @property
    def visual_dims(self):
        return visual.VisualDims(self.d_point, self.d, nn.EncoderShape(self.visual_layers, self.d, self.ffn, self.heads),
                                 share_point=self.share_point, init_gain=self.init_gain, coord_scale=self.coord_scale)

    @property
    def language_dims(self):
        return language.LanguageDims(self.vocab_size, nn.EncoderShape(self.lm_layers, self.lm_width, self.lm_ffn, self.lm_heads),
                                     self.d, self.max_len)

    @property
    def fusion_shape(self):
        return nn.EncoderShape(self.fusion_layers, self.d, self.ffn, self.heads)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def hash(self):
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


PRESETS = {
    "desk": {},
    # the language entry is where a pretrained 12-layer, 768-wide encoder would plug in
    "paper": dict(d_point=64, d=512, heads=8, ffn=1024, lm_width=768, lm_layers=12, lm_heads=12,
                  lm_ffn=3072, max_len=512),
}


def model_config(preset, vocab_size, task, **overrides):
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    head = head_size_for(task)
    return ModelConfig(vocab_size=vocab_size, head_size=head, **{**PRESETS[preset], **overrides})


def head_size_for(task):
    return N_MAX + 1 if TaskKind.parse(task) is TaskKind.STI else N_MAX


def class_index(label):
    """Player k -> k-1, EVERYONE -> N_MAX."""
    return N_MAX if label == EVERYONE else label - 1


def class_label(index):
    return EVERYONE if index == N_MAX else index + 1


def init_model(cfg: ModelConfig, rng, dtype=np.float32):
    store = nn.ParamStore(dtype)
    visual.init_visual(store, cfg.visual_dims, rng)
    language.init_language(store, cfg.language_dims, rng)
    nn.init_embedding(store, "fusion.agg", 1, cfg.d, rng)
    nn.init_embedding(store, "fusion.null_visual", 1, cfg.d, rng)
    nn.init_transformer(store, "fusion.encoder", cfg.fusion_shape, rng)
    nn.init_linear(store, "fusion.head", cfg.d, cfg.head_size, rng)
    return store


# -- fusion and head -----------------------------------------------------------------

def fuse(store, cfg: ModelConfig, fv, fc, dropout=0.0, rng=None, train=False, positional=True):
    """[AGG] ; f^v + PE(1..T+1) ; f^c through the fusion encoder -> f^m at [AGG]."""
    if fv.ndim != 3 or fv.shape[-1] != cfg.d or fc.shape[-1] != cfg.d:
        raise DimensionError(f"fuse: visual {fv.shape} / language {fc.shape} do not match width {cfg.d}")
    b = fv.shape[0]
    if fc.shape[0] != b:
        raise DimensionError(f"fuse: batch sizes {b} and {fc.shape[0]} differ")
    agg = ops.embedding(store["fusion.agg"], np.zeros((b, 1), dtype=np.int64))
    if positional:
        fv = ops.positional_encoding_add(fv, start=1)
    seq = ops.concat([agg, fv, ops.reshape(fc, (b, 1, cfg.d))], axis=1)
    out = nn.transformer(store, "fusion.encoder", seq, cfg.fusion_shape, dropout=dropout, rng=rng, train=train)
    return ops.getitem(out, (slice(None), 0))


@dataclass
class Prediction:
    logits: np.ndarray
    probs: np.ndarray
    classes: np.ndarray      # argmax class index, lowest index on ties

    @property
    def labels(self):
        return np.array([class_label(int(c)) for c in self.classes])


def predict(logits):
    z = np.asarray(logits, dtype=np.float64)
    squeeze = z.ndim == 1
    z = np.atleast_2d(z)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    probs = e / e.sum(axis=1, keepdims=True)
    pred = Prediction(z, probs, np.argmax(z, axis=1))
    if squeeze:
        pred = Prediction(z[0], probs[0], pred.classes[:1])
    return pred


def classify(store, fm):
    logits = nn.linear(store, "fusion.head", fm)
    return logits, predict(logits.data)


# -- featurization -------------------------------------------------------------------

@dataclass
class Features:
    """Model inputs for one instance, computed once and reused across epochs."""

    kinesics: np.ndarray       # (T, 9, 2)
    positions: np.ndarray      # (N, 2)
    speaker: int
    window: language.ContextWindow
    target: int                # class index, -1 when unknown
    player_count: int
    instance: object = None


def featurize(session, instance, vocab, n=5, frames=8, max_len=128, correction=True):
    kin, pos = visual.extract_windows(session, instance, frames=frames)
    if correction:
        u = session.utterance(instance.target_index)
        pos = visual.correct_positions(pos, visual.PositionBuffer.for_time(session, u.t0))
    window = language.build_context(session, instance, n, vocab, max_len=max_len)
    target = -1 if instance.label_is_unknown else class_index(instance.label)
    return Features(kin.coords, pos.coords, pos.speaker_slot, window, target, session.player_count, instance)


@dataclass
class Batch:
    kinesics: np.ndarray       # (B, T, 9, 2)
    positions: np.ndarray      # (B, N, 2)
    speakers: np.ndarray       # (B,) 1..N
    ids: np.ndarray            # (B, L)
    key_mask: np.ndarray
    segments: np.ndarray
    mask_positions: np.ndarray
    targets: np.ndarray        # (B,) class indices
    player_counts: np.ndarray

    def __len__(self):
        return len(self.targets)


def collate(features):
    if not features:
        raise ContractViolation("empty batch")
    ids, keys, seg, mpos = language.collate([f.window for f in features])
    return Batch(np.stack([f.kinesics for f in features]), np.stack([f.positions for f in features]),
                 np.array([f.speaker for f in features]), ids, keys, seg, mpos,
                 np.array([f.target for f in features]), np.array([f.player_count for f in features]))


# -- permutation ---------------------------------------------------------------------

class PlayerTokens:
    """Vocabulary-side bookkeeping for relabeling Player# tokens by id."""

    def __init__(self, vocab):
        self.player_ids = vocab.player_ids                    # slot -> token id
        self.slot_of = np.zeros(len(vocab), dtype=np.int64)   # token id -> slot (0 = other)
        self.slot_of[self.player_ids[1:]] = np.arange(1, N_MAX + 1)


def sample_tables(player_counts, rng):
    """One random bijection of 1..P per row as a (B, N+1) lookup table."""
    tables = np.tile(np.arange(N_MAX + 1), (len(player_counts), 1))
    for row, p in zip(tables, player_counts):
        row[1 : p + 1] = 1 + rng.permutation(int(p))
    return tables


def permute_batch(batch: Batch, tables, tokens: PlayerTokens):
    """Relabel tokens, position slots, speaker and gold label by each row's table."""
    tables = np.asarray(tables)
    rows = np.arange(len(batch))[:, None]
    slot = tokens.slot_of[batch.ids]
    ids = np.where(slot > 0, tokens.player_ids[tables[rows, slot]], batch.ids)
    positions = np.zeros_like(batch.positions)
    positions[rows, tables[:, 1:] - 1] = batch.positions
    speakers = tables[np.arange(len(batch)), batch.speakers]
    t = batch.targets
    player = (t >= 0) & (t < N_MAX)
    targets = np.where(player, tables[np.arange(len(batch)), np.clip(t + 1, 0, N_MAX)] - 1, t)
    return replace(batch, ids=ids, positions=positions, speakers=speakers, targets=targets)


# -- forward -------------------------------------------------------------------------

def part_mask_for(ablation):
    ablation = set(ablation)
    mask = visual.PART_MASKS["full"].copy()
    if "no-gesture" in ablation:
        mask = mask * visual.PART_MASKS["no-gesture"]
    if "no-gaze" in ablation:
        mask = mask * visual.PART_MASKS["no-gaze"]
    return mask


def forward(store, cfg: ModelConfig, batch: Batch, ablation=(), rng=None, train=False):
    """Logits (B, classes) for a collated batch."""
    dt = store.dtype
    p = cfg.dropout if train else 0.0
    b = len(batch)
    if "no-visual" in ablation:
        fv = ops.embedding(store["fusion.null_visual"], np.zeros((b, cfg.frames + 1), dtype=np.int64))
    else:
        dims = cfg.visual_dims
        coords = batch.kinesics if isinstance(batch.kinesics, Tensor) else batch.kinesics.astype(dt)
        kin = visual.encode_kinesics(store, dims, coords, part_mask_for(ablation))
        pos = visual.encode_positions(store, dims, batch.positions.astype(dt), batch.speakers)
        fv = visual.visual_interaction_encode(store, dims, kin, pos, dropout=p, rng=rng, train=train)
    fc = language.encode_masked_context(store, cfg.language_dims, batch.ids, batch.key_mask, batch.segments,
                                        batch.mask_positions, dropout=p, rng=rng, train=train)
    fm = fuse(store, cfg, fv, fc, dropout=p, rng=rng, train=train)
    return nn.linear(store, "fusion.head", fm)


def loss_of(logits, targets):
    if np.any(np.asarray(targets) < 0):
        raise ContractViolation("unknown-label instances cannot be used for training")
    return ops.cross_entropy(logits, targets)


def forward_full(session, instance, store, cfg: ModelConfig, vocab, ablation=(), n=5):
    """Evaluation-mode prediction and loss for a single instance."""
    f = featurize(session, instance, vocab, n=n, frames=cfg.frames, max_len=cfg.max_len,
                  correction="no-correction" not in ablation)
    batch = collate([f])
    logits = forward(store, cfg, batch, ablation)
    pred = predict(logits.data)
    loss = None if f.target < 0 else float(ops.cross_entropy(logits, batch.targets).data)
    return pred, loss


def _fill_missing_grads(store):
    # parameters off the active path (null token, or the visual stack in
    # language-only mode) get an explicit zero gradient
    for p in store.params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def train_step(store, cfg: ModelConfig, batch: Batch, lr_map, ablation=(), rng=None):
    store.zero_grad()
    logits = forward(store, cfg, batch, ablation, rng=rng, train=True)
    loss = loss_of(logits, batch.targets)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    loss.backward()
    _fill_missing_grads(store)
    for name, p in store.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for {name}")
    adam_step(store, lr_map)
    return value


def train_step_with_permutation(store, cfg, batch, lr_map, tokens: PlayerTokens, perm_rng, ablation=(),
                                dropout_rng=None, tables=None):
    """Fresh per-instance relabeling, then one optimizer step."""
    if tables is None:
        tables = sample_tables(batch.player_counts, perm_rng)
    return train_step(store, cfg, permute_batch(batch, tables, tokens), lr_map, ablation, rng=dropout_rng)


def lr_map_for(preset="desk", language_lr=None, rest_lr=None):
    base = {"desk": (1e-3, 3e-4), "paper": (5e-6, 5e-5)}[preset]
    return {"language.": base[0] if language_lr is None else language_lr,
            "": base[1] if rest_lr is None else rest_lr}


__all__ = ["ABLATIONS", "Batch", "Features", "ModelConfig", "PRESETS", "PlayerTokens", "Prediction", "Tensor",
           "class_index", "class_label", "classify", "collate", "featurize", "forward", "forward_full", "fuse",
           "init_model", "lr_map_for", "model_config", "permute_batch", "predict", "sample_tables",
           "train_step", "train_step_with_permutation"]
