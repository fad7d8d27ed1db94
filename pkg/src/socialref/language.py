"""Verbal path: vocabulary, context windows, and the masked-context encoder."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from socialref.datamodel import MASK, N_MAX, player_token
from socialref.errors import ContractViolation, DataError, DimensionError, WindowOverflowError
from socialref.tensorcore import nn, ops
from socialref.tensorcore.tensor import Tensor

PAD, UNK, CLS, SEP, AGG = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[AGG]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK, AGG) + tuple(player_token(i) for i in range(1, N_MAX + 1)) + ("(", ")", "To")


class Vocab:
    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[: len(SPECIALS)] != list(SPECIALS):
            raise DataError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary contains duplicate tokens")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def from_sessions(cls, sessions):
        words = set()
        for s in sessions:
            for u in s.utterances:
                words.update(u.tokens)
        return cls(list(SPECIALS) + sorted(words - set(SPECIALS)))

    def __len__(self):
        return len(self.tokens)

    def id(self, token):
        return self.index.get(token, self.index[UNK])

    def encode(self, tokens):
        return [self.id(t) for t in tokens]

    @property
    def player_ids(self):
        """Token id of Player1..PlayerN (index 0 unused)."""
        return np.array([0] + [self.index[player_token(i)] for i in range(1, N_MAX + 1)])

    def hash(self):
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()[:16]

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        try:
            lines = Path(path).read_text(encoding="utf-8").split("\n")
        except OSError as exc:
            raise DataError(f"cannot read vocabulary {path}: {exc}") from exc
        return cls([ln for ln in lines if ln])


@dataclass
class ContextWindow:
    ids: np.ndarray            # (L,) int
    mask_position: int
    segments: list             # [(start, end, k)] half-open spans incl. the [SEP]
    target_k: int
    truncated: bool = False

    @property
    def segment_types(self):
        """1 on the target utterance's tokens, 0 elsewhere."""
        out = np.zeros(len(self.ids), dtype=np.int64)
        for start, end, k in self.segments:
            if k == self.target_k:
                out[start:end] = 1
        return out

    def context_counts(self):
        before = sum(1 for *_, k in self.segments if k < self.target_k)
        after = sum(1 for *_, k in self.segments if k > self.target_k)
        return before, after


def build_context(session, instance, n, vocab: Vocab, max_len=128, token_map=None):
    """[CLS] u_{k-n} [SEP] ... u_k [SEP] ... u_{k+n} [SEP] with the target masked.

    Context utterances farthest from the target are dropped first until the
    window fits ``max_len``; the target's tail is cut only as a last resort
    and never past its [MASK].
    """
    if n < 0:
        raise ContractViolation("context length n must be >= 0")
    k = instance.target_index
    pos = session.position_of(k)
    utts = session.utterances
    if not 0 <= pos < len(utts) or utts[pos].k != k:
        raise ContractViolation(f"instance utterance {k} not in session {session.session_id}")
    lo, hi = max(0, pos - n), min(len(utts) - 1, pos + n)
    target = list(instance.masked_tokens)

    def toks(i):
        return target if i == pos else list(utts[i].tokens)

    truncated = False
    total = 1 + sum(len(toks(i)) + 1 for i in range(lo, hi + 1))
    while total > max_len and (lo < pos or hi > pos):
        truncated = True
        if hi - pos >= pos - lo and hi > pos:
            total -= len(toks(hi)) + 1
            hi -= 1
        else:
            total -= len(toks(lo)) + 1
            lo += 1
    if total > max_len:
        keep = max_len - 2
        if target.index(MASK) >= keep:
            raise WindowOverflowError(
                f"{session.session_id}: target utterance {k} needs {len(target) + 2} tokens, "
                f"max_len={max_len} would cut the [MASK]")
        target = target[:keep]
        truncated = True

    seq, segments = [CLS], []
    for i in range(lo, hi + 1):
        start = len(seq)
        seq.extend(toks(i))
        seq.append(SEP)
        segments.append((start, len(seq), utts[i].k))
    ids = np.array(vocab.encode(seq), dtype=np.int64)
    if token_map is not None:
        ids = token_map[ids]
    mask_pos = seq.index(MASK)
    return ContextWindow(ids, mask_pos, segments, k, truncated)


def collate(windows, pad_to=None):
    """Stack windows into (B, L) ids, key mask, segment types, and mask positions."""
    length = max(len(w.ids) for w in windows) if pad_to is None else pad_to
    b = len(windows)
    ids = np.zeros((b, length), dtype=np.int64)
    seg = np.zeros((b, length), dtype=np.int64)
    keys = np.zeros((b, length), dtype=bool)
    for i, w in enumerate(windows):
        n = len(w.ids)
        ids[i, :n] = w.ids
        seg[i, :n] = w.segment_types
        keys[i, :n] = True
    positions = np.array([w.mask_position for w in windows], dtype=np.int64)
    return ids, keys, seg, positions


@dataclass(frozen=True)
class LanguageDims:
    vocab_size: int
    encoder: nn.EncoderShape
    d_out: int
    max_len: int = 128


def init_language(store, dims: LanguageDims, rng, prefix="language"):
    w = dims.encoder.width
    nn.init_embedding(store, f"{prefix}.tokens", dims.vocab_size, w, rng)
    nn.init_embedding(store, f"{prefix}.segments", 2, w, rng)
    nn.init_layer_norm(store, f"{prefix}.embed_norm", w)
    nn.init_transformer(store, f"{prefix}.encoder", dims.encoder, rng)
    nn.init_linear(store, f"{prefix}.out", w, dims.d_out, rng)


def encode_masked_context(store, dims: LanguageDims, ids, key_mask, segments, mask_positions,
                          dropout=0.0, rng=None, train=False, prefix="language"):
    """Hidden state at each window's [MASK], mapped to the fusion width -> (B, d)."""
    ids = np.asarray(ids)
    b, length = ids.shape
    mask_positions = np.asarray(mask_positions)
    if np.any(mask_positions < 0) or np.any(mask_positions >= length):
        raise ContractViolation(f"mask position out of bounds for length {length}")
    if length > dims.max_len:
        raise DimensionError(f"context length {length} exceeds max_len {dims.max_len}")
    x = ops.add(ops.embedding(store[f"{prefix}.tokens"], ids),
                ops.embedding(store[f"{prefix}.segments"], segments))
    # sqrt(width) brings the small-init embeddings to the scale of the sinusoids
    x = ops.positional_encoding_add(ops.scale(x, float(np.sqrt(dims.encoder.width))))
    x = nn.layer_norm(store, f"{prefix}.embed_norm", x)
    x = ops.dropout(x, dropout, rng, train)
    x = nn.transformer(store, f"{prefix}.encoder", x, dims.encoder, key_mask=key_mask,
                       dropout=dropout, rng=rng, train=train)
    return nn.linear(store, f"{prefix}.out", ops.gather_rows(x, mask_positions))


__all__ = ["CLS", "ContextWindow", "LanguageDims", "MASK", "PAD", "SEP", "Tensor", "Vocab",
           "build_context", "collate", "encode_masked_context", "init_language"]
