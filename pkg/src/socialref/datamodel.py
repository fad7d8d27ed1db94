"""Sessions, tracks, utterances, task instances, and their on-disk form.

Player identities are integers 1..P inside a session (``PlayerK`` tokens in
text). ``EVERYONE`` and ``UNKNOWN`` are sentinel labels.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from socialref.errors import AlignmentError, ConfigError, ContractViolation, DataError

N_MAX = 6
EVERYONE = N_MAX + 1
UNKNOWN = -1

PART_NAMES = (
    "nose", "l_eye", "r_eye", "l_ear", "r_ear", "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_hip", "r_hip", "l_knee",
    "r_knee", "l_ankle", "r_ankle",
)
PART = {name: i for i, name in enumerate(PART_NAMES)}
KINESICS_PARTS = ("nose", "l_eye", "r_eye", "l_shoulder", "r_shoulder",
                  "l_elbow", "r_elbow", "l_wrist", "r_wrist")
KINESICS_INDEX = tuple(PART[p] for p in KINESICS_PARTS)
HEAD_PARTS = ("nose", "l_eye", "r_eye")

MASK = "[MASK]"
STI_SUFFIX = ("(", "To", MASK, ")")
SECOND_PERSON = frozenset({"you", "your"})
THIRD_PERSON = frozenset({"he", "she", "him", "her", "his"})
NAME_PREFIX = "@"
_PLAYER_RE = re.compile(r"^Player([1-9][0-9]*)$")


class TaskKind(str, enum.Enum):
    STI = "sti"
    PCR = "pcr"
    MPP = "mpp"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown task {value!r}; expected sti, pcr or mpp") from None


def player_token(i):
    return f"Player{i}"


def player_of(token):
    """Anonymized id for a ``PlayerK`` token, else None."""
    m = _PLAYER_RE.match(token)
    return int(m.group(1)) if m else None


def label_name(label):
    if label == EVERYONE:
        return "EVERYONE"
    if label == UNKNOWN:
        return "UNKNOWN"
    return player_token(label)


def normalize_pixels(xy, width, height):
    """Pixel coordinates -> [0, 1] frame coordinates."""
    xy = np.asarray(xy, dtype=np.float64)
    return xy / np.array([width, height], dtype=np.float64)


@dataclass(frozen=True)
class Keypoints17:
    parts: np.ndarray  # (17, 2)
    valid: np.ndarray  # (17,) bool

    def __post_init__(self):
        parts = np.asarray(self.parts, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if parts.shape != (17, 2) or valid.shape != (17,):
            raise DataError(f"keypoints need shapes (17, 2)/(17,), got {parts.shape}/{valid.shape}")
        if np.any(parts[valid] < 0) or np.any(parts[valid] > 1):
            raise DataError("valid keypoint coordinates must lie in [0, 1]")
        if np.any(parts[~valid] != 0):
            raise DataError("invalid keypoints must carry the (0, 0) sentinel")
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "valid", valid)


@dataclass
class PlayerTrack:
    """Keypoint frames of one tracked player, stored as dense arrays."""

    track_id: int
    anon_id: int
    times: np.ndarray   # (F,)
    parts: np.ndarray   # (F, 17, 2)
    valid: np.ndarray   # (F, 17) bool

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.parts = np.asarray(self.parts, dtype=np.float64).reshape(len(self.times), 17, 2)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(len(self.times), 17)
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise DataError(f"track {self.track_id}: timestamps must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def frame(self, i):
        return Keypoints17(self.parts[i], self.valid[i])

    @property
    def frames(self):
        return {float(t): self.frame(i) for i, t in enumerate(self.times)}

    def index_at(self, t):
        """Index of the last frame with timestamp <= t (clamped to the track)."""
        i = int(np.searchsorted(self.times, t + 1e-6, side="right")) - 1
        return min(max(i, 0), len(self.times) - 1)


@dataclass
class Utterance:
    k: int
    speaker: int
    t0: float
    t1: float
    tokens: tuple
    addressee: int | None = None          # STI annotation
    coref: dict = field(default_factory=dict)  # token position -> player id / UNKNOWN

    def __post_init__(self):
        self.tokens = tuple(self.tokens)
        self.coref = {int(k): int(v) for k, v in self.coref.items()}
        if not self.t0 < self.t1:
            raise DataError(f"utterance {self.k}: start {self.t0} must precede end {self.t1}")


@dataclass
class Session:
    session_id: str
    player_count: int
    tracks: list
    utterances: list
    name_table: dict
    frame_interval: float = 0.4

    def __post_init__(self):
        if not 1 <= self.player_count <= N_MAX:
            raise DataError(f"{self.session_id}: player_count {self.player_count} outside 1..{N_MAX}")
        ids = sorted(self.name_table.values())
        if ids != list(range(1, len(ids) + 1)) or len(set(self.name_table)) != len(ids):
            raise DataError(f"{self.session_id}: name_table is not a bijection onto 1..P")
        anon = [t.anon_id for t in self.tracks]
        if len(set(anon)) != len(anon):
            raise DataError(f"{self.session_id}: duplicate anon_id among tracks")
        for u in self.utterances:
            if u.speaker not in anon:
                raise AlignmentError(f"{self.session_id}: utterance {u.k} speaker {u.speaker} has no track")
        ks = [u.k for u in self.utterances]
        if ks and ks != list(range(ks[0], ks[0] + len(ks))):
            raise DataError(f"{self.session_id}: utterance indices are not contiguous")
        self._tracks = {t.anon_id: t for t in self.tracks}
        self._utts = {u.k: u for u in self.utterances}

    def track(self, anon_id):
        try:
            return self._tracks[anon_id]
        except KeyError:
            raise AlignmentError(f"{self.session_id}: no track for player {anon_id}") from None

    def utterance(self, k):
        try:
            return self._utts[k]
        except KeyError:
            raise ContractViolation(f"{self.session_id}: no utterance {k}") from None

    def position_of(self, k):
        return k - self.utterances[0].k


@dataclass(frozen=True)
class TaskInstance:
    kind: TaskKind
    session_id: str
    target_index: int
    masked_tokens: tuple
    label: int
    label_is_unknown: bool = False
    source_position: int | None = None  # masked token position in the original utterance

    @property
    def mask_position(self):
        return self.masked_tokens.index(MASK)

    def validate(self, player_count):
        if sum(t == MASK for t in self.masked_tokens) != 1:
            raise ContractViolation("task instance must contain exactly one [MASK]")
        if self.kind is TaskKind.STI and tuple(self.masked_tokens[-4:]) != STI_SUFFIX:
            raise ContractViolation("STI instance must end with ( To [MASK] )")
        if self.label_is_unknown:
            return
        ok = 1 <= self.label <= player_count or (self.label == EVERYONE and self.kind is TaskKind.STI)
        if not ok:
            raise ContractViolation(f"label {self.label} illegal for {self.kind.value} with {player_count} players")


# -- raw sessions and anonymization ------------------------------------------------

@dataclass
class RawUtterance:
    speaker: str
    t0: float
    t1: float
    tokens: tuple
    addressee: str | None = None
    coref: dict = field(default_factory=dict)


@dataclass
class RawSession:
    """Pre-anonymization session: names are ``@Name`` tokens; roster pairs each
    name with the tracker's id, in seat order."""

    session_id: str
    roster: list          # [(name, track_id)]
    tracks: dict          # track_id -> (times, parts, valid)
    utterances: list
    frame_interval: float = 0.4


_SPECIAL_LABELS = {"EVERYONE": EVERYONE, "UNKNOWN": UNKNOWN}


def anonymize(raw: RawSession) -> Session:
    """Replace names by ``PlayerK`` tokens using roster order as the bijection."""
    name_table = {}
    for i, (name, _) in enumerate(raw.roster, start=1):
        if name in name_table:
            raise AlignmentError(f"{raw.session_id}: duplicate roster name {name!r}")
        name_table[name] = i

    def lookup(name, k, what):
        if name in _SPECIAL_LABELS:
            return _SPECIAL_LABELS[name]
        try:
            return name_table[name]
        except KeyError:
            raise AlignmentError(f"{raw.session_id}: unknown name {name!r} ({what}) in utterance {k}") from None

    tracks = []
    for name, track_id in raw.roster:
        if track_id not in raw.tracks:
            raise AlignmentError(f"{raw.session_id}: roster name {name!r} has no track {track_id}")
        times, parts, valid = raw.tracks[track_id]
        tracks.append(PlayerTrack(track_id, name_table[name], times, parts, valid))

    utterances = []
    for k, u in enumerate(raw.utterances):
        tokens = []
        for tok in u.tokens:
            if tok.startswith(NAME_PREFIX):
                tokens.append(player_token(lookup(tok[len(NAME_PREFIX):], k, "token")))
            else:
                tokens.append(tok)
        addressee = None if u.addressee is None else lookup(u.addressee, k, "addressee")
        coref = {pos: lookup(n, k, "coreference") for pos, n in u.coref.items()}
        utterances.append(Utterance(k, lookup(u.speaker, k, "speaker"), u.t0, u.t1, tokens,
                                    addressee, coref))
    return Session(raw.session_id, len(raw.roster), tracks, utterances, name_table, raw.frame_interval)


def deanonymize_tokens(tokens, name_table):
    inverse = {v: k for k, v in name_table.items()}
    out = []
    for tok in tokens:
        pid = player_of(tok)
        out.append(tok if pid is None or pid not in inverse else NAME_PREFIX + inverse[pid])
    return out


# -- task instances ------------------------------------------------------------------

def _instance(kind, session, u, masked, label, position=None):
    unknown = label is None or label == UNKNOWN
    inst = TaskInstance(kind, session.session_id, u.k, tuple(masked),
                        UNKNOWN if unknown else label, unknown, position)
    inst.validate(session.player_count)
    return inst


def build_task_instances(session: Session, kind: TaskKind) -> list:
    kind = TaskKind.parse(kind) if not isinstance(kind, TaskKind) else kind
    out = []
    for u in session.utterances:
        lowered = [t.lower() for t in u.tokens]
        if kind is TaskKind.STI:
            if SECOND_PERSON.intersection(lowered):
                out.append(_instance(kind, session, u, u.tokens + STI_SUFFIX, u.addressee))
        elif kind is TaskKind.PCR:
            for pos, tok in enumerate(lowered):
                if tok in THIRD_PERSON and pos in u.coref:
                    masked = u.tokens[:pos] + (MASK,) + u.tokens[pos + 1:]
                    out.append(_instance(kind, session, u, masked, u.coref[pos], pos))
        else:
            for pos, tok in enumerate(u.tokens):
                pid = player_of(tok)
                if pid is not None:
                    masked = u.tokens[:pos] + (MASK,) + u.tokens[pos + 1:]
                    out.append(_instance(kind, session, u, masked, pid, pos))
    return out


# -- permutations --------------------------------------------------------------------

@dataclass(frozen=True)
class Permutation:
    """Bijection on 1..P; ``mapping[i - 1]`` is the image of player i."""

    mapping: tuple

    def __post_init__(self):
        m = tuple(int(x) for x in self.mapping)
        if sorted(m) != list(range(1, len(m) + 1)):
            raise ContractViolation(f"permutation {m} is not a bijection on 1..{len(m)}")
        object.__setattr__(self, "mapping", m)

    @classmethod
    def identity(cls, p):
        return cls(tuple(range(1, p + 1)))

    @classmethod
    def random(cls, p, rng):
        return cls(tuple(int(x) + 1 for x in rng.permutation(p)))

    @property
    def size(self):
        return len(self.mapping)

    def __call__(self, i):
        return self.mapping[i - 1] if 1 <= i <= self.size else i

    def inverse(self):
        inv = [0] * self.size
        for i, j in enumerate(self.mapping, start=1):
            inv[j - 1] = i
        return Permutation(tuple(inv))

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        if other.size != self.size:
            raise ContractViolation("cannot compose permutations of different sizes")
        return Permutation(tuple(self(other(i)) for i in range(1, self.size + 1)))

    def is_identity(self):
        return self.mapping == tuple(range(1, self.size + 1))

    def lookup_table(self, n=N_MAX + 1):
        """Array ``t`` with ``t[i] = π(i)`` for 0..n (fixed points outside 1..P)."""
        t = np.arange(n + 1)
        t[1:self.size + 1] = self.mapping
        return t

    def apply_tokens(self, tokens):
        out = []
        for tok in tokens:
            pid = player_of(tok)
            out.append(tok if pid is None else player_token(self(pid)))
        return tuple(out)

    def apply_slots(self, values):
        """Move the row for slot i to slot π(i); rows past P stay put."""
        values = np.asarray(values)
        out = values.copy()
        out[[j - 1 for j in self.mapping]] = values[:self.size]
        return out


def apply_permutation(instance, positions, speaker_slot, perm: Permutation):
    if not isinstance(perm, Permutation):
        perm = Permutation(perm)
    label = instance.label
    if not instance.label_is_unknown and label != EVERYONE:
        label = perm(label)
    permuted = replace(instance, masked_tokens=perm.apply_tokens(instance.masked_tokens), label=label)
    return permuted, perm.apply_slots(positions), perm(speaker_slot)


# -- splitting -----------------------------------------------------------------------

def split_sessions(sessions, test_fraction=0.2, seed=0):
    if not 0 < test_fraction < 1:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    sessions = sorted(sessions, key=lambda s: s.session_id)
    if len(sessions) < 2:
        raise ConfigError("need at least 2 sessions to split")
    n_test = min(max(int(round(test_fraction * len(sessions))), 1), len(sessions) - 1)
    order = np.random.default_rng(seed).permutation(len(sessions))
    test_ids = {sessions[i].session_id for i in order[:n_test]}
    train = [s for s in sessions if s.session_id not in test_ids]
    test = [s for s in sessions if s.session_id in test_ids]
    return train, test


# -- JSON ----------------------------------------------------------------------------

def session_to_dict(s: Session):
    tracks = []
    for tr in s.tracks:
        frames = [{"t": round(float(t), 3), "parts": tr.parts[i].tolist(), "valid": tr.valid[i].tolist()}
                  for i, t in enumerate(tr.times)]
        tracks.append({"track_id": int(tr.track_id), "anon_id": int(tr.anon_id), "frames": frames})
    utts = []
    for u in s.utterances:
        d = {"k": u.k, "speaker": u.speaker, "t0": round(u.t0, 3), "t1": round(u.t1, 3),
             "tokens": list(u.tokens)}
        if u.addressee is not None:
            d["addressee"] = label_name(u.addressee)
        if u.coref:
            d["coref"] = {str(p): label_name(v) for p, v in sorted(u.coref.items())}
        utts.append(d)
    return {"session_id": s.session_id, "player_count": s.player_count,
            "frame_interval": s.frame_interval, "name_table": dict(s.name_table),
            "tracks": tracks, "utterances": utts}


def _parse_label(value):
    if isinstance(value, int):
        return value
    if value in _SPECIAL_LABELS:
        return _SPECIAL_LABELS[value]
    pid = player_of(value)
    if pid is None:
        raise DataError(f"bad label {value!r}")
    return pid


def session_from_dict(d):
    try:
        tracks = []
        for tr in d["tracks"]:
            frames = tr["frames"]
            tracks.append(PlayerTrack(
                int(tr["track_id"]), int(tr["anon_id"]),
                [f["t"] for f in frames],
                np.array([f["parts"] for f in frames], dtype=np.float64).reshape(len(frames), 17, 2),
                np.array([f["valid"] for f in frames], dtype=bool).reshape(len(frames), 17),
            ))
        utts = []
        for u in d["utterances"]:
            addressee = u.get("addressee")
            utts.append(Utterance(
                int(u["k"]), int(u["speaker"]), float(u["t0"]), float(u["t1"]), u["tokens"],
                None if addressee is None else _parse_label(addressee),
                {int(p): _parse_label(v) for p, v in u.get("coref", {}).items()},
            ))
        return Session(str(d["session_id"]), int(d["player_count"]), tracks, utts,
                       {str(k): int(v) for k, v in d["name_table"].items()},
                       float(d.get("frame_interval", 0.4)))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed session document: {exc!r}") from exc


def dump_session(s: Session):
    return json.dumps(session_to_dict(s), separators=(",", ":"), ensure_ascii=False)


def save_session(s: Session, path):
    Path(path).write_text(dump_session(s), encoding="utf-8")


def load_session(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read session file {path}: {exc}") from exc
    try:
        return session_from_dict(doc)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc
