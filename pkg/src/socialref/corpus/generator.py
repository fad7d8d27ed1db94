"""Synthetic social-deduction sessions with controllable cue informativeness.

Each session is built as a sequence of episodes (STI target, PCR antecedent +
pronoun target, MPP mention) separated by filler utterances. Geometry: players
sit on a circle; a speaker addressing or mentioning a referent extends both
wrists along the unit vector from their nose to the referent's nose and turns
their eyes toward the referent by a small fixed offset.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from socialref.corpus import templates as tpl
from socialref.datamodel import (
    EVERYONE, N_MAX, NAME_PREFIX, PART, UNKNOWN, RawSession, RawUtterance, Session,
    TaskKind, anonymize, build_task_instances,
)
from socialref.errors import ConfigError
from socialref.seeding import stream

CENTER = np.array([0.5, 0.5])
SEAT_RADIUS = 0.3
BODY_SCALE = 0.15
ARM_LENGTH = 0.08
GAZE_OFFSET = 0.003

# canonical skeleton relative to the nose, in body-height units (y points down)
_REST = {
    "nose": (0.0, 0.0), "l_eye": (0.05, -0.05), "r_eye": (-0.05, -0.05),
    "l_ear": (0.1, -0.02), "r_ear": (-0.1, -0.02),
    "l_shoulder": (0.18, 0.18), "r_shoulder": (-0.18, 0.18),
    "l_elbow": (0.24, 0.38), "r_elbow": (-0.24, 0.38),
    "l_wrist": (0.2, 0.56), "r_wrist": (-0.2, 0.56),
    "l_hip": (0.12, 0.6), "r_hip": (-0.12, 0.6),
    "l_knee": (0.13, 0.8), "r_knee": (-0.13, 0.8),
    "l_ankle": (0.13, 1.0), "r_ankle": (-0.13, 1.0),
}
REST_POSE = np.array([_REST[p] for p in PART], dtype=np.float64) * BODY_SCALE
WRISTS = (PART["l_wrist"], PART["r_wrist"])
ELBOWS = (PART["l_elbow"], PART["r_elbow"])
EYES = (PART["l_eye"], PART["r_eye"])


@dataclass(frozen=True)
class GenConfig:
    player_count: int = 5
    utterances_per_session: int = 60
    language_informativeness: float = 0.5
    gesture_noise: float = 0.005
    everyone_rate: float = 0.1
    frame_interval: float = 0.4
    frames_per_utterance: int = 8
    seed: int = 0
    sessions: int = 10
    drop_rate: float = 0.0
    unknown_rate: float = 0.0
    sti_weight: float = 1.0
    pcr_weight: float = 1.0
    mpp_weight: float = 1.0
    episode_gap: int = 1
    antecedent_min: int = 2
    antecedent_max: int = 4
    seat_jitter: float = 0.1

    def __post_init__(self):
        if not 3 <= self.player_count <= N_MAX:
            raise ConfigError(f"player_count must lie in [3, {N_MAX}] (got {self.player_count})")
        for name in ("language_informativeness", "drop_rate", "unknown_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0 <= self.everyone_rate < 1:
            raise ConfigError("everyone_rate must lie in [0, 1)")
        if self.drop_rate >= 1:
            raise ConfigError("drop_rate must be < 1")
        if self.gesture_noise < 0:
            raise ConfigError("gesture_noise must be >= 0")
        if self.frames_per_utterance < 1 or self.utterances_per_session < 1 or self.sessions < 1:
            raise ConfigError("frames_per_utterance, utterances_per_session and sessions must be >= 1")
        if self.frame_interval <= 0:
            raise ConfigError("frame_interval must be > 0")
        if not 1 <= self.antecedent_min <= self.antecedent_max:
            raise ConfigError("need 1 <= antecedent_min <= antecedent_max")
        if self.episode_gap < 0:
            raise ConfigError("episode_gap must be >= 0")
        if min(self.sti_weight, self.pcr_weight, self.mpp_weight) < 0 or \
                self.sti_weight + self.pcr_weight + self.mpp_weight <= 0:
            raise ConfigError("task weights must be non-negative with a positive sum")

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, value in mapping.items():
            if key not in known:
                raise ConfigError(f"unknown generator option {key!r}")
            caster = int if known[key] in ("int", int) else float
            try:
                kwargs[key] = caster(value)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        return cls(**kwargs)

    def to_mapping(self):
        return asdict(self)


_stream = stream


@dataclass
class _Plan:
    """One utterance before rendering."""

    speaker: int
    referent: int            # player id, EVERYONE, or 0 for no directed cue
    template: str
    fills: dict              # slot -> player id
    kind: str                # filler / sti / pcr / antecedent / mpp / prime
    addressee: int | None = None
    pronoun_ref: int | None = None
    resolvable: bool = False
    target: bool = False


def _seat_noses(cfg, rng):
    p = cfg.player_count
    base = np.pi + np.arange(p) * (2 * np.pi / p)
    angles = base + rng.uniform(-cfg.seat_jitter, cfg.seat_jitter, size=p)
    # ids ascend around the circle starting at the left edge of the frame
    return CENTER + SEAT_RADIUS * np.stack([np.cos(angles), -np.sin(angles)], axis=1)


class _Dialogue:
    def __init__(self, cfg, rng, genders):
        self.cfg = cfg
        self.rng = rng
        self.genders = genders
        self.plans = []

    def other(self, exclude):
        choices = [i for i in range(1, self.cfg.player_count + 1) if i not in exclude]
        return int(self.rng.choice(choices))

    def speaker(self):
        return int(self.rng.integers(1, self.cfg.player_count + 1))

    def filler(self):
        self.plans.append(_Plan(self.speaker(), 0, str(self.rng.choice(tpl.FILLER)), {}, "filler"))

    def sti(self):
        s = self.speaker()
        roll = self.rng.random()
        if roll < self.cfg.unknown_rate:
            addressee, referent = UNKNOWN, 0
        elif roll < self.cfg.unknown_rate + self.cfg.everyone_rate:
            addressee = referent = EVERYONE
        else:
            addressee = referent = self.other({s})
        base = str(self.rng.choice(tpl.STI))
        resolvable = addressee != UNKNOWN and self.rng.random() < self.cfg.language_informativeness
        fills = {}
        if resolvable:
            form = str(self.rng.choice(tpl.STI_VOCATIVE))
            template = form.format(base)
            if addressee == EVERYONE:
                template = template.replace("<REF>", "everyone")
            else:
                fills["<REF>"] = addressee
        else:
            template = base
        self.plans.append(_Plan(s, referent, template, fills, "sti", addressee=addressee,
                                resolvable=resolvable, target=True))

    def pcr(self):
        r = self.speaker()
        resolvable = self.rng.random() < self.cfg.language_informativeness
        ante_speaker = self.other({r})
        if resolvable:
            self.plans.append(_Plan(ante_speaker, r, str(self.rng.choice(tpl.ANTECEDENT)),
                                    {"<REF>": r}, "antecedent"))
        else:
            d = self.other({r, ante_speaker})
            a, b = (r, d) if self.rng.random() < 0.5 else (d, r)
            self.plans.append(_Plan(ante_speaker, 0, str(self.rng.choice(tpl.ANTECEDENT_PAIR)),
                                    {"<REF>": a, "<DIS>": b}, "antecedent"))
        gap = int(self.rng.integers(self.cfg.antecedent_min, self.cfg.antecedent_max + 1))
        for _ in range(gap - 1):
            self.filler()
        s = self.other({r})
        self.plans.append(_Plan(s, r, str(self.rng.choice(tpl.PCR)), {}, "pcr", pronoun_ref=r,
                                resolvable=resolvable, target=True))

    def mpp(self):
        r = self.speaker()
        resolvable = self.rng.random() < self.cfg.language_informativeness
        if resolvable:
            self.plans.append(_Plan(self.other({r}), r, str(self.rng.choice(tpl.MPP_PRIME)),
                                    {"<REF>": r}, "prime"))
        s = self.other({r})
        self.plans.append(_Plan(s, r, str(self.rng.choice(tpl.MPP)), {"<REF>": r}, "mpp",
                                resolvable=resolvable, target=True))

    def build(self):
        cfg = self.cfg
        weights = np.array([cfg.sti_weight, cfg.pcr_weight, cfg.mpp_weight], dtype=np.float64)
        weights /= weights.sum()
        episodes = (self.sti, self.pcr, self.mpp)
        while len(self.plans) < cfg.utterances_per_session:
            episodes[int(self.rng.choice(3, p=weights))]()
            for _ in range(cfg.episode_gap):
                self.filler()
        return self.plans


def _render(plan, roster_names, genders):
    tokens, coref = [], {}
    for word in plan.template.split():
        if word in ("<REF>", "<DIS>"):
            tokens.append(NAME_PREFIX + roster_names[plan.fills[word] - 1])
        elif word in ("<SUBJ>", "<OBJ>", "<POSS>"):
            coref[len(tokens)] = roster_names[plan.pronoun_ref - 1]
            tokens.append(tpl.PRONOUNS[genders[plan.pronoun_ref - 1]][word])
        else:
            tokens.append(word)
    return tokens, coref


def _label_name(label, roster_names):
    if label is None:
        return None
    if label == EVERYONE:
        return "EVERYONE"
    if label == UNKNOWN:
        return "UNKNOWN"
    return roster_names[label - 1]


def _drop_mask(cfg, frames, speaking, rng):
    """Contiguous invalid runs with stationary rate ~drop_rate; never the first
    frame and never while the player speaks."""
    if cfg.drop_rate <= 0:
        return np.zeros(frames, dtype=bool)
    mean_run = 5.0
    p_end = 1.0 / mean_run
    p_start = cfg.drop_rate * p_end / (1.0 - cfg.drop_rate)
    u = rng.random(frames)
    out = np.zeros(frames, dtype=bool)
    on = False
    for f in range(1, frames):
        on = (u[f] >= p_end) if on else (u[f] < p_start)
        out[f] = on
    return out & ~speaking


def generate_session(cfg: GenConfig, index=0):
    """Return ``(session, gold)`` where ``gold`` maps instance keys to flags."""
    p = cfg.player_count
    seeds = (cfg.seed, index)
    names_rng = _stream(*seeds, "roster")
    roster_names = [str(n) for n in names_rng.permutation(tpl.NAMES)[:p]]
    genders = [tpl.GENDER[n] for n in roster_names]
    plans = _Dialogue(cfg, _stream(*seeds, "dialogue"), genders).build()

    noses = _seat_noses(cfg, _stream(*seeds, "seating"))
    t_len = cfg.frames_per_utterance
    n_frames = len(plans) * t_len
    times = np.round(np.arange(n_frames) * cfg.frame_interval, 3)
    parts = np.repeat((noses[:, None, :] + REST_POSE[None])[:, None], n_frames, axis=1)
    # rest pose at the first frame, full extension at the last
    ramp = np.linspace(0.0, 1.0, t_len) if t_len > 1 else np.ones(1)
    speaking = np.zeros((p, n_frames), dtype=bool)

    for k, plan in enumerate(plans):
        sl = slice(k * t_len, (k + 1) * t_len)
        speaking[plan.speaker - 1, sl] = True
        if plan.referent in (0, EVERYONE, UNKNOWN):
            continue
        s, r = plan.speaker - 1, plan.referent - 1
        direction = noses[r] - noses[s]
        direction /= np.linalg.norm(direction)
        for w in WRISTS:
            parts[s, sl, w] += ramp[:, None] * ARM_LENGTH * direction
        for e in ELBOWS:
            parts[s, sl, e] += ramp[:, None] * 0.5 * ARM_LENGTH * direction
        for e in EYES:
            parts[s, sl, e] += GAZE_OFFSET * direction

    if cfg.gesture_noise > 0:
        parts = parts + _stream(*seeds, "jitter").normal(0.0, cfg.gesture_noise, size=parts.shape)
    parts = np.clip(parts, 0.0, 1.0)
    valid = np.ones(parts.shape[:3], dtype=bool)
    drop_rng = _stream(*seeds, "drop")
    for i in range(p):
        dropped = _drop_mask(cfg, n_frames, speaking[i], drop_rng)
        valid[i, dropped] = False
        parts[i, dropped] = 0.0

    track_ids = [int(x) for x in _stream(*seeds, "tracker").choice(1000, size=p, replace=False)]
    tracks = {track_ids[i]: (times, parts[i], valid[i]) for i in range(p)}
    seconds = t_len * cfg.frame_interval
    raw_utts = []
    for k, plan in enumerate(plans):
        tokens, coref = _render(plan, roster_names, genders)
        raw_utts.append(RawUtterance(
            roster_names[plan.speaker - 1], round(k * seconds, 3), round((k + 1) * seconds, 3),
            tuple(tokens), _label_name(plan.addressee, roster_names),
            {pos: name for pos, name in coref.items()},
        ))
    raw = RawSession(f"s{cfg.seed:04d}_{index:04d}", list(zip(roster_names, track_ids)), tracks,
                     raw_utts, cfg.frame_interval)
    session = anonymize(raw)
    gold = {}
    for k, plan in enumerate(plans):
        gold[k] = {"kind": plan.kind, "resolvable": plan.resolvable, "target": plan.target,
                   "referent": plan.referent}
    return session, gold


def generate_corpus(cfg: GenConfig):
    return [generate_session(cfg, i) for i in range(cfg.sessions)]


def manifest_entries(session: Session, gold):
    """Gold label listing per task instance, annotated with generator flags."""
    rows = []
    for kind in TaskKind:
        for inst in build_task_instances(session, kind):
            flags = gold.get(inst.target_index, {})
            rows.append({
                "session_id": session.session_id, "task": kind.value, "k": inst.target_index,
                "position": inst.source_position, "label": inst.label,
                "unknown": inst.label_is_unknown,
                "episode_target": bool(flags.get("target")) and flags.get("kind") == kind.value,
                "resolvable": bool(flags.get("resolvable")),
            })
    return rows
