"""Corpus directories and the featurized train/test split."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from socialref.corpus.generator import GenConfig, generate_corpus, manifest_entries
from socialref.datamodel import build_task_instances, dump_session, load_session, split_sessions
from socialref.errors import DataError
from socialref.fusion import featurize
from socialref.harness.config import write_kv
from socialref.language import Vocab

MANIFEST_COLUMNS = ("session_id", "task", "k", "position", "label", "unknown", "episode_target", "resolvable")


def write_corpus(directory, pairs, gen: GenConfig = None):
    """One JSON file per session plus a gold manifest and the generator config."""
    directory = Path(directory)
    (directory / "sessions").mkdir(parents=True, exist_ok=True)
    rows = []
    for session, gold in pairs:
        (directory / "sessions" / f"{session.session_id}.json").write_text(dump_session(session), encoding="utf-8")
        rows.extend(manifest_entries(session, gold))
    with (directory / "manifest.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, MANIFEST_COLUMNS, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    if gen is not None:
        write_kv(gen.to_mapping(), directory / "gen.cfg")
    return directory


def load_corpus(directory):
    directory = Path(directory)
    folder = directory / "sessions" if (directory / "sessions").is_dir() else directory
    if not folder.is_dir():
        raise DataError(f"corpus directory {directory} does not exist")
    files = sorted(folder.glob("*.json"))
    if not files:
        raise DataError(f"corpus directory {folder} holds no session files")
    return [load_session(f) for f in files]


def corpus_for(config):
    if config.corpus:
        return load_corpus(config.corpus)
    return [s for s, _ in generate_corpus(config.gen_config())]


@dataclass
class Dataset:
    train_sessions: list
    test_sessions: list
    vocab: Vocab
    train: list           # Features, known labels only
    test: list
    test_unknown: int

    @property
    def sessions(self):
        return self.train_sessions + self.test_sessions


def featurize_sessions(sessions, task, vocab, n, frames, max_len, correction):
    known, unknown = [], 0
    for s in sessions:
        for inst in build_task_instances(s, task):
            if inst.label_is_unknown:
                unknown += 1
                continue
            known.append(featurize(s, inst, vocab, n=n, frames=frames, max_len=max_len, correction=correction))
    return known, unknown


def prepare(config, sessions=None, vocab=None, max_len=128):
    sessions = corpus_for(config) if sessions is None else sessions
    train_s, test_s = split_sessions(sessions, config.test_fraction, config.seed)
    vocab = Vocab.from_sessions(sessions) if vocab is None else vocab
    correction = "no-correction" not in config.ablation
    args = (config.task, vocab, config.context_n, config.frames, max_len, correction)
    train, _ = featurize_sessions(train_s, *args)
    test, unknown = featurize_sessions(test_s, *args)
    if not train or not test:
        raise DataError(f"split leaves no labelled {config.task.value} instances "
                        f"(train={len(train)}, test={len(test)})")
    return Dataset(train_s, test_s, vocab, train, test, unknown)
