"""Training loop, evaluation, and checkpoint I/O for a run."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from socialref import fusion
from socialref.datamodel import TaskKind
from socialref.errors import CheckpointIncompatibleError, NumericError
from socialref.harness.config import RunConfig, write_kv
from socialref.harness.data import Dataset, prepare
from socialref.harness.metrics import MetricsRecord, MetricsWriter
from socialref.language import Vocab
from socialref.seeding import stream
from socialref.tensorcore.checkpoint import load_checkpoint, save_checkpoint

EVAL_BATCH = 64


def build_model_config(config: RunConfig, vocab_size):
    return fusion.model_config(config.preset, vocab_size, config.task, frames=config.frames, **config.model)


def predict_features(store, mcfg, features, ablation=(), tables=None, tokens=None):
    """Eval-mode argmax over ``features``; ``tables`` relabels players per instance."""
    targets, preds = [], []
    for start in range(0, len(features), EVAL_BATCH):
        batch = fusion.collate(features[start:start + EVAL_BATCH])
        if tables is not None:
            batch = fusion.permute_batch(batch, tables[start:start + EVAL_BATCH], tokens)
        logits = fusion.forward(store, mcfg, batch, ablation)
        targets.append(batch.targets)
        preds.append(fusion.predict(logits.data).classes)
    return np.concatenate(targets), np.concatenate(preds)


def evaluate_features(store, mcfg, features, epoch=0, train_loss=math.nan, ablation=(), n_unknown=0,
                      tables=None, tokens=None):
    targets, preds = predict_features(store, mcfg, features, ablation, tables, tokens)
    everyone = fusion.N_MAX if mcfg.head_size == fusion.N_MAX + 1 else None
    return MetricsRecord.from_predictions(epoch, train_loss, targets, preds, mcfg.head_size, everyone, n_unknown)


def shuffled_tables(features, seed):
    """Per-instance random relabeling used for the shuffled-mapping evaluation."""
    return fusion.sample_tables(np.array([f.player_count for f in features]), stream(seed, "eval-permutation"))


@dataclass
class TrainResult:
    config: RunConfig
    model: fusion.ModelConfig
    store: object
    best_store: dict
    dataset: Dataset
    records: list = field(default_factory=list)
    best: MetricsRecord = None
    metrics_path: Path = None
    checkpoint_path: Path = None

    @property
    def best_accuracy(self):
        return self.best.accuracy

    def evaluate(self, shuffled=False, use_best=True):
        store = self.store
        if use_best:
            store = fusion.init_model(self.model, np.random.default_rng(0), self.store.dtype)
            store.load_values(self.best_store)
        tokens = fusion.PlayerTokens(self.dataset.vocab)
        tables = shuffled_tables(self.dataset.test, self.config.seed) if shuffled else None
        return evaluate_features(store, self.model, self.dataset.test, ablation=self.config.ablation,
                                 n_unknown=self.dataset.test_unknown, tables=tables, tokens=tokens)


def checkpoint_metadata(config: RunConfig, mcfg, vocab: Vocab, record=None):
    meta = {"task": config.task.value, "model": mcfg.to_dict(), "vocab": vocab.tokens,
            "vocab_hash": vocab.hash(), "run_hash": config.hash(), "seed": config.seed}
    if record is not None:
        meta["epoch"] = record.epoch
        meta["accuracy"] = record.accuracy
    return meta


def train(config: RunConfig, sessions=None, dataset=None, out=None, log=None, save=True):
    """Train for ``config.epochs`` epochs, evaluating after each (epoch 0 = initial model)."""
    dataset = prepare(config, sessions) if dataset is None else dataset
    mcfg = build_model_config(config, len(dataset.vocab))
    dtype = np.float64 if config.dtype == "float64" else np.float32
    store = fusion.init_model(mcfg, stream(config.seed, "init"), dtype)
    shuffle_rng = stream(config.seed, "shuffle")
    perm_rng = stream(config.seed, "permutation")
    dropout_rng = stream(config.seed, "dropout")
    tokens = fusion.PlayerTokens(dataset.vocab)
    permute = "no-permutation" not in config.ablation
    lr_map = config.lr_map

    out = Path(config.out if out is None else out)
    metrics_path = out / "metrics.csv"
    ckpt_path = out / "best.ckpt"
    writer = None
    if save:
        out.mkdir(parents=True, exist_ok=True)
        if metrics_path.exists():
            metrics_path.unlink()
        writer = MetricsWriter(metrics_path)
        write_kv(config.to_mapping(), out / "run.cfg")
        dataset.vocab.save(out / "vocab.txt")
        timings = (out / "timings.csv").open("w")
        timings.write("epoch,seconds\n")

    result = TrainResult(config, mcfg, store, store.snapshot(), dataset, metrics_path=metrics_path if save else None,
                         checkpoint_path=ckpt_path if save else None)
    for epoch in range(config.epochs + 1):
        t0 = time.perf_counter()
        train_loss = math.nan
        if epoch > 0:
            order = shuffle_rng.permutation(len(dataset.train))
            losses = []
            for b, start in enumerate(range(0, len(order), config.batch)):
                batch = fusion.collate([dataset.train[j] for j in order[start:start + config.batch]])
                try:
                    if permute:
                        losses.append(fusion.train_step_with_permutation(
                            store, mcfg, batch, lr_map, tokens, perm_rng, config.ablation, dropout_rng))
                    else:
                        losses.append(fusion.train_step(store, mcfg, batch, lr_map, config.ablation, dropout_rng))
                except NumericError as exc:
                    ids = [(dataset.train[j].instance.session_id, dataset.train[j].instance.target_index)
                           for j in order[start:start + config.batch]]
                    if save:
                        (out / "nan_batch.json").write_text(json.dumps({"epoch": epoch, "batch": b, "instances": ids}))
                    raise NumericError(f"epoch {epoch} batch {b}: {exc}; instances {ids}") from exc
            train_loss = float(np.mean(losses))
        record = evaluate_features(store, mcfg, dataset.test, epoch, train_loss, config.ablation, dataset.test_unknown)
        record.seconds = time.perf_counter() - t0
        result.records.append(record)
        if writer is not None:
            writer.append(record)
            timings.write(f"{epoch},{record.seconds:.3f}\n")
            timings.flush()
        if result.best is None or record.accuracy > result.best.accuracy:
            result.best = record
            result.best_store = store.snapshot()
            if save:
                save_checkpoint(ckpt_path, result.best_store, mcfg.hash(),
                                checkpoint_metadata(config, mcfg, dataset.vocab, record))
        if log is not None:
            log(f"epoch {epoch:3d}  loss {train_loss:.4f}  acc {record.accuracy:.4f}  ({record.seconds:.1f}s)")
    if save:
        timings.close()
    return result


def load_model(path, dtype=np.float64):
    values, config_hash, meta = load_checkpoint(path)
    mcfg = fusion.ModelConfig.from_dict(meta["model"])
    if mcfg.hash() != config_hash:
        raise CheckpointIncompatibleError(f"{path}: header hash {config_hash} does not match its model block {mcfg.hash()}")
    store = fusion.init_model(mcfg, np.random.default_rng(0), dtype)
    store.load_values(values)
    return store, mcfg, Vocab(meta["vocab"]), meta


def evaluate(checkpoint, config: RunConfig, sessions=None, shuffled=False, dtype=np.float32):
    """Metrics of a saved model on the test split of ``config``'s corpus."""
    store, ckpt_cfg, vocab, meta = load_model(checkpoint, dtype)
    expected = build_model_config(config, len(vocab))
    if expected.hash() != ckpt_cfg.hash():
        raise CheckpointIncompatibleError(
            f"{checkpoint}: checkpoint config {ckpt_cfg.hash()} != run config {expected.hash()} "
            f"(task {meta.get('task')} vs {config.task.value})")
    dataset = prepare(config, sessions, vocab=vocab, max_len=ckpt_cfg.max_len)
    tables = shuffled_tables(dataset.test, config.seed) if shuffled else None
    return evaluate_features(store, ckpt_cfg, dataset.test, ablation=config.ablation,
                             n_unknown=dataset.test_unknown, tables=tables, tokens=fusion.PlayerTokens(vocab))


__all__ = ["TaskKind", "TrainResult", "build_model_config", "evaluate", "evaluate_features", "load_model",
           "predict_features", "shuffled_tables", "train"]
