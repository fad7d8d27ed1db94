"""Primitive and end-to-end finite-difference checks."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from socialref import fusion
from socialref.corpus.generator import GenConfig, generate_session
from socialref.datamodel import TaskKind, build_task_instances
from socialref.language import Vocab
from socialref.tensorcore import ops
from socialref.tensorcore.gradcheck import H, PRIMITIVE_TOL, CheckResult, check_primitives, numeric_grad, rel_error
from socialref.tensorcore.tensor import Tensor

END_TO_END_TOL = 1e-3

TINY = dict(d_point=4, d=8, heads=2, ffn=12, visual_layers=1, fusion_layers=1, lm_width=8, lm_layers=1,
            lm_heads=2, lm_ffn=12, max_len=64, frames=3, dropout=0.0)


@dataclass
class EndToEndResult:
    param_rel_err: float
    keypoint_rel_err: float
    seconds: float
    tol: float = END_TO_END_TOL

    @property
    def passed(self):
        return self.param_rel_err < self.tol and self.keypoint_rel_err < self.tol


def tiny_batch(seed=0, instances=3, frames=3, n=2):
    gen = GenConfig(player_count=4, utterances_per_session=12, frames_per_utterance=frames, seed=seed, sessions=1,
                    pcr_weight=0.0, mpp_weight=0.0, everyone_rate=0.3, language_informativeness=1.0)
    session, _ = generate_session(gen)
    vocab = Vocab.from_sessions([session])
    insts = [i for i in build_task_instances(session, TaskKind.STI) if not i.label_is_unknown][:instances]
    feats = [fusion.featurize(session, i, vocab, n=n, frames=frames, max_len=TINY["max_len"]) for i in insts]
    return vocab, fusion.collate(feats)


def end_to_end(seed=0, coords_per_param=2, ablation=()):
    """Loss gradient w.r.t. sampled parameter entries and one keypoint coordinate."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    vocab, batch = tiny_batch(seed)
    cfg = fusion.model_config("desk", len(vocab), "sti", **TINY)
    store = fusion.init_model(cfg, rng, np.float64)
    kin = Tensor(batch.kinesics.astype(np.float64), requires_grad=True)
    batch.kinesics = kin

    def loss_value():
        return float(fusion.loss_of(fusion.forward(store, cfg, batch, ablation), batch.targets).data)

    loss = fusion.loss_of(fusion.forward(store, cfg, batch, ablation), batch.targets)
    loss.backward()
    analytic, numeric = [], []
    for name, p in store.items():
        if p.grad is None:
            continue
        picks = rng.choice(p.data.size, size=min(coords_per_param, p.data.size), replace=False)
        analytic.append(p.grad.ravel()[picks])
        numeric.append(numeric_grad(loss_value, p.data, H, list(picks)))
    param_err = rel_error(np.concatenate(analytic), np.concatenate(numeric))

    # the most influential keypoint coordinate, so the comparison is never 0 vs 0
    flat_index = int(np.argmax(np.abs(kin.grad)))
    kp_numeric = numeric_grad(loss_value, kin.data, H, [flat_index])
    kp_err = rel_error(kin.grad.ravel()[[flat_index]], kp_numeric)
    return EndToEndResult(param_err, kp_err, time.perf_counter() - t0)


def run_all(seed=0, names=None):
    primitives = check_primitives(seed=seed, names=names)
    e2e = end_to_end(seed)
    return primitives, e2e


def report(primitives, e2e):
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:28s} max rel err {r.max_rel_err:.3e} (tol {r.tol:.0e})"
             for r in primitives]
    lines.append(f"{'PASS' if e2e.passed else 'FAIL'}  {'end-to-end model':28s} params {e2e.param_rel_err:.3e}, "
                 f"keypoint {e2e.keypoint_rel_err:.3e} (tol {e2e.tol:.0e}, {e2e.seconds:.1f}s)")
    return "\n".join(lines)


__all__ = ["CheckResult", "END_TO_END_TOL", "EndToEndResult", "PRIMITIVE_TOL", "end_to_end", "ops", "report",
           "run_all", "tiny_batch"]
